"""Binary checkpoint files for training state.

Layout (all integers little-endian):

    magic    4 bytes, b"FSCP"
    version  u32
    length   u32, byte length of the JSON manifest
    manifest UTF-8 JSON
    payload  raw float64 array buffers, little-endian, concatenated
    crc      u32, CRC-32 of everything between the magic and this field

The manifest records the scheme id, step counter, optimizer
hyperparameters and moment names, the array index (name, dtype, shape,
offset), and optionally the bit-generator state of a random generator so
a run can resume exactly where it stopped.
"""

from __future__ import annotations

import json
import zlib
from pathlib import Path

import numpy as np

from .fewshot import AdamOptimizer, TrainState
from .metricspace import PrototypeBank

__all__ = ["CheckpointError", "save_checkpoint", "load_checkpoint"]

_MAGIC = b"FSCP"
_VERSION = 1


class CheckpointError(RuntimeError):
    """Raised when a checkpoint file is malformed or fails its CRC."""


def _u32(value: int) -> bytes:
    return int(value).to_bytes(4, "little")


def _named_arrays(state: TrainState) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    for k, v in state.params.items():
        out[f"params/{k}"] = v
    if state.classifier is not None:
        for k, v in state.classifier.items():
            out[f"classifier/{k}"] = v
    for k, v in state.optimizer.m.items():
        out[f"adam_m/{k}"] = v
    for k, v in state.optimizer.v.items():
        out[f"adam_v/{k}"] = v
    if state.prototypes is not None:
        for c, v in enumerate(state.prototypes.vectors):
            out[f"proto/{c}"] = v
    return out


def save_checkpoint(
    path: str | Path,
    state: TrainState,
    rng: np.random.Generator | None = None,
) -> None:
    arrays = _named_arrays(state)
    index = []
    buffers = []
    offset = 0
    for name, arr in arrays.items():
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        index.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(data),
            }
        )
        buffers.append(data)
        offset += len(data)
    opt = state.optimizer
    manifest = {
        "scheme_id": state.scheme_id,
        "step": state.step,
        "optimizer": {
            "lr": opt.lr,
            "beta1": opt.beta1,
            "beta2": opt.beta2,
            "eps": opt.eps,
            "t": opt.t,
        },
        "has_classifier": state.classifier is not None,
        "num_proto_chunks": (
            len(state.prototypes.vectors) if state.prototypes is not None else 0
        ),
        "rng": rng.bit_generator.state if rng is not None else None,
        "arrays": index,
    }
    body = json.dumps(manifest, sort_keys=True).encode("utf-8")
    payload = b"".join(buffers)
    checked = _u32(_VERSION) + _u32(len(body)) + body + payload
    blob = _MAGIC + checked + _u32(zlib.crc32(checked))
    Path(path).write_bytes(blob)


def load_checkpoint(path: str | Path) -> tuple[TrainState, dict | None]:
    """Read a checkpoint back into a TrainState.

    Returns (state, rng_state) where rng_state is the saved bit-generator
    state dict, or None; restore it with
    ``rng.bit_generator.state = rng_state``.
    """
    blob = Path(path).read_bytes()
    if len(blob) < 16 or blob[:4] != _MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    checked, stored = blob[4:-4], int.from_bytes(blob[-4:], "little")
    if zlib.crc32(checked) != stored:
        raise CheckpointError(f"{path}: CRC mismatch")
    version = int.from_bytes(checked[:4], "little")
    if version != _VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    body_len = int.from_bytes(checked[4:8], "little")
    try:
        manifest = json.loads(checked[8 : 8 + body_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: bad manifest: {exc}") from exc
    payload = checked[8 + body_len :]

    arrays: dict[str, np.ndarray] = {}
    for entry in manifest["arrays"]:
        start, n = entry["offset"], entry["nbytes"]
        if start + n > len(payload):
            raise CheckpointError(f"{path}: truncated payload at {entry['name']}")
        arr = np.frombuffer(payload[start : start + n], dtype="<f8")
        arrays[entry["name"]] = arr.reshape(entry["shape"]).astype(np.float64)

    def group(prefix: str) -> dict[str, np.ndarray]:
        plen = len(prefix) + 1
        return {
            name[plen:]: arr
            for name, arr in arrays.items()
            if name.startswith(prefix + "/")
        }

    params = group("params")
    classifier = group("classifier") if manifest["has_classifier"] else None
    opt_cfg = manifest["optimizer"]
    optimizer = AdamOptimizer(
        params if classifier is None else {**params, **classifier},
        lr=opt_cfg["lr"],
        beta1=opt_cfg["beta1"],
        beta2=opt_cfg["beta2"],
        eps=opt_cfg["eps"],
    )
    optimizer.t = opt_cfg["t"]
    optimizer.m = group("adam_m")
    optimizer.v = group("adam_v")
    n_proto = manifest["num_proto_chunks"]
    prototypes = (
        PrototypeBank([arrays[f"proto/{c}"] for c in range(n_proto)])
        if n_proto
        else None
    )
    state = TrainState(
        scheme_id=manifest["scheme_id"],
        params=params,
        classifier=classifier,
        prototypes=prototypes,
        optimizer=optimizer,
        step=manifest["step"],
    )
    return state, manifest.get("rng")
