"""Transformer encoder over a local model directory.

A model lives on disk as three files: ``config.json`` (architecture),
``vocab.txt`` (one WordPiece per line), ``weights.npz`` (float32 arrays).
Inference is plain numpy, runs on CPU, and has no stochastic parts, so a
given input always produces bit-identical states.

``make_model`` materializes a randomly initialized model directory for
offline use; ``load_model`` is strict and wraps every failure mode in
ModelError so callers can distinguish a broken model from bad input data.
"""

from __future__ import annotations

import json
import math
import zipfile
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .wordpiece import WordPiece, build_vocab

__all__ = [
    "ModelError",
    "EncoderConfig",
    "PRESETS",
    "TransformerEncoder",
    "load_model",
    "save_model",
    "make_model",
]

# Positions must cover the two-segment input. 10 + 50 = 60 with headroom.
DEFAULT_MAX_POSITIONS = 64
N_SEGMENTS = 2
LN_EPS = 1e-12


class ModelError(RuntimeError):
    """Raised when a model directory cannot be loaded or is inconsistent."""


@dataclass(frozen=True)
class EncoderConfig:
    hidden: int
    layers: int
    heads: int
    ffn: int
    vocab_size: int
    max_positions: int = DEFAULT_MAX_POSITIONS

    def __post_init__(self):
        if min(self.hidden, self.layers, self.heads, self.ffn) < 1:
            raise ValueError("all architecture sizes must be positive")
        if self.hidden % self.heads:
            raise ValueError("hidden size must divide evenly across heads")
        if self.vocab_size < 4:
            raise ValueError("vocabulary must at least hold the specials")

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads


# Architecture presets. "base" mirrors the stock 12-layer cased encoder
# whose hidden size of 768 is what a full-scale export would record.
PRESETS: dict[str, dict[str, int]] = {
    "base": {"hidden": 768, "layers": 12, "heads": 12, "ffn": 3072},
    "mini": {"hidden": 64, "layers": 2, "heads": 4, "ffn": 128},
    "tiny": {"hidden": 32, "layers": 2, "heads": 2, "ffn": 64},
}


def _weight_shapes(cfg: EncoderConfig) -> dict[str, tuple[int, ...]]:
    h, f = cfg.hidden, cfg.ffn
    shapes: dict[str, tuple[int, ...]] = {
        "embed.word": (cfg.vocab_size, h),
        "embed.pos": (cfg.max_positions, h),
        "embed.seg": (N_SEGMENTS, h),
        "embed.ln.g": (h,),
        "embed.ln.b": (h,),
    }
    for i in range(cfg.layers):
        p = f"layer{i}."
        for name in ("wq", "wk", "wv", "wo"):
            shapes[p + "attn." + name] = (h, h)
            shapes[p + "attn.b" + name[1]] = (h,)
        shapes[p + "ln1.g"] = (h,)
        shapes[p + "ln1.b"] = (h,)
        shapes[p + "ffn.w1"] = (h, f)
        shapes[p + "ffn.b1"] = (f,)
        shapes[p + "ffn.w2"] = (f, h)
        shapes[p + "ffn.b2"] = (h,)
        shapes[p + "ln2.g"] = (h,)
        shapes[p + "ln2.b"] = (h,)
    return shapes


def _layer_norm(x: np.ndarray, g: np.ndarray, b: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = np.square(x - mu).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + LN_EPS) * g + b


def _gelu(x: np.ndarray) -> np.ndarray:
    c = math.sqrt(2.0 / math.pi)
    return 0.5 * x * (1.0 + np.tanh(c * (x + 0.044715 * x * x * x)))


class TransformerEncoder:
    """Stateless forward pass over loaded weights."""

    def __init__(self, config: EncoderConfig, vocab: WordPiece, weights: Mapping[str, np.ndarray]):
        self.config = config
        self.vocab = vocab
        self.weights = {k: np.asarray(v, dtype=np.float32) for k, v in weights.items()}
        expected = _weight_shapes(config)
        if set(self.weights) != set(expected):
            missing = sorted(set(expected) - set(self.weights))
            extra = sorted(set(self.weights) - set(expected))
            raise ModelError(f"weight set mismatch: missing {missing}, extra {extra}")
        for name, shape in expected.items():
            if self.weights[name].shape != shape:
                raise ModelError(
                    f"weight {name}: expected shape {shape}, got {self.weights[name].shape}"
                )
        if len(vocab) != config.vocab_size:
            raise ModelError(
                f"vocab has {len(vocab)} pieces but config declares {config.vocab_size}"
            )

    @property
    def hidden_size(self) -> int:
        return self.config.hidden

    def _attention(self, x: np.ndarray, mask: np.ndarray, prefix: str) -> np.ndarray:
        w = self.weights
        cfg = self.config
        batch, length, _ = x.shape
        heads, dh = cfg.heads, cfg.head_dim

        def split(name: str) -> np.ndarray:
            proj = x @ w[prefix + "attn.w" + name] + w[prefix + "attn.b" + name]
            return proj.reshape(batch, length, heads, dh).transpose(0, 2, 1, 3)

        q, k, v = split("q"), split("k"), split("v")
        scores = q @ k.transpose(0, 1, 3, 2) / math.sqrt(dh)
        # padded keys get -inf so their softmax weight is exactly zero and
        # batch padding cannot leak into real positions
        scores = np.where(mask[:, None, None, :], scores, np.float32(-np.inf))
        scores = scores - scores.max(axis=-1, keepdims=True)
        probs = np.exp(scores)
        probs = probs / probs.sum(axis=-1, keepdims=True)
        ctx = (probs @ v).transpose(0, 2, 1, 3).reshape(batch, length, cfg.hidden)
        return ctx @ w[prefix + "attn.wo"] + w[prefix + "attn.bo"]

    def forward(self, ids: np.ndarray, segments: np.ndarray, mask: np.ndarray) -> np.ndarray:
        """Last-layer states, shape (batch, length, hidden), float32.

        ids/segments/mask are (batch, length); mask marks real positions.
        Masked positions still produce rows, but contribute nothing to any
        unmasked position's state.
        """
        ids = np.asarray(ids)
        segments = np.asarray(segments)
        mask = np.asarray(mask, dtype=bool)
        cfg, w = self.config, self.weights
        if ids.ndim != 2 or ids.shape != segments.shape or ids.shape != mask.shape:
            raise ValueError("ids, segments and mask must share a (batch, length) shape")
        if ids.shape[1] > cfg.max_positions:
            raise ValueError(
                f"sequence length {ids.shape[1]} exceeds max positions {cfg.max_positions}"
            )
        if not mask.any(axis=1).all():
            raise ValueError("every sequence needs at least one real position")

        x = w["embed.word"][ids] + w["embed.pos"][: ids.shape[1]] + w["embed.seg"][segments]
        x = _layer_norm(x, w["embed.ln.g"], w["embed.ln.b"])
        for i in range(cfg.layers):
            p = f"layer{i}."
            x = _layer_norm(x + self._attention(x, mask, p), w[p + "ln1.g"], w[p + "ln1.b"])
            ffn = _gelu(x @ w[p + "ffn.w1"] + w[p + "ffn.b1"]) @ w[p + "ffn.w2"] + w[p + "ffn.b2"]
            x = _layer_norm(x + ffn, w[p + "ln2.g"], w[p + "ln2.b"])
        return x.astype(np.float32, copy=False)


def save_model(path: str | Path, config: EncoderConfig, pieces: Iterable[str], weights: Mapping[str, np.ndarray]) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    (path / "config.json").write_text(json.dumps(asdict(config), indent=2) + "\n", encoding="utf-8")
    (path / "vocab.txt").write_bytes("\n".join(pieces).encode("utf-8") + b"\n")
    np.savez(path / "weights.npz", **{k: np.asarray(v, dtype=np.float32) for k, v in weights.items()})


def load_model(path: str | Path) -> TransformerEncoder:
    """Load a model directory; any inconsistency raises ModelError."""
    path = Path(path)
    for fname in ("config.json", "vocab.txt", "weights.npz"):
        if not (path / fname).is_file():
            raise ModelError(f"{path}: missing model file {fname}")
    try:
        raw = json.loads((path / "config.json").read_text(encoding="utf-8"))
        config = EncoderConfig(**raw)
    except (json.JSONDecodeError, TypeError, ValueError) as exc:
        raise ModelError(f"{path}: bad config.json: {exc}") from exc
    try:
        vocab = WordPiece.from_file(path / "vocab.txt")
    except ValueError as exc:
        raise ModelError(f"{path}: bad vocab.txt: {exc}") from exc
    try:
        with np.load(path / "weights.npz") as npz:
            weights = {k: npz[k] for k in npz.files}
    except (OSError, ValueError, zipfile.BadZipFile) as exc:
        raise ModelError(f"{path}: bad weights.npz: {exc}") from exc
    return TransformerEncoder(config, vocab, weights)


def make_model(
    path: str | Path,
    words: Iterable[str],
    preset: str = "mini",
    seed: int = 0,
    max_positions: int = DEFAULT_MAX_POSITIONS,
) -> TransformerEncoder:
    """Create and save a randomly initialized model directory.

    The vocabulary is built from ``words`` plus character fallback pieces,
    so any text over the same alphabet stays encodable. Weights are drawn
    once from the seed; this is an untrained stand-in with the same I/O
    contract as a real pretrained encoder, not a trained model.
    """
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    pieces = build_vocab(words)
    config = EncoderConfig(
        vocab_size=len(pieces), max_positions=max_positions, **PRESETS[preset]
    )
    rng = np.random.default_rng(seed)
    weights: dict[str, np.ndarray] = {}
    for name, shape in _weight_shapes(config).items():
        if name.endswith(".g"):
            weights[name] = np.ones(shape, dtype=np.float32)
        elif name.endswith(".b") or name.endswith((".bq", ".bk", ".bv", ".bo", ".b1", ".b2")):
            weights[name] = np.zeros(shape, dtype=np.float32)
        else:
            weights[name] = rng.normal(0.0, 0.02, size=shape).astype(np.float32)
    save_model(path, config, pieces, weights)
    return TransformerEncoder(config, WordPiece(pieces), weights)
