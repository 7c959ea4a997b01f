import numpy as np
import pytest

from embexport.model import (
    PRESETS,
    EncoderConfig,
    ModelError,
    load_model,
    make_model,
)

WORDS = ["the", "city", "of", "lights", "visited", "Anna"]


@pytest.fixture(scope="module")
def model(tmp_path_factory):
    path = tmp_path_factory.mktemp("model") / "tiny"
    return make_model(path, WORDS, preset="tiny", seed=7), path


def _inputs(tok, sentences, length=None):
    rows = [[tok.cls_id] + tok.encode_words(s)[0] + [tok.sep_id] for s in sentences]
    length = length or max(len(r) for r in rows)
    ids = np.full((len(rows), length), tok.pad_id, dtype=np.int64)
    mask = np.zeros((len(rows), length), dtype=bool)
    for i, r in enumerate(rows):
        ids[i, : len(r)] = r
        mask[i, : len(r)] = True
    return ids, np.zeros_like(ids), mask


def test_base_preset_hidden_size():
    assert PRESETS["base"]["hidden"] == 768


def test_config_validation():
    with pytest.raises(ValueError):
        EncoderConfig(hidden=30, layers=1, heads=4, ffn=8, vocab_size=10)
    with pytest.raises(ValueError):
        EncoderConfig(hidden=32, layers=0, heads=4, ffn=8, vocab_size=10)


def test_save_load_roundtrip(model):
    enc, path = model
    loaded = load_model(path)
    assert loaded.config == enc.config
    assert loaded.vocab.pieces == enc.vocab.pieces
    ids, seg, mask = _inputs(enc.vocab, [["the", "city"], ["Anna", "visited", "the", "city"]])
    assert np.array_equal(loaded.forward(ids, seg, mask), enc.forward(ids, seg, mask))


def test_forward_shape_and_dtype(model):
    enc, _ = model
    ids, seg, mask = _inputs(enc.vocab, [["city", "of", "lights"]])
    out = enc.forward(ids, seg, mask)
    assert out.shape == (1, ids.shape[1], enc.hidden_size)
    assert out.dtype == np.float32


def test_forward_deterministic(model):
    enc, _ = model
    ids, seg, mask = _inputs(enc.vocab, [["the", "lights"]])
    assert np.array_equal(enc.forward(ids, seg, mask), enc.forward(ids, seg, mask))


def test_padding_cannot_leak_into_real_positions(model):
    # same batch twice, but the padded tail re-labeled with arbitrary real
    # token ids; masked attention must keep every real row bit-identical
    enc, _ = model
    tok = enc.vocab
    ids, seg, mask = _inputs(tok, [["the", "city"], ["Anna", "visited", "the", "city", "of", "lights"]])
    scribbled = ids.copy()
    scribbled[0, mask[0].sum():] = tok.encode_word("lights")[0]
    a = enc.forward(ids, seg, mask)
    b = enc.forward(scribbled, seg, mask)
    assert np.array_equal(a[0, : mask[0].sum()], b[0, : mask[0].sum()])
    assert np.array_equal(a[1], b[1])


def test_forward_input_validation(model):
    enc, _ = model
    ids, seg, mask = _inputs(enc.vocab, [["the"]])
    with pytest.raises(ValueError):
        enc.forward(ids, seg, mask[:, :-1])
    with pytest.raises(ValueError):
        enc.forward(ids, seg, np.zeros_like(mask))
    long_ids = np.zeros((1, enc.config.max_positions + 1), dtype=np.int64)
    with pytest.raises(ValueError):
        enc.forward(long_ids, np.zeros_like(long_ids), np.ones(long_ids.shape, bool))


def test_load_missing_directory(tmp_path):
    with pytest.raises(ModelError, match="missing model file"):
        load_model(tmp_path / "nope")


def test_load_corrupt_weights(tmp_path):
    path = tmp_path / "m"
    make_model(path, WORDS, preset="tiny", seed=0)
    (path / "weights.npz").write_bytes(b"not a zip archive")
    with pytest.raises(ModelError, match="weights"):
        load_model(path)


def test_load_vocab_config_mismatch(tmp_path):
    path = tmp_path / "m"
    make_model(path, WORDS, preset="tiny", seed=0)
    with open(path / "vocab.txt", "a", encoding="utf-8") as fh:
        fh.write("extrapiece\n")
    with pytest.raises(ModelError, match="vocab"):
        load_model(path)


def test_load_weight_shape_mismatch(tmp_path):
    path = tmp_path / "m"
    enc = make_model(path, WORDS, preset="tiny", seed=0)
    weights = dict(enc.weights)
    weights["embed.seg"] = weights["embed.seg"][:1]
    np.savez(path / "weights.npz", **weights)
    with pytest.raises(ModelError, match="embed.seg"):
        load_model(path)


def test_make_model_rejects_unknown_preset(tmp_path):
    with pytest.raises(ValueError, match="preset"):
        make_model(tmp_path / "m", WORDS, preset="giant")
