"""Offline encoder export: sentences x relations to an FSRE embedding cache."""

from .export import (
    CONTENT_BUDGET,
    DESC_BUDGET,
    CacheRecordWriter,
    ExportError,
    Sentence,
    assemble_pair,
    export,
    pool_words,
    read_catalog,
    read_sentences,
)
from .model import (
    PRESETS,
    EncoderConfig,
    ModelError,
    TransformerEncoder,
    load_model,
    make_model,
    save_model,
)
from .wordpiece import WordPiece, build_vocab

__all__ = [
    "CONTENT_BUDGET",
    "DESC_BUDGET",
    "CacheRecordWriter",
    "ExportError",
    "Sentence",
    "assemble_pair",
    "export",
    "pool_words",
    "read_catalog",
    "read_sentences",
    "PRESETS",
    "EncoderConfig",
    "ModelError",
    "TransformerEncoder",
    "load_model",
    "make_model",
    "save_model",
    "WordPiece",
    "build_vocab",
]
