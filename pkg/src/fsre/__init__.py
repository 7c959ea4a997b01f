"""Few-shot joint relation extraction by metric learning over tag sequences.

The package turns relation extraction into per-relation sequence tagging,
embeds tag positions into a learned metric space, and labels query
positions by their nearest support positions. See the README for the
pipeline walkthrough and the CLI reference.
"""

from .encoding import (
    CacheEmbeddingProvider,
    EmbeddingProvider,
    HashEmbeddingProvider,
    hash_embed,
)
from .fewshot import (
    AdamOptimizer,
    LossConfig,
    SamplerConfig,
    SamplingError,
    TrainState,
    chunk_loss,
    finetune_step,
    init_train_state,
    loss_and_grads,
    predict_labels,
    predict_triples,
    pretrain_step,
    run_finetune,
    run_pretrain,
    sample_episode,
)
from .ingest import (
    EmbeddingCache,
    CacheError,
    CacheWriter,
    IngestError,
    inter_split,
    intra_split,
    nyt24_catalog,
    read_instances,
    write_instances,
)
from .metricspace import OpCounter, PrototypeBank
from .tagging import SCHEME_IDS, get_scheme
from .types import (
    ChunkLayout,
    Episode,
    Instance,
    LabelSeq,
    RelationCatalog,
    SupportExample,
    Triple,
)

__version__ = "0.1.0"
