"""Molecular representation pretraining from cellular-context graphs.

Pipeline: parse SMILES into molecular graphs, fingerprint them, assemble a
weighted heterogeneous context graph, sample weighted random walks, pretrain
a variational GIN encoder with per-modality decoders, then evaluate by
probing, zero-shot matching, and mutual-information bound benchmarks.
"""

from .errors import InfoAlignError
from .molparse import MolecularGraph, parse_smiles, graph_signature, read_smiles_file
from .fingerprint import BitFingerprint, morgan_fingerprint, cosine
from .ctxgraph import (
    ContextGraph,
    NodeKind,
    NodeRecord,
    Relation,
    WeightedEdge,
    build_graph_from_tables,
    min_max_scale,
)
from .walker import WalkConfig, WalkPath, batch_walks, sample_walk
from .model import (
    DecoderRegistry,
    ModelConfig,
    embed,
    infoalign_loss,
    load_checkpoint,
    pretrain,
    save_checkpoint,
)
from .mibounds import (
    JointTable,
    gaussian_mi,
    i_dlb,
    i_eub,
    i_nce,
    i_nwj,
    prop1_report,
    true_mi,
)
from .evalkit import (
    LabeledSet,
    auc,
    hit_at_k,
    mae,
    match_zero_shot,
    ndcg_at_k,
    probe_eval,
    probe_train,
    split_random,
)

__version__ = "0.1.0"

__all__ = [
    "InfoAlignError",
    "MolecularGraph", "parse_smiles", "graph_signature", "read_smiles_file",
    "BitFingerprint", "morgan_fingerprint", "cosine",
    "ContextGraph", "NodeKind", "NodeRecord", "Relation", "WeightedEdge",
    "build_graph_from_tables", "min_max_scale",
    "WalkConfig", "WalkPath", "batch_walks", "sample_walk",
    "DecoderRegistry", "ModelConfig", "embed", "infoalign_loss",
    "load_checkpoint", "pretrain", "save_checkpoint",
    "JointTable", "gaussian_mi", "i_dlb", "i_eub", "i_nce", "i_nwj",
    "prop1_report", "true_mi",
    "LabeledSet", "auc", "hit_at_k", "mae", "match_zero_shot", "ndcg_at_k",
    "probe_eval", "probe_train", "split_random",
]
