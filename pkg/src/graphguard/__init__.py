"""Self-supervised contrastive graph scoring of card transactions."""

__version__ = "0.1.0"

from .encoding import Normalizer, RiskEncoder, make_splits  # noqa: E402
from .estimator import GraphGuard  # noqa: E402
from .metrics import npr_at_k, pr_auc, select_threshold  # noqa: E402
from .sampler import SamplerConfig  # noqa: E402
from .synthgen import GenConfig, generate  # noqa: E402
from .transactions import Schema, TransactionTable, ingest_table  # noqa: E402
from .txgraph import GraphConfig, build_graph  # noqa: E402

__all__ = [
    "GenConfig", "GraphConfig", "GraphGuard", "Normalizer", "RiskEncoder", "SamplerConfig",
    "Schema", "TransactionTable", "build_graph", "generate", "ingest_table", "make_splits",
    "npr_at_k", "pr_auc", "select_threshold",
]
