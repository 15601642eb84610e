"""Directed complementary-product graphs from user purchase histories."""

from .dataset import (
    DatasetSplit,
    InteractionLog,
    SplitSpec,
    k_core_filter,
    load_interactions,
    save_interactions,
    shuffle_timestamp_ties,
    split,
)
from .directionality import (
    AggregationFunction,
    DirectionalityParams,
    category_co_counts,
    combine,
    item_co_counts,
    lift_category_matrix,
    row_normalize,
)
from .eval import (
    EvalConfig,
    EvalReport,
    GridSpec,
    ablation_sweep,
    cold_start_eval,
    evaluate,
    grid_search,
    ndcg_at_k,
    recall_at_k,
)
from .model import (
    ComplementarityModel,
    EmbeddingTable,
    ModelParams,
    build_model,
    load_embeddings,
    load_model,
    recommend,
    recommend_cold_start,
    save_model,
)
from .projection import (
    BipartiteGraph,
    PruningPolicy,
    build_bipartite,
    matrix_power,
    symmetrize,
    transition_matrices,
    two_step_item_matrix,
)

__version__ = "0.1.0"
