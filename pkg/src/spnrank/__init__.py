"""Likeability ranking of attribute vectors with sum-product networks."""

from .clustering import (
    ClusterModel,
    DataDrivenAttributes,
    DiscoveryConfig,
    PatchGrid,
    agglomerate,
    assign_attributes,
    average_link,
    discover,
    kmeans,
    patch_grid,
    representativeness_filter,
)
from .mtl import (
    MtlModel,
    MtlTrainSet,
    MultiTaskAttributeClassifier,
    group_soft_threshold,
    mtl_objective,
    mtl_predict,
    mtl_train,
)
from .ranking import (
    EvalReport,
    LinearPairwiseRanker,
    NoPairsError,
    Order,
    PairSets,
    RankingSPN,
    RankTrainConfig,
    evaluate_ranking,
    make_pairs,
    pairwise_accuracy,
    prune,
    rank_objective,
    rank_pair,
    score,
    scores,
    train,
)
from .spn import (
    Evidence,
    InvalidSpnError,
    Leaf,
    Product,
    SpnFormatError,
    SpnGraph,
    SpnStructureError,
    Sum,
    deserialize,
    evaluate,
    load,
    log_evaluate,
    mpe_infer,
    save,
    serialize,
    to_mpn,
    validate,
)
from .structure import StructureConfig, hard_em_refine, init_structure, select_top_fraction

__version__ = "0.1.0"
