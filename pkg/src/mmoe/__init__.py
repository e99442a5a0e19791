"""Multimodal interaction categorisation and mixture-of-experts routing."""

from .errors import (
    ConfigError,
    DataValidationError,
    DimensionError,
    EvaluationError,
    GenerationError,
    MmoeError,
    ProtocolError,
    RoutingError,
)
from .evaluation import (
    ConfusionCounts,
    EvaluationReport,
    compare_runs,
    confusion,
    per_category_report,
    prf1,
)
from .ingest import (
    DataPointRecord,
    ModalityPayload,
    argmax_label,
    normalize_logits,
    parse_dataset,
    summarize,
)
from .interaction import (
    CATEGORIES,
    CategorizationConfig,
    InteractionCategory,
    LabelDistribution,
    PairwiseDistances,
    RusScores,
    Strategy,
    categorize,
    disagreement_classify,
    l1_distance,
    pairwise_distances,
    partition_dataset,
    rus_scores,
)
from .routing import (
    ExpertPrediction,
    ExpertSpec,
    FewShotPool,
    MockExpert,
    RoutingTable,
    assemble_prompt,
    build_pools,
    dispatch,
    mock_expert,
    route_dataset,
)
from .synth import PlantedSpec, generate, oracle_categorize

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataValidationError",
    "DimensionError",
    "EvaluationError",
    "GenerationError",
    "MmoeError",
    "ProtocolError",
    "RoutingError",
    "ConfusionCounts",
    "EvaluationReport",
    "compare_runs",
    "confusion",
    "per_category_report",
    "prf1",
    "DataPointRecord",
    "ModalityPayload",
    "argmax_label",
    "normalize_logits",
    "parse_dataset",
    "summarize",
    "CATEGORIES",
    "CategorizationConfig",
    "InteractionCategory",
    "LabelDistribution",
    "PairwiseDistances",
    "RusScores",
    "Strategy",
    "categorize",
    "disagreement_classify",
    "l1_distance",
    "pairwise_distances",
    "partition_dataset",
    "rus_scores",
    "ExpertPrediction",
    "ExpertSpec",
    "FewShotPool",
    "MockExpert",
    "RoutingTable",
    "assemble_prompt",
    "build_pools",
    "dispatch",
    "mock_expert",
    "route_dataset",
    "PlantedSpec",
    "generate",
    "oracle_categorize",
]
