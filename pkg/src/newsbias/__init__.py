"""Political-bias detection toolkit: hierarchical multi-head attention over
sentence embeddings, outlet-disjoint evaluation splits, robustness
statistics, and discourse-structure clustering."""

__version__ = "0.1.0"

from .corpus import (  # noqa: F401
    Article,
    Label,
    SplitConfig,
    SplitManifest,
    build_augmented_split,
    filter_and_merge_outlets,
    load_articles,
    subsample_train,
)
from .encoder import (  # noqa: F401
    EmbeddingCache,
    EncodedArticle,
    EncoderSpec,
    SentenceEncoder,
    deterministic_test_encoder,
    encode_article,
    get_encoder,
    register_encoder,
)
from .errors import (  # noqa: F401
    ConfigError,
    DataError,
    InternalError,
    NewsbiasError,
    TrainingDiverged,
)
from .model import (  # noqa: F401
    Checkpoint,
    ForwardTrace,
    HierarchicalAttentionClassifier,
    ModelConfig,
    extract_main_sentences,
    load_checkpoint,
    model_from_checkpoint,
    save_checkpoint,
)
from .training import TrainConfig, mixture_nll, one_cycle_lr, train  # noqa: F401
from .metrics import (  # noqa: F401
    TrialResult,
    auroc_multiclass,
    evaluate,
    macro_f1,
)
from .stats import (  # noqa: F401
    ComparisonSpec,
    build_comparison_report,
    f_test_one_sided,
    jsd_gaussian,
    shapiro_wilk,
    t_test_two_sided,
)
from .structure import (  # noqa: F401
    ClusterReport,
    MainSentenceProfile,
    build_profile,
    cluster_profiles,
    dtw_distance,
    location_density,
)
