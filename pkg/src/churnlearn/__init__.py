"""churnlearn: relational learners on time-decayed call graphs.

Builds weighted call graphs from CDR streams, scores customer churn
propensity with the grid of relational classifiers and collective inference
schedulers, evaluates the scores with lift / AUC / H-measure, and compares
learners with the rank-based Friedman / Nemenyi / Kruskal-Wallis
methodology.  Synthetic datasets with planted churn contagion make the full
benchmark reproducible at desk scale.
"""

from .graph import (
    CallGraph,
    DecayConfig,
    GraphBuilder,
    build_graph,
    build_graph_from_arrays,
    decayed_contribution,
    neighborhood,
    read_edge_list,
    sparsity,
    write_edge_list,
)
from .cdr import (
    CallEvents,
    CdrRecord,
    ChurnLabel,
    TimelineConfig,
    WindowedData,
    build_windows,
    filter_events,
    filter_records,
    label_churn,
    read_cdr,
    read_labels,
    write_cdr,
    write_labels,
)
from .classifiers import (
    CdrnReference,
    ClassVector,
    NLB_FEATURE_NAMES,
    NlbModel,
    NodeState,
    RC_NAMES,
    cdrn_score,
    cdrn_scores,
    cdrn_train,
    load_key_values,
    nlb_features,
    nlb_features_matrix,
    nlb_score,
    nlb_scores,
    nlb_train,
    save_key_values,
    spa_rc_score,
    spa_rc_scores,
    wvrn_score,
    wvrn_scores,
)
from .inference import (
    CI_NAMES,
    CiConfig,
    InferenceResult,
    LearnerSpec,
    early_stop_check,
    gibbs,
    ic,
    learner_grid,
    rl,
    rl_sa,
    run_learner,
    spa_ci,
)
from .evaluation import EvaluationReport, auc, evaluate, h_measure, lift
from .stats import (
    RankTable,
    average_ranks,
    friedman_test,
    kruskal_wallis,
    nemenyi_cd,
    nemenyi_significance,
    rank_methods,
)
from .synthgen import SynthConfig, SyntheticDataset, generate
from .experiment import (
    ComparisonReport,
    DatasetSpec,
    ExperimentManifest,
    compare_runs,
    default_benchmark_manifest,
    load_eval_rows,
    run_experiment,
)

__version__ = "0.1.0"
