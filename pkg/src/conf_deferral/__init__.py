"""Training-free deferral of classifier predictions to human experts.

A conformal predictor around an arbitrary probability-vector model
decides per input whether the model's label is trustworthy (singleton
prediction set) or the input should be routed to the expert best able to
tell the remaining plausible labels apart (maximal segregativity). The
package also ships a replay-evaluation harness over recorded or
synthetic expert annotations: miscoverage grid search, workload metrics,
significance protocol, and ablations.
"""

from .conformal import (
    DEFAULT_RAPS_GRID,
    ConformalThreshold,
    PredictionSet,
    RapsParams,
    ScoreKind,
    SetBuilder,
    calibrate,
    predict_set,
    score_aps,
    score_lac,
    score_raps,
    true_label_scores,
    tune_raps,
)
from .dataio import (
    AnnotationStore,
    ClassMapping,
    DataFormatError,
    ProbabilityTable,
    RunResult,
    aggregate_superclasses,
    load_annotations,
    load_mapping,
    load_probabilities,
    load_results,
    write_annotations,
    write_probabilities,
    write_results,
)
from .evaluation import (
    ExpertKnowledge,
    RunConfig,
    SignificanceVerdict,
    SplitSpec,
    ablate_expert_fraction,
    ablate_shots,
    alpha_grid,
    complementarity_test,
    run_split,
    run_sweep,
    select_alpha_opt,
    stratified_split,
    summarize,
    workload_metrics,
)
from .experts import (
    ConfusionMatrix,
    ExpertProfile,
    ExpertRecord,
    TieRule,
    build_confusion,
    segregativity,
    select_expert,
)
from .policy import Decision, NoEligibleExpertError, Outcome, Strategy, decide, resolve
from .stats import paired_t_one_tailed, shapiro_wilk, wilcoxon_one_tailed
from .synth import (
    Generalist,
    Specialist,
    SynthConfig,
    canonical_scenario,
    gen_dataset,
    theoretical_expert_accuracy,
)

__version__ = "0.1.0"
