"""Interpretable choice models vs. a black-box network for moral-dilemma
choice data, with a residual-driven refinement loop.

The package fits a nested family of conditional-logit choice models and a
small feedforward network to saved-side decisions over two-sided pedestrian
dilemmas, compares them (accuracy, AUC, normalized AIC, learning curves),
aggregates per-dilemma residuals to surface behavior the interpretable
model misses, and folds newly formalized principles back into the model via
a small declarative feature DSL.
"""

__version__ = "0.1.0"

from .scenario import (  # noqa: F401
    Legality,
    ProblemType,
    Response,
    Scenario,
    Side,
    SideComposition,
    decode,
    detect_problem_type,
    encode,
    mirror,
)
from .features import (  # noqa: F401
    CmFeatureVector,
    FeatureContext,
    PrincipleSpec,
    build_cm_features,
    default_type_principles,
    eval_principle,
    parse_principle,
    parse_principles,
)
from .choicemodel import (  # noqa: F401
    ChoiceModelParams,
    ChoiceModelSpec,
    FitConfig,
    animals_vs_people_spec,
    equal_weight_spec,
    expanded_spec,
    expanded_types_spec,
    fit,
    log_likelihood,
    predict_left_prob,
    side_value,
    utilitarian_spec,
)
from .neuralnet import MlpArch, MlpParams, TrainConfig, forward, grid_search, train  # noqa: F401
from .metrics import EvalReport, RunSummary, accuracy, auc, normalized_aic, summarize_runs  # noqa: F401
from .ingest import Dataset, SplitConfig, read_csv, split, write_csv  # noqa: F401
from .datagen import (  # noqa: F401
    DesignConfig,
    TeacherSpec,
    generate_dataset,
    sample_scenario,
    simulate_response,
    teacher_left_prob,
)
from .residuals import (  # noqa: F401
    AggregateRecord,
    ResidualCluster,
    aggregate,
    attach_predictions,
    cluster_by_template,
    rank_gaps,
    report_table,
)
from .harness import (  # noqa: F401
    CurvePoint,
    LoopIterationReport,
    run_comparison,
    run_learning_curve,
    run_loop_iteration,
)
from .errors import ConvergenceError, MoralloopError, ParseError, SchemaError, ValidationError  # noqa: F401
