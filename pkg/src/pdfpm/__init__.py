"""Proximal derivative-free multiobjective method (PDFPM) for composite problems."""

from .errors import (
    ConfigurationError,
    EvaluationError,
    GenerationError,
    PDFPMError,
    SubproblemFailure,
    UsageError,
)
from .fdgrad import GradientMode, LambdaPolicy, approx_grad, gradient_vector, lambda_step
from .harness import ExperimentSpec, count_outcomes, pareto_filter, run_experiment
from .model import (
    BoxPreimageSupport,
    HolderMeta,
    ProblemSpec,
    SmoothObjective,
    Zero,
    eval_F,
    eval_h,
    load_problem,
    make_aas1,
    make_aas2,
)
from .robust import UncertaintySpec, gen_uncertainty, robustify
from .scaling import ScalingStrategy, init_scaling
from .solver import RunResult, SolverConfig, Status, run, stationarity_certificate, write_trace_csv
from .subsolve import assemble, solve

__version__ = "0.1.0"
