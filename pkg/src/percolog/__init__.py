"""percolog: desk-scale simulation of how ground-fact distribution and
search-space connectivity drive the percolation of Horn-clause inference."""

from .engine import (
    AnswerSet,
    Evaluator,
    Query,
    QuerySet,
    QueryTemplate,
    backchain,
    bottom_up_eval,
    depth_profile,
    solutions,
    unify,
)
from .graph import (
    AndNode,
    AndOrGraph,
    GoalSchema,
    OrNode,
    SearchSpace,
    average_degree,
    build_graph,
    induced_space,
    or_out_degrees,
)
from .growth import GrowthSchedule, InfeasibleConfigError, SynthConfig, ablate_grow, synth_kb
from .harness import (
    DetectorReport,
    ExperimentConfig,
    SweepRow,
    compare_models,
    detect_degenerate,
    detect_transition,
    emit,
    expand_templates,
    run_sweep,
)
from .kb import (
    ArityConflictError,
    Atom,
    AxiomSet,
    Constant,
    Fact,
    HornClause,
    KbError,
    KbSyntaxError,
    KbValidationError,
    KnowledgeBase,
    Substitution,
    Variable,
    parse_kb,
    serialize_kb,
)
from .metrics import AlphaReport, QaResult, alpha, answered_fraction, threshold_hit
from .sampling import (
    MatchedPair,
    SampleParams,
    generate_replicates,
    matched_pairs,
    model1_sample,
    model2_sample,
)

__version__ = "0.1.0"
