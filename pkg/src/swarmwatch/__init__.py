"""swarmwatch: black-box behavior-space mapping and runtime action gating.

A swarm of watchdog testing agents probes an opaque system-under-test in
what-if mode, classifies every proposed action against a hard/soft
constraint system, compresses and partitions the labeled samples into a
cluster map of both input and action space, and keeps an output gate that
never releases an unpermissible action. A shepherd retunes the agents'
parameters and exploration regions between rounds. Ground-truth scenarios
score the discovered maps.
"""

from .agent import (
    ACTION,
    INPUT,
    WatchdogAgent,
    AgentParams,
    Cluster,
    TestRound,
    compress_actions,
    compress_inputs,
    purity_lower_bound,
    split_probe_budget,
    wilson_lower,
)
from .boxes import Box, sample_in_box
from .campaign import (
    CampaignConfig,
    CampaignReport,
    ConfigError,
    emit_report,
    run_campaign,
)
from .constraints import (
    FD,
    HARD,
    LR,
    NL,
    SAT,
    SOFT,
    TAU_HARD,
    ActionClassification,
    Category,
    CnfPayload,
    Constraint,
    ConstraintError,
    ConstraintSystem,
    EvaluationFault,
    ExprPayload,
    LinearPayload,
    MembershipPayload,
    check_permissible,
    classify,
    classify_sequence,
    eval_class_violation,
    inefficiency,
)
from .parsing import ParseError, parse_constraint, parse_system, parse_variable_decl
from .scenario import (
    POST,
    PRE,
    Scenario,
    ScoreCard,
    build_stock_scenario,
    oracle_label,
    score,
)
from .shepherd import PerformanceIndicators, RegionAssignment, Shepherd
from .spaces import (
    Assignment,
    SpaceError,
    Variable,
    VariableSpace,
    boolean,
    integer,
    integer_set,
    real,
    space,
)
from .sut import (
    BLOCKED,
    RELEASED,
    CellMap,
    GateEvent,
    GateOutcome,
    GateState,
    LearningSut,
    LinearSut,
    PiecewiseSut,
    StatefulSut,
    SutFault,
    SutHandle,
    SutSpec,
    SutSpecError,
    act,
    make_reference_sut,
    rugged_cells,
    shutdown,
)

__version__ = "0.1.0"
