"""Bounded model checking of quantitative (QoS) properties of
asynchronous message-passing systems.

The package combines four ingredients: global choreographies with a
weak-sequencing language recognizer, communicating finite-state
machines whose states carry real-arithmetic QoS contracts, an
aggregation function turning run prefixes into first-order contexts,
and a choreography-indexed temporal logic evaluated by bounded search
with atoms discharged through an SMT solver.
"""

from .aggregation import AggregateExpr, QosContext, aggregate
from .choreography import (
    Choice,
    Empty,
    GChor,
    Interaction,
    Label,
    Loop,
    Par,
    Pomset,
    Seq,
    alphabet,
    is_maximal_word,
    is_prefix_word,
    parse_gchor,
    pomsets,
    subject,
)
from .logic import (
    Atom,
    Evaluator,
    QlFormula,
    QlNot,
    QlOr,
    Top,
    Until,
    Verdict,
    box,
    check_valid,
    diamond,
    oracle_models,
    parse_ql,
    q_models,
    q_sat,
    q_until,
    ql_and,
    ql_implies,
)
from .machines import (
    Cfsm,
    Configuration,
    QosCfsm,
    QosSystem,
    Run,
    enabled,
    enumerate_runs,
    initial_configuration,
    is_final,
    parse_system,
    parse_trace,
    replay,
    step,
    trace,
)
from .rcf import (
    AggregatorKind,
    AttributeRegistry,
    QosSpecification,
    free_attributes,
    instantiate,
    parse_rcf_formula,
)
from .smt import (
    SolverError,
    SolverProtocolError,
    SolverSession,
    SolverTimeout,
    SolverUnknown,
    encode_query,
    entails,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
