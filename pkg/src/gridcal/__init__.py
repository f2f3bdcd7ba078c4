"""Context-agnostic anomaly detection for power-grid measurement streams.

The package converts line-flow measurements taken under a changing grid
context (switching state, load/generation level) onto a fixed baseline
context using linear DC sensitivities, then detects topology and
measurement anomalies with a distance-weighted streaming z-score model.
"""

__version__ = "0.1.0"

from .cases import build_benchmark_case, builtin_case, write_matpower_case
from .detector import (
    AnomalyVerdict,
    DetectionState,
    MappingVariant,
    TickModel,
    fit_model,
    reanchor,
    run_stream,
    score,
    step,
)
from .errors import (
    BridgeError,
    CaseParseError,
    ConfigError,
    GridcalError,
    IslandingError,
    ModelError,
    NumericalError,
)
from .evaluation import RunResult, auc, f_measure_topk, run_variant, sweep
from .mapping import (
    BaselineContext,
    ContextAgnosticFrame,
    CorrectedFrame,
    MeasurementFrame,
    build_observation_matrix,
    context_agnostic,
    embed_raw,
    injection_correct,
    inverse_project,
)
from .netmodel import (
    Branch,
    Bus,
    GridCase,
    SensorSet,
    Topology,
    case_to_json,
    load_case,
    observed_edges,
    parse_case,
    symmetric_difference,
)
from .scengen import (
    Scenario,
    ScenarioConfig,
    generate_load_profile,
    generate_scenario,
    load_scenario,
    save_scenario,
)
from .sensitivity import (
    DcFlowSolution,
    LinearGridModel,
    LodfVector,
    PtdfMatrix,
    lodf,
    ptdf,
    solve_dc,
)
from .weighting import (
    DistanceCalculator,
    GraphDistance,
    TickWeights,
    assign_weights,
    compute_weights,
    edge_contribution,
    graph_distance,
    solve_water_level,
    tickwise_distances,
)
