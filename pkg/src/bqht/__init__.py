"""Heavy-traffic analysis of multi-class multi-server FCFS-ALIS service systems."""

__version__ = "0.1.0"

from .design import (
    ChainPartition,
    DesignReport,
    admissible_topological_orders,
    braess_delta,
    chain_waits,
    find_chain_partition,
    implement_waits_chained,
    implementability_necessary,
    min_delay_menu,
    single_crp_condition,
)
from .errors import BqhtError
from .flows import Flow, limiting_flow, residual_matching
from .matching import (
    MatchMatrix,
    class_utilities,
    kkt_verify,
    qp_matching,
    serverless_matching,
)
from .model import (
    AdmissibilityResult,
    ArrivalPath,
    Instance,
    Menu,
    ServiceRates,
    admissibility_check,
    instance_from_dict,
    instance_to_dict,
    make_instance,
    stability_check,
)
from .oracle import (
    OracleReport,
    SweepTable,
    critical_subsets,
    exact_waits,
    induced_state_limits,
    limit_consistency_sweep,
)
from .sim import (
    GammaInvarianceVerdict,
    SimConfig,
    SimEstimate,
    matching_gamma_invariance_test,
    simulate,
)
from .structure import (
    CrpComponent,
    CrpDag,
    TopologicalOrder,
    decompose,
    topological_orders,
)
from .waits import (
    WaitReport,
    average_wait,
    component_waits,
    conditional_average_wait,
    conditional_wait,
    min_wait_bound,
    order_weight,
)

__all__ = [name for name in dir() if not name.startswith("_")]
