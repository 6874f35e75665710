"""Outage probabilities and rate allocation for slow-fading multicast networks.

The package has two halves:

* Outage analysis of slow Rayleigh-fading multiple-access channels — exact
  probabilities where an analytic route exists (:mod:`fademac.exp_linear`,
  :mod:`fademac.mac_outage`), analytic lower/upper bounds, and vectorized
  Monte Carlo (:mod:`fademac.monte_carlo`), lifted to whole multicast
  networks in :mod:`fademac.network`.
* Rate allocation minimizing the network's outage surrogate
  (:mod:`fademac.allocation` for the certified centralized solve,
  :mod:`fademac.distributed` for the simulated message-passing dynamics).

``fademac.cli`` exposes the same operations as the ``fademac`` command.
"""

from .allocation import (
    AllocationProblem,
    AllocationState,
    CentralizedReport,
    KktResiduals,
    kkt_residuals,
    objective,
    solve_centralized,
)
from .distributed import DistributedRun, Message, StepSizes, run as run_distributed
from .errors import (
    FademacError,
    IllConditionedError,
    InputError,
    NotComputableError,
    ProtocolError,
    SchemaError,
)
from .exp_linear import (
    ConjunctionSystem,
    RecursionResult,
    erlang_survival,
    evaluate,
    hypoexponential_survival,
)
from .fixtures import FIXTURES, fixture_path, load_fixture
from .mac_outage import (
    MacSpec,
    OutageEstimate,
    RateVector,
    outage_exact,
    outage_lower_distinct,
    outage_lower_iid,
    outage_upper_iid,
    outage_upper_weak,
)
from .monte_carlo import McConfig, mc_mac_outage, mc_network_outage
from .network import (
    LinkStat,
    NetworkSpec,
    feasible_multicast,
    load_network,
    max_flow,
    network_outage,
    receiver_outages,
    save_network,
    with_multicast_rate,
    with_snr,
)

__version__ = "0.1.0"

__all__ = [
    "AllocationProblem",
    "AllocationState",
    "CentralizedReport",
    "ConjunctionSystem",
    "DistributedRun",
    "FademacError",
    "FIXTURES",
    "IllConditionedError",
    "InputError",
    "KktResiduals",
    "LinkStat",
    "MacSpec",
    "McConfig",
    "Message",
    "NetworkSpec",
    "NotComputableError",
    "OutageEstimate",
    "ProtocolError",
    "RateVector",
    "RecursionResult",
    "SchemaError",
    "StepSizes",
    "erlang_survival",
    "evaluate",
    "feasible_multicast",
    "fixture_path",
    "hypoexponential_survival",
    "kkt_residuals",
    "load_fixture",
    "load_network",
    "max_flow",
    "mc_mac_outage",
    "mc_network_outage",
    "network_outage",
    "objective",
    "outage_exact",
    "outage_lower_distinct",
    "outage_lower_iid",
    "outage_upper_iid",
    "outage_upper_weak",
    "receiver_outages",
    "run_distributed",
    "save_network",
    "solve_centralized",
    "with_multicast_rate",
    "with_snr",
    "__version__",
]
