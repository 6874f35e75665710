"""Multicast network model over slow-fading links.

A network is a simple digraph whose links carry independent Rayleigh-faded
channels. Every link is summarized by the exponential-gain parameter
``lambda = noise_var(head) / (2 * variance * power)``; all links into one
receiver must share that parameter (relative tolerance 1e-9), which is what
makes each receiver an equal-parameter multiple-access channel. The source
has no incoming links and every destination is reachable from it.

Receivers fail independently, so for per-link rates ``r`` the network
outage is ``1 - prod_j (1 - P_j)`` over receivers ``j``. Per-receiver
probabilities come from the exact formulas (always used for receivers with
at most two in-links, where the bounds are tight anyway), the bound
selected by the caller, or Monte Carlo.

The JSON file format is strict: unknown fields anywhere are rejected and
schema errors name the offending field.
"""

from __future__ import annotations

import dataclasses
import json
import math
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import mac_outage, monte_carlo
from .errors import InputError, NotComputableError, SchemaError
from .mac_outage import MacSpec, OutageEstimate, RateVector

#: Relative tolerance when checking that a receiver's in-links share one
#: exponential parameter (guards 1-ulp differences between equivalent
#: variance/power factorizations).
LAMBDA_MATCH_TOL = 1e-9

#: Max-flow slack: a rate vector supports demand R when every destination's
#: max flow is at least R minus this.
FLOW_TOL = 1e-9


@dataclass(frozen=True)
class LinkStat:
    """One directed fading link: endpoints, fading variance, transmit power."""

    tail: int
    head: int
    variance: float
    power: float

    def __post_init__(self):
        if not isinstance(self.tail, int) or not isinstance(self.head, int):
            raise InputError(f"link endpoints must be integers: {self.tail!r}->{self.head!r}")
        if self.tail == self.head:
            raise InputError(f"self-loop at node {self.tail}")
        for name in ("variance", "power"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not math.isfinite(v) or v <= 0:
                raise InputError(f"link {self.tail}->{self.head} {name} must be positive, got {v!r}")
        object.__setattr__(self, "variance", float(self.variance))
        object.__setattr__(self, "power", float(self.power))


@dataclass(frozen=True)
class NetworkSpec:
    """Validated multicast network.

    ``nodes`` maps node id to receiver noise variance. Links are stored in
    canonical (tail, head) ascending order; destinations are sorted.
    """

    nodes: dict[int, float]
    links: tuple[LinkStat, ...]
    source: int
    destinations: tuple[int, ...]
    multicast_rate: float

    def __post_init__(self):
        nodes = dict(self.nodes)
        for node, noise in nodes.items():
            if not isinstance(node, int):
                raise InputError(f"node id {node!r} must be an integer")
            if not isinstance(noise, (int, float)) or not math.isfinite(noise) or noise <= 0:
                raise InputError(f"node {node} noise_var must be positive, got {noise!r}")
        nodes = {node: float(noise) for node, noise in nodes.items()}
        links = tuple(sorted(self.links, key=lambda e: (e.tail, e.head)))
        if not links:
            raise InputError("network has no links")
        seen = set()
        for link in links:
            for end in (link.tail, link.head):
                if end not in nodes:
                    raise InputError(f"link {link.tail}->{link.head} references unknown node {end}")
            if (link.tail, link.head) in seen:
                raise InputError(f"duplicate link {link.tail}->{link.head}")
            seen.add((link.tail, link.head))
        if self.source not in nodes:
            raise InputError(f"source {self.source} is not a node")
        destinations = tuple(sorted(self.destinations))
        if not destinations:
            raise InputError("at least one destination is required")
        if len(set(destinations)) != len(destinations):
            raise InputError(f"duplicate destinations: {destinations}")
        for d in destinations:
            if d not in nodes:
                raise InputError(f"destination {d} is not a node")
        if self.source in destinations:
            raise InputError(f"source {self.source} cannot be a destination")
        rate = self.multicast_rate
        if not isinstance(rate, (int, float)) or not math.isfinite(rate) or rate < 0:
            raise InputError(f"multicast_rate must be a nonnegative number, got {rate!r}")
        if any(link.head == self.source for link in links):
            raise InputError(f"source {self.source} must have no incoming links")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "links", links)
        object.__setattr__(self, "destinations", destinations)
        object.__setattr__(self, "multicast_rate", float(rate))
        unreachable = set(destinations) - self._reachable_from_source()
        if unreachable:
            raise InputError(f"destinations not reachable from source: {sorted(unreachable)}")
        self._check_receiver_parameters()

    def _reachable_from_source(self) -> set[int]:
        seen = {self.source}
        frontier = deque([self.source])
        while frontier:
            u = frontier.popleft()
            for link in self.links:
                if link.tail == u and link.head not in seen:
                    seen.add(link.head)
                    frontier.append(link.head)
        return seen

    def _check_receiver_parameters(self) -> None:
        for j in self.receivers():
            lams = [self.link_lambda(link) for link in self.in_links(j)]
            ref = lams[0]
            for link, lam in zip(self.in_links(j), lams):
                if abs(lam - ref) > LAMBDA_MATCH_TOL * abs(ref):
                    raise InputError(
                        f"receiver {j}: link {link.tail}->{link.head} has channel "
                        f"parameter {lam!r} but link "
                        f"{self.in_links(j)[0].tail}->{j} has {ref!r}; all links "
                        "into one receiver must match"
                    )

    # -- topology helpers ------------------------------------------------

    def in_links(self, j: int) -> tuple[LinkStat, ...]:
        """Links into node j, ascending tail id."""
        return tuple(link for link in self.links if link.head == j)

    def out_links(self, j: int) -> tuple[LinkStat, ...]:
        return tuple(link for link in self.links if link.tail == j)

    def receivers(self) -> tuple[int, ...]:
        """Sorted ids of nodes with at least one incoming link."""
        return tuple(sorted({link.head for link in self.links}))

    def nonsource_nodes(self) -> tuple[int, ...]:
        return tuple(sorted(n for n in self.nodes if n != self.source))

    def link_index(self, link) -> int:
        """Position of a link (or a (tail, head) pair) in canonical order."""
        key = (link.tail, link.head) if isinstance(link, LinkStat) else tuple(link)
        for i, candidate in enumerate(self.links):
            if (candidate.tail, candidate.head) == key:
                return i
        raise InputError(f"no link {key[0]}->{key[1]} in network")

    # -- channel parameters ----------------------------------------------

    def link_lambda(self, link: LinkStat) -> float:
        """Exponential-gain parameter noise(head) / (2 * variance * power)."""
        return self.nodes[link.head] / (2.0 * link.variance * link.power)

    def receiver_lambda(self, j: int) -> float:
        """The receiver's common channel parameter (lowest-tail in-link's value)."""
        links = self.in_links(j)
        if not links:
            raise InputError(f"node {j} has no incoming links")
        return self.link_lambda(links[0])

    def mac_of(self, j: int) -> MacSpec:
        """The receiver's multiple-access channel (equal parameters by invariant)."""
        if j == self.source:
            raise InputError(f"source {self.source} is not a receiver")
        links = self.in_links(j)
        if not links:
            raise InputError(f"node {j} has no incoming links")
        return MacSpec((self.receiver_lambda(j),) * len(links))


def with_multicast_rate(net: NetworkSpec, rate: float) -> NetworkSpec:
    return dataclasses.replace(net, multicast_rate=rate)


def with_snr(net: NetworkSpec, snr: float) -> NetworkSpec:
    """Set every link's power to snr * noise_var(head) (uniform power/noise ratio)."""
    if not math.isfinite(snr) or snr <= 0:
        raise InputError(f"snr must be positive and finite, got {snr!r}")
    links = tuple(
        dataclasses.replace(link, power=snr * net.nodes[link.head]) for link in net.links
    )
    return dataclasses.replace(net, links=links)


# -- max flow / demand feasibility ----------------------------------------


def max_flow(net: NetworkSpec, capacities, target: int) -> float:
    """Max source->target flow under per-link capacities (shortest augmenting paths)."""
    capacities = np.asarray(capacities, dtype=float)
    if capacities.shape != (len(net.links),):
        raise InputError(f"expected {len(net.links)} capacities, got shape {capacities.shape}")
    if np.any(capacities < 0):
        raise InputError("capacities must be nonnegative")
    if target not in net.nodes:
        raise InputError(f"target {target} is not a node")
    residual: dict[tuple[int, int], float] = {}
    for link, cap in zip(net.links, capacities):
        residual[(link.tail, link.head)] = residual.get((link.tail, link.head), 0.0) + cap
        residual.setdefault((link.head, link.tail), 0.0)
    neighbors: dict[int, list[int]] = {}
    for u, v in residual:
        neighbors.setdefault(u, []).append(v)
    total = 0.0
    while True:
        # BFS for the shortest residual path source -> target
        parent = {net.source: None}
        frontier = deque([net.source])
        while frontier and target not in parent:
            u = frontier.popleft()
            for v in sorted(neighbors.get(u, ())):
                if v not in parent and residual[(u, v)] > FLOW_TOL:
                    parent[v] = u
                    frontier.append(v)
        if target not in parent:
            return total
        bottleneck = math.inf
        v = target
        while parent[v] is not None:
            u = parent[v]
            bottleneck = min(bottleneck, residual[(u, v)])
            v = u
        v = target
        while parent[v] is not None:
            u = parent[v]
            residual[(u, v)] -= bottleneck
            residual[(v, u)] += bottleneck
            v = u
        total += bottleneck


def feasible_multicast(net: NetworkSpec, link_rates) -> bool:
    """True when every destination's max flow reaches the multicast demand.

    Per-destination flows may share link rates (they are separate commodities),
    so the check is one max-flow per destination with capacities ``link_rates``.
    """
    return all(
        max_flow(net, link_rates, d) >= net.multicast_rate - FLOW_TOL
        for d in net.destinations
    )


# -- outage ----------------------------------------------------------------

_RECEIVER_METHODS = {
    "exact": mac_outage.outage_exact,
    "lower": mac_outage.outage_lower_iid,
    "upper": mac_outage.outage_upper_iid,
    "weak": mac_outage.outage_upper_weak,
}


def receiver_rates(net: NetworkSpec, link_rates, j: int) -> RateVector:
    """Rates on the in-links of receiver j, in ascending-tail order."""
    link_rates = np.asarray(link_rates, dtype=float)
    return RateVector(tuple(link_rates[net.link_index(link)] for link in net.in_links(j)))


def receiver_outages(
    net: NetworkSpec,
    link_rates,
    method: str = "lower",
    mc: monte_carlo.McConfig | None = None,
) -> dict[int, OutageEstimate]:
    """Per-receiver outage estimates by the selected method.

    Bound methods return the exact probability where it is sharper (at most
    two in-links). ``method='exact'`` raises NotComputableError for
    receivers whose exact probability has no analytic route. ``method='mc'``
    runs an independent per-receiver estimate on a stream derived from the
    base seed and the node id.
    """
    out: dict[int, OutageEstimate] = {}
    for j in net.receivers():
        mac = net.mac_of(j)
        rates = receiver_rates(net, link_rates, j)
        if method == "mc":
            cfg = mc if mc is not None else monte_carlo.McConfig()
            child = int(np.random.SeedSequence([cfg.seed, j]).generate_state(1)[0])
            out[j] = monte_carlo.mc_mac_outage(
                mac, rates, dataclasses.replace(cfg, seed=child)
            )
        elif method in _RECEIVER_METHODS:
            estimate = _RECEIVER_METHODS[method](mac, rates)
            if not estimate.computable:
                raise NotComputableError(
                    f"receiver {j} has {mac.n} in-links: outage is not computable "
                    "exactly; use bounds or mc"
                )
            out[j] = estimate
        else:
            raise InputError(f"unknown method {method!r}")
    return out


def combine_receiver_estimates(estimates) -> OutageEstimate:
    """Network outage 1 - prod_j (1 - P_j) from independent receiver estimates.

    The result is tagged with the weakest direction present: any upper-bound
    input makes it an upper bound, any lower-bound input a lower bound, and
    mixing the two directions is rejected.
    """
    estimates = list(estimates)
    if not estimates:
        raise InputError("no receiver estimates to combine")
    directions = {e.direction for e in estimates}
    if not directions <= {"exact", "lower", "upper", "mc"}:
        raise InputError("cannot combine a not-computable estimate")
    if {"lower", "upper"} <= directions:
        raise InputError("cannot combine lower-bound and upper-bound receivers")
    success = 1.0
    for e in estimates:
        success *= 1.0 - e.value
    if "upper" in directions:
        method = "upper"
    elif "lower" in directions:
        method = "lower"
    elif "mc" in directions:
        method = "mc"
    else:
        method = "exact"
    return OutageEstimate(min(max(1.0 - success, 0.0), 1.0), method)


def network_outage(
    net: NetworkSpec,
    link_rates,
    method: str = "lower",
    mc: monte_carlo.McConfig | None = None,
) -> OutageEstimate:
    """Network-wide outage by the selected method.

    ``method='mc'`` estimates the union event directly (one joint trial
    stream); other methods combine per-receiver analytic values.
    """
    if method == "mc":
        return monte_carlo.mc_network_outage(
            net, link_rates, mc if mc is not None else monte_carlo.McConfig()
        )
    return combine_receiver_estimates(
        receiver_outages(net, link_rates, method).values()
    )


# -- JSON file format -------------------------------------------------------

_TOP_FIELDS = {"nodes", "links", "source", "destinations", "multicast_rate"}
_NODE_FIELDS = {"id", "noise_var"}
_LINK_FIELDS = {"tail", "head", "variance", "power"}


def _require_object(value, path: str, fields: set[str]) -> dict:
    if not isinstance(value, dict):
        raise SchemaError(f"{path}: expected an object, got {type(value).__name__}")
    unknown = set(value) - fields
    if unknown:
        raise SchemaError(f"{path}: unknown field {sorted(unknown)[0]!r}")
    missing = fields - set(value)
    if missing:
        raise SchemaError(f"{path}: missing field {sorted(missing)[0]!r}")
    return value


def _require_int(value, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaError(f"{path}: expected an integer, got {value!r}")
    return value


def _require_number(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(f"{path}: expected a number, got {value!r}")
    return float(value)


def network_from_dict(data) -> NetworkSpec:
    """Build and validate a NetworkSpec from parsed JSON."""
    data = _require_object(data, "network", _TOP_FIELDS)
    if not isinstance(data["nodes"], list):
        raise SchemaError("nodes: expected a list")
    nodes: dict[int, float] = {}
    for i, entry in enumerate(data["nodes"]):
        entry = _require_object(entry, f"nodes[{i}]", _NODE_FIELDS)
        node = _require_int(entry["id"], f"nodes[{i}].id")
        if node in nodes:
            raise SchemaError(f"nodes[{i}].id: duplicate node {node}")
        nodes[node] = _require_number(entry["noise_var"], f"nodes[{i}].noise_var")
    if not isinstance(data["links"], list):
        raise SchemaError("links: expected a list")
    links = []
    for i, entry in enumerate(data["links"]):
        entry = _require_object(entry, f"links[{i}]", _LINK_FIELDS)
        try:
            links.append(
                LinkStat(
                    tail=_require_int(entry["tail"], f"links[{i}].tail"),
                    head=_require_int(entry["head"], f"links[{i}].head"),
                    variance=_require_number(entry["variance"], f"links[{i}].variance"),
                    power=_require_number(entry["power"], f"links[{i}].power"),
                )
            )
        except InputError as exc:
            raise SchemaError(f"links[{i}]: {exc}") from exc
    if not isinstance(data["destinations"], list):
        raise SchemaError("destinations: expected a list")
    destinations = tuple(
        _require_int(d, f"destinations[{i}]") for i, d in enumerate(data["destinations"])
    )
    return NetworkSpec(
        nodes=nodes,
        links=tuple(links),
        source=_require_int(data["source"], "source"),
        destinations=destinations,
        multicast_rate=_require_number(data["multicast_rate"], "multicast_rate"),
    )


def network_to_dict(net: NetworkSpec) -> dict:
    """Serialize to the JSON file structure (canonical ordering)."""
    return {
        "nodes": [
            {"id": node, "noise_var": net.nodes[node]} for node in sorted(net.nodes)
        ],
        "links": [
            {"tail": l.tail, "head": l.head, "variance": l.variance, "power": l.power}
            for l in net.links
        ],
        "source": net.source,
        "destinations": list(net.destinations),
        "multicast_rate": net.multicast_rate,
    }


def load_network(path) -> NetworkSpec:
    """Load and validate a network JSON file."""
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return network_from_dict(data)


def save_network(net: NetworkSpec, path) -> None:
    Path(path).write_text(json.dumps(network_to_dict(net), indent=2) + "\n")
