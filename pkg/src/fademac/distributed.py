"""Distributed rate allocation by neighbor-local primal-dual dynamics.

Each non-source node runs a processor that owns the rates and per-destination
flows of its incoming links, the multipliers of the flow box constraints on
those links, and the conservation multipliers of its own node. One round is
two message waves along the links, then one local gradient step per node:

* wave 1 (head -> tail, per link): the flow values on that link, so every
  tail can total its outflow and form its conservation residual ``q``;
* wave 2 (tail -> head, per link): the tail's conservation multipliers and
  residual, which enter the head's flow gradient. The source participates as
  a static stub: it emits an empty report on each outgoing link (keeping the
  round at exactly two messages per link) and discards what it receives.

The primal descent / dual ascent laws are the gradient flow of the
exponential-form Lagrangian in :mod:`fademac.allocation`, discretized by an
explicit Euler step. ``run`` drives the network in natural-log units
(demand scaled by ln 2) so the stationary point of the smooth dynamics is
exactly the optimum of the bit-unit allocation program; reported rates,
flows, and multipliers are converted back to bit units.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .allocation import (
    AllocationProblem,
    AllocationState,
    duals_from_linear,
    flow_residuals,
)
from .errors import InputError, ProtocolError
from .network import NetworkSpec

LN2 = math.log(2.0)

#: Default multiplier initialization (zero would start on the boundary where
#: the ascent direction is projected away).
DUAL_INIT = 0.1


@dataclass(frozen=True)
class Message:
    """One link-local message: ``kind`` is 'flow' (wave 1) or 'dual' (wave 2)."""

    round: int
    sender: int
    receiver: int
    kind: str
    payload: dict


@dataclass(frozen=True)
class NodeSteps:
    """Per-node slice of the step sizes (arrays over the node's in-links)."""

    tau: np.ndarray
    kappa: np.ndarray
    alpha: np.ndarray
    theta: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray


@dataclass(frozen=True)
class StepSizes:
    """Jittered per-variable gain factors for the gradient laws.

    ``tau`` scales rate descent (per edge), ``kappa`` flow descent (edge x
    destination), ``alpha``/``theta`` the ascent of the flow lower/upper box
    multipliers, ``beta``/``gamma`` the ascent of the conservation
    multipliers (non-source node x destination). ``euler_dt`` is the Euler
    step applied on top of the gains.
    """

    tau: np.ndarray
    kappa: np.ndarray
    alpha: np.ndarray
    theta: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    euler_dt: float = 1.0

    def __post_init__(self):
        for name in ("tau", "kappa", "alpha", "theta", "beta", "gamma"):
            arr = np.array(getattr(self, name), dtype=float)
            if arr.size and (not np.all(np.isfinite(arr)) or np.min(arr) <= 0):
                raise InputError(f"step sizes {name} must be positive and finite")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not math.isfinite(self.euler_dt) or self.euler_dt <= 0:
            raise InputError(f"euler_dt must be positive, got {self.euler_dt!r}")

    @classmethod
    def random(
        cls,
        prob: AllocationProblem,
        seed: int = 0,
        primal_scale: float = 0.05,
        dual_scale: float = 0.005,
        spread: tuple[float, float] = (0.5, 1.5),
        euler_dt: float = 1.0,
    ) -> "StepSizes":
        """Draw jittered gains: uniform in ``spread`` times the scale.

        Primal gains roughly 10x the dual gains keeps the dual oscillation
        damped; the defaults were chosen so the bundled fixtures converge
        under the default stopping rule.
        """
        rng = np.random.default_rng(seed)
        m, k, n = prob.n_edges, prob.n_dests, len(prob.nonsource)
        lo, hi = spread
        return cls(
            tau=primal_scale * rng.uniform(lo, hi, m),
            kappa=primal_scale * rng.uniform(lo, hi, (m, k)),
            alpha=dual_scale * rng.uniform(lo, hi, (m, k)),
            theta=dual_scale * rng.uniform(lo, hi, (m, k)),
            beta=dual_scale * rng.uniform(lo, hi, (n, k)),
            gamma=dual_scale * rng.uniform(lo, hi, (n, k)),
            euler_dt=euler_dt,
        )

    def for_node(self, prob: AllocationProblem, node: int) -> NodeSteps:
        ids = list(prob.in_edges[node])
        row = prob.node_row[node]
        return NodeSteps(
            tau=self.tau[ids],
            kappa=self.kappa[ids],
            alpha=self.alpha[ids],
            theta=self.theta[ids],
            beta=self.beta[row],
            gamma=self.gamma[row],
        )


@dataclass(frozen=True)
class NodeProcessor:
    """State of one non-source node.

    Owns the rates ``r`` and flows ``f`` of its in-links, the box
    multipliers ``rho`` (flow >= 0) and ``w`` (flow <= rate) of those links,
    and its own conservation multipliers ``phi``/``mu``. The ``out_flow``,
    ``nbr_*`` and ``q`` fields are per-round caches filled by
    ``exchange_round`` and consumed (then cleared) by ``local_update``.
    """

    node: int
    lam: float
    psi: np.ndarray
    in_tails: tuple[int, ...]
    in_edge_ids: tuple[int, ...]
    out_heads: tuple[int, ...]
    out_edge_ids: tuple[int, ...]
    tail_mask: np.ndarray
    r: np.ndarray
    f: np.ndarray
    rho: np.ndarray
    w: np.ndarray
    phi: np.ndarray
    mu: np.ndarray
    out_flow: np.ndarray | None = None
    nbr_phi: np.ndarray | None = None
    nbr_mu: np.ndarray | None = None
    nbr_q: np.ndarray | None = None
    q: np.ndarray | None = None

    @property
    def n_in(self) -> int:
        return len(self.in_edge_ids)

    @property
    def n_dests(self) -> int:
        return self.psi.shape[0]

    @property
    def rate_total(self) -> float:
        return float(self.r.sum())


def build_processors(
    prob: AllocationProblem,
    demand_scale: float = LN2,
    dual_init: float = DUAL_INIT,
) -> dict[int, NodeProcessor]:
    """One processor per non-source node, zero primal state, flat duals.

    ``demand_scale`` multiplies the bit-unit demand; the default ln 2 puts
    the dynamics in natural-log units (see module docstring). Pass 1.0 to
    step the laws on raw bit-valued state.
    """
    k = prob.n_dests
    procs: dict[int, NodeProcessor] = {}
    for v in prob.nonsource:
        in_ids = prob.in_edges[v]
        out_ids = prob.out_edges[v]
        n_in = len(in_ids)
        procs[v] = NodeProcessor(
            node=v,
            lam=prob.lam.get(v, 0.0),
            psi=demand_scale * prob.psi[prob.node_row[v]],
            in_tails=tuple(prob.edges[e][0] for e in in_ids),
            in_edge_ids=in_ids,
            out_heads=tuple(prob.edges[e][1] for e in out_ids),
            out_edge_ids=out_ids,
            tail_mask=np.array(
                [1.0 if prob.edges[e][0] != prob.net.source else 0.0 for e in in_ids]
            ),
            r=np.zeros(n_in),
            f=np.zeros((n_in, k)),
            rho=np.full((n_in, k), float(dual_init)),
            w=np.full((n_in, k), float(dual_init)),
            phi=np.full(k, float(dual_init)),
            mu=np.full(k, float(dual_init)),
        )
    return procs


def exchange_round(
    procs: dict[int, NodeProcessor], source: int, round_index: int
) -> tuple[dict[int, NodeProcessor], tuple[Message, ...]]:
    """Run both message waves; returns processors with caches filled.

    Emits exactly two messages per link: a flow report from the link's head
    to its tail and a dual report from its tail to its head (a zero-payload
    stub when the tail is the source).
    """
    messages: list[Message] = []

    # Wave 1: flow reports head -> tail, so tails can total their outflow.
    flow_inbox: dict[int, dict[int, np.ndarray]] = {v: {} for v in procs}
    for j in sorted(procs):
        proc = procs[j]
        for a, (i, e) in enumerate(zip(proc.in_tails, proc.in_edge_ids)):
            messages.append(
                Message(
                    round_index,
                    sender=j,
                    receiver=i,
                    kind="flow",
                    payload={"edge": e, "flows": tuple(float(x) for x in proc.f[a])},
                )
            )
            if i != source:  # the source stub discards its inbox
                flow_inbox[i][e] = proc.f[a]

    with_q: dict[int, NodeProcessor] = {}
    for j in sorted(procs):
        proc = procs[j]
        k = proc.n_dests
        rows = []
        for e in proc.out_edge_ids:
            if e not in flow_inbox[j]:
                raise ProtocolError(f"node {j} got no flow report for link {e}")
            rows.append(flow_inbox[j][e])
        out_flow = np.array(rows) if rows else np.zeros((0, k))
        q = proc.f.sum(axis=0) - out_flow.sum(axis=0) - proc.psi
        with_q[j] = dataclasses.replace(proc, out_flow=out_flow, q=q)

    # Wave 2: dual reports tail -> head (source: empty stub payloads).
    dual_inbox: dict[int, dict[int, tuple]] = {v: {} for v in procs}
    for i in sorted(with_q):
        proc = with_q[i]
        for j, e in zip(proc.out_heads, proc.out_edge_ids):
            messages.append(
                Message(
                    round_index,
                    sender=i,
                    receiver=j,
                    kind="dual",
                    payload={
                        "edge": e,
                        "phi": tuple(float(x) for x in proc.phi),
                        "mu": tuple(float(x) for x in proc.mu),
                        "q": tuple(float(x) for x in proc.q),
                    },
                )
            )
            dual_inbox[j][e] = (proc.phi, proc.mu, proc.q)
    for j in sorted(with_q):
        proc = with_q[j]
        for i, e in zip(proc.in_tails, proc.in_edge_ids):
            if i == source:
                messages.append(
                    Message(round_index, sender=source, receiver=j, kind="dual",
                            payload={"edge": e})
                )

    final: dict[int, NodeProcessor] = {}
    for j in sorted(with_q):
        proc = with_q[j]
        k = proc.n_dests
        nbr_phi = np.zeros((proc.n_in, k))
        nbr_mu = np.zeros((proc.n_in, k))
        nbr_q = np.zeros((proc.n_in, k))
        for a, (i, e) in enumerate(zip(proc.in_tails, proc.in_edge_ids)):
            if i == source:
                continue  # stub report: multipliers stay zero (masked anyway)
            if e not in dual_inbox[j]:
                raise ProtocolError(f"node {j} got no dual report for link {e}")
            phi_i, mu_i, q_i = dual_inbox[j][e]
            nbr_phi[a], nbr_mu[a], nbr_q[a] = phi_i, mu_i, q_i
        final[j] = dataclasses.replace(
            proc, nbr_phi=nbr_phi, nbr_mu=nbr_mu, nbr_q=nbr_q
        )
    return final, tuple(messages)


def _project(drift: np.ndarray, multiplier: np.ndarray) -> np.ndarray:
    """Positive-orthant projection: drop negative drift on negative multipliers."""
    return np.where((drift < 0) & (multiplier < 0), 0.0, drift)


def local_update(
    proc: NodeProcessor, steps: NodeSteps, dt: float = 1.0
) -> tuple[NodeProcessor, int]:
    """One Euler step of the node's gradient laws; returns (node, clamp count).

    Primal descent:
      rate:  tau * (-lam e**Rt + sum_d w e**(f-r))
      flow:  kappa * (rho e**-f - w e**(f-r) + delta)
    where ``delta`` couples the head's and tail's conservation multipliers
    (the tail term is masked out on links from the source). Dual ascent uses
    the projected constraint gaps and clamps multipliers at zero afterwards;
    the clamp count is the number of multipliers the step pushed negative.
    """
    for name in ("out_flow", "nbr_phi", "nbr_mu", "nbr_q", "q"):
        if getattr(proc, name) is None:
            raise ProtocolError(
                f"node {proc.node}: exchange_round must run before local_update"
            )
    clamps = 0

    def ascend(mult: np.ndarray, gain: np.ndarray, gap: np.ndarray) -> np.ndarray:
        nonlocal clamps
        stepped = mult + dt * gain * _project(gap, mult)
        clamps += int(np.count_nonzero(stepped < 0))
        return np.maximum(stepped, 0.0)

    # Divergent dynamics must surface as non-finite state (detected by the
    # driver), not as arithmetic exceptions mid-step.
    with np.errstate(over="ignore", invalid="ignore"):
        r, f = proc.r, proc.f
        efr = np.exp(f - r[:, None])
        enf = np.exp(-f)
        eq = np.exp(proc.q)
        enq = np.exp(-proc.q)

        delta = (-proc.phi * eq + proc.mu * enq)[None, :] + proc.tail_mask[:, None] * (
            proc.nbr_phi * np.exp(proc.nbr_q) - proc.nbr_mu * np.exp(-proc.nbr_q)
        )
        r_dot = steps.tau * (
            -proc.lam * float(np.exp(proc.rate_total)) + (proc.w * efr).sum(axis=1)
        )
        f_dot = steps.kappa * (proc.rho * enf - proc.w * efr + delta)

        updated = dataclasses.replace(
            proc,
            r=r + dt * r_dot,
            f=f + dt * f_dot,
            rho=ascend(proc.rho, steps.alpha, enf - 1.0),
            w=ascend(proc.w, steps.theta, efr - 1.0),
            phi=ascend(proc.phi, steps.beta, eq - 1.0),
            mu=ascend(proc.mu, steps.gamma, enq - 1.0),
            out_flow=None,
            nbr_phi=None,
            nbr_mu=None,
            nbr_q=None,
            q=None,
        )
    return updated, clamps


@dataclass(frozen=True)
class TraceRow:
    """Per-round diagnostics (objective and violation in bit units)."""

    round: int
    objective: float
    max_flow_violation: float
    max_dual: float
    clamp_events: int


@dataclass(frozen=True)
class DistributedRun:
    """Outcome of a distributed solve (state and objective in bit units)."""

    state: AllocationState
    objective: float
    trace: tuple[TraceRow, ...]
    rounds: int
    converged: bool
    diverged: bool
    messages: tuple[Message, ...] | None = None


def _assemble_state(
    prob: AllocationProblem, procs: dict[int, NodeProcessor]
) -> AllocationState:
    """Collect per-node natural-unit state into a bit-unit AllocationState.

    Scaling natural-unit primal state by 1/ln2 gives bit rates/flows; the
    matching multipliers come from the ordinary-Lagrangian bridge (natural
    exp-form -> linear, scale by ln2, linear -> bit exp-form).
    """
    m, k = prob.n_edges, prob.n_dests
    r_nat = np.zeros(m)
    f_nat = np.zeros((m, k))
    rho_nat = np.zeros((m, k))
    w_nat = np.zeros((m, k))
    phi_nat = np.zeros((len(prob.nonsource), k))
    mu_nat = np.zeros((len(prob.nonsource), k))
    for v, proc in procs.items():
        ids = list(proc.in_edge_ids)
        r_nat[ids] = proc.r
        f_nat[ids] = proc.f
        rho_nat[ids] = proc.rho
        w_nat[ids] = proc.w
        phi_nat[prob.node_row[v]] = proc.phi
        mu_nat[prob.node_row[v]] = proc.mu
    with np.errstate(over="ignore", invalid="ignore"):
        r_bits = r_nat / LN2
        f_bits = f_nat / LN2
        q_nat = LN2 * flow_residuals(prob, f_bits)
        rho_lin = LN2 * rho_nat * np.exp(-f_nat)
        w_lin = LN2 * w_nat * np.exp(f_nat - r_nat[:, None])
        nu = LN2 * (phi_nat * np.exp(q_nat) - mu_nat * np.exp(-q_nat))
        rho, w, phi, mu = duals_from_linear(prob, r_bits, f_bits, rho_lin, w_lin, nu)
    return AllocationState(r=r_bits, f=f_bits, rho=rho, w=w, phi=phi, mu=mu)


def run(
    net: NetworkSpec,
    steps: StepSizes | None = None,
    seed: int = 0,
    round_cap: int = 100_000,
    window: int = 100,
    obj_rel_tol: float = 1e-6,
    q_tol: float = 1e-4,
    dual_init: float = DUAL_INIT,
    collect_messages: bool = False,
) -> DistributedRun:
    """Drive the distributed dynamics until the objective plateaus.

    Stops as converged when, over the last ``window`` rounds, the objective's
    relative spread is below ``obj_rel_tol`` and the worst conservation
    violation is below ``q_tol`` bits; stops as diverged if the objective
    leaves floating range or exceeds 1e6 x its initial value. Every round is
    validated to consist of exactly two messages per link, each traveling
    along a link.
    """
    if round_cap < 1:
        raise InputError(f"round_cap must be at least 1, got {round_cap}")
    if window < 1:
        raise InputError(f"window must be at least 1, got {window}")
    if obj_rel_tol <= 0 or q_tol <= 0:
        raise InputError("obj_rel_tol and q_tol must be positive")
    prob = AllocationProblem(net)
    if steps is None:
        steps = StepSizes.random(prob, seed)
    node_steps = {v: steps.for_node(prob, v) for v in prob.nonsource}
    procs = build_processors(prob, demand_scale=LN2, dual_init=dual_init)
    edge_set = set(prob.edges)
    receivers = set(prob.receivers)

    trace: list[TraceRow] = []
    log: list[Message] = [] if collect_messages else None
    initial_obj = None
    converged = diverged = False

    for round_index in range(1, round_cap + 1):
        procs, messages = exchange_round(procs, net.source, round_index)
        if len(messages) != 2 * prob.n_edges:
            raise ProtocolError(
                f"round {round_index}: {len(messages)} messages, "
                f"expected {2 * prob.n_edges}"
            )
        for msg in messages:
            along = (msg.sender, msg.receiver) in edge_set
            reverse = (msg.receiver, msg.sender) in edge_set
            if not (along or reverse):
                raise ProtocolError(
                    f"round {round_index}: message {msg.sender}->{msg.receiver} "
                    "does not follow a link"
                )
        if collect_messages:
            log.extend(messages)

        with np.errstate(over="ignore", invalid="ignore"):
            obj = float(
                sum(
                    procs[v].lam * np.exp(procs[v].rate_total)
                    for v in procs
                    if v in receivers
                )
            )
        q_max = max(
            (float(np.max(np.abs(procs[v].q), initial=0.0)) for v in procs),
            default=0.0,
        ) / LN2
        dual_max = max(
            max(
                float(np.max(p.rho, initial=0.0)),
                float(np.max(p.w, initial=0.0)),
                float(np.max(p.phi, initial=0.0)),
                float(np.max(p.mu, initial=0.0)),
            )
            for p in procs.values()
        )

        clamp_total = 0
        stepped: dict[int, NodeProcessor] = {}
        for v in sorted(procs):
            stepped[v], clamps = local_update(procs[v], node_steps[v], steps.euler_dt)
            clamp_total += clamps
        procs = stepped

        trace.append(TraceRow(round_index, obj, q_max, dual_max, clamp_total))
        if initial_obj is None:
            initial_obj = obj
        if not math.isfinite(obj) or obj > 1e6 * max(1.0, initial_obj):
            diverged = True
            break
        if round_index >= window and q_max < q_tol:
            recent = [row.objective for row in trace[-window:]]
            spread = max(recent) - min(recent)
            if spread <= obj_rel_tol * max(abs(obj), 1e-12):
                converged = True
                break

    state = _assemble_state(prob, procs)
    return DistributedRun(
        state=state,
        objective=trace[-1].objective if trace else 0.0,
        trace=tuple(trace),
        rounds=len(trace),
        converged=converged,
        diverged=diverged,
        messages=tuple(log) if collect_messages else None,
    )
