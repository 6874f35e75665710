"""Multicast rate allocation minimizing the network outage surrogate.

For per-link rates ``r`` the network outage is (to first order, and as an
upper-bound surrogate) controlled by ``sum_j lambda_j * 2**Rt_j`` over
receivers ``j``, where ``Rt_j`` is the total rate entering ``j``. The
allocation program minimizes that sum subject to flow feasibility: for every
destination ``d`` a flow ``f^d`` with ``0 <= f^d <= r`` delivers the full
multicast demand from the source (destinations are separate commodities and
may reuse the same link rate).

The optimum is certified by explicit KKT residuals of the exponential-form
Lagrangian

    sum_j lambda_j 2**Rt_j + rho.(e**-f - 1) + w.(e**(f-r) - 1)
                           + phi.(e**q - 1) + mu.(e**-q - 1)

where ``q`` is the per-node, per-destination conservation residual
(inflow - outflow - demand) and all duals are nonnegative. This is the
Lagrangian whose gradient flow the distributed solver follows, so both
solvers are certified by the same residuals.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import InputError, NotComputableError
from .network import NetworkSpec

LN2 = math.log(2.0)

#: Default per-link rate cap handed to the conic solver (keeps the
#: exponential objective in floating range). Solves where the cap binds are
#: rejected rather than silently truncated.
DEFAULT_RATE_CAP = 64.0


@dataclass(frozen=True)
class AllocationProblem:
    """Index structure of the allocation program for one network."""

    net: NetworkSpec

    @cached_property
    def edges(self) -> tuple[tuple[int, int], ...]:
        """(tail, head) pairs in the network's canonical link order."""
        return tuple((l.tail, l.head) for l in self.net.links)

    @cached_property
    def edge_index(self) -> dict[tuple[int, int], int]:
        return {e: k for k, e in enumerate(self.edges)}

    @cached_property
    def dests(self) -> tuple[int, ...]:
        return self.net.destinations

    @cached_property
    def nonsource(self) -> tuple[int, ...]:
        return self.net.nonsource_nodes()

    @cached_property
    def node_row(self) -> dict[int, int]:
        """Row of each non-source node in the conservation-residual matrix."""
        return {v: i for i, v in enumerate(self.nonsource)}

    @cached_property
    def in_edges(self) -> dict[int, tuple[int, ...]]:
        return {
            v: tuple(k for k, e in enumerate(self.edges) if e[1] == v)
            for v in self.net.nodes
        }

    @cached_property
    def out_edges(self) -> dict[int, tuple[int, ...]]:
        return {
            v: tuple(k for k, e in enumerate(self.edges) if e[0] == v)
            for v in self.net.nodes
        }

    @cached_property
    def receivers(self) -> tuple[int, ...]:
        return self.net.receivers()

    @cached_property
    def lam(self) -> dict[int, float]:
        """Receiver channel parameter by node id."""
        return {j: self.net.receiver_lambda(j) for j in self.receivers}

    @cached_property
    def lam_head(self) -> np.ndarray:
        """Channel parameter of each edge's head receiver, per edge."""
        return np.array([self.lam[e[1]] for e in self.edges])

    @cached_property
    def psi(self) -> np.ndarray:
        """Demand matrix (non-source node row, destination column), in bits."""
        psi = np.zeros((len(self.nonsource), len(self.dests)))
        for k, d in enumerate(self.dests):
            psi[self.node_row[d], k] = self.net.multicast_rate
        return psi

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_dests(self) -> int:
        return len(self.dests)


@dataclass(frozen=True)
class AllocationState:
    """Primal rates/flows (bits) and exponential-form duals.

    Shapes: ``r`` (edges,), ``f``/``rho``/``w`` (edges, destinations),
    ``phi``/``mu`` (non-source nodes, destinations).
    """

    r: np.ndarray
    f: np.ndarray
    rho: np.ndarray
    w: np.ndarray
    phi: np.ndarray
    mu: np.ndarray

    def __post_init__(self):
        for name in ("r", "f", "rho", "w", "phi", "mu"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.r.ndim != 1:
            raise InputError(f"r must be 1-D, got shape {self.r.shape}")
        m = self.r.shape[0]
        k = self.f.shape[1] if self.f.ndim == 2 else -1
        for name in ("f", "rho", "w"):
            if getattr(self, name).shape != (m, k):
                raise InputError(f"{name} must have shape ({m}, destinations)")
        if self.phi.ndim != 2 or self.phi.shape[1] != k or self.mu.shape != self.phi.shape:
            raise InputError("phi and mu must have shape (nodes, destinations)")

    @classmethod
    def zeros(cls, prob: AllocationProblem) -> "AllocationState":
        m, k, n = prob.n_edges, prob.n_dests, len(prob.nonsource)
        return cls(
            r=np.zeros(m),
            f=np.zeros((m, k)),
            rho=np.zeros((m, k)),
            w=np.zeros((m, k)),
            phi=np.zeros((n, k)),
            mu=np.zeros((n, k)),
        )


def rate_totals(prob: AllocationProblem, r) -> np.ndarray:
    """Total incoming rate per receiver (receivers in sorted order), bits."""
    r = np.asarray(r, dtype=float)
    return np.array([r[list(prob.in_edges[j])].sum() for j in prob.receivers])


def objective(prob: AllocationProblem, r) -> float:
    """sum_j lambda_j * 2**(total rate into j) over receivers."""
    totals = rate_totals(prob, r)
    lams = np.array([prob.lam[j] for j in prob.receivers])
    return float(lams @ np.exp2(totals))


def flow_residuals(prob: AllocationProblem, f) -> np.ndarray:
    """Conservation residuals q = inflow - outflow - demand, in bits.

    Shape (non-source nodes, destinations); zero exactly when every
    destination's flow is conserved.
    """
    f = np.asarray(f, dtype=float)
    if f.shape != (prob.n_edges, prob.n_dests):
        raise InputError(f"expected flows of shape {(prob.n_edges, prob.n_dests)}, got {f.shape}")
    q = np.empty((len(prob.nonsource), prob.n_dests))
    for i, v in enumerate(prob.nonsource):
        inflow = f[list(prob.in_edges[v])].sum(axis=0) if prob.in_edges[v] else 0.0
        outflow = f[list(prob.out_edges[v])].sum(axis=0) if prob.out_edges[v] else 0.0
        q[i] = inflow - outflow - prob.psi[i]
    return q


@dataclass(frozen=True)
class KktResiduals:
    """Worst-case optimality residuals (all nonnegative magnitudes).

    ``primal``: constraint violation (flow bounds and conservation, bits).
    ``dual``: how far the most negative multiplier dips below zero.
    ``stationarity``: largest Lagrangian-gradient component.
    ``complementarity``: largest multiplier x constraint-gap product.
    """

    primal: float
    dual: float
    stationarity: float
    complementarity: float

    def ok(
        self,
        primal_tol: float = 1e-6,
        dual_tol: float = 1e-8,
        stationarity_tol: float = 1e-5,
        complementarity_tol: float = 1e-5,
    ) -> bool:
        return (
            self.primal <= primal_tol
            and self.dual <= dual_tol
            and self.stationarity <= stationarity_tol
            and self.complementarity <= complementarity_tol
        )


def kkt_residuals(prob: AllocationProblem, state: AllocationState) -> KktResiduals:
    """Residuals of the exponential-form Lagrangian at the given point."""
    r, f = state.r, state.f
    if f.shape != (prob.n_edges, prob.n_dests):
        raise InputError(f"state sized for {f.shape}, problem needs {(prob.n_edges, prob.n_dests)}")
    q = flow_residuals(prob, f)

    primal = max(
        0.0,
        float(np.max(-f, initial=0.0)),
        float(np.max(f - r[:, None], initial=0.0)),
        float(np.max(np.abs(q), initial=0.0)),
    )
    dual = max(
        0.0,
        *(float(np.max(-a, initial=0.0)) for a in (state.rho, state.w, state.phi, state.mu)),
    )

    # Gradient wrt r: per edge, ln2 * lam_head * 2**Rt(head) - sum_d w e**(f-r)
    totals = {j: t for j, t in zip(prob.receivers, rate_totals(prob, r))}
    head_tot = np.array([totals[e[1]] for e in prob.edges])
    efr = np.exp(f - r[:, None])
    grad_r = LN2 * prob.lam_head * np.exp2(head_tot) - (state.w * efr).sum(axis=1)

    # Gradient wrt f: -rho e**-f + w e**(f-r) + head conservation term
    #                 - tail conservation term (absent when the tail is the source)
    eq = np.exp(q)
    enq = np.exp(-q)
    nu_term = state.phi * eq - state.mu * enq  # per (non-source node, dest)
    grad_f = -state.rho * np.exp(-f) + state.w * efr
    for k, (i, j) in enumerate(prob.edges):
        grad_f[k] += nu_term[prob.node_row[j]]
        if i != prob.net.source:
            grad_f[k] -= nu_term[prob.node_row[i]]
    stationarity = max(float(np.max(np.abs(grad_r))), float(np.max(np.abs(grad_f))))

    complementarity = max(
        float(np.max(np.abs(state.rho * np.expm1(-f)), initial=0.0)),
        float(np.max(np.abs(state.w * np.expm1(f - r[:, None])), initial=0.0)),
        float(np.max(np.abs(state.phi * np.expm1(q)), initial=0.0)),
        float(np.max(np.abs(state.mu * np.expm1(-q)), initial=0.0)),
    )
    return KktResiduals(primal, dual, stationarity, complementarity)


def duals_from_linear(
    prob: AllocationProblem, r, f, rho_lin, w_lin, nu
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Map ordinary-Lagrangian multipliers to exponential-form multipliers.

    The linear form uses ``-rho_lin f + w_lin (f - r) + nu (demand - q)``
    terms; matching gradients of the exponential form at the same point gives
    ``rho = rho_lin e**f``, ``w = w_lin e**(r-f)``, and the signed
    conservation dual ``nu`` splits into ``phi = max(nu, 0) e**-q`` and
    ``mu = max(-nu, 0) e**q``.
    """
    r = np.asarray(r, dtype=float)
    f = np.asarray(f, dtype=float)
    q = flow_residuals(prob, f)
    rho = np.asarray(rho_lin, dtype=float) * np.exp(f)
    w = np.asarray(w_lin, dtype=float) * np.exp(r[:, None] - f)
    nu = np.asarray(nu, dtype=float)
    phi = np.maximum(nu, 0.0) * np.exp(-q)
    mu = np.maximum(-nu, 0.0) * np.exp(q)
    return rho, w, phi, mu


@dataclass(frozen=True)
class CentralizedReport:
    """Solution, objective value, and its KKT certificate."""

    state: AllocationState
    objective: float
    kkt: KktResiduals
    certified: bool
    status: str
    solver: str


def _zero_demand_state(prob: AllocationProblem) -> AllocationState:
    # With zero demand the optimum is r = f = 0; every constraint is tight,
    # so the multipliers follow from stationarity alone:
    # sum_d w[e, d] = ln2 * lam_head[e] (r-gradient), rho = w (f-gradient).
    m, k = prob.n_edges, prob.n_dests
    w = np.repeat(LN2 * prob.lam_head[:, None] / k, k, axis=1)
    return AllocationState(
        r=np.zeros(m),
        f=np.zeros((m, k)),
        rho=w.copy(),
        w=w,
        phi=np.zeros((len(prob.nonsource), k)),
        mu=np.zeros((len(prob.nonsource), k)),
    )


def solve_centralized(
    prob: AllocationProblem,
    r_max: float = DEFAULT_RATE_CAP,
    seed: int | None = None,
) -> CentralizedReport:
    """Solve the allocation program with a conic solver and certify the result.

    ``seed`` is accepted for interface symmetry with the distributed solver
    and is unused: the interior-point backend has no random initialization,
    so results are deterministic for a given problem.

    The per-link cap ``r_max`` exists only to keep the exponential objective
    in floating range; a solve where it binds raises NotComputableError
    (raise the cap or lower the demand) instead of returning a truncated
    optimum.
    """
    del seed
    net = prob.net
    if not math.isfinite(r_max) or r_max <= 0:
        raise InputError(f"r_max must be positive and finite, got {r_max!r}")
    if net.multicast_rate > r_max:
        raise InputError(
            f"multicast rate {net.multicast_rate} exceeds the per-link cap {r_max}"
        )
    if net.multicast_rate == 0.0:
        state = _zero_demand_state(prob)
        kkt = kkt_residuals(prob, state)
        return CentralizedReport(
            state=state,
            objective=objective(prob, state.r),
            kkt=kkt,
            certified=kkt.ok(),
            status="optimal",
            solver="closed-form",
        )

    import cvxpy as cp

    m, k = prob.n_edges, prob.n_dests
    rv = cp.Variable(m)
    fv = cp.Variable((m, k))
    nonneg = fv >= 0
    caps = [fv[:, d] <= rv for d in range(k)]
    rate_cap = rv <= r_max
    conservation = []  # (row in the non-source ordering, constraint)
    for v in prob.nonsource:
        ins, outs = prob.in_edges[v], prob.out_edges[v]
        if not ins and not outs:
            continue  # isolated node: nothing to conserve
        expr = cp.sum(fv[list(ins)], axis=0) if ins else 0
        if outs:
            expr = expr - cp.sum(fv[list(outs)], axis=0)
        conservation.append((prob.node_row[v], expr == prob.psi[prob.node_row[v]]))
    terms = [
        prob.lam[j] * cp.exp(LN2 * cp.sum(rv[list(prob.in_edges[j])]))
        for j in prob.receivers
    ]
    program = cp.Problem(
        cp.Minimize(cp.sum(cp.hstack(terms))),
        [nonneg, *caps, rate_cap, *(c for _, c in conservation)],
    )

    # The backend's "inaccurate" heuristic fires at these tight tolerances;
    # optimality is judged by our own KKT residuals below, not solver status.
    solver = "CLARABEL"
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="Solution may be inaccurate")
        try:
            program.solve(
                solver=cp.CLARABEL,
                tol_gap_abs=1e-12,
                tol_gap_rel=1e-12,
                tol_feas=1e-12,
                tol_ktratio=1e-9,
                max_iter=200,
            )
            if rv.value is None:
                raise RuntimeError(f"no solution returned (status {program.status})")
        except Exception:
            solver = "SCS"
            program.solve(solver=cp.SCS, eps=1e-10, max_iters=200_000)
            if rv.value is None:
                raise NotComputableError(
                    f"conic solve failed (status {program.status})"
                ) from None

    r = np.asarray(rv.value, dtype=float)
    f = np.asarray(fv.value, dtype=float)
    cap_dual = np.asarray(rate_cap.dual_value, dtype=float)
    if np.max(r) > r_max - 1.0 or np.max(cap_dual) > 1e-6:
        raise NotComputableError(
            f"per-link rate cap {r_max} is active (max rate {np.max(r):.3g}); "
            "raise r_max or lower the multicast rate"
        )
    rho_lin = np.asarray(nonneg.dual_value, dtype=float)
    w_lin = np.column_stack([np.asarray(c.dual_value, dtype=float) for c in caps])
    nu = np.zeros((len(prob.nonsource), k))
    for row, c in conservation:
        nu[row] = np.asarray(c.dual_value, dtype=float)
    rho, w, phi, mu = duals_from_linear(prob, r, f, rho_lin, w_lin, nu)
    state = AllocationState(r=r, f=f, rho=rho, w=w, phi=phi, mu=mu)
    kkt = kkt_residuals(prob, state)
    return CentralizedReport(
        state=state,
        objective=objective(prob, r),
        kkt=kkt,
        certified=kkt.ok(),
        status=str(program.status),
        solver=solver,
    )
