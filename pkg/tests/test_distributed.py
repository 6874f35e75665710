"""Tests for the neighbor-local primal-dual solver."""

import dataclasses
import math

import numpy as np
import pytest

from fademac.allocation import AllocationProblem, flow_residuals, kkt_residuals
from fademac.distributed import (
    LN2,
    StepSizes,
    build_processors,
    exchange_round,
    local_update,
    run,
)
from fademac.errors import InputError, ProtocolError
from fademac.fixtures import load_fixture
from fademac.network import with_multicast_rate


def diamond_problem():
    return AllocationProblem(load_fixture("diamond"))


class TestStepSizes:
    def test_validation(self):
        with pytest.raises(InputError, match="tau"):
            StepSizes(
                tau=np.array([-0.1]),
                kappa=np.ones((1, 1)),
                alpha=np.ones((1, 1)),
                theta=np.ones((1, 1)),
                beta=np.ones((1, 1)),
                gamma=np.ones((1, 1)),
            )
        with pytest.raises(InputError, match="euler_dt"):
            StepSizes(
                tau=np.ones(1),
                kappa=np.ones((1, 1)),
                alpha=np.ones((1, 1)),
                theta=np.ones((1, 1)),
                beta=np.ones((1, 1)),
                gamma=np.ones((1, 1)),
                euler_dt=0.0,
            )

    def test_random_shapes_and_ranges(self):
        prob = diamond_problem()
        steps = StepSizes.random(prob, seed=0)
        assert steps.tau.shape == (4,)
        assert steps.kappa.shape == steps.alpha.shape == steps.theta.shape == (4, 1)
        assert steps.beta.shape == steps.gamma.shape == (3, 1)
        assert np.all(steps.tau >= 0.05 * 0.5) and np.all(steps.tau <= 0.05 * 1.5)
        assert np.all(steps.alpha >= 0.005 * 0.5) and np.all(steps.alpha <= 0.005 * 1.5)

    def test_random_is_seed_deterministic(self):
        prob = diamond_problem()
        a = StepSizes.random(prob, seed=3)
        b = StepSizes.random(prob, seed=3)
        c = StepSizes.random(prob, seed=4)
        assert np.array_equal(a.tau, b.tau) and np.array_equal(a.gamma, b.gamma)
        assert not np.array_equal(a.tau, c.tau)

    def test_for_node_slices(self):
        prob = diamond_problem()
        steps = StepSizes.random(prob, seed=1)
        node = steps.for_node(prob, 3)  # in-edges 2 and 3, node row 2
        assert np.array_equal(node.tau, steps.tau[[2, 3]])
        assert np.array_equal(node.kappa, steps.kappa[[2, 3]])
        assert np.array_equal(node.beta, steps.beta[2])
        assert np.array_equal(node.gamma, steps.gamma[2])


class TestBuildProcessors:
    def test_diamond_structure(self):
        prob = diamond_problem()
        procs = build_processors(prob)
        assert set(procs) == {1, 2, 3}

        leaf = procs[3]
        assert leaf.lam == 1.0
        assert leaf.in_tails == (1, 2) and leaf.in_edge_ids == (2, 3)
        assert leaf.out_heads == () and leaf.out_edge_ids == ()
        assert leaf.tail_mask.tolist() == [1.0, 1.0]
        assert leaf.psi.tolist() == [2.0 * LN2]
        assert leaf.r.shape == (2,) and leaf.f.shape == (2, 1)
        assert np.all(leaf.rho == 0.1) and np.all(leaf.w == 0.1)
        assert np.all(leaf.phi == 0.1) and np.all(leaf.mu == 0.1)

        relay = procs[1]
        assert relay.in_tails == (0,) and relay.tail_mask.tolist() == [0.0]
        assert relay.out_heads == (3,) and relay.out_edge_ids == (2,)
        assert relay.psi.tolist() == [0.0]
        assert relay.q is None and relay.out_flow is None

    def test_demand_scale(self):
        prob = diamond_problem()
        raw = build_processors(prob, demand_scale=1.0)
        assert raw[3].psi.tolist() == [2.0]

    def test_dual_init(self):
        prob = diamond_problem()
        procs = build_processors(prob, dual_init=0.25)
        assert np.all(procs[2].rho == 0.25) and np.all(procs[2].mu == 0.25)


class TestExchangeRound:
    def test_message_pattern_on_diamond(self):
        prob = diamond_problem()
        procs, messages = exchange_round(build_processors(prob), source=0, round_index=7)

        assert len(messages) == 2 * prob.n_edges
        assert all(m.round == 7 for m in messages)
        flows = [m for m in messages if m.kind == "flow"]
        duals = [m for m in messages if m.kind == "dual"]
        assert len(flows) == 4 and len(duals) == 4

        edges = set(prob.edges)
        for m in messages:
            assert (m.sender, m.receiver) in edges or (m.receiver, m.sender) in edges
        # flow reports go head -> tail, dual reports tail -> head
        assert all((m.receiver, m.sender) in edges for m in flows)
        assert all((m.sender, m.receiver) in edges for m in duals)

        for m in flows:
            assert set(m.payload) == {"edge", "flows"}
        stubs = [m for m in duals if m.sender == 0]
        assert len(stubs) == 2
        for m in stubs:
            assert set(m.payload) == {"edge"}
        for m in duals:
            if m.sender != 0:
                assert set(m.payload) == {"edge", "phi", "mu", "q"}

    def test_caches_after_exchange(self):
        prob = diamond_problem()
        procs, _ = exchange_round(build_processors(prob), source=0, round_index=1)

        # zero flows: only the destination misses its demand
        assert procs[1].q.tolist() == [0.0]
        assert procs[2].q.tolist() == [0.0]
        assert procs[3].q.tolist() == [-2.0 * LN2]

        assert procs[1].out_flow.shape == (1, 1)
        assert procs[3].out_flow.shape == (0, 1)

        # node 3 hears both relays' multipliers; relays hear only the stub
        assert procs[3].nbr_phi.tolist() == [[0.1], [0.1]]
        assert procs[3].nbr_mu.tolist() == [[0.1], [0.1]]
        assert procs[3].nbr_q.tolist() == [[0.0], [0.0]]
        assert procs[1].nbr_phi.tolist() == [[0.0]]

    def test_local_update_requires_exchange(self):
        prob = diamond_problem()
        procs = build_processors(prob)
        steps = StepSizes.random(prob, 0)
        with pytest.raises(ProtocolError, match="exchange_round must run"):
            local_update(procs[1], steps.for_node(prob, 1))


class TestLocalUpdate:
    def test_hand_computed_euler_step(self):
        """One raw-unit step on the two-hop line with demand 1, checked by hand."""
        net = with_multicast_rate(load_fixture("single_path"), 1.0)
        prob = AllocationProblem(net)
        steps = StepSizes(
            tau=np.array([0.2, 0.3]),
            kappa=np.array([[0.2], [0.3]]),
            alpha=np.array([[0.01], [0.01]]),
            theta=np.array([[0.02], [0.02]]),
            beta=np.array([[0.03], [0.05]]),
            gamma=np.array([[0.04], [0.06]]),
        )
        procs = build_processors(prob, demand_scale=1.0)
        procs, _ = exchange_round(procs, source=0, round_index=1)

        relay, clamps1 = local_update(procs[1], steps.for_node(prob, 1))
        dest, clamps2 = local_update(procs[2], steps.for_node(prob, 2))
        assert clamps1 == 0 and clamps2 == 0

        # relay: q = 0, all gaps zero, so only the rate moves:
        # r_dot = 0.2 * (-1 * e**0 + 0.1) = -0.18
        assert relay.r[0] == pytest.approx(-0.18, rel=1e-12)
        assert relay.f[0, 0] == 0.0
        assert relay.rho[0, 0] == 0.1 and relay.w[0, 0] == 0.1
        assert relay.phi[0] == 0.1 and relay.mu[0] == 0.1

        # destination: q = -1 (demand unmet), neighbor terms cancel, so
        # delta = -0.1 e**-1 + 0.1 e, f_dot = 0.3 * delta, r_dot = -0.27
        e = math.e
        assert dest.r[0] == pytest.approx(-0.27, rel=1e-12)
        assert dest.f[0, 0] == pytest.approx(0.03 * (e - 1 / e), rel=1e-12)
        assert dest.rho[0, 0] == 0.1 and dest.w[0, 0] == 0.1
        assert dest.phi[0] == pytest.approx(0.1 + 0.05 * (1 / e - 1), rel=1e-12)
        assert dest.mu[0] == pytest.approx(0.1 + 0.06 * (e - 1), rel=1e-12)

        # caches are cleared until the next exchange
        assert dest.q is None and dest.nbr_phi is None

    def test_clamp_counts_negative_steps(self):
        net = with_multicast_rate(load_fixture("single_path"), 1.0)
        prob = AllocationProblem(net)
        procs, _ = exchange_round(build_processors(prob, demand_scale=1.0), 0, 1)
        # destination: phi gap e**q - 1 = e**-1 - 1 < 0; a large gain drives
        # the small multiplier through zero
        steps = StepSizes(
            tau=np.array([0.1, 0.1]),
            kappa=np.array([[0.1], [0.1]]),
            alpha=np.array([[0.01], [0.01]]),
            theta=np.array([[0.01], [0.01]]),
            beta=np.array([[1.0], [1.0]]),
            gamma=np.array([[0.01], [0.01]]),
        )
        dest, clamps = local_update(procs[2], steps.for_node(prob, 2))
        assert clamps == 1
        assert dest.phi[0] == 0.0

    def test_saddle_point_is_stationary(self):
        """Started at the hand-derived optimum, 1000 rounds stay put.

        The flow lower-bound multipliers sit at zero with a negative gap, so
        each round clamps exactly one of them per edge; everything else should
        only accumulate rounding noise.
        """
        net = load_fixture("single_path")  # demand 2 bits
        prob = AllocationProblem(net)
        steps = StepSizes.random(prob, seed=0)
        node_steps = {v: steps.for_node(prob, v) for v in prob.nonsource}

        x = 2.0 * LN2  # natural-unit optimum of both rates and flows
        procs = build_processors(prob)
        procs[1] = dataclasses.replace(
            procs[1],
            r=np.array([x]),
            f=np.array([[x]]),
            rho=np.zeros((1, 1)),
            w=np.array([[4.0]]),
            phi=np.zeros(1),
            mu=np.array([4.0]),
        )
        procs[2] = dataclasses.replace(
            procs[2],
            r=np.array([x]),
            f=np.array([[x]]),
            rho=np.zeros((1, 1)),
            w=np.array([[4.0]]),
            phi=np.zeros(1),
            mu=np.array([8.0]),
        )

        for t in range(1, 1001):
            procs, _ = exchange_round(procs, net.source, t)
            clamp_total = 0
            stepped = {}
            for v in sorted(procs):
                stepped[v], clamps = local_update(procs[v], node_steps[v])
                clamp_total += clamps
            procs = stepped
            assert clamp_total == 2  # one pinned rho per edge

        for v, mu_star in ((1, 4.0), (2, 8.0)):
            assert abs(procs[v].r[0] - x) < 1e-9
            assert abs(procs[v].f[0, 0] - x) < 1e-9
            assert abs(procs[v].w[0, 0] - 4.0) < 1e-9
            assert abs(procs[v].mu[0] - mu_star) < 1e-9
            assert procs[v].rho[0, 0] == 0.0
            assert abs(procs[v].phi[0]) < 1e-12


class TestRun:
    def test_argument_validation(self):
        net = load_fixture("diamond")
        with pytest.raises(InputError, match="round_cap"):
            run(net, round_cap=0)
        with pytest.raises(InputError, match="window"):
            run(net, window=0)
        with pytest.raises(InputError, match="positive"):
            run(net, q_tol=0.0)

    def test_converges_to_centralized_on_diamond(self, centralized, distributed):
        _, report, _ = centralized("diamond")
        result, _ = distributed("diamond")
        assert result.converged and not result.diverged
        assert result.rounds <= 100_000
        assert abs(result.objective - report.objective) <= 1e-3 * report.objective
        state = result.state
        assert np.allclose(state.r, report.state.r, atol=5e-3)
        assert min(state.rho.min(), state.w.min(), state.phi.min(), state.mu.min()) >= 0
        prob = AllocationProblem(load_fixture("diamond"))
        assert np.max(np.abs(flow_residuals(prob, state.f))) < 1e-3
        # the assembled multipliers certify near-stationarity of the limit
        assert kkt_residuals(prob, state).stationarity < 0.05

    def test_trace_structure(self):
        net = load_fixture("diamond")
        result = run(net, round_cap=250)
        assert not result.converged and not result.diverged
        assert result.rounds == 250 and len(result.trace) == 250
        assert [row.round for row in result.trace[:3]] == [1, 2, 3]
        first = result.trace[0]
        # round 1 sees the zero-rate objective and the raw demand violation
        assert first.objective == pytest.approx(3.0)
        assert first.max_flow_violation == pytest.approx(2.0)
        assert first.max_dual == pytest.approx(0.1)
        assert result.objective == result.trace[-1].objective

    def test_seed_determinism(self):
        net = load_fixture("diamond")
        a = run(net, seed=5, round_cap=200)
        b = run(net, seed=5, round_cap=200)
        c = run(net, seed=6, round_cap=200)
        assert a.trace == b.trace
        assert a.trace != c.trace

    def test_explicit_steps_override_seed(self):
        net = load_fixture("diamond")
        steps = StepSizes.random(AllocationProblem(net), seed=9)
        a = run(net, steps=steps, seed=1, round_cap=150)
        b = run(net, steps=steps, seed=2, round_cap=150)
        assert a.trace == b.trace

    def test_collect_messages(self):
        net = load_fixture("single_path")
        result = run(net, round_cap=5, collect_messages=True)
        assert result.messages is not None
        assert len(result.messages) == 5 * 2 * len(net.links)
        edges = {(l.tail, l.head) for l in net.links}
        for m in result.messages:
            assert (m.sender, m.receiver) in edges or (m.receiver, m.sender) in edges
        assert {m.round for m in result.messages} == {1, 2, 3, 4, 5}

    def test_messages_not_kept_by_default(self):
        result = run(load_fixture("single_path"), round_cap=3)
        assert result.messages is None

    def test_divergence_detected(self):
        net = load_fixture("diamond")
        steps = StepSizes.random(AllocationProblem(net), seed=0, euler_dt=1e3)
        result = run(net, steps=steps, round_cap=2000)
        assert result.diverged and not result.converged
        assert result.rounds < 2000
