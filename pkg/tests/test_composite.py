import numpy as np
import pytest

from papc.composite import (CompositeBlock, CompositeProblem, ReplicatedOracle,
                            composite_dual_residuals, composite_step, lift,
                            lift_flat_equivalence, run_composite, structured_min_step,
                            validate_composite)
from papc.errors import DimensionMismatchError
from papc.linop import LinearMap, norm
from papc.monotone import (MonotoneBlock, cocoercivity_check, gradient_map, l1,
                           quadratic_lipschitz, quadratic_ls, sq_dist, zero_prox)
from papc.solver import PapcState, Schedules, papc_step, run
from papc.stochastic import DeterministicOracle, GaussianOracle, VarianceSchedule
from papc.zoo import build_instance, oracle_solution


def single_block_problem(dim=3, seed=2):
    rng = np.random.default_rng(seed)
    D = np.eye(dim) + 0.2 * rng.standard_normal((dim, dim)) / np.sqrt(dim)
    h = quadratic_ls(D, rng.standard_normal(dim))
    g = l1(0.5, dim)
    block = CompositeBlock(L=LinearMap.identity(dim), A=MonotoneBlock.from_prox(g),
                           sigma=1.0, g=g)
    cp = CompositeProblem(weights=np.array([1.0]), C=gradient_map(h, quadratic_lipschitz(D)),
                          blocks=(block,), h=h)
    return cp, Schedules.constant(0.9 * cp.C.beta, 0.9, cp.C.beta)


class TestLift:
    def test_single_block_is_base_problem(self):
        cp, _ = single_block_problem()
        lp = lift(cp)
        assert lp.spec.B.dim == cp.base_dim
        x = np.array([0.3, -0.2, 0.9])
        np.testing.assert_array_equal(lp.spec.P_V(x), x)  # V = H for m = 1

    def test_averaging_examples(self):
        cp = build_instance("multi", {}).composite
        lp = lift(cp)
        # uniform two-block mean is checked at the projector level in linop;
        # here: the weighted average of the lifted diagonal is the base point.
        x = np.arange(cp.base_dim, dtype=float)
        bold = lp.embed_primal(x)
        np.testing.assert_allclose(lp.average_primal(bold), x)
        np.testing.assert_allclose(lp.spec.P_V(bold), bold, atol=1e-14)

    def test_lifted_cocoercivity_constant(self):
        inst = build_instance("multi", {})
        rep = cocoercivity_check(inst.lifted.spec.B, pairs=200, rng=13)
        assert rep.passed

    def test_blockwise_resolvent_of_lifted_dual(self):
        inst = build_instance("multi", {})
        lp = inst.lifted
        cp = inst.composite
        v = np.random.default_rng(0).standard_normal(sum(cp.dual_dims))
        out = lp.spec.A.resolvent(0.7, v)
        parts = [blk.A.resolvent(0.7, vi) for blk, vi in zip(cp.blocks, cp.split_dual(v))]
        np.testing.assert_array_equal(out, np.concatenate(parts))

    def test_weights_must_sum_to_one(self):
        cp, _ = single_block_problem()
        with pytest.raises(DimensionMismatchError):
            CompositeProblem(weights=np.array([0.5, 0.4]), C=cp.C,
                             blocks=cp.blocks * 2, h=cp.h)

    def test_zero_coupling_rejected(self):
        cp, _ = single_block_problem()
        bad = CompositeBlock(L=LinearMap.from_matrix(np.zeros((3, 3))),
                             A=MonotoneBlock.zero(3), sigma=1.0)
        with pytest.raises(DimensionMismatchError):
            CompositeProblem(weights=np.array([1.0]), C=cp.C, blocks=(bad,))


class TestCompositeStep:
    def test_m1_bitwise_equals_papc_step(self):
        cp, sched = single_block_problem()
        lp = lift(cp)
        oracle = GaussianOracle(cp.C, VarianceSchedule.polynomial(1.0, 1.0), seed=3)
        lifted_oracle = ReplicatedOracle(GaussianOracle(
            cp.C, VarianceSchedule.polynomial(1.0, 1.0), seed=3), 1, cp.base_dim)
        a = PapcState(0, np.zeros(3), np.zeros(3))
        b = PapcState(0, np.zeros(3), np.zeros(3))
        for _ in range(50):
            a = composite_step(a, cp, sched, oracle)
            b = papc_step(b, lp.spec, sched, lifted_oracle)
            assert np.array_equal(a.x, b.x)
            assert np.array_equal(a.v, b.v)

    def test_zero_operators_fixed_point(self):
        dim = 2
        h = quadratic_ls(np.zeros((1, dim)), np.zeros(1))  # h = 0
        g = zero_prox(dim)
        blk = CompositeBlock(L=LinearMap.identity(dim), A=MonotoneBlock.zero(dim),
                             sigma=1.0, g=g)
        cp = CompositeProblem(weights=np.array([1.0]),
                              C=gradient_map(h, 1.0), blocks=(blk,), h=h)
        sched = Schedules.constant(0.5, 0.5, 1.0)
        st = PapcState(0, np.array([0.4, -0.1]), np.zeros(dim))
        out = composite_step(st, cp, sched, DeterministicOracle(cp.C))
        np.testing.assert_array_equal(out.x, st.x)
        np.testing.assert_array_equal(out.v, st.v)

    def test_multi_one_step_matches_lifted(self):
        inst = build_instance("multi", {})
        cp = inst.composite
        flat = composite_step(PapcState(0, np.zeros(cp.base_dim),
                                        np.zeros(sum(cp.dual_dims))),
                              cp, inst.schedules, DeterministicOracle(cp.C))
        lp = inst.lifted
        bold = papc_step(PapcState(0, np.zeros(lp.spec.B.dim), np.zeros(lp.spec.A.dim)),
                         lp.spec, inst.schedules,
                         ReplicatedOracle(DeterministicOracle(cp.C), cp.m, cp.base_dim))
        np.testing.assert_allclose(bold.x[:cp.base_dim], flat.x, atol=1e-14)
        np.testing.assert_allclose(bold.v, flat.v, atol=1e-14)


class TestEquivalence:
    def test_multi_100_steps_three_seeds(self):
        inst = build_instance("multi", {})
        for seed in (0, 1, 2):
            dev = lift_flat_equivalence(inst.composite, inst.schedules, seed, 100,
                                        noise=VarianceSchedule.polynomial(1.0, 1.0))
            assert dev <= 1e-12, dev

    def test_m1_exactly_zero(self):
        cp, sched = single_block_problem()
        dev = lift_flat_equivalence(cp, sched, 0, 100)
        assert dev == 0.0

    def test_mismatched_weights_is_loud(self):
        inst = build_instance("multi", {})
        cp = inst.composite
        wrong = CompositeProblem(weights=np.array([0.2, 0.3, 0.5]), C=cp.C,
                                 blocks=cp.blocks, h=cp.h)
        lp_right = lift(cp)
        oracle = DeterministicOracle(cp.C)
        rep = ReplicatedOracle(DeterministicOracle(cp.C), cp.m, cp.base_dim)
        flat = PapcState(0, np.zeros(cp.base_dim), np.zeros(sum(cp.dual_dims)))
        bold = PapcState(0, np.zeros(lp_right.spec.B.dim), np.zeros(lp_right.spec.A.dim))
        for _ in range(20):
            flat = composite_step(flat, wrong, inst.schedules, oracle)
            bold = papc_step(bold, lp_right.spec, inst.schedules, rep)
        dev = np.max(np.abs(bold.x[:cp.base_dim] - flat.x))
        assert dev > 1e-6


class TestStructuredMin:
    def test_zero_gs_reduce_to_gradient_descent(self):
        dim = 3
        rng = np.random.default_rng(4)
        D = np.eye(dim) + 0.1 * rng.standard_normal((dim, dim))
        h = quadratic_ls(D, rng.standard_normal(dim))
        blocks = tuple(
            CompositeBlock(L=LinearMap.identity(dim), A=MonotoneBlock.zero(dim),
                           sigma=1.0, g=zero_prox(dim))
            for _ in range(2))
        cp = CompositeProblem(weights=np.array([0.6, 0.4]),
                              C=gradient_map(h, quadratic_lipschitz(D)),
                              blocks=blocks, h=h)
        sched = Schedules.constant(0.9 * cp.C.beta, 0.5, cp.C.beta)
        st = PapcState(0, rng.standard_normal(dim), np.zeros(2 * dim))
        out = structured_min_step(st, cp, sched, DeterministicOracle(cp.C))
        gamma = sched.gamma0
        np.testing.assert_allclose(out.x, st.x - gamma * cp.C.apply(st.x), atol=1e-14)
        np.testing.assert_array_equal(out.v, np.zeros(2 * dim))

    def test_bitwise_equals_composite_step_with_prox_blocks(self):
        inst = build_instance("multi", {})
        cp = inst.composite
        oracle = GaussianOracle(cp.C, VarianceSchedule.polynomial(1.0, 1.0), seed=11)
        a = PapcState(0, np.zeros(cp.base_dim), np.zeros(sum(cp.dual_dims)))
        b = PapcState(0, np.zeros(cp.base_dim), np.zeros(sum(cp.dual_dims)))
        for _ in range(60):
            a = composite_step(a, cp, inst.schedules, oracle)
            b = structured_min_step(b, cp, inst.schedules, oracle)
            assert np.array_equal(a.x, b.x) and np.array_equal(a.v, b.v)

    def test_m1_l1_matches_saddle_step(self):
        from papc.solver import ProblemSpec, saddle_step
        from papc.linop import OrthoProjector, SpdOperator
        cp, sched = single_block_problem()
        spec = ProblemSpec(B=cp.C, A=cp.blocks[0].A, L=cp.blocks[0].L,
                           P_V=OrthoProjector.full(cp.base_dim),
                           U=SpdOperator.scalar_op(1.0, cp.base_dim),
                           g=cp.blocks[0].g, h=cp.h)
        oracle = DeterministicOracle(cp.C)
        a = PapcState(0, np.zeros(3), np.zeros(3))
        b = PapcState(0, np.zeros(3), np.zeros(3))
        for _ in range(30):
            a = structured_min_step(a, cp, sched, oracle)
            b = saddle_step(b, spec, sched, oracle)
            assert np.array_equal(a.x, b.x) and np.array_equal(a.v, b.v)


class TestValidateComposite:
    def test_multi_passes(self):
        inst = build_instance("multi", {})
        cert = validate_composite(inst.composite, inst.schedules, 200)
        assert cert.ok, cert.failed()

    def test_gamma_above_mu_fails(self):
        inst = build_instance("multi", {})
        bad = Schedules.constant(2.0 * inst.composite.C.beta, 0.9, inst.composite.C.beta)
        cert = validate_composite(inst.composite, bad, 50)
        assert any("mu" in c.name for c in cert.failed())

    def test_oversized_tau_fails_blockwise(self):
        inst = build_instance("multi", {})
        bad = Schedules.constant(0.5 * inst.composite.C.beta, 5.0,
                                 inst.composite.C.beta)
        cert = validate_composite(inst.composite, bad, 50)
        assert any("block" in c.name for c in cert.failed())


class TestDualStructure:
    def test_residuals_at_convergence(self):
        inst = build_instance("multi", {})
        cp = inst.composite
        x, v = oracle_solution(inst)
        combined, per_block = composite_dual_residuals(cp, x, v)
        assert combined <= 1e-6
        assert max(per_block) <= 1e-6

    def test_run_composite_reaches_structure(self):
        inst = build_instance("multi", {})
        cp = inst.composite
        rec = run_composite(cp, inst.schedules, DeterministicOracle(cp.C),
                            np.zeros(cp.base_dim), np.zeros(sum(cp.dual_dims)), 5000)
        combined, per_block = composite_dual_residuals(cp, rec.terminal_x, rec.terminal_v)
        assert combined <= 1e-6 and max(per_block) <= 1e-6
