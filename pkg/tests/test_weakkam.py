import numpy as np
import pytest

from meankam.action import build_kernel
from meankam.model import ModelParams, PotentialSpec
from meankam.torus import Configuration, canonicalize
from meankam.weakkam import (
    ValueTable,
    alpha_from_orbit,
    build_grid,
    calibrated_curve,
    calibration_step_defects,
    domination_check,
    equality_nodes,
    hj_residual,
    lax_oleinik_backward,
    lax_oleinik_forward,
    semiconcavity_check,
    solve_alpha,
    solve_conjugate,
    sweep_values_at,
)

from oracles import dense_alpha_oracle

FREE1 = ModelParams(n=1, c=0.0, potentials=PotentialSpec.free())
PEND_AMP = 0.3
PEND_POT = PotentialSpec.from_terms(v_terms=[(0, 1, "cos", PEND_AMP)])
PEND = ModelParams(n=1, c=0.0, potentials=PEND_POT)


@pytest.fixture(scope="module")
def grid40():
    return build_grid(1, 40)


@pytest.fixture(scope="module")
def free_kernel(grid40):
    return build_kernel(grid40.nodes, FREE1, [-1.0, 0.0, 0.5, 1.0])


@pytest.fixture(scope="module")
def pend_kernel(grid40):
    return build_kernel(grid40.nodes, PEND, [0.0])


@pytest.fixture(scope="module")
def pend_minus(grid40, pend_kernel):
    return solve_alpha(PEND, grid40, pend_kernel)


@pytest.fixture(scope="module")
def pend_plus(pend_minus, pend_kernel):
    return solve_conjugate(pend_minus, pend_kernel, PEND)


class TestGrid:
    def test_nodes_distinct_and_canonical(self):
        grid = build_grid(2, 8, 8)
        keys = {nd.key() for nd in grid.nodes}
        assert len(keys) == grid.size
        for nd in grid.nodes:
            assert canonicalize(nd.canonical) == nd

    def test_translation_closure(self):
        # base translation by 1/2 must stay on the grid (rigid rotations)
        grid = build_grid(2, 8, 8)
        for nd in grid.nodes:
            moved = canonicalize(Configuration(nd.points - np.floor(nd.points[0] + 0.5) + 0.5))
            grid.index_of(moved)  # raises KeyError if missing

    def test_spacing_positive(self):
        grid = build_grid(1, 8)
        assert 0 < grid.spacing() <= 0.2


class TestSweepAlgebra:
    def test_zero_table_free_stays_zero(self, grid40, free_kernel):
        k, _, _ = free_kernel.assemble(0.0)
        table = ValueTable(grid=grid40, values=np.zeros(grid40.size), c=0.0)
        swept, inc = lax_oleinik_backward(table, k)
        np.testing.assert_allclose(swept.values, 0.0, atol=1e-12)
        np.testing.assert_allclose(inc, 0.0, atol=1e-12)

    def test_monotone(self, grid40, pend_kernel):
        k, _, _ = pend_kernel.assemble(0.0)
        rng = np.random.default_rng(0)
        u1 = rng.uniform(0, 1, grid40.size)
        u2 = u1 + rng.uniform(0, 1, grid40.size)
        t1 = ValueTable(grid=grid40, values=u1, c=0.0)
        t2 = ValueTable(grid=grid40, values=u2, c=0.0)
        s1, _ = lax_oleinik_backward(t1, k)
        s2, _ = lax_oleinik_backward(t2, k)
        assert (s1.values <= s2.values + 1e-12).all()

    def test_constant_shift_exact(self, grid40, pend_kernel):
        k, _, _ = pend_kernel.assemble(0.0)
        rng = np.random.default_rng(1)
        u = rng.uniform(0, 1, grid40.size)
        s0, _ = lax_oleinik_backward(ValueTable(grid=grid40, values=u, c=0.0), k)
        s1, _ = lax_oleinik_backward(ValueTable(grid=grid40, values=u + 5.0, c=0.0), k)
        np.testing.assert_allclose(s1.values, s0.values + 5.0, rtol=0, atol=1e-12)
        f0, _ = lax_oleinik_forward(ValueTable(grid=grid40, values=u, c=0.0), k)
        f1, _ = lax_oleinik_forward(ValueTable(grid=grid40, values=u + 5.0, c=0.0), k)
        np.testing.assert_allclose(f1.values, f0.values + 5.0, rtol=0, atol=1e-12)


class TestAlpha:
    @pytest.mark.parametrize("c", [-1.0, 0.0, 0.5, 1.0])
    def test_free_quadratic(self, grid40, free_kernel, c):
        out = solve_alpha(FREE1.with_c(c), grid40, free_kernel)
        assert out.converged
        assert out.alpha == pytest.approx(0.5 * c * c, abs=1e-3)

    def test_pendulum_alpha_is_max_v(self, pend_minus):
        assert pend_minus.converged
        assert pend_minus.alpha == pytest.approx(PEND_AMP, abs=2e-3)

    def test_pendulum_matches_dense_oracle(self, pend_minus):
        pot = PEND.potentials
        a_oracle, _ = dense_alpha_oracle(lambda t, x: pot.v(t, x), c=0.0)
        assert pend_minus.alpha == pytest.approx(a_oracle, abs=2e-3)

    def test_bracket_contains_alpha(self, pend_minus):
        lo, hi = pend_minus.alpha_bracket
        assert lo <= pend_minus.alpha <= hi
        assert hi - lo < 2 * 1e-8

    def test_fixed_point_residual(self, grid40, pend_kernel, pend_minus):
        k, _, _ = pend_kernel.assemble(0.0)
        swept, _ = lax_oleinik_backward(pend_minus, k)
        resid = np.abs(swept.values + pend_minus.alpha - pend_minus.values).max()
        assert resid < 1e-7

    def test_lipschitz_constant_init_independent(self, grid40, pend_kernel):
        fits = []
        for seed in (0, 1, 2):
            rng = np.random.default_rng(seed)
            u0 = rng.uniform(0, 0.5, grid40.size) if seed else np.zeros(grid40.size)
            k, _, _ = pend_kernel.assemble(0.0)
            table = ValueTable(grid=grid40, values=u0, c=0.0)
            for _ in range(400):
                swept, inc = lax_oleinik_backward(table, k)
                table = ValueTable(grid=grid40, values=swept.values - inc.max(), c=0.0)
            fits.append(table.fitted_lipschitz())
        base = fits[0]
        assert all(abs(f - base) <= 0.1 * base for f in fits[1:])


class TestConjugate:
    def test_free_pair_constant(self, grid40, free_kernel):
        minus = solve_alpha(FREE1, grid40, free_kernel)
        plus = solve_conjugate(minus, free_kernel, FREE1)
        np.testing.assert_allclose(minus.values, minus.values[0], atol=1e-9)
        np.testing.assert_allclose(plus.values, minus.values, atol=1e-8)

    def test_pendulum_pair_touches_at_max(self, grid40, pend_minus, pend_plus):
        assert pend_plus.converged
        gap = pend_minus.values - pend_plus.values
        assert (gap >= -1e-9).all()
        touch = equality_nodes(pend_minus, pend_plus, tol=1e-6)
        xs = grid40.points[touch][:, 0]
        assert touch.size >= 1
        assert all(min(x, 1 - x) <= 1e-9 for x in xs)  # only the argmax-V node

    def test_forward_fixed_point_residual(self, grid40, pend_kernel, pend_plus):
        k, _, _ = pend_kernel.assemble(0.0)
        new_vals = (pend_plus.values[None, :] - k).max(axis=1) - pend_plus.alpha
        assert np.abs(new_vals - pend_plus.values).max() < 1e-6

    def test_conjugate_of_conjugate_same_equality_set(self, grid40, pend_kernel,
                                                      pend_minus, pend_plus):
        again = solve_conjugate(pend_minus, pend_kernel, PEND)
        e1 = set(equality_nodes(pend_minus, pend_plus, 1e-6).tolist())
        e2 = set(equality_nodes(pend_minus, again, 1e-6).tolist())
        assert e1 == e2


class TestCalibratedCurve:
    def test_free_constant_chain(self, grid40, free_kernel):
        minus = solve_alpha(FREE1, grid40, free_kernel)
        start = grid40.nodes[3]
        curve = calibrated_curve(start, minus, free_kernel, FREE1, horizon=3)
        assert curve.defect < 1e-9
        np.testing.assert_allclose(curve.path.nodes, curve.path.nodes[0], atol=1e-9)

    def test_free_rotation_calibrates(self, grid40, free_kernel):
        params = FREE1.with_c(1.0)
        minus = solve_alpha(params, grid40, free_kernel)
        curve = calibrated_curve(grid40.nodes[0], minus, free_kernel, params, horizon=4)
        assert curve.defect < 1e-6
        v = np.diff(curve.path.nodes[:, 0]) / curve.path.dt
        np.testing.assert_allclose(v, 1.0, atol=1e-8)

    def test_pendulum_chain_reaches_max(self, grid40, pend_kernel, pend_minus):
        start = grid40.nodes[grid40.size // 2]  # near the potential minimum
        curve = calibrated_curve(start, pend_minus, pend_kernel, PEND, horizon=10)
        x_end = curve.path.nodes[0, 0] % 1.0
        assert min(x_end, 1 - x_end) < 0.08  # approached argmax V backward
        defects = calibration_step_defects(curve, pend_minus, PEND)
        assert defects.max() < 1e-6


class TestHjResidual:
    def test_free_zero(self, grid40, free_kernel):
        minus = solve_alpha(FREE1, grid40, free_kernel)
        report = hj_residual(minus, free_kernel, FREE1,
                             sample_nodes=range(0, 40, 8))
        assert report.max_residual < 1e-10

    def test_pendulum_small_and_refines(self, grid40, pend_kernel, pend_minus):
        idx = [1, 7, 13, 19, 27, 33]
        coarse = hj_residual(pend_minus, pend_kernel, PEND, sample_nodes=idx)
        fine = hj_residual(pend_minus, pend_kernel, PEND, sample_nodes=idx,
                           levels=(32, 64, 128))
        assert coarse.max_residual < 5e-3
        assert fine.max_residual < coarse.max_residual

    def test_invariant_under_constant(self, grid40, pend_kernel, pend_minus):
        from dataclasses import replace

        shifted = replace(pend_minus, values=pend_minus.values + 3.0)
        r0 = hj_residual(pend_minus, pend_kernel, PEND, sample_nodes=[5])
        r1 = hj_residual(shifted, pend_kernel, PEND, sample_nodes=[5])
        assert r0.max_residual == pytest.approx(r1.max_residual, abs=1e-12)


class TestSemiconcavity:
    def test_free_nonpositive(self, grid40, free_kernel):
        minus = solve_alpha(FREE1, grid40, free_kernel)
        report = semiconcavity_check(minus, free_kernel, FREE1,
                                     probe_nodes=[0, 10, 20])
        assert report.bound_constant == 1.0
        assert report.worst_excess <= 1e-8

    def test_pendulum_bound(self, grid40, pend_kernel, pend_minus):
        report = semiconcavity_check(pend_minus, pend_kernel, PEND,
                                     probe_nodes=[0, 10, 20, 30])
        assert report.worst_excess <= 1e-4

    def test_two_particle_bound_halves(self):
        # same external potential, one vs two particles: the K/n bound on a
        # single-particle probe halves at n = 2
        delta = 0.01
        grid1 = build_grid(1, 8)
        k1 = build_kernel(grid1.nodes, PEND, [0.0])
        m1 = solve_alpha(PEND, grid1, k1)
        r1 = semiconcavity_check(m1, k1, PEND, probe_nodes=[2], deltas=(delta,))
        pend2 = ModelParams(n=2, c=0.0, potentials=PEND_POT)
        grid2 = build_grid(2, 8, 8)
        k2 = build_kernel(grid2.nodes, pend2, [0.0])
        m2 = solve_alpha(pend2, grid2, k2)
        r2 = semiconcavity_check(m2, k2, pend2, probe_nodes=[2], deltas=(delta,))
        assert r1.worst_excess <= 1e-6
        assert r2.worst_excess <= 1e-6
        assert r1.bound_constant == r2.bound_constant  # K matched; /n differs


class TestDomination:
    def test_pendulum_dominates_random_paths(self, pend_minus):
        worst = domination_check(pend_minus, PEND, n_paths=200, seed=0)
        assert worst <= 1e-6


class TestSweepValuesAt:
    def test_matches_kernel_on_nodes(self, grid40, pend_kernel, pend_minus):
        k, _, _ = pend_kernel.assemble(0.0)
        targets = grid40.points[[3, 17]]
        got = sweep_values_at(targets, pend_minus, pend_kernel, PEND)
        want = (pend_minus.values[:, None] + k[:, [3, 17]]).min(axis=0) + pend_minus.alpha
        np.testing.assert_allclose(got, want, atol=1e-8)


class TestAlphaFromOrbit:
    def test_free_matches_closed_form(self):
        params = FREE1.with_c(0.5)
        start = canonicalize(Configuration([0.0]))
        est = alpha_from_orbit(params, start, horizon=8.0)
        assert est == pytest.approx(0.125, abs=1e-6)

    def test_pendulum_matches_grid(self, pend_minus):
        start = canonicalize(Configuration([0.0]))
        est = alpha_from_orbit(PEND, start, horizon=8.0)
        assert est == pytest.approx(pend_minus.alpha, abs=5e-3)
