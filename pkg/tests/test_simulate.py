"""Closed-loop simulation, filter, common random numbers, residuals."""

import math

import numpy as np
import pytest

from switchback.chains import chain_stream, sample_chain
from switchback.errors import GridMismatch
from switchback.grids import RegimeGrid
from switchback.model import load_problem, regrid
from switchback.simulate import (filter_consistency, hamiltonian_residual,
                                 leader_test, martingale_residual_means,
                                 mc_estimate, saddle_test, simulate_paths)
from switchback.strategies import StrategyProfile

from conftest import PAPER_RATES, make_spec, pricing_dict
from switchback.cli import build_profile


def zero_profile(spec, mode="followers"):
    Np1, m, mF, m0 = spec.N + 1, spec.m, spec.mF, spec.m0
    return StrategyProfile(
        mode=mode, state_dim=1, T=spec.T, N=spec.N, m=m, m1=spec.m1,
        follower_K=np.zeros((Np1, m, mF, 1)),
        follower_K_hat=np.zeros((Np1, m, mF, 1)),
        follower_offset=np.zeros((Np1, m, mF)),
        leader_K=np.zeros((Np1, m, m0, 1)),
        leader_K_hat=np.zeros((Np1, m, m0, 1)),
        leader_offset=np.zeros((Np1, m, m0)),
    )


class TestSimulatePaths:
    def test_zero_dynamics_state_frozen(self):
        spec = make_spec(PAPER_RATES, N=100,
                         follower_cost=[{"Q_F": 1.0, "G_F": 0.5},
                                        {"Q_F": 1.0, "G_F": 0.5}],
                         leader_cost=[{"G_L": 0.25}, {"G_L": 0.25}])
        prof = zero_profile(spec)
        res = simulate_paths(spec, prof, 50, 3, keep_state=True)
        assert np.all(res.x_matrix == 1.0)
        assert np.all(res.xh_matrix == 1.0)
        # J_F = (1/2)(int Q x^2 dt + G x(T)^2) = (1/2)(1 + 0.5) exactly
        assert np.allclose(res.J_F, 0.75, atol=1e-13)
        assert np.allclose(res.J_L, 0.125, atol=1e-13)

    def test_filter_equals_state_without_noise(self):
        spec = make_spec(PAPER_RATES, N=200,
                         dynamics=[{"A": 0.4, "B_F1": [0.5], "B_F2": [0.1],
                                    "B_L": [0.3]},
                                   {"A": -0.2, "B_F1": [0.3], "B_F2": [0.2],
                                    "B_L": [0.2]}])
        prof = zero_profile(spec)
        prof.follower_offset[:, :, :] = 0.7
        prof.leader_offset[:, :, :] = -0.4
        res = simulate_paths(spec, prof, 20, 5, keep_state=True)
        assert np.max(np.abs(res.x_matrix - res.xh_matrix)) < 1e-12

    def test_stream_isolation_first_path(self, pricing_spec):
        spec = regrid(pricing_spec, 200)
        prof, _ = build_profile(spec, "pricing", "rk4", 1e-10)
        a = simulate_paths(spec, prof, 1, 99, record=1)
        b = simulate_paths(spec, prof, 500, 99, record=1)
        assert np.array_equal(a.records[0].x, b.records[0].x)
        assert np.array_equal(a.records[0].regimes, b.records[0].regimes)
        assert a.J_F[0] == b.J_F[0]

    def test_grid_mismatch(self, pricing_spec):
        spec = regrid(pricing_spec, 100)
        prof, _ = build_profile(regrid(pricing_spec, 200), "pricing", "rk4", 1e-10)
        with pytest.raises(GridMismatch):
            simulate_paths(spec, prof, 5, 1)

    def test_estimates_permutation_invariant(self, pricing_spec):
        spec = regrid(pricing_spec, 100)
        prof, _ = build_profile(spec, "pricing", "rk4", 1e-10)
        res = simulate_paths(spec, prof, 400, 12)
        perm = np.random.default_rng(0).permutation(400)
        assert mc_estimate(res.J_F).mean == mc_estimate(res.J_F[perm]).mean

    def test_cost_stability_across_seeds(self, pricing_spec):
        spec = regrid(pricing_spec, 300)
        prof, _ = build_profile(spec, "pricing", "rk4", 1e-10)
        a = simulate_paths(spec, prof, 4000, 1).estimate_J_L()
        b = simulate_paths(spec, prof, 4000, 2).estimate_J_L()
        se = math.hypot(a.se, b.se)
        assert abs(a.mean - b.mean) <= 3.0 * se

    def test_trapezoid_quadrature_flag(self):
        # zero dynamics, time-linear state cost: trapezoid integrates the
        # running cost exactly, left-Riemann is off by (f_N - f_0) dt / 2
        N = 10
        d = {"Q_F": [float(k) / N for k in range(N + 1)]}
        spec = make_spec([[0.0]], N=N, follower_cost=[d])
        prof = zero_profile(spec)
        left = simulate_paths(spec, prof, 2, 0, quadrature="left").J_F[0]
        trap = simulate_paths(spec, prof, 2, 0, quadrature="trapezoid").J_F[0]
        assert trap == pytest.approx(0.25)        # (1/2) * int t dt
        assert left == pytest.approx(0.25 - 0.5 * 0.5 * (1.0 / N))


class TestPerturbations:
    def test_eps_zero_exactly_zero(self, pricing_spec):
        spec = regrid(pricing_spec, 100)
        prof, _ = build_profile(spec, "pricing", "rk4", 1e-10)
        base = simulate_paths(spec, prof, 100, 4)
        pert = simulate_paths(spec, prof.shifted(
            "F1", np.ones((101, 2)), 0.0), 100, 4)
        assert np.array_equal(base.J_F, pert.J_F)
        assert np.array_equal(base.J_L, pert.J_L)

    def test_saddle_smoke(self, pricing_spec):
        spec = regrid(pricing_spec, 200)
        prof, _ = build_profile(spec, "pricing", "rk4", 1e-10)
        rep = saddle_test(spec, prof, eps_grid=(0.1,), n=1500, seed=21)
        assert rep.all_ok
        f1 = [r for r in rep.rows if r.player == "F1"]
        f2 = [r for r in rep.rows if r.player == "F2"]
        assert all(r.upsilon > 0 for r in f1)
        assert all(r.upsilon < 0 for r in f2)

    def test_leader_smoke_with_quadratic_scaling(self, pricing_spec):
        spec = regrid(pricing_spec, 200)
        prof, _ = build_profile(spec, "pricing", "rk4", 1e-10)
        rep = leader_test(spec, prof, eps_grid=(0.05, 0.2), n=1500, seed=22)
        assert rep.all_ok
        assert all(v < 0.25 for v in rep.quad_spread.values())

    def test_identity_responder_gives_zero(self, pricing_spec):
        spec = regrid(pricing_spec, 100)
        prof, _ = build_profile(spec, "pricing", "rk4", 1e-10)
        rep = leader_test(spec, prof, eps_grid=(0.1,), n=50, seed=5,
                          responder=lambda u_L: prof)
        assert all(r.mean_diff == 0.0 and r.se == 0.0 for r in rep.rows)

    def test_followers_mode_responder_resolves_phi(self):
        # general-mode response: phi re-solved for the perturbed leader grid
        from switchback.cli import solve_followers
        from switchback.strategies import follower_feedback
        spec = make_spec(PAPER_RATES, N=100,
                         dynamics=[{"A": 0.3, "B_L": [0.4], "B_F1": [0.5],
                                    "B_F2": [0.2], "sigma": 0.3},
                                   {"A": 0.1, "B_L": [0.6], "B_F1": [0.4],
                                    "B_F2": [0.1], "sigma": 0.2}],
                         follower_cost=[{"Q_F": 0.2, "G_F": 0.3},
                                        {"Q_F": 0.1, "G_F": 0.2}])
        pf, coeffs, phi0, _, u0 = solve_followers(spec, "rk4", 1e-10)
        calls = []

        def responder(u_L):
            from switchback.follower import solve_phi
            phi, _ = solve_phi(spec, coeffs, u_L)
            calls.append(np.max(np.abs(phi.values - phi0.values)))
            return follower_feedback(spec, coeffs, phi, u_L)

        rep = leader_test(spec, follower_feedback(spec, coeffs, phi0, u0),
                          eps_grid=(0.1,), n=200, seed=9, responder=responder)
        assert len(calls) == 3
        assert all(c > 0 for c in calls)  # response actually changed
        assert all(np.isfinite(r.mean_diff) for r in rep.rows)


class TestFilterConsistency:
    def test_pricing_checkpoints(self, pricing_spec):
        spec = regrid(pricing_spec, 250)
        prof, _ = build_profile(spec, "pricing", "rk4", 1e-10)
        chain = sample_chain(spec.generator, 1, spec.T, chain_stream(123, 0))
        rows = filter_consistency(spec, prof, chain, n=2000, seed=31)
        assert len(rows) == 10
        assert all(r.ok for r in rows)

    def test_feedback_profile_checkpoints(self):
        # state feedback makes u depend on x; the filter uses its own value
        from switchback.cli import solve_followers
        from switchback.strategies import follower_feedback
        spec = make_spec(PAPER_RATES, N=200,
                         dynamics=[{"A": 0.4, "A_bar": 0.2, "B_F1": [0.5],
                                    "B_F2": [0.2], "sigma": 0.5},
                                   {"A": -0.1, "A_bar": -0.2, "B_F1": [0.4],
                                    "B_F2": [0.1], "sigma": 0.3}],
                         follower_cost=[{"Q_F": 0.3, "G_F": 0.4},
                                        {"Q_F": 0.2, "G_F": 0.1}])
        pf, coeffs, phi, _, u0 = solve_followers(spec, "rk4", 1e-10)
        prof = follower_feedback(spec, coeffs, phi, u0)
        chain = sample_chain(spec.generator, 1, spec.T, chain_stream(7, 0))
        rows = filter_consistency(spec, prof, chain, n=3000, seed=8)
        assert all(r.ok for r in rows)


class TestHamiltonianResidual:
    def test_zero_spec_exact_zero(self):
        spec = make_spec(PAPER_RATES, N=50)
        prof = zero_profile(spec)
        zero = RegimeGrid(values=np.zeros((51, 2)), T=1.0, N=50)
        stats = hamiltonian_residual(spec, prof, zero, zero, zero, n=20, seed=1)
        assert stats.terminal_max == 0.0
        assert stats.step_max == 0.0

    def test_pricing_residual_small(self, pricing_spec):
        spec = regrid(pricing_spec, 500)
        prof, grids = build_profile(spec, "pricing", "rk4", 1e-10)
        zero = RegimeGrid(values=np.zeros((501, 2)), T=1.0, N=500)
        stats = hamiltonian_residual(spec, prof, zero, zero, grids["p"],
                                     n=200, seed=2)
        assert stats.terminal_mean < 5e-3

    def test_terminal_residual_halves(self):
        means = []
        for N in (200, 400):
            spec = make_spec(
                PAPER_RATES, N=N,
                dynamics=[{"A": 0.4, "C": 0.2, "B_F1": [0.5], "B_F2": [0.2],
                           "sigma": 0.4, "b": 0.1},
                          {"A": -0.1, "C": 0.1, "B_F1": [0.4], "B_F2": [0.1],
                           "sigma": 0.3, "b": -0.1}],
                follower_cost=[{"Q_F": 0.3, "G_F": 0.4},
                               {"Q_F": 0.2, "G_F": 0.1}])
            prof, grids = build_profile(spec, "followers", "rk4", 1e-10)
            stats = hamiltonian_residual(spec, prof, grids["P_F"],
                                         grids["P_F_bar"], grids["phi"],
                                         n=400, seed=3)
            means.append(stats.terminal_mean)
        assert 1.6 <= means[0] / means[1] <= 2.4


class TestMartingale:
    def test_residual_means_within_bands(self, pricing_spec):
        est = martingale_residual_means(pricing_spec.generator, 1, 1.0,
                                        5000, 77)
        for (i, j), e in est.items():
            assert abs(e.mean) <= 3.0 * e.se


class TestDegenerateLeader:
    def test_zero_BL_gives_pure_quadratic_nonnegative_diffs(self):
        # leader control cannot move the state: every paired difference is
        # exactly (eps^2/2) int R_L v^2 dt along the chain, positive per path
        d = pricing_dict()
        for obj in d["dynamics"]:
            obj["B_L"] = [0.0]
        d["steps"] = 100
        spec = load_problem(d)
        prof = zero_profile(spec, mode="pricing")
        base = simulate_paths(spec, prof, 200, 6)
        for eps in (0.05, 0.2):
            pert = simulate_paths(
                spec, prof.shifted("L", np.ones((101, 2)), eps), 200, 6)
            diffs = pert.J_L - base.J_L
            assert np.all(diffs > 0.0)
            # pure quadratic: diff / eps^2 independent of eps
            if eps == 0.05:
                ref = diffs / eps ** 2
            else:
                assert np.allclose(diffs / eps ** 2, ref, rtol=1e-9)
