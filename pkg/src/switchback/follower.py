"""Followers' coupled Riccati system, feedback coefficient maps, offset term.

The two followers' saddle point is carried by a scalar Riccati equation per
regime (coupled through the chain generator), a companion equation for the
conditional-mean weight, and a linear backward equation for the affine
offset.  Direct backward integration replaces the monotone sup/inf-convolution
iteration used to prove solvability; the iteration's conclusion survives as a
mandatory envelope post-check: the solution must stay inside the explicit
exponential bounds built from the problem's size constants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateProblem, RiccatiSingular
from .grids import (JumpIntegrand, RegimeGrid, integrate_backward, interp_time,
                    markov_coupling, solve_linear_regime_bsde)
from .model import TOL_INVERT, BoundConstants, ProblemSpec, derive_constants


@dataclass(frozen=True)
class FollowerRiccati:
    """Solved state weight P_F (and optionally the mean weight) plus the
    worst relative invertibility margin of the effective control weight."""

    P_F: RegimeGrid
    P_F_bar: RegimeGrid | None
    margin: float


class _MarginTracker:
    """Invertibility watchdog for the effective control weight.

    Flags a margin (smallest singular value over max-norm) at or below the
    tolerance, and also a determinant sign flip between consecutive
    evaluations along the trajectory: continuity then forces a singular
    point in between even when the discrete steps jump across it.
    """

    def __init__(self, tol: float):
        self.tol = tol
        self.min_margin = np.inf
        self._last_det: dict[int, float] = {}

    def check(self, mat: np.ndarray, t: float, regime: int) -> None:
        scale = max(float(np.max(np.abs(mat))), 1e-300)
        margin = float(np.linalg.svd(mat, compute_uv=False)[-1]) / scale
        if margin < self.min_margin:
            self.min_margin = margin
        if margin <= self.tol:
            raise RiccatiSingular(t, regime, margin)
        det = float(np.linalg.det(mat))
        prev = self._last_det.get(regime)
        if prev is not None and det * prev < 0.0:
            raise RiccatiSingular(t, regime, margin)
        self._last_det[regime] = det


def _weight_blocks(spec: ProblemSpec, t: float, P: np.ndarray,
                   tracker: _MarginTracker | None):
    """Effective weight R_F + P D^T D and loading P (B + C D)^T per regime."""
    RF = interp_time(spec.R_F, spec.T, t)
    BF = interp_time(spec.B_F, spec.T, t)
    DF = interp_time(spec.D_F, spec.T, t)
    C = interp_time(spec.dynamics.C, spec.T, t)
    m = spec.m
    R_eff = np.empty_like(RF)
    B_eff = np.empty((m, spec.mF))
    for i in range(m):
        R_eff[i] = RF[i] + P[i] * np.outer(DF[i], DF[i])
        B_eff[i] = P[i] * (BF[i] + C[i] * DF[i])
        if tracker is not None:
            tracker.check(R_eff[i], t, i + 1)
    return R_eff, B_eff, BF, DF, C


def solve_PF(spec: ProblemSpec, scheme: str = "rk4",
             tol_invert: float = TOL_INVERT) -> FollowerRiccati:
    """Backward solve of the followers' state-weight equation.

    dP/dt + (2A + C^2) P + Q_F - B_eff^T R_eff^-1 B_eff + coupling = 0 with
    P(T, i) = G_F(i).  The effective weight is re-assembled from the current
    P at every stage evaluation and its invertibility margin recorded;
    falling below ``tol_invert`` aborts with the offending (t, regime).
    """
    tracker = _MarginTracker(tol_invert)
    rates = spec.generator.rates
    dyn = spec.dynamics

    def rhs(t: float, P: np.ndarray) -> np.ndarray:
        R_eff, B_eff, _, _, C = _weight_blocks(spec, t, P, tracker)
        A = interp_time(dyn.A, spec.T, t)
        QF = interp_time(spec.follower_cost.Q_F, spec.T, t)
        quad = np.array([B_eff[i] @ np.linalg.solve(R_eff[i], B_eff[i])
                         for i in range(spec.m)])
        return -((2.0 * A + C ** 2) * P + QF - quad + markov_coupling(rates, P))

    sol = integrate_backward(rhs, spec.follower_cost.G_F, (spec.T, spec.N), scheme)
    return FollowerRiccati(P_F=sol, P_F_bar=None, margin=tracker.min_margin)


def solve_PFbar(spec: ProblemSpec, pf: FollowerRiccati, scheme: str = "rk4",
                tol_invert: float = TOL_INVERT) -> FollowerRiccati:
    """Backward solve of the conditional-mean weight equation.

    The pair (P_F, P_F_bar) is integrated jointly so that stage values of
    P_F are internally consistent (order 4 is preserved); the P_F component
    must reproduce ``pf`` and is checked against it.
    """
    tracker = _MarginTracker(tol_invert)
    rates = spec.generator.rates
    dyn, fc = spec.dynamics, spec.follower_cost

    def rhs(t: float, V: np.ndarray) -> np.ndarray:
        P, Pb = V[:, 0], V[:, 1]
        R_eff, B_eff, BF, DF, C = _weight_blocks(spec, t, P, tracker)
        A = interp_time(dyn.A, spec.T, t)
        Ab = interp_time(dyn.A_bar, spec.T, t)
        Cb = interp_time(dyn.C_bar, spec.T, t)
        QF = interp_time(fc.Q_F, spec.T, t)
        QFb = interp_time(fc.Q_F_bar, spec.T, t)
        dP = np.empty(spec.m)
        dPb = np.empty(spec.m)
        for i in range(spec.m):
            Bb = Pb[i] * BF[i] + P[i] * Cb[i] * DF[i]
            sol_B = np.linalg.solve(R_eff[i], B_eff[i])
            sol_Bb = np.linalg.solve(R_eff[i], Bb)
            dP[i] = (2.0 * A[i] + C[i] ** 2) * P[i] + QF[i] - B_eff[i] @ sol_B
            dPb[i] = (
                2.0 * (A[i] + Ab[i]) * Pb[i]
                + (2.0 * Ab[i] + Cb[i] ** 2 + 2.0 * C[i] * Cb[i]) * P[i]
                + QFb[i]
                - B_eff[i] @ sol_Bb
                - Bb @ sol_Bb
                - Bb @ sol_B
            )
        coup = markov_coupling(rates, V)
        return -(np.stack([dP, dPb], axis=1) + coup)

    terminal = np.stack([fc.G_F, fc.G_F_bar], axis=1)
    sol = integrate_backward(rhs, terminal, (spec.T, spec.N), scheme)
    pf_check = np.max(np.abs(sol.values[:, :, 0] - pf.P_F.values))
    if pf_check > 1e-9 * max(1.0, float(np.max(np.abs(pf.P_F.values)))):
        raise ValueError(f"P_F input inconsistent with joint solve ({pf_check:.3e})")
    pbar = RegimeGrid(values=sol.values[:, :, 1].copy(), T=spec.T, N=spec.N)
    return FollowerRiccati(P_F=pf.P_F, P_F_bar=pbar,
                           margin=min(pf.margin, tracker.min_margin))


# ---------------------------------------------------------------------------
# Envelope bounds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Envelope:
    """Closed-form exponential bounds that must sandwich P_F."""

    plus: RegimeGrid
    minus: RegimeGrid
    rho_bar: float


@dataclass(frozen=True)
class EnvelopeCheck:
    ok: bool
    worst_margin: float
    t: float
    regime: int


def envelope(spec: ProblemSpec, constants: BoundConstants | None = None) -> Envelope:
    """Bounding curves grown backward from +/- g0 at rate c1*m.

    plus(t) = g0 e^{c1 m (T-t)} + (q0 + c3 rho_bar^2 / rho) * E(T-t) with
    E(s) = (e^{c1 m s} - 1)/(c1 m) (continued by s when c1 = 0), and
    minus = -plus.  The quadratic-term bound c3 rho_bar^2 / rho collapses to
    0 when c3 = 0 or when the problem has no cost on the state at all.
    """
    c = constants if constants is not None else derive_constants(spec)
    if not np.isfinite(c.rho_bar):
        raise DegenerateProblem(f"rho_bar = {c.rho_bar} is not usable as a bound")
    m, T, N = spec.m, spec.T, spec.N
    tau = T - spec.t_nodes
    if c.c1 > 0.0:
        eoc = np.expm1(c.c1 * m * tau) / (c.c1 * m)
        growth = np.exp(c.c1 * m * tau)
        eoc_T = float(eoc[0])
    else:
        eoc = tau.copy()
        growth = np.ones_like(tau)
        eoc_T = T
    s = c.rho_bar / 2.0  # q0 * E(T) + g0 * e^{c1 m T}
    bonus = (s / eoc_T) if (c.c3 > 0.0 and s > 0.0) else 0.0
    plus = c.g0 * growth + (c.q0 + bonus) * eoc
    vals = np.repeat(plus[:, None], m, axis=1)
    return Envelope(
        plus=RegimeGrid(values=vals, T=T, N=N),
        minus=RegimeGrid(values=-vals, T=T, N=N),
        rho_bar=c.rho_bar,
    )


def check_envelope(P_F: RegimeGrid, env: Envelope, atol: float = 1e-9) -> EnvelopeCheck:
    """True iff minus <= P_F <= plus at every grid point (within atol)."""
    lo = P_F.values - env.minus.values
    hi = env.plus.values - P_F.values
    margins = np.minimum(lo, hi)
    idx = np.unravel_index(np.argmin(margins), margins.shape)
    worst = float(margins[idx])
    t = idx[0] * P_F.T / P_F.N
    return EnvelopeCheck(ok=bool(worst >= -atol), worst_margin=worst,
                         t=float(t), regime=int(idx[1]) + 1)


# ---------------------------------------------------------------------------
# Feedback coefficient maps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FeedbackCoeffs:
    """Node values of the weight/loading blocks and the drift maps that feed
    the offset equation and the affine feedback gains.

    Component shapes (per node, regime): R_eff (mF, mF); B_eff, B_bar_eff
    (mF,); the four phi maps are scalars, the two psi maps are (m0,) rows,
    the two gamma maps scalars.
    """

    R_eff: np.ndarray
    B_eff: np.ndarray
    B_bar_eff: np.ndarray
    phi_A: np.ndarray
    phi_A_bar: np.ndarray
    phi_C: np.ndarray
    phi_C_bar: np.ndarray
    psi_C: np.ndarray
    psi_C_bar: np.ndarray
    gamma_C: np.ndarray
    gamma_C_bar: np.ndarray
    P_F: RegimeGrid
    P_F_bar: RegimeGrid
    margin: float


def feedback_coeffs(spec: ProblemSpec, pf: FollowerRiccati,
                    tol_invert: float = TOL_INVERT) -> FeedbackCoeffs:
    """Assemble the weight blocks and drift maps on the grid nodes."""
    if pf.P_F_bar is None:
        raise ValueError("solve_PFbar must run before feedback_coeffs")
    dyn = spec.dynamics
    Np1, m, mF, m0 = spec.N + 1, spec.m, spec.mF, spec.m0
    P = pf.P_F.values
    Pb = pf.P_F_bar.values
    BF, DF, RF = spec.B_F, spec.D_F, spec.R_F
    tracker = _MarginTracker(tol_invert)

    R_eff = np.empty((Np1, m, mF, mF))
    B_eff = np.empty((Np1, m, mF))
    B_bar = np.empty((Np1, m, mF))
    phi_A = np.empty((Np1, m))
    phi_Ab = np.empty((Np1, m))
    phi_C = np.empty((Np1, m))
    phi_Cb = np.empty((Np1, m))
    psi_C = np.empty((Np1, m, m0))
    psi_Cb = np.empty((Np1, m, m0))
    gam_C = np.empty((Np1, m))
    gam_Cb = np.empty((Np1, m))
    t_nodes = spec.t_nodes
    for k in range(Np1):
        for i in range(m):
            p, pb = P[k, i], Pb[k, i]
            B, D = BF[k, i], DF[k, i]
            A = dyn.A[k, i]
            Ab = dyn.A_bar[k, i]
            Cc = dyn.C[k, i]
            Cb = dyn.C_bar[k, i]
            DL = dyn.D_L[k, i]
            BL = dyn.B_L[k, i]
            R = RF[k, i] + p * np.outer(D, D)
            tracker.check(R, float(t_nodes[k]), i + 1)
            bb = p * (B + Cc * D)
            bbb = pb * B + p * Cb * D
            sol_b = np.linalg.solve(R, bb)
            sol_bb = np.linalg.solve(R, bbb)
            R_eff[k, i] = R
            B_eff[k, i] = bb
            B_bar[k, i] = bbb
            phi_A[k, i] = A - sol_b @ B
            phi_Ab[k, i] = Ab - sol_bb @ B
            phi_C[k, i] = Cc - sol_b @ D
            phi_Cb[k, i] = Cb - sol_bb @ D
            psi_C[k, i] = p * BL + Cc * p * DL - (sol_b @ D) * p * DL
            psi_Cb[k, i] = pb * BL + Cb * p * DL - (sol_bb @ D) * p * DL
            gam_C[k, i] = Cc * p - (sol_b @ D) * p
            gam_Cb[k, i] = Cb * p - (sol_bb @ D) * p
    return FeedbackCoeffs(
        R_eff=R_eff, B_eff=B_eff, B_bar_eff=B_bar,
        phi_A=phi_A, phi_A_bar=phi_Ab, phi_C=phi_C, phi_C_bar=phi_Cb,
        psi_C=psi_C, psi_C_bar=psi_Cb, gamma_C=gam_C, gamma_C_bar=gam_Cb,
        P_F=pf.P_F, P_F_bar=pf.P_F_bar, margin=tracker.min_margin,
    )


def solve_phi(spec: ProblemSpec, coeffs: FeedbackCoeffs, u_L: np.ndarray,
              scheme: str = "rk4") -> tuple[RegimeGrid, JumpIntegrand]:
    """Offset equation for a regime-deterministic leader control grid.

    ``u_L`` has shape (N+1, m, m0).  Under regime-deterministic data the
    conditional expectations collapse (phi_hat = phi, sigma_hat = sigma,
    b_hat = b) and the Brownian integrand vanishes, leaving a linear regime
    system with drift coefficient phi_A + phi_A_bar and source built from
    the psi/gamma maps; terminal value 0.
    """
    u_L = np.asarray(u_L, dtype=float)
    if u_L.shape != (spec.N + 1, spec.m, spec.m0):
        raise ValueError(f"u_L grid must have shape {(spec.N + 1, spec.m, spec.m0)}")
    F = coeffs.phi_A + coeffs.phi_A_bar
    src = (
        np.einsum("kid,kid->ki", coeffs.psi_C + coeffs.psi_C_bar, u_L)
        + (coeffs.gamma_C + coeffs.gamma_C_bar) * spec.dynamics.sigma
        + (coeffs.P_F.values + coeffs.P_F_bar.values) * spec.dynamics.b
    )
    terminal = np.zeros(spec.m)
    return solve_linear_regime_bsde(F, src, terminal, spec.generator,
                                    (spec.T, spec.N), scheme)
