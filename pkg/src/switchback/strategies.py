"""Executable affine feedback profiles for followers and leader.

A profile stores gains per (grid node, regime); evaluation between nodes is
piecewise-constant from the left endpoint, matching the Euler simulation
convention.  The followers-only and pricing profiles act on the scalar state
(and its conditional mean); the full-Stackelberg profile acts on the stacked
2-dimensional state of the leader system.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import StructuralMismatch
from .follower import FeedbackCoeffs
from .grids import RegimeGrid
from .leader import AugmentedSystem, LeaderGains
from .model import ProblemSpec, check_assumptions


@dataclass(frozen=True)
class StrategyProfile:
    """Affine gains u = K_x @ state + K_xhat @ filter + offset.

    ``state_dim`` is 1 (scalar price state) or 2 (stacked leader state).
    Follower gains act on the concatenated control (m1+m2,); leader gains
    on (m0,).  All arrays are indexed (node, regime, control, state).
    """

    mode: str
    state_dim: int
    T: float
    N: int
    m: int
    m1: int
    follower_K: np.ndarray        # (N+1, m, mF, sd)
    follower_K_hat: np.ndarray    # (N+1, m, mF, sd)
    follower_offset: np.ndarray   # (N+1, m, mF)
    leader_K: np.ndarray          # (N+1, m, m0, sd)
    leader_K_hat: np.ndarray      # (N+1, m, m0, sd)
    leader_offset: np.ndarray     # (N+1, m, m0)

    def follower_control(self, k: int, regimes: np.ndarray, X: np.ndarray,
                         X_hat: np.ndarray) -> np.ndarray:
        """Controls for a batch of paths at node k; X is (n, state_dim)."""
        r = regimes - 1
        return (
            np.einsum("nfs,ns->nf", self.follower_K[k, r], X)
            + np.einsum("nfs,ns->nf", self.follower_K_hat[k, r], X_hat)
            + self.follower_offset[k, r]
        )

    def leader_control(self, k: int, regimes: np.ndarray, X: np.ndarray,
                       X_hat: np.ndarray) -> np.ndarray:
        r = regimes - 1
        return (
            np.einsum("nfs,ns->nf", self.leader_K[k, r], X)
            + np.einsum("nfs,ns->nf", self.leader_K_hat[k, r], X_hat)
            + self.leader_offset[k, r]
        )

    def shifted(self, player: str, direction: np.ndarray, eps: float
                ) -> "StrategyProfile":
        """New profile with eps * direction added to one control channel.

        ``player`` is 'F1', 'F2' or 'L'; ``direction`` is a regime-time
        field (N+1, m) broadcast over that player's control components.
        Used by the perturbation tests; directions are regime-deterministic
        so the filter update stays exact.
        """
        d = np.asarray(direction, dtype=float)
        if d.shape != (self.N + 1, self.m):
            raise ValueError(f"direction must have shape {(self.N + 1, self.m)}")
        f_off = self.follower_offset.copy()
        l_off = self.leader_offset.copy()
        mF = f_off.shape[2]
        if player == "L":
            l_off += eps * d[:, :, None]
        elif player in ("F1", "F2"):
            sl = slice(0, self.m1) if player == "F1" else slice(self.m1, mF)
            f_off[:, :, sl] += eps * d[:, :, None]
        else:
            raise ValueError(f"unknown player {player!r}")
        return StrategyProfile(
            mode=self.mode, state_dim=self.state_dim, T=self.T, N=self.N,
            m=self.m, m1=self.m1, follower_K=self.follower_K,
            follower_K_hat=self.follower_K_hat, follower_offset=f_off,
            leader_K=self.leader_K, leader_K_hat=self.leader_K_hat,
            leader_offset=l_off,
        )


def _zero_gains(Np1: int, m: int, dim: int, sd: int) -> np.ndarray:
    return np.zeros((Np1, m, dim, sd))


def follower_feedback(spec: ProblemSpec, coeffs: FeedbackCoeffs, phi: RegimeGrid,
                      u_L: np.ndarray) -> StrategyProfile:
    """Followers' affine feedback for an exogenous leader grid.

    u_F = -R_eff^{-1} [B_eff x + B_bar_eff x_hat + offset_src] with
    offset_src = B_F^T phi + D_F^T [P_F (D_L u_L + sigma)] (the Brownian
    integrand of the offset equation vanishes in this reduction).  The
    leader channel of the returned profile replays ``u_L`` as offsets.
    """
    u_L = np.asarray(u_L, dtype=float)
    if u_L.shape != (spec.N + 1, spec.m, spec.m0):
        raise ValueError(f"u_L grid must have shape {(spec.N + 1, spec.m, spec.m0)}")
    Np1, m, mF, m0 = spec.N + 1, spec.m, spec.mF, spec.m0
    BF, DF = spec.B_F, spec.D_F
    dyn = spec.dynamics
    K = np.empty((Np1, m, mF, 1))
    Kh = np.empty((Np1, m, mF, 1))
    off = np.empty((Np1, m, mF))
    for k in range(Np1):
        for i in range(m):
            R = coeffs.R_eff[k, i]
            K[k, i, :, 0] = -np.linalg.solve(R, coeffs.B_eff[k, i])
            Kh[k, i, :, 0] = -np.linalg.solve(R, coeffs.B_bar_eff[k, i])
            src = (
                BF[k, i] * phi.values[k, i]
                + DF[k, i] * coeffs.P_F.values[k, i]
                * (float(dyn.D_L[k, i] @ u_L[k, i]) + dyn.sigma[k, i])
            )
            off[k, i] = -np.linalg.solve(R, src)
    return StrategyProfile(
        mode="followers", state_dim=1, T=spec.T, N=spec.N, m=m, m1=spec.m1,
        follower_K=K, follower_K_hat=Kh, follower_offset=off,
        leader_K=_zero_gains(Np1, m, m0, 1),
        leader_K_hat=_zero_gains(Np1, m, m0, 1),
        leader_offset=u_L.copy(),
    )


def pricing_strategies(spec: ProblemSpec, p: RegimeGrid,
                       y: RegimeGrid) -> StrategyProfile:
    """Closed-form pricing strategies: pure regime-time functions.

    u_F = -R_F^{-1} B_F^T p(t, regime), u_L = -R_L^{-1} B_L^T y(t, regime);
    no state feedback.  Raises StructuralMismatch when the problem carries
    coefficients excluded by the pricing reduction.
    """
    report = check_assumptions(spec)
    if not report.pricing_structure:
        raise StructuralMismatch(
            "problem has nonzero coefficients outside the pricing reduction"
        )
    Np1, m, mF, m0 = spec.N + 1, spec.m, spec.mF, spec.m0
    BF, RF = spec.B_F, spec.R_F
    BL, RL = spec.dynamics.B_L, spec.leader_cost.R_L
    f_off = np.empty((Np1, m, mF))
    l_off = np.empty((Np1, m, m0))
    for k in range(Np1):
        for i in range(m):
            f_off[k, i] = -np.linalg.solve(RF[k, i], BF[k, i] * p.values[k, i])
            l_off[k, i] = -np.linalg.solve(RL[k, i], BL[k, i] * y.values[k, i])
    return StrategyProfile(
        mode="pricing", state_dim=1, T=spec.T, N=spec.N, m=m, m1=spec.m1,
        follower_K=_zero_gains(Np1, m, mF, 1),
        follower_K_hat=_zero_gains(Np1, m, mF, 1),
        follower_offset=f_off,
        leader_K=_zero_gains(Np1, m, m0, 1),
        leader_K_hat=_zero_gains(Np1, m, m0, 1),
        leader_offset=l_off,
    )


def stackelberg_profile(spec: ProblemSpec, aug: AugmentedSystem,
                        P_L: RegimeGrid, P_L_bar: RegimeGrid, tau: RegimeGrid,
                        gains: LeaderGains) -> StrategyProfile:
    """Joint profile on the stacked state: leader gains from the leader
    Riccati layer, follower controls driven by the adjoint component of
    Y = P_L X + P_L_bar X_hat + tau (second row)."""
    Np1, m, mF = spec.N + 1, spec.m, spec.mF
    BF, RF = spec.B_F, spec.R_F
    K = np.empty((Np1, m, mF, 2))
    Kh = np.empty((Np1, m, mF, 2))
    off = np.empty((Np1, m, mF))
    for k in range(Np1):
        for i in range(m):
            lead = -np.linalg.solve(RF[k, i], BF[k, i])   # (mF,)
            K[k, i] = np.outer(lead, P_L.values[k, i][1])
            Kh[k, i] = np.outer(lead, P_L_bar.values[k, i][1])
            off[k, i] = lead * tau.values[k, i][1]
    return StrategyProfile(
        mode="stackelberg", state_dim=2, T=spec.T, N=spec.N, m=m, m1=spec.m1,
        follower_K=K, follower_K_hat=Kh, follower_offset=off,
        leader_K=gains.K_X, leader_K_hat=gains.K_X_hat,
        leader_offset=gains.offset,
    )
