"""Weighted nonlinear least-squares position solver (Levenberg-Marquardt).

Solves argmin_X sum_i w_i (rho_i - h_i(X))^2 for the 4-state [x, y, z,
clock_bias]. Internally the clock term is parameterized in meters (c * bias)
so the normal equations stay well conditioned; the public state keeps the
bias in seconds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .constants import SPEED_OF_LIGHT
from .geodesy import DegenerateGeometryError, Epoch, NavState

# Condition number of the (undamped) normal matrix above which the geometry
# is treated as rank deficient.
COND_LIMIT = 1e10

# Damping growth beyond which a stalled search is abandoned (non-converged).
_MAX_DAMPING = 1e14


class RankDeficiencyError(DegenerateGeometryError):
    """Normal matrix is singular: satellite geometry cannot fix 4 states."""


@dataclass(frozen=True)
class WeightVector:
    """Non-negative per-satellite weights [1/m^2] aligned with Epoch.channels."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        if v.ndim != 1:
            raise ValueError("weights must be a 1-D vector")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ValueError("weights must be finite and non-negative")
        if int(np.count_nonzero(v > 0)) < 4:
            raise ValueError("need at least 4 strictly positive weights")

    def __len__(self) -> int:
        return len(self.values)


def _origin_state() -> NavState:
    return NavState.from_array([0.0, 0.0, 0.0, 0.0])


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 50
    step_tolerance: float = 1e-4          # [m], on the LM step norm
    initial_damping: float = 1e-3
    damping_up: float = 10.0
    damping_down: float = 0.1
    initial_state: NavState = field(default_factory=_origin_state)

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.step_tolerance > 0:
            raise ValueError("step_tolerance must be > 0")
        if not self.initial_damping > 0:
            raise ValueError("initial_damping must be > 0")
        if not self.damping_up > 1:
            raise ValueError("damping_up must be > 1")
        if not 0 < self.damping_down < 1:
            raise ValueError("damping_down must be in (0, 1)")


@dataclass
class SolverResult:
    state: NavState
    residuals: np.ndarray          # rho_i - h_i(X_hat), length N
    converged: bool
    iterations: int
    covariance: np.ndarray | None  # (H^T W H)^-1, 4x4, only when converged


def _predict(q: np.ndarray, sats: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Modeled ranges and Jacobian rows for the meters-parameterized state q.

    q = [x, y, z, c*clock_bias]; Jacobian columns are all in meters.
    """
    d = q[:3] - sats                      # (N, 3) receiver minus satellite
    rng = np.sqrt(np.einsum("ij,ij->i", d, d))
    if np.any(rng == 0.0):
        raise DegenerateGeometryError("receiver coincides with a satellite")
    h = rng + q[3]
    jac = np.empty((len(sats), 4))
    jac[:, :3] = d / rng[:, None]
    jac[:, 3] = 1.0
    return h, jac


def objective(epoch: Epoch, weights: WeightVector, state: NavState) -> float:
    """Weighted sum of squared pseudo-range residuals at the given state."""
    w = weights.values
    if len(w) != epoch.n:
        raise ValueError("weights not aligned with epoch channels")
    q = state.as_array()
    q[3] *= SPEED_OF_LIGHT
    h, _ = _predict(q, epoch.sat_positions())
    r = epoch.pseudo_ranges() - h
    return float(np.sum(w * r * r))


def solve(epoch: Epoch, weights: WeightVector, config: SolverConfig | None = None) -> SolverResult:
    """Levenberg-Marquardt minimization of the weighted residual sum of squares.

    Zero-weight satellites are dropped from the normal equations and have no
    influence on the solution; their residuals are still reported. Raises
    RankDeficiencyError when the active geometry cannot determine all four
    states, and returns converged=False (not an error) when the step norm
    never falls below the tolerance.
    """
    config = config or SolverConfig()
    w = weights.values
    if len(w) != epoch.n:
        raise ValueError(f"weights length {len(w)} != epoch satellite count {epoch.n}")

    sats = epoch.sat_positions()
    rho = epoch.pseudo_ranges()
    active = w > 0

    q = config.initial_state.as_array()
    q[3] *= SPEED_OF_LIGHT

    w_act = w[active]
    sats_act = sats[active]
    rho_act = rho[active]

    def cost(qc: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
        h, jac = _predict(qc, sats_act)
        r = rho_act - h
        return float(np.sum(w_act * r * r)), r, jac

    obj, r, jac = cost(q)
    lam = config.initial_damping
    converged = False
    iterations = 0

    while iterations < config.max_iterations and not converged:
        a = (jac * w_act[:, None]).T @ jac
        g = (jac * w_act[:, None]).T @ r
        accepted = False
        while lam <= _MAX_DAMPING:
            # Marquardt damping (lambda * diag(A)) keeps the step invariant
            # to a uniform rescaling of the weights
            damped = a.copy()
            damped[range(4), range(4)] *= 1.0 + lam
            try:
                dq = np.linalg.solve(damped, g)
            except np.linalg.LinAlgError:
                raise RankDeficiencyError("singular normal matrix") from None
            cand = q + dq
            obj_cand, r_cand, jac_cand = cost(cand)
            improved = obj_cand < obj
            if improved:
                q, obj, r, jac = cand, obj_cand, r_cand, jac_cand
                accepted = True
            if float(np.linalg.norm(dq)) < config.step_tolerance:
                # the proposed step is already below tolerance: converged,
                # whether or not that last nudge strictly improved
                converged = True
                break
            if improved:
                lam = max(lam * config.damping_down, 1e-12)
                break
            lam *= config.damping_up
        iterations += 1
        if not accepted and not converged:
            break

    if converged:
        # Two undamped Gauss-Newton polish steps. Strict-improvement
        # acceptance stalls once true gains drop below the float64 noise of
        # the objective (~ulp of the squared-range magnitudes); near the
        # optimum GN contracts unconditionally and reaches the gradient
        # noise floor instead.
        for _ in range(2):
            a = (jac * w_act[:, None]).T @ jac
            g = (jac * w_act[:, None]).T @ r
            try:
                dq = np.linalg.solve(a, g)
            except np.linalg.LinAlgError:
                break
            q = q + dq
            obj, r, jac = cost(q)

    a = (jac * w_act[:, None]).T @ jac
    if np.linalg.cond(a) > COND_LIMIT:
        raise RankDeficiencyError(
            f"degenerate satellite geometry (normal-matrix condition > {COND_LIMIT:g})"
        )

    covariance = None
    if converged:
        scale = np.diag([1.0, 1.0, 1.0, 1.0 / SPEED_OF_LIGHT])
        covariance = scale @ np.linalg.inv(a) @ scale

    h_all, _ = _predict(q, sats)
    state = NavState.from_array([q[0], q[1], q[2], q[3] / SPEED_OF_LIGHT])
    return SolverResult(
        state=state,
        residuals=rho - h_all,
        converged=converged,
        iterations=iterations,
        covariance=covariance,
    )
