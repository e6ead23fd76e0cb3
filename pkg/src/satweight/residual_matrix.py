"""Leave-one-out pseudo-range residual matrix construction.

For an epoch with N satellites, row n of the matrix holds the residuals of
every satellite against the position solved from the subset that excludes
satellite n (equal weights, same solver settings as the main WLS); the
diagonal carries a sentinel marking the excluded satellite. The N subset
solves share one vectorized Levenberg-Marquardt loop, warm-started from the
all-satellite solution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constants import SPEED_OF_LIGHT
from .geodesy import Epoch
from .wls import COND_LIMIT, SolverConfig, WeightVector, solve

DEFAULT_GAMMA = 1000.0
DEFAULT_CLIP = 100.0
# Diagonal code of a normalized matrix; deliberately outside the [-1, 1]
# range of normalized residuals.
NORMALIZED_DIAG_CODE = 2.0

_MAX_DAMPING = 1e14


class EpochRejectedError(ValueError):
    """A leave-one-out subset was degenerate; the whole epoch is unusable."""

    def __init__(self, message: str, failing_subsets: list[str] | None = None):
        super().__init__(message)
        self.failing_subsets = failing_subsets or []


@dataclass(frozen=True)
class ResidualMatrix:
    """N x N leave-one-out residuals with a sentinel diagonal.

    ``clip`` is None for raw matrices in meters; after normalization it
    records the clip bound the entries were scaled by.
    """

    values: np.ndarray
    n: int
    gamma: float
    clip: float | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        if v.shape != (self.n, self.n):
            raise ValueError(f"expected a ({self.n}, {self.n}) matrix, got {v.shape}")
        if not np.all(np.diagonal(v) == self.gamma):
            raise ValueError("every diagonal entry must equal the sentinel")
        off = v[~np.eye(self.n, dtype=bool)]
        if not np.all(np.isfinite(off)):
            raise ValueError("off-diagonal residuals must be finite")


def _loo_states(epoch: Epoch, config: SolverConfig, warm: np.ndarray) -> np.ndarray:
    """Solve the N equal-weight leave-one-out problems as one batched LM run.

    Returns the (N, 4) meters-parameterized states [x, y, z, c*bias]; raises
    EpochRejectedError if any subset geometry is rank deficient.
    """
    sats = epoch.sat_positions()
    rho = epoch.pseudo_ranges()
    n = epoch.n

    w = np.ones((n, n))
    np.fill_diagonal(w, 0.0)

    q = np.tile(warm, (n, 1))
    lam = np.full(n, config.initial_damping)
    done = np.zeros(n, dtype=bool)
    accepted_steps = np.zeros(n, dtype=int)
    diag_idx = np.arange(4)

    def residuals_for(states: np.ndarray) -> np.ndarray:
        d = states[:, None, :3] - sats[None, :, :]       # (n, n, 3)
        rng = np.sqrt(np.einsum("kij,kij->ki", d, d))
        return rho[None, :] - (rng + states[:, 3:4])

    def cost_and_model(states: np.ndarray):
        d = states[:, None, :3] - sats[None, :, :]
        rng = np.sqrt(np.einsum("kij,kij->ki", d, d))
        res = rho[None, :] - (rng + states[:, 3:4])
        jac = np.empty((n, n, 4))
        jac[:, :, :3] = d / rng[:, :, None]
        jac[:, :, 3] = 1.0
        obj = np.einsum("ki,ki,ki->k", w, res, res)
        return obj, res, jac

    obj, res, jac = cost_and_model(q)

    # Outer sweeps: each instance either accepts one damped step, inflates its
    # damping, or is finished. Generous sweep budget so damping retries do not
    # eat into the per-instance iteration allowance.
    for _ in range(config.max_iterations * 8):
        act = ~done
        if not act.any():
            break
        wj = w[:, :, None] * jac
        a = np.einsum("kij,kil->kjl", wj, jac)
        g = np.einsum("kij,ki->kj", wj, res)
        damped = a.copy()
        damped[:, diag_idx, diag_idx] *= 1.0 + lam[:, None]
        try:
            dq = np.linalg.solve(damped[act], g[act][..., None])[..., 0]
        except np.linalg.LinAlgError:
            raise EpochRejectedError(
                "singular normal matrix in a leave-one-out solve",
                failing_subsets=[epoch.channels[k].sat_id for k in np.flatnonzero(act)],
            ) from None
        cand = q.copy()
        cand[act] += dq
        obj_cand, res_cand, jac_cand = cost_and_model(cand)
        improved = act & (obj_cand < obj)
        stalled = act & ~improved

        q[improved] = cand[improved]
        obj[improved] = obj_cand[improved]
        res[improved] = res_cand[improved]
        jac[improved] = jac_cand[improved]
        lam[improved] = np.maximum(lam[improved] * config.damping_down, 1e-12)
        accepted_steps[improved] += 1
        lam[stalled] *= config.damping_up

        # a proposed step below tolerance means converged, applied or not
        step_norm = np.full(n, np.inf)
        step_norm[act] = np.linalg.norm(dq, axis=1)
        done |= act & (step_norm < config.step_tolerance)
        done |= accepted_steps >= config.max_iterations
        done |= lam > _MAX_DAMPING

    # undamped Gauss-Newton polish past the objective-comparison noise floor
    # (mirrors the polish in wls.solve)
    for _ in range(2):
        wj = w[:, :, None] * jac
        a = np.einsum("kij,kil->kjl", wj, jac)
        g = np.einsum("kij,ki->kj", wj, res)
        try:
            dq = np.linalg.solve(a, g[..., None])[..., 0]
        except np.linalg.LinAlgError:
            break
        q = q + dq
        obj, res, jac = cost_and_model(q)

    wj = w[:, :, None] * jac
    a = np.einsum("kij,kil->kjl", wj, jac)
    conds = np.linalg.cond(a)
    bad = np.flatnonzero(~np.isfinite(conds) | (conds > COND_LIMIT))
    if bad.size:
        ids = [epoch.channels[k].sat_id for k in bad]
        raise EpochRejectedError(
            f"degenerate geometry in leave-one-out subsets excluding {ids}",
            failing_subsets=ids,
        )
    return q


def build_residual_matrix(
    epoch: Epoch,
    config: SolverConfig | None = None,
    gamma: float = DEFAULT_GAMMA,
) -> ResidualMatrix:
    """Construct the leave-one-out residual matrix for one epoch.

    Row n holds rho_i - h_i(X_n) for i != n where X_n is the equal-weight
    solution over all satellites except n; entry (n, n) is the sentinel.
    The leave-one-out solves never read pseudo-range n, so X_n is invariant
    to it by construction.
    """
    config = config or SolverConfig()
    n = epoch.n

    full = solve(epoch, WeightVector(np.ones(n)), config)
    warm = full.state.as_array()
    warm[3] *= SPEED_OF_LIGHT

    states = _loo_states(epoch, config, warm)

    sats = epoch.sat_positions()
    rho = epoch.pseudo_ranges()
    d = states[:, None, :3] - sats[None, :, :]
    rng = np.sqrt(np.einsum("kij,kij->ki", d, d))
    values = rho[None, :] - (rng + states[:, 3:4])
    np.fill_diagonal(values, gamma)
    return ResidualMatrix(values=values, n=n, gamma=gamma, clip=None)


def normalize_matrix(m: ResidualMatrix, clip: float = DEFAULT_CLIP) -> ResidualMatrix:
    """Scale off-diagonal entries into [-1, 1] and code the diagonal.

    Residuals are clamped to [-clip, +clip] and divided by clip; the
    sentinel diagonal becomes NORMALIZED_DIAG_CODE. Calling this on a
    matrix already normalized with the same clip is a no-op.
    """
    if not clip > 0:
        raise ValueError("clip must be > 0")
    if m.clip is not None:
        if m.clip == clip:
            return m
        raise ValueError(f"matrix already normalized with clip {m.clip}, asked for {clip}")
    values = np.clip(m.values, -clip, clip) / clip
    np.fill_diagonal(values, NORMALIZED_DIAG_CODE)
    return ResidualMatrix(values=values, n=m.n, gamma=NORMALIZED_DIAG_CODE, clip=clip)
