"""Dual Kalman filter bank for the pre-attack and post-attack hypotheses.

The pre-attack filter assumes clean measurements; the post-attack filter
explains measurements with the current maximum-likelihood attack estimates:
its innovation is y - H x_pred - a_hat and its innovation covariance is
inflated by the estimated per-meter jamming variances. Whenever the
detection statistic is clamped to zero the post filter is re-synchronized
to the pre filter and the change-point estimate moves to the current time.

Covariance updates use the Joseph form: the textbook shortcut
P - G H P loses positive semidefiniteness in finite precision at the
1e-4 variance scales this model runs at.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .grid_model import GridModel, MeasurementBatch


class InnovationSolveError(RuntimeError):
    """Innovation covariance factorization failed (ill-conditioned model)."""


@dataclass
class KalmanState:
    x_pred: np.ndarray
    P_pred: np.ndarray
    x_upd: np.ndarray
    P_upd: np.ndarray

    def copy(self) -> "KalmanState":
        return KalmanState(
            self.x_pred.copy(), self.P_pred.copy(), self.x_upd.copy(), self.P_upd.copy()
        )


@dataclass
class DualFilterBank:
    pre: KalmanState
    post: KalmanState
    tau_hat: int = 1


def initial_state(x0: np.ndarray, p0: "float | np.ndarray") -> KalmanState:
    """Filters start converged at the configured state with P = p0 * I."""
    x0 = np.asarray(x0, dtype=float)
    P = np.asarray(p0, dtype=float)
    if P.ndim == 0:
        P = float(P) * np.eye(x0.size)
    return KalmanState(x_pred=x0.copy(), P_pred=P.copy(), x_upd=x0.copy(), P_upd=P.copy())


def initial_bank(x0: np.ndarray, p0: "float | np.ndarray") -> DualFilterBank:
    return DualFilterBank(pre=initial_state(x0, p0), post=initial_state(x0, p0), tau_hat=1)


def _symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def kf_predict(model: GridModel, ks: KalmanState) -> KalmanState:
    """x_pred = A x_upd, P_pred = A P_upd A^T + sigma_v2 I."""
    x_pred = model.A @ ks.x_upd
    P_pred = _symmetrize(model.A @ ks.P_upd @ model.A.T + model.sigma_v2 * np.eye(model.N))
    return KalmanState(x_pred=x_pred, P_pred=P_pred, x_upd=ks.x_upd, P_upd=ks.P_upd)


def _update(
    model: GridModel, ks: KalmanState, y_flat: np.ndarray, bias: np.ndarray, noise_diag: np.ndarray
):
    """Shared measurement update; pre-attack is the zero-bias/zero-inflation case.

    The innovation covariance S = H P H^T + diag(noise) is applied through a
    Cholesky solve, never an explicit inverse. Returns the updated state plus
    the factorization and raw innovation so downstream statistics can reuse
    the same solve.
    """
    H = model.H
    PHt = ks.P_pred @ H.T
    S = H @ PHt
    S.flat[:: S.shape[0] + 1] += noise_diag
    try:
        factor = cho_factor(_symmetrize(S), lower=True, check_finite=False)
    except LinAlgError as exc:
        raise InnovationSolveError(
            f"innovation covariance solve failed (cond along diag "
            f"min={S.diagonal().min():.3e} max={S.diagonal().max():.3e}): {exc}"
        ) from exc
    G = cho_solve(factor, PHt.T, check_finite=False).T
    innovation = y_flat - H @ ks.x_pred - bias
    x_upd = ks.x_pred + G @ innovation
    IGH = np.eye(model.N) - G @ H
    P_upd = _symmetrize(IGH @ ks.P_pred @ IGH.T + (G * noise_diag) @ G.T)
    state = KalmanState(x_pred=ks.x_pred, P_pred=ks.P_pred, x_upd=x_upd, P_upd=P_upd)
    return state, factor, innovation


def kf_update_pre(model: GridModel, ks: KalmanState, y: MeasurementBatch) -> KalmanState:
    return kf_update_pre_full(model, ks, y)[0]


def kf_update_pre_full(model: GridModel, ks: KalmanState, y: MeasurementBatch):
    """Pre-attack update returning (state, innovation-cov factor, innovation)."""
    noise = np.full(model.K * model.lam, model.sigma_w2)
    return _update(model, ks, y.flat, np.zeros(model.K * model.lam), noise)


def kf_update_post(
    model: GridModel,
    ks: KalmanState,
    y: MeasurementBatch,
    a_hat: np.ndarray,
    sigma_hat: np.ndarray,
) -> KalmanState:
    """Measurement update against the estimated attack.

    a_hat and sigma_hat are per-meter (length K) and are expanded to K*lam by
    contiguous repetition, matching H's row-block layout.
    """
    if np.any(np.asarray(sigma_hat) < 0):
        raise ValueError("sigma_hat must be >= 0")
    noise = model.sigma_w2 + model.expand(sigma_hat)
    return _update(model, ks, y.flat, model.expand(a_hat), noise)[0]


def sync_post_to_pre(bank: DualFilterBank, t: int) -> DualFilterBank:
    """Reset coupling: post := pre and the change-point estimate moves to t."""
    return DualFilterBank(pre=bank.pre, post=bank.pre.copy(), tau_hat=t)


def min_eigenvalue_ratio(P: np.ndarray) -> float:
    """Smallest eigenvalue over trace; PSD health check for tests."""
    eig = np.linalg.eigvalsh(_symmetrize(P))
    tr = np.trace(P)
    return float(eig[0] / tr) if tr > 0 else float(eig[0])
