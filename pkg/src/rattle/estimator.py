"""Augmented-state EKF for online inertial-parameter estimation.

The filter state is [x; theta] with theta = [m, Ixx, Iyy, Izz] modelled as
a random walk with tiny process noise (exactly-constant parameters would
let the covariance collapse into permanent overconfidence).  Attitude
uncertainty is kept as a 3-component multiplicative error state, so the
covariance is 16x16 over

    [dr(3), da(3), dv(3), dw(3), dtheta(4)]

with the attitude error defined by q = q_hat (x) exp(da).  Measurements
are the full state (pose + twist) with additive Gaussian noise; the
attitude residual uses the small-angle error-quaternion mapping.

The filter consumes post-saturation applied wrenches (what the actuators
actually produced), and its inputs must arrive in chronological order: a
late measurement raises ``OutOfOrderMeasurement`` instead of silently
corrupting the belief.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import (
    Q_SLC,
    R_SLC,
    STATE_DIM,
    THETA_DIM,
    V_SLC,
    W_SLC,
    ParamVector,
    RigidBodyState,
    Wrench,
    _step_rk4,
    quat_from_rotvec,
    quat_multiply,
    quat_normalize,
    rotation_error_vector,
)

ERR_DIM = 16          # [dr, da, dv, dw, dtheta]
MEAS_ERR_DIM = 12     # full-state measurement in error coordinates

# clamp window on theta relative to the initial estimate
_THETA_CLAMP_LO = 0.1
_THETA_CLAMP_HI = 10.0

class OutOfOrderMeasurement(RuntimeError):
    """Measurement older than the belief's propagated time; rejected."""


def _check_sym_psd(M, name):
    scale = max(1.0, float(np.max(np.abs(M))))
    if not np.allclose(M, M.T, atol=1e-9 * scale):
        raise ValueError(f"{name} must be symmetric")
    if np.min(np.linalg.eigvalsh(M)) < -1e-12 * scale:
        raise ValueError(f"{name} must be positive semidefinite")


@dataclass(frozen=True)
class ParamBelief:
    """Gaussian belief over theta = [m, Ixx, Iyy, Izz]."""

    theta_hat: np.ndarray
    Sigma_theta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "theta_hat", np.asarray(self.theta_hat, dtype=float))
        object.__setattr__(self, "Sigma_theta", np.asarray(self.Sigma_theta, dtype=float))
        if self.theta_hat.shape != (THETA_DIM,):
            raise ValueError("theta_hat must have shape (4,)")
        if self.Sigma_theta.shape != (THETA_DIM, THETA_DIM):
            raise ValueError("Sigma_theta must be 4x4")
        if not np.all(self.theta_hat > 0.0):
            raise ValueError("theta_hat must be positive elementwise")
        _check_sym_psd(self.Sigma_theta, "Sigma_theta")

    def sigmas(self) -> np.ndarray:
        return np.sqrt(np.diag(self.Sigma_theta))

    def as_params(self) -> ParamVector:
        return ParamVector.from_theta(self.theta_hat)


@dataclass(frozen=True)
class AugmentedBelief:
    """EKF belief over the augmented state [x; theta]."""

    state: np.ndarray           # (13,) mean [r, q, v, w]
    theta: np.ndarray           # (4,) parameter mean
    Sigma: np.ndarray           # (16, 16) error-state covariance
    Q_proc: np.ndarray          # (16, 16) process noise density (per second)
    R_meas: np.ndarray          # (12, 12) measurement noise covariance
    t: float = 0.0
    theta_bounds: np.ndarray = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "state", np.asarray(self.state, dtype=float))
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=float))
        object.__setattr__(self, "Sigma", np.asarray(self.Sigma, dtype=float))
        object.__setattr__(self, "Q_proc", np.asarray(self.Q_proc, dtype=float))
        object.__setattr__(self, "R_meas", np.asarray(self.R_meas, dtype=float))
        if self.state.shape != (STATE_DIM,):
            raise ValueError("state must have shape (13,)")
        if self.Sigma.shape != (ERR_DIM, ERR_DIM):
            raise ValueError("Sigma must be 16x16")
        _check_sym_psd(self.Sigma, "Sigma")
        if self.theta_bounds is None:
            bounds = np.stack([_THETA_CLAMP_LO * self.theta,
                               _THETA_CLAMP_HI * self.theta])
            object.__setattr__(self, "theta_bounds", bounds)

    @property
    def params(self) -> ParamVector:
        return ParamVector.from_theta(self.theta)


def make_augmented_belief(x0: RigidBodyState, pb0: ParamBelief,
                          sigma0_state, q_proc_diag, r_meas_diag,
                          t0: float = 0.0) -> AugmentedBelief:
    """Assemble the initial belief from the scenario's priors.

    ``sigma0_state`` are initial state-error standard deviations (12,),
    ``q_proc_diag`` process noise densities (16,), ``r_meas_diag``
    measurement variances (12,).
    """
    sigma0_state = np.asarray(sigma0_state, dtype=float)
    Sigma = np.zeros((ERR_DIM, ERR_DIM))
    Sigma[:12, :12] = np.diag(sigma0_state ** 2)
    Sigma[12:, 12:] = pb0.Sigma_theta
    return AugmentedBelief(state=x0.as_vector(), theta=pb0.theta_hat.copy(),
                           Sigma=Sigma, Q_proc=np.diag(np.asarray(q_proc_diag, dtype=float)),
                           R_meas=np.diag(np.asarray(r_meas_diag, dtype=float)), t=t0)


# ---------------------------------------------------------------------------
# error-state injection / extraction
# ---------------------------------------------------------------------------

def _inject(state, theta, err):
    """Apply error vectors err (..., 16) to the mean (vectorized)."""
    err = np.asarray(err, dtype=float)
    out = np.broadcast_to(state, err.shape[:-1] + (STATE_DIM,)).copy()
    out[..., R_SLC] += err[..., 0:3]
    dq = quat_from_rotvec(err[..., 3:6])
    out[..., Q_SLC] = quat_multiply(out[..., Q_SLC], dq)
    out[..., V_SLC] += err[..., 6:9]
    out[..., W_SLC] += err[..., 9:12]
    th = np.broadcast_to(theta, err.shape[:-1] + (THETA_DIM,)) + err[..., 12:16]
    return out, th


def _extract(state_ref, state) -> np.ndarray:
    """Error coordinates of ``state`` relative to ``state_ref`` (state part)."""
    e = np.empty(state.shape[:-1] + (12,))
    e[..., 0:3] = state[..., R_SLC] - state_ref[..., R_SLC]
    e[..., 3:6] = rotation_error_vector(state_ref[..., Q_SLC], state[..., Q_SLC])
    e[..., 6:9] = state[..., V_SLC] - state_ref[..., V_SLC]
    e[..., 9:12] = state[..., W_SLC] - state_ref[..., W_SLC]
    return e


# ---------------------------------------------------------------------------
# predict / update
# ---------------------------------------------------------------------------

def ekf_predict(b: AugmentedBelief, u: Wrench, dt: float) -> AugmentedBelief:
    """Propagate mean and covariance through one zero-order-hold step.

    The state transition matrix over the error state is obtained by central
    finite differences of the full nonlinear step (including quaternion
    renormalization), evaluated in one batched integrator call.
    """
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    uv = u.as_vector()
    state_next = _step_rk4(b.state, uv, b.theta[0], b.theta[1:4], dt)

    h = np.full(ERR_DIM, 1e-6)
    h[12:] = np.maximum(1e-6, 1e-6 * np.abs(b.theta))
    E = np.vstack([np.diag(h), -np.diag(h)])            # (32, 16)
    states_p, thetas_p = _inject(b.state, b.theta, E)
    prop = _step_rk4(states_p, uv, thetas_p[..., 0], thetas_p[..., 1:4], dt)
    err = _extract(state_next, prop)                     # (32, 12)

    Phi = np.zeros((ERR_DIM, ERR_DIM))
    Phi[:12, :] = ((err[:ERR_DIM] - err[ERR_DIM:]) / (2.0 * h[:, None])).T
    Phi[12:, 12:] = np.eye(THETA_DIM)                    # random-walk parameters

    Sigma = Phi @ b.Sigma @ Phi.T + b.Q_proc * dt
    Sigma = 0.5 * (Sigma + Sigma.T)
    return replace(b, state=state_next, Sigma=Sigma, t=b.t + dt)


def ekf_update(b: AugmentedBelief, y, t_meas: float) -> AugmentedBelief:
    """Joseph-form EKF update with a full-state measurement y (13,).

    The attitude residual is the small-angle error of the measured
    quaternion relative to the predicted one.  The parameter mean is
    clamped to its positivity window after the update; the covariance is
    left untouched by the clamp.
    """
    y = np.asarray(y, dtype=float)
    if y.shape != (STATE_DIM,):
        raise ValueError("measurement must have shape (13,)")
    if not np.all(np.isfinite(y)):
        raise ValueError("measurement must be finite")
    if t_meas < b.t - 1e-9:
        raise OutOfOrderMeasurement(
            f"measurement at t={t_meas} precedes belief time t={b.t}")

    e = np.empty(MEAS_ERR_DIM)
    e[0:3] = y[R_SLC] - b.state[R_SLC]
    e[3:6] = rotation_error_vector(b.state[Q_SLC], quat_normalize(y[Q_SLC]))
    e[6:9] = y[V_SLC] - b.state[V_SLC]
    e[9:12] = y[W_SLC] - b.state[W_SLC]

    H = np.zeros((MEAS_ERR_DIM, ERR_DIM))
    H[:, :MEAS_ERR_DIM] = np.eye(MEAS_ERR_DIM)
    S = b.Sigma[:12, :12] + b.R_meas
    K = np.linalg.solve(S.T, b.Sigma[:, :12].T).T      # Sigma H^T S^-1
    delta = K @ e
    IKH = np.eye(ERR_DIM) - K @ H
    Sigma = IKH @ b.Sigma @ IKH.T + K @ b.R_meas @ K.T
    Sigma = 0.5 * (Sigma + Sigma.T)

    state, theta = _inject(b.state, b.theta, delta)
    state[Q_SLC] = quat_normalize(state[Q_SLC])
    theta = np.clip(theta, b.theta_bounds[0], b.theta_bounds[1])
    return replace(b, state=state, theta=theta, Sigma=Sigma, t=max(b.t, t_meas))


def current_params(b: AugmentedBelief) -> ParamBelief:
    """Project the augmented belief onto the parameter block."""
    return ParamBelief(theta_hat=b.theta.copy(),
                       Sigma_theta=b.Sigma[12:, 12:].copy())
