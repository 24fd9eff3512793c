"""6-DOF rigid-body dynamics with uncertain inertial parameters.

Governing equations, expressed in a body-fixed frame whose origin is the
original center of mass CM0 (offset ``c`` from the current CM):

    [ F   ]   [ m*I3      -m*[c]x              ] [ v_dot ]   [ m*[w]x [w]x c            ]
    [ tau ] = [ m*[c]x     I_cm - m*[c]x [c]x  ] [ w_dot ] + [ [w]x (I_cm - m[c]x[c]x) w ]

with force ``F`` and torque ``tau`` applied in the body frame, ``[.]x`` the
cross-product matrix, and uncertain parameters theta = [m, Ixx, Iyy, Izz].

Frame conventions (fixed once, asserted in tests):
    - quaternion q = [x, y, z, w] (scalar-last), rotates body vectors into
      the inertial frame: v_inertial = R(q) v_body
    - r, v are inertial; w (angular velocity) is body-frame
    - the generalized mass-matrix solve above yields a body-frame
      translational acceleration, which is rotated into the inertial frame:
      v_dot = R(q) a_body.  With c = 0 this reduces to m*v_dot = R(q) F and
      I*w_dot = tau - w x (I w).

State vector layout (13):  [r(3), q(4), v(3), w(3)].
Input vector layout (6):   [F(3), tau(3)], both body-frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

STATE_DIM = 13
INPUT_DIM = 6
THETA_DIM = 4

_QUAT_TOL = 1e-9
_TRIANGLE_TOL = 1e-9

# indices into the state vector
R_SLC = slice(0, 3)
Q_SLC = slice(3, 7)
V_SLC = slice(7, 10)
W_SLC = slice(10, 13)


# ---------------------------------------------------------------------------
# quaternion helpers (scalar-last, Hamilton product, batched over leading axes)
# ---------------------------------------------------------------------------

def quat_multiply(q1, q2):
    """Hamilton product q1 (x) q2, scalar-last, broadcasting over leading axes."""
    q1 = np.asarray(q1, dtype=float)
    q2 = np.asarray(q2, dtype=float)
    v1, w1 = q1[..., :3], q1[..., 3:4]
    v2, w2 = q2[..., :3], q2[..., 3:4]
    vec = w1 * v2 + w2 * v1 + np.cross(v1, v2)
    scl = w1 * w2 - np.sum(v1 * v2, axis=-1, keepdims=True)
    return np.concatenate([vec, scl], axis=-1)


def quat_conjugate(q):
    q = np.asarray(q, dtype=float)
    out = q.copy()
    out[..., :3] *= -1.0
    return out


def quat_normalize(q):
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_rotate(q, v):
    """Rotate body-frame vector(s) v into the inertial frame: R(q) v."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    qv, qw = q[..., :3], q[..., 3:4]
    t = 2.0 * np.cross(qv, v)
    return v + qw * t + np.cross(qv, t)


def quat_to_matrix(q):
    """Rotation matrix R(q) with R(q) v_body = v_inertial."""
    x, y, z, w = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def quat_from_rotvec(a):
    """Unit quaternion for a rotation vector (axis * angle), small-angle safe."""
    a = np.asarray(a, dtype=float)
    angle = np.linalg.norm(a, axis=-1, keepdims=True)
    half = 0.5 * angle
    # sinc form avoids division by zero at angle = 0
    small = angle < 1e-12
    k = np.where(small, 0.5, np.sin(half) / np.where(small, 1.0, angle))
    return np.concatenate([k * a, np.cos(half)], axis=-1)


def rotation_error_vector(q_ref, q):
    """Small-angle attitude error a with q ~= q_ref (x) quat_from_rotvec(a).

    Returns 2 * vec(q_ref^-1 (x) q), sign-corrected so the scalar part of the
    error quaternion is nonnegative (shortest rotation).
    """
    dq = quat_multiply(quat_conjugate(q_ref), q)
    sign = np.where(dq[..., 3:4] < 0.0, -1.0, 1.0)
    return 2.0 * sign * dq[..., :3]


def skew(v):
    v = np.asarray(v, dtype=float)
    z = np.zeros(v.shape[:-1])
    return np.stack([
        np.stack([z, -v[..., 2], v[..., 1]], axis=-1),
        np.stack([v[..., 2], z, -v[..., 0]], axis=-1),
        np.stack([-v[..., 1], v[..., 0], z], axis=-1),
    ], axis=-2)


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParamVector:
    """Inertial parameters: mass, principal moments of inertia, CM offset.

    theta = [m, Ixx, Iyy, Izz] is the estimated subset; the CM offset ``c``
    is carried for the dynamics but held fixed (default zero) and excluded
    from estimation.
    """

    m: float
    I_diag: np.ndarray
    c: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "I_diag", np.asarray(self.I_diag, dtype=float))
        object.__setattr__(self, "c", np.asarray(self.c, dtype=float))
        if not self.m > 0.0:
            raise ValueError(f"mass must be positive, got {self.m}")
        if self.I_diag.shape != (3,):
            raise ValueError("I_diag must have shape (3,)")
        if not np.all(self.I_diag > 0.0):
            raise ValueError(f"inertias must be positive, got {self.I_diag}")
        ixx, iyy, izz = self.I_diag
        if (ixx + iyy < izz - _TRIANGLE_TOL
                or iyy + izz < ixx - _TRIANGLE_TOL
                or izz + ixx < iyy - _TRIANGLE_TOL):
            raise ValueError(f"inertia triangle inequality violated: {self.I_diag}")
        if self.c.shape != (3,):
            raise ValueError("c must have shape (3,)")

    @property
    def theta(self) -> np.ndarray:
        return np.concatenate([[self.m], self.I_diag])

    @classmethod
    def from_theta(cls, theta, c=None) -> "ParamVector":
        theta = np.asarray(theta, dtype=float)
        return cls(m=float(theta[0]), I_diag=theta[1:4],
                   c=np.zeros(3) if c is None else c)

    @property
    def has_offset(self) -> bool:
        return bool(np.any(self.c != 0.0))


@dataclass
class RigidBodyState:
    """Pose and twist: inertial position/velocity, body-to-inertial attitude
    quaternion (scalar-last), body-frame angular velocity."""

    r: np.ndarray
    q: np.ndarray
    v: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=float)
        self.q = np.asarray(self.q, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        self.w = np.asarray(self.w, dtype=float)
        norm = np.linalg.norm(self.q)
        if abs(norm - 1.0) > _QUAT_TOL:
            raise ValueError(f"quaternion norm {norm} deviates from 1 by more than {_QUAT_TOL}")
        self.q = self.q / norm

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.r, self.q, self.v, self.w])

    @classmethod
    def from_vector(cls, x) -> "RigidBodyState":
        x = np.asarray(x, dtype=float)
        return cls(r=x[R_SLC], q=x[Q_SLC], v=x[V_SLC], w=x[W_SLC])

    @classmethod
    def at_rest(cls, r=(0.0, 0.0, 0.0), q=(0.0, 0.0, 0.0, 1.0)) -> "RigidBodyState":
        return cls(r=np.asarray(r, dtype=float), q=np.asarray(q, dtype=float),
                   v=np.zeros(3), w=np.zeros(3))


@dataclass(frozen=True)
class Wrench:
    """Body-frame force and torque."""

    F: np.ndarray
    tau: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "F", np.asarray(self.F, dtype=float))
        object.__setattr__(self, "tau", np.asarray(self.tau, dtype=float))
        if not (np.all(np.isfinite(self.F)) and np.all(np.isfinite(self.tau))):
            raise ValueError("wrench components must be finite")

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.F, self.tau])

    @classmethod
    def zero(cls) -> "Wrench":
        return cls(F=np.zeros(3), tau=np.zeros(3))

    @classmethod
    def from_vector(cls, u) -> "Wrench":
        u = np.asarray(u, dtype=float)
        return cls(F=u[:3], tau=u[3:6])


# ---------------------------------------------------------------------------
# continuous dynamics
# ---------------------------------------------------------------------------

def _derivative(x, u, m, I_diag, c=None):
    """State derivative for state rows x (..., 13) and inputs u (..., 6).

    m may be scalar or (...,); I_diag scalar-free (..., 3).  c is None or a
    fixed (3,) offset (the offset path is not batched over c).
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    q = x[..., Q_SLC]
    v = x[..., V_SLC]
    w = x[..., W_SLC]
    F = u[..., 0:3]
    tau = u[..., 3:6]
    m = np.asarray(m, dtype=float)
    I_diag = np.asarray(I_diag, dtype=float)

    r_dot = v
    # q_dot = 1/2 q (x) [w, 0]
    wq = np.concatenate([w, np.zeros(w.shape[:-1] + (1,))], axis=-1)
    q_dot = 0.5 * quat_multiply(q, wq)

    if c is not None and np.any(np.asarray(c) != 0.0):
        a_body, w_dot = _solve_offset_accelerations(F, tau, w, m, I_diag, np.asarray(c, dtype=float))
    else:
        a_body = F / m[..., None] if m.ndim else F / m
        Iw = I_diag * w
        w_dot = (tau - np.cross(w, Iw)) / I_diag
    v_dot = quat_rotate(q, a_body)
    return np.concatenate([r_dot, q_dot, v_dot, w_dot], axis=-1)


def _solve_offset_accelerations(F, tau, w, m, I_diag, c):
    """Solve the coupled 6x6 generalized mass-matrix system for (a_body, w_dot)."""
    if np.ndim(I_diag) != 1:
        raise ValueError("offset dynamics require a single parameter set")
    cx = skew(c)
    m = float(m)
    I_eff = np.diag(I_diag) - m * cx @ cx
    M = np.zeros((6, 6))
    M[:3, :3] = m * np.eye(3)
    M[:3, 3:] = -m * cx
    M[3:, :3] = m * cx
    M[3:, 3:] = I_eff
    wxwxc = np.cross(w, np.cross(w, np.broadcast_to(c, w.shape)))
    rhs = np.concatenate([F - m * wxwxc,
                          tau - np.cross(w, w @ I_eff.T)], axis=-1)
    sol = np.linalg.solve(M, rhs[..., None])[..., 0]
    return sol[..., :3], sol[..., 3:]


def dynamics_derivative(x: RigidBodyState, u: Wrench, p: ParamVector) -> np.ndarray:
    """Time derivative (r_dot, q_dot, v_dot, w_dot) as a 13-vector."""
    return _derivative(x.as_vector(), u.as_vector(), p.m, p.I_diag,
                       p.c if p.has_offset else None)


# ---------------------------------------------------------------------------
# integration
# ---------------------------------------------------------------------------

def _rk4_stage_states(x, u, m, I_diag, dt, c=None):
    """Stage states and derivatives of the classical RK4 step."""
    k1 = _derivative(x, u, m, I_diag, c)
    x2 = x + 0.5 * dt * k1
    k2 = _derivative(x2, u, m, I_diag, c)
    x3 = x + 0.5 * dt * k2
    k3 = _derivative(x3, u, m, I_diag, c)
    x4 = x + dt * k3
    k4 = _derivative(x4, u, m, I_diag, c)
    x_raw = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return x_raw, (x, x2, x3, x4)


def _step_rk4(x, u, m, I_diag, dt, c=None):
    """One RK4 step on state rows (..., 13) with zero-order-hold input;
    quaternion renormalized."""
    x_raw, _ = _rk4_stage_states(x, u, m, I_diag, dt, c)
    x_next = x_raw.copy()
    x_next[..., Q_SLC] = quat_normalize(x_raw[..., Q_SLC])
    return x_next


def step_rk4(x: RigidBodyState, u: Wrench, p: ParamVector, dt: float) -> RigidBodyState:
    """Classical 4th-order Runge-Kutta step with zero-order-hold wrench."""
    if not dt > 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    x_next = _step_rk4(x.as_vector(), u.as_vector(), p.m, p.I_diag, dt,
                       p.c if p.has_offset else None)
    return RigidBodyState.from_vector(x_next)


# ---------------------------------------------------------------------------
# analytic Jacobians of the continuous dynamics (c = 0 only)
# ---------------------------------------------------------------------------

def _jacobian_blocks(x, u, m, I_diag):
    """Closed-form blocks of df/dx and df/dtheta at c = 0.

    Returns a dict of batched blocks; leading axes follow x.  Used by the
    fast variational propagation below and cross-checked against finite
    differences in tests.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    q = x[..., Q_SLC]
    w = x[..., W_SLC]
    F = u[..., 0:3]
    tau = u[..., 3:6]
    qv, qw = q[..., :3], q[..., 3]
    batch = x.shape[:-1]

    # d(q_dot)/dq = 1/2 * right-multiplication matrix of [w, 0]
    Jqq = np.zeros(batch + (4, 4))
    Jqq[..., :3, :3] = -skew(w)
    Jqq[..., :3, 3] = w
    Jqq[..., 3, :3] = -w
    Jqq *= 0.5

    # d(q_dot)/dw
    Jqw = np.zeros(batch + (4, 3))
    Jqw[..., :3, :3] = qw[..., None, None] * np.eye(3) + skew(qv)
    Jqw[..., 3, :3] = -qv
    Jqw *= 0.5

    # d(v_dot)/dq with v_dot = R(q) F / m;
    # R(q)F = F + 2 qw (qv x F) + 2 qv x (qv x F)
    Fx = skew(F)
    qvxF = np.cross(qv, F)
    dRF_dqv = 2.0 * (-qw[..., None, None] * Fx - skew(qvxF) - skew(qv) @ Fx)
    dRF_dqw = 2.0 * qvxF
    Jvq = np.concatenate([dRF_dqv, dRF_dqw[..., None]], axis=-1) / m

    # d(v_dot)/dm = -R(q) F / m^2
    Jvm = -quat_rotate(q, F) / m ** 2

    # d(w_dot)/dw = -I^-1 ([w]x I - [Iw]x)
    Iw = I_diag * w
    Jww = -((skew(w) * I_diag[..., None, :]) - skew(Iw)) / I_diag[..., :, None]

    # d(w_dot)/dI_j, diagonal inertia
    g = tau - np.cross(w, Iw)
    JwI = np.zeros(batch + (3, 3))
    for j in range(3):
        ej = np.zeros(3)
        ej[j] = 1.0
        term1 = np.zeros(batch + (3,))
        term1[..., j] = -g[..., j] / I_diag[..., j] ** 2
        term2 = -np.cross(w, w[..., j:j + 1] * ej) / I_diag
        JwI[..., j] = term1 + term2

    return {"Jqq": Jqq, "Jqw": Jqw, "Jvq": Jvq, "Jvm": Jvm,
            "Jww": Jww, "JwI": JwI}


def _apply_fx(blocks, S):
    """Product (df/dx) S for batched sensitivities S (..., 13, n)."""
    S_q = S[..., Q_SLC, :]
    S_v = S[..., V_SLC, :]
    S_w = S[..., W_SLC, :]
    out = np.zeros_like(S)
    out[..., R_SLC, :] = S_v
    out[..., Q_SLC, :] = blocks["Jqq"] @ S_q + blocks["Jqw"] @ S_w
    out[..., V_SLC, :] = blocks["Jvq"] @ S_q
    out[..., W_SLC, :] = blocks["Jww"] @ S_w
    return out


def _ftheta(blocks, batch):
    """df/dtheta as (..., 13, 4) from the analytic blocks."""
    B = np.zeros(batch + (STATE_DIM, THETA_DIM))
    B[..., V_SLC, 0] = blocks["Jvm"]
    B[..., W_SLC, 1:4] = blocks["JwI"]
    return B


# ---------------------------------------------------------------------------
# finite-difference Jacobians of the continuous dynamics
# ---------------------------------------------------------------------------

def _fd_step_sizes(values):
    return np.maximum(1e-6, 1e-6 * np.abs(values))


def _fd_jacobians(x, u, m, I_diag, c=None):
    """Central-difference df/dx (13x13) and df/dtheta (13x4) for a single
    state; steps h = max(1e-6, 1e-6*|value|) per coordinate."""
    x = np.asarray(x, dtype=float)
    hx = _fd_step_sizes(x)
    Xp = np.repeat(x[None, :], STATE_DIM, axis=0) + np.diag(hx)
    Xm = np.repeat(x[None, :], STATE_DIM, axis=0) - np.diag(hx)
    fx = _derivative(np.vstack([Xp, Xm]), u, m, I_diag, c)
    A = (fx[:STATE_DIM] - fx[STATE_DIM:]).T / (2.0 * hx)

    theta = np.concatenate([[m], I_diag])
    ht = _fd_step_sizes(theta)
    cols = []
    for i in range(THETA_DIM):
        tp = theta.copy()
        tp[i] += ht[i]
        tm = theta.copy()
        tm[i] -= ht[i]
        fp = _derivative(x, u, tp[0], tp[1:4], c)
        fm = _derivative(x, u, tm[0], tm[1:4], c)
        cols.append((fp - fm) / (2.0 * ht[i]))
    B = np.stack(cols, axis=-1)
    return A, B


# ---------------------------------------------------------------------------
# sensitivity propagation
# ---------------------------------------------------------------------------

def _variational_rk4(x, S, u, m, I_diag, dt, jacobians):
    """Propagate S_dot = (df/dx) S + df/dtheta with stage-consistent RK4.

    ``jacobians(stage_state) -> (apply_fx, ftheta)`` supplies either the
    analytic or finite-difference linearization at each stage state.  The
    quaternion-renormalization Jacobian of the discrete step is applied to
    the quaternion rows so S matches derivatives of the renormalized map.
    """
    x_raw, stages = _rk4_stage_states(x, u, m, I_diag, dt)
    dks = []
    offsets = (None, 0.5 * dt, 0.5 * dt, dt)
    prev = None
    for i, xs in enumerate(stages):
        apply_fx, B = jacobians(xs)
        Si = S if i == 0 else S + offsets[i] * prev
        dk = apply_fx(Si) + B
        dks.append(dk)
        prev = dk
    S_raw = S + (dt / 6.0) * (dks[0] + 2.0 * dks[1] + 2.0 * dks[2] + dks[3])

    # renormalization: q+ = q_raw / |q_raw|
    q_raw = x_raw[..., Q_SLC]
    nrm = np.linalg.norm(q_raw, axis=-1, keepdims=True)
    q_hat = q_raw / nrm
    Jn = (np.eye(4) - q_hat[..., :, None] * q_hat[..., None, :]) / nrm[..., None]
    S_out = S_raw.copy()
    S_out[..., Q_SLC, :] = Jn @ S_raw[..., Q_SLC, :]
    return S_out


def sensitivity_step(x: RigidBodyState, S: np.ndarray, u: Wrench, p: ParamVector,
                     dt: float, method: str = "fd") -> np.ndarray:
    """Advance the trajectory sensitivity S = dx/dtheta (13x4) by one step.

    The default linearizes the dynamics by central finite differences;
    ``method="analytic"`` uses the closed-form Jacobians (c = 0 only), which
    the local planner relies on for speed.  Both are cross-checked in tests.
    """
    S = np.asarray(S, dtype=float)
    if S.shape != (STATE_DIM, THETA_DIM):
        raise ValueError(f"S must be {STATE_DIM}x{THETA_DIM}, got {S.shape}")
    if not np.all(np.isfinite(S)):
        raise ValueError("S must be finite")
    xv = x.as_vector()
    uv = u.as_vector()
    c = p.c if p.has_offset else None

    if method == "analytic":
        if p.has_offset:
            raise ValueError("analytic Jacobians require c = 0")

        def jac(xs):
            blocks = _jacobian_blocks(xs, uv, p.m, p.I_diag)
            return (lambda Si: _apply_fx(blocks, Si)), _ftheta(blocks, xs.shape[:-1])
    elif method == "fd":
        def jac(xs):
            A, B = _fd_jacobians(xs, uv, p.m, p.I_diag, c)
            return (lambda Si: A @ Si), B
    else:
        raise ValueError(f"unknown method {method!r}")

    return _variational_rk4(xv, S, uv, p.m, p.I_diag, dt, jac)


def _sensitivity_step_batch(x, S, u, m, I_diag, dt):
    """Analytic-Jacobian sensitivity step for batched states x (..., 13),
    inputs u (..., 6) and sensitivities S (..., 13, 4); c = 0 assumed."""

    def jac(xs):
        blocks = _jacobian_blocks(xs, u, m, I_diag)
        return (lambda Si: _apply_fx(blocks, Si)), _ftheta(blocks, xs.shape[:-1])

    return _variational_rk4(x, S, u, m, I_diag, dt, jac)


# ---------------------------------------------------------------------------
# translational linearization
# ---------------------------------------------------------------------------

def discretize_translational(p: ParamVector, dt: float):
    """Exact zero-order-hold discretization of the translational double
    integrator with mass: returns (A 6x6, B 6x3) for state [r, v]."""
    if not dt > 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    A = np.eye(6)
    A[:3, 3:] = dt * np.eye(3)
    B = np.zeros((6, 3))
    B[:3, :] = (dt ** 2 / (2.0 * p.m)) * np.eye(3)
    B[3:, :] = (dt / p.m) * np.eye(3)
    return A, B
