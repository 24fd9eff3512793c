"""Translational robust tube MPC with online-updatable invariant sets.

The controller splits the applied force into a nominal part ``v`` from a
constraint-tightened MPC and an ancillary feedback ``u_anc = K (x - z0)``
that confines the true state to a tube ``z0 (+) Z`` around the nominal
trajectory under bounded per-step disturbances ``w in W``.

Sets are axis-aligned boxes throughout: ``W`` is a symmetric box of
per-step disturbance bounds, and ``Z`` is a box over-approximation of the
minimal robust positively invariant (mRPI) set of the closed loop
``e+ = (A + B K) e + w``.  Boxes keep the Minkowski arithmetic closed-form
and err in the conservative direction.

Parameter uncertainty enters through ``parameter_disturbance_inflation``:
the 95th-percentile mass deviation is converted into a worst-case one-step
model discrepancy and added to the base disturbance box, so the tube
shrinks online as the mass estimate sharpens.

Attitude is controlled separately by a PD law and sits outside the tube
guarantee.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sparse

import osqp

from .estimator import ParamBelief

logger = logging.getLogger(__name__)

_Z95 = 1.645  # one-sided 95th-percentile z-score


class NotContractive(RuntimeError):
    """mRPI iteration exceeded its budget without satisfying containment."""


class TubeMPCInfeasible(RuntimeError):
    """Tightened constraint sets are empty or the nominal QP has no solution."""


@dataclass(frozen=True)
class DisturbanceBox:
    """Symmetric per-step disturbance bounds |w_i| <= w_max_i on [r, v]."""

    w_max: np.ndarray
    clamped: bool = False

    def __post_init__(self):
        object.__setattr__(self, "w_max", np.asarray(self.w_max, dtype=float))
        if self.w_max.ndim != 1:
            raise ValueError("w_max must be a vector")
        if not np.all(self.w_max >= 0.0):
            raise ValueError(f"w_max must be nonnegative, got {self.w_max}")


@dataclass(frozen=True)
class TubeSet:
    """Box over-approximation of the mRPI set, with provenance."""

    z_box: np.ndarray
    a_k: np.ndarray
    w: DisturbanceBox
    eps: float
    s: int
    alpha: float

    def __post_init__(self):
        object.__setattr__(self, "z_box", np.asarray(self.z_box, dtype=float))
        object.__setattr__(self, "a_k", np.asarray(self.a_k, dtype=float))
        if not np.all(self.z_box >= 0.0):
            raise ValueError("z_box must be nonnegative")

    def reachable_error_certificate(self, n_samples: int = 100_000,
                                    horizon: int = 50, seed: int = 0) -> int:
        """Monte Carlo certificate that closed-loop errors e+ = A_K e + w
        driven by disturbances in W never leave the box.

        Samples reachable errors (random disturbance rollouts from e = 0)
        rather than arbitrary box points: the reachable set is contained in
        the mRPI set and hence in this box, whereas the box hull itself is
        not an invariant set for sign-indefinite A_K.  Returns the
        violation count (0 on a correct approximation).
        """
        rng = np.random.default_rng(seed)
        batch = max(1, n_samples // horizon)
        e = np.zeros((batch, self.z_box.size))
        violations = 0
        for _ in range(horizon):
            w = self.w.w_max * rng.uniform(-1.0, 1.0, size=e.shape)
            on_boundary = rng.random(batch) < 0.5
            w[on_boundary] = self.w.w_max * rng.choice([-1.0, 1.0],
                                                       size=(int(on_boundary.sum()), e.shape[1]))
            e = e @ self.a_k.T + w
            violations += int(np.sum(np.any(np.abs(e) > self.z_box + 1e-12, axis=1)))
        return violations


@dataclass(frozen=True)
class AncillaryGain:
    """Disturbance-rejection feedback u_anc = K (x - z0)."""

    K: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "K", np.asarray(self.K, dtype=float))
        if self.K.shape != (3, 6):
            raise ValueError("K must be 3x6")


def design_ancillary_gain(A, B, Q, R):
    """Discrete LQR gain K with A + B K Schur-stable, plus the Riccati
    matrix P (used as the MPC terminal weight)."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    Q = np.diag(Q) if np.ndim(Q) == 1 else np.asarray(Q, dtype=float)
    R = np.diag(R) if np.ndim(R) == 1 else np.asarray(R, dtype=float)
    P = scipy.linalg.solve_discrete_are(A, B, Q, R)
    K = -np.linalg.solve(B.T @ P @ B + R, B.T @ P @ A)
    gain = AncillaryGain(K=K)
    if not is_stabilizing(gain, A, B):
        raise ValueError("LQR design produced a non-stabilizing gain")
    return gain, P


def is_stabilizing(gain: AncillaryGain, A, B) -> bool:
    rho = np.max(np.abs(np.linalg.eigvals(A + B @ gain.K)))
    return bool(rho < 1.0)


# ---------------------------------------------------------------------------
# disturbance inflation from parameter uncertainty
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InputEnvelope:
    """Operating envelope the inflation is evaluated over."""

    u_max: float
    v_max: float


def parameter_disturbance_inflation(base_w: DisturbanceBox, pb: ParamBelief,
                                    envelope: InputEnvelope, dt: float,
                                    mass_floor: float | None = None) -> DisturbanceBox:
    """Add the 95th-percentile mass-uncertainty discrepancy to the base box.

    With the exact ZOH double integrator only the input matrix depends on
    mass, so the worst one-step discrepancy over |u|_inf <= u_max is
    attained at an endpoint of the mass interval
    [m_hat - 1.645 sigma_m, m_hat + 1.645 sigma_m]:

        |dr| <= dt^2/2 |1/m_ext - 1/m_hat| u_max
        |dv| <= dt    |1/m_ext - 1/m_hat| u_max

    A belief so wide that the low-mass bound is nonpositive is clamped to
    ``mass_floor`` (default m_hat / 10) and flagged on the returned box.
    """
    m_hat = float(pb.theta_hat[0])
    sigma_m = float(np.sqrt(pb.Sigma_theta[0, 0]))
    if mass_floor is None:
        mass_floor = 0.1 * m_hat
    m_lo = m_hat - _Z95 * sigma_m
    m_hi = m_hat + _Z95 * sigma_m
    clamped = False
    if m_lo <= mass_floor:
        m_lo = mass_floor
        clamped = True
        logger.warning("degenerate mass belief (sigma=%.3g); clamping low bound to %.3g",
                       sigma_m, mass_floor)
    dinv = max(abs(1.0 / m_lo - 1.0 / m_hat), abs(1.0 / m_hi - 1.0 / m_hat))
    extra = np.concatenate([np.full(3, 0.5 * dt ** 2 * dinv * envelope.u_max),
                            np.full(3, dt * dinv * envelope.u_max)])
    return DisturbanceBox(w_max=base_w.w_max + extra, clamped=clamped)


# ---------------------------------------------------------------------------
# mRPI box approximation
# ---------------------------------------------------------------------------

def _box_row_sums(A_pows, w_max):
    """sum_i sum_k |(A^i)[j,k]| w_max[k] for each row j."""
    return sum(np.abs(Ai) @ w_max for Ai in A_pows)


def compute_mrpi(A_K, W: DisturbanceBox, eps: float = 1e-3,
                 s_max: int = 200) -> TubeSet:
    """Outer approximation of the minimal RPI set of e+ = A_K e + w, w in W.

    Follows the reachable-set approximation: find the smallest s with
    A_K^s W (subset) alpha W for alpha <= eps / (eps + M(s)), then scale the
    s-term Minkowski sum by (1 - alpha)^-1.  For a symmetric box W the
    support function is h_W(a) = sum_k |a_k| w_k, giving

        alpha(s) = max_j sum_k |(A_K^s)[j,k]| w[k] / w[j]
        Z_box[j] = (1 - alpha)^-1 sum_{i=0}^{s-1} sum_k |(A_K^i)[j,k]| w[k]

    The box contains the true mRPI set, so every reachable closed-loop
    error stays inside it (see ``TubeSet.reachable_error_certificate``).
    The box hull itself is not an invariant set when A_K has sign-indefinite
    entries; the tube controller does not rely on that, only on containment
    of the reachable errors and on the per-tick initial-state constraint.
    """
    A_K = np.asarray(A_K, dtype=float)
    n = A_K.shape[0]
    if A_K.shape != (n, n):
        raise ValueError("A_K must be square")
    w = np.asarray(W.w_max, dtype=float)
    if w.shape != (n,):
        raise ValueError(f"w_max must have shape ({n},)")
    if not np.all(w > 0.0):
        raise ValueError("mRPI computation requires strictly positive w_max")
    if not eps > 0.0:
        raise ValueError("eps must be positive")

    A_pows = [np.eye(n)]
    alpha = None
    s = 0
    while s < s_max:
        s += 1
        A_pows.append(A_pows[-1] @ A_K)
        alpha_s = np.max((np.abs(A_pows[s]) @ w) / w)
        M_s = np.max(_box_row_sums(A_pows[:s], w))
        if alpha_s <= eps / (eps + M_s):
            alpha = alpha_s
            break
    if alpha is None:
        raise NotContractive(f"no containment within s_max={s_max} iterations")

    z = _box_row_sums(A_pows[:s], w) / (1.0 - alpha)
    return TubeSet(z_box=z, a_k=A_K, w=W, eps=eps, s=s, alpha=float(alpha))


# ---------------------------------------------------------------------------
# tube MPC
# ---------------------------------------------------------------------------

@dataclass
class TubeMPCConfig:
    N: int
    Q: np.ndarray          # (6,) state tracking weights
    R: np.ndarray          # (3,) input weights
    x_lo: np.ndarray       # (6,) state box lower bounds (untightened)
    x_hi: np.ndarray       # (6,) state box upper bounds
    u_max: np.ndarray      # (3,) input box half-widths

    def __post_init__(self):
        self.Q = np.asarray(self.Q, dtype=float)
        self.R = np.asarray(self.R, dtype=float)
        self.x_lo = np.asarray(self.x_lo, dtype=float)
        self.x_hi = np.asarray(self.x_hi, dtype=float)
        self.u_max = np.asarray(self.u_max, dtype=float)
        if self.N < 1:
            raise ValueError("N must be >= 1")


class TubeMPC:
    """Constraint-tightened tracking MPC with initial-state freedom.

    Decision variables are the nominal initial state z0 (free inside
    x (+) (-Z)) and the nominal input sequence v.  Constraints are
    tightened boxes: states by Z, inputs by |K| Z.  The applied input
    u = v0 + K (x - z0) then satisfies the untightened input box by
    construction whenever the QP is feasible.
    """

    def __init__(self, A, B, gain: AncillaryGain, tube: TubeSet,
                 cfg: TubeMPCConfig, P=None):
        self.A = np.asarray(A, dtype=float)
        self.B = np.asarray(B, dtype=float)
        self.gain = gain
        self.tube = tube
        self.cfg = cfg
        N = cfg.N

        z = tube.z_box
        self.u_tight = cfg.u_max - np.abs(gain.K) @ z
        x_lo_t = cfg.x_lo + z
        x_hi_t = cfg.x_hi - z
        if not np.all(self.u_tight > 0.0):
            raise TubeMPCInfeasible(
                f"input box empty after tightening: u_max={cfg.u_max}, "
                f"|K|Z={np.abs(gain.K) @ z}")
        if not np.all(x_hi_t > x_lo_t):
            raise TubeMPCInfeasible("state box empty after tightening")
        self.x_lo_t, self.x_hi_t = x_lo_t, x_hi_t

        # condensed prediction: stacked states [z_0..z_N] = Sx z0 + Su V
        n, m = 6, 3
        Sx = np.zeros(((N + 1) * n, n))
        Su = np.zeros(((N + 1) * n, N * m))
        Ak = np.eye(n)
        Sx[:n] = Ak
        for k in range(1, N + 1):
            Ak = self.A @ Ak
            Sx[k * n:(k + 1) * n] = Ak
            for i in range(k):
                blk = np.linalg.matrix_power(self.A, k - 1 - i) @ self.B
                Su[k * n:(k + 1) * n, i * m:(i + 1) * m] = blk
        G = np.hstack([Sx, Su])

        Qdiag = np.concatenate([np.tile(cfg.Q, N), cfg.Q if P is None else np.zeros(6)])
        Qbar = np.diag(Qdiag)
        if P is not None:
            Qbar[-n:, -n:] = np.asarray(P, dtype=float)
        Rbar = scipy.linalg.block_diag(np.zeros((n, n)), np.kron(np.eye(N), np.diag(cfg.R)))

        H = G.T @ Qbar @ G + Rbar
        self._G = G
        self._Qbar = Qbar
        self._nvar = n + N * m
        self._N = N

        # constraint rows: [z0 box around x; states 1..N tightened; inputs tightened]
        A_rows = [np.hstack([np.eye(n), np.zeros((n, N * m))]),
                  G[n:],
                  np.hstack([np.zeros((N * m, n)), np.eye(N * m)])]
        A_con = np.vstack(A_rows)
        self._n_init = n
        self._n_state = N * n

        l_state = np.tile(x_lo_t, N)
        u_state = np.tile(x_hi_t, N)
        l_in = np.tile(-self.u_tight, N)
        u_in = np.tile(self.u_tight, N)
        self._l = np.concatenate([np.zeros(n), l_state, l_in])
        self._u = np.concatenate([np.zeros(n), u_state, u_in])

        self._prob = osqp.OSQP()
        self._P_qp = sparse.csc_matrix(2.0 * H)
        self._A_qp = sparse.csc_matrix(A_con)
        self._prob.setup(self._P_qp, np.zeros(self._nvar), self._A_qp,
                         self._l, self._u, verbose=False,
                         eps_abs=1e-8, eps_rel=1e-8, max_iter=20000, polishing=True)

    def step(self, x, reference):
        """One controller tick.

        Parameters
        ----------
        x : (6,) true translational state [r, v]
        reference : (N+1, 6) nominal tracking reference

        Returns
        -------
        (u, z0, v0): applied force (3,), nominal initial state (6,),
        nominal input (3,).
        """
        x = np.asarray(x, dtype=float)
        ref = np.asarray(reference, dtype=float)
        if ref.shape != (self._N + 1, 6):
            raise ValueError(f"reference must be ({self._N + 1}, 6)")
        q = -2.0 * self._G.T @ self._Qbar @ ref.ravel()
        self._l[:self._n_init] = x - self.tube.z_box
        self._u[:self._n_init] = x + self.tube.z_box
        self._prob.update(q=q, l=self._l, u=self._u)
        res = self._prob.solve()
        status = res.info.status
        if "solved" not in status:
            raise TubeMPCInfeasible(f"nominal QP not solved: {status}")
        y = res.x
        z0 = y[:6]
        v0 = y[6:9]
        u = v0 + self.gain.K @ (x - z0)
        assert np.all(np.abs(u) <= self.cfg.u_max + 1e-6), \
            f"applied input {u} exceeds untightened box {self.cfg.u_max}"
        u = np.clip(u, -self.cfg.u_max, self.cfg.u_max)
        return u, z0, v0


def tube_mpc_step(x_now, reference, Z: TubeSet, K_anc: AncillaryGain,
                  A, B, cfg: TubeMPCConfig, P=None):
    """One-shot tube MPC step (builds the QP; use TubeMPC directly in loops).

    ``reference`` is the (N+1, 6) translational reference sampled from the
    active local plan at the controller period.
    """
    mpc = TubeMPC(A, B, K_anc, Z, cfg, P=P)
    return mpc.step(x_now, reference)


# ---------------------------------------------------------------------------
# attitude control
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AttitudeGains:
    kp: float = 0.4
    kd: float = 0.8


def pd_attitude_control(q, w, q_ref, w_ref, gains: AttitudeGains = AttitudeGains()):
    """PD torque tau = -Kp vec(q_err) - Kd (w - w_ref), shortest rotation.

    q_err = q_ref^-1 (x) q, sign-corrected so q and -q command the same
    torque.  Attitude sits outside the tube guarantee.
    """
    from .dynamics import quat_conjugate, quat_multiply
    q = np.asarray(q, dtype=float)
    q_ref = np.asarray(q_ref, dtype=float)
    q_err = quat_multiply(quat_conjugate(q_ref), q)
    if q_err[3] < 0.0:
        q_err = -q_err
    return -gains.kp * q_err[:3] - gains.kd * (np.asarray(w) - np.asarray(w_ref))
