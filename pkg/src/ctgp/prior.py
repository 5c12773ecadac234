"""Motion prior: local linearized dynamics, transitions, and noise integrals.

Between two estimation nodes the state is expressed in local coordinates
gamma(t) = [xi(t), psi(t)] anchored at the earlier node: xi is the pose's
local twist and psi the velocity bias mapped through the inverse left
Jacobian. With piecewise-linear inputs the linearized system matrix is
linear in time on each segment, A(s) = B + C s, and the transition over a
segment is the exponential of a truncated Magnus series. Process noise
enters the bias channel only, with power spectral density Qc.

An IntervalBlocks instance caches everything the factors and the
interpolation need about one node interval: the full transition, the
input integral, the accumulated noise covariance, and per-knot partial
products so mid-interval queries stay cheap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (DegenerateInputError, DomainError, HyperparameterError,
                     IntervalTooLongError, WiringError)
from .inputs import InputProfile, InputSegment
from .liegroup import Pose, curlywedge, exp_map, left_jacobian

_PADE13_THETA = 5.371920351148152
_PADE13_B = np.array([
    64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
    1187353796428800.0, 129060195264000.0, 10559470521600.0, 670442572800.0,
    33522128640.0, 1323241920.0, 40840800.0, 960960.0, 16380.0, 182.0, 1.0,
])
# 5-point Gauss-Legendre on [-1, 1]; exact for polynomial integrands to degree 9.
_GL_X, _GL_W = np.polynomial.legendre.leggauss(5)


def expm_ss(A):
    """Matrix exponential by scaling-and-squaring with a [13/13] Pade kernel.

    Accepts a single (n, n) matrix or a stacked (..., n, n) batch; the batch
    shares one scaling power chosen from its largest 1-norm.
    """
    A = np.asarray(A, dtype=float)
    single = A.ndim == 2
    if single:
        A = A[None]
    norm = np.max(np.sum(np.abs(A), axis=-2))
    s = max(0, int(np.ceil(np.log2(norm / _PADE13_THETA)))) if norm > _PADE13_THETA else 0
    As = A / (2.0 ** s)
    eye = np.broadcast_to(np.eye(A.shape[-1]), A.shape)
    b = _PADE13_B
    A2 = As @ As
    A4 = A2 @ A2
    A6 = A2 @ A4
    U = As @ (A6 @ (b[13] * A6 + b[11] * A4 + b[9] * A2)
              + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * eye)
    V = (A6 @ (b[12] * A6 + b[10] * A4 + b[8] * A2)
         + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * eye)
    F = np.linalg.solve(V - U, V + U)
    for _ in range(s):
        F = F @ F
    return F[0] if single else F


@dataclass(frozen=True)
class PriorHyper:
    """Power spectral density of the bias-channel white noise, 6x6 SPD."""

    qc: np.ndarray

    def __post_init__(self):
        qc = np.atleast_1d(np.asarray(self.qc, dtype=float))
        if qc.ndim == 1:
            if qc.shape != (6,):
                raise HyperparameterError("diagonal Qc must have 6 entries")
            qc = np.diag(qc)
        if qc.shape != (6, 6) or not np.allclose(qc, qc.T, atol=1e-12):
            raise HyperparameterError("Qc must be a symmetric 6x6 matrix")
        try:
            np.linalg.cholesky(qc)
        except np.linalg.LinAlgError:
            raise HyperparameterError("Qc must be positive definite") from None
        object.__setattr__(self, "qc", qc)

    @property
    def qc_inv(self):
        return np.linalg.inv(self.qc)


@dataclass(frozen=True)
class StateNode:
    """Estimation node: time stamp, pose, and velocity bias (body twist)."""

    time: float
    pose: Pose
    bias: np.ndarray

    def __post_init__(self):
        bias = np.asarray(self.bias, dtype=float)
        if bias.shape != (6,):
            raise WiringError("node bias must be a 6-vector")
        object.__setattr__(self, "bias", bias)


@dataclass(frozen=True)
class SegmentCoeffs:
    """A(s) = b + c s on one input segment, s local in [0, duration]."""

    b: np.ndarray
    c: np.ndarray
    duration: float
    v0: np.ndarray
    dv: np.ndarray
    a0: np.ndarray
    da: np.ndarray


def system_matrix_coeffs(segment: InputSegment) -> SegmentCoeffs:
    """Constant and slope parts of the local system matrix on one segment."""
    dt = segment.duration
    dv = (segment.v1 - segment.v0) / dt
    da = (segment.a1 - segment.a0) / dt

    def _assemble(v, a):
        m = np.zeros((12, 12))
        m[:6, :6] = 0.5 * curlywedge(v)
        m[:6, 6:] = np.eye(6)
        m[6:, :6] = 0.5 * curlywedge(a)
        m[6:, 6:] = -0.5 * curlywedge(v)
        return m

    b = _assemble(segment.v0, segment.a0)
    c = _assemble(dv, da)
    c[:6, 6:] = 0.0
    return SegmentCoeffs(b, c, dt, segment.v0.copy(), dv, segment.a0.copy(), da)


def _magnus_argument(coeffs: SegmentCoeffs, ta, tb):
    """Truncated Magnus series argument for the transition from ta to tb (segment-local times)."""
    ta = np.asarray(ta, dtype=float)
    tb = np.asarray(tb, dtype=float)
    dt = (tb - ta)[..., None, None]
    omega = coeffs.b * dt + 0.5 * coeffs.c * (tb * tb - ta * ta)[..., None, None]
    if np.any(coeffs.c):
        cb = coeffs.c @ coeffs.b - coeffs.b @ coeffs.c
        ccb = coeffs.c @ cb - cb @ coeffs.c
        omega = omega + cb * (dt ** 3 / 12.0) + ccb * (dt ** 5 / 240.0)
    return omega


def magnus_transition(coeffs: SegmentCoeffs, t0: float, t1: float):
    """Transition matrix over [t0, t1] within one segment (local times)."""
    if not (-1e-12 <= t0 <= t1 <= coeffs.duration + 1e-12):
        raise DomainError("magnus_transition times must satisfy 0 <= t0 <= t1 <= duration")
    if t1 == t0:
        return np.eye(12)
    return expm_ss(_magnus_argument(coeffs, t0, t1))


def wnoa_phi(dt: float):
    """Closed-form transition for identically zero inputs."""
    out = np.eye(12)
    out[:6, 6:] = dt * np.eye(6)
    return out


def wnoa_q(dt: float, qc):
    """Closed-form accumulated noise covariance for identically zero inputs."""
    qc = np.asarray(qc, dtype=float)
    out = np.empty((12, 12))
    out[:6, :6] = (dt ** 3 / 3.0) * qc
    out[:6, 6:] = (dt ** 2 / 2.0) * qc
    out[6:, :6] = (dt ** 2 / 2.0) * qc
    out[6:, 6:] = dt * qc
    return out


def wnoa_q_inv(dt: float, qc_inv):
    qc_inv = np.asarray(qc_inv, dtype=float)
    out = np.empty((12, 12))
    out[:6, :6] = (12.0 / dt ** 3) * qc_inv
    out[:6, 6:] = (-6.0 / dt ** 2) * qc_inv
    out[6:, :6] = (-6.0 / dt ** 2) * qc_inv
    out[6:, 6:] = (4.0 / dt) * qc_inv
    return out


@dataclass(frozen=True)
class QueryBlocks:
    """Transition/integral pieces for one query time inside an interval."""

    tau: float
    phi_from_start: np.ndarray
    phi_to_end: np.ndarray
    q_tau: np.ndarray
    input_tau: np.ndarray


class IntervalBlocks:
    """Precomputed prior quantities for one node interval.

    Construction walks the interval's input segments once; queries reuse
    cached per-knot partial products. Identically zero profiles use the
    closed forms unless force_general is set (the general route is then
    exercised, which the fallback-equivalence tests rely on).
    """

    def __init__(self, profile: InputProfile, hyper: PriorHyper, *, force_general: bool = False):
        self.profile = profile
        self.hyper = hyper
        self.t0 = profile.start
        self.t1 = profile.end
        self.closed_form = profile.is_zero() and not force_general

        if self.closed_form:
            dt = self.t1 - self.t0
            self.phi = wnoa_phi(dt)
            self.q_full = wnoa_q(dt, hyper.qc)
            self.q_full_inv = wnoa_q_inv(dt, hyper.qc_inv)
            self.input_full = np.zeros(12)
            return

        segs = profile.segments
        self._coeffs = [system_matrix_coeffs(s) for s in segs]
        self._knots = np.array([s.t0 for s in segs] + [segs[-1].t1])

        n = len(segs)
        prefix = np.empty((n + 1, 12, 12))
        i_acc = np.empty((n + 1, 12))
        q_acc = np.empty((n + 1, 12, 12))
        prefix[0] = np.eye(12)
        i_acc[0] = 0.0
        q_acc[0] = 0.0
        seg_phi = np.empty((n, 12, 12))
        for i, co in enumerate(self._coeffs):
            phi_n, j_n, l_n = self._segment_pieces(co, co.duration)
            seg_phi[i] = phi_n
            prefix[i + 1] = phi_n @ prefix[i]
            i_acc[i + 1] = phi_n @ i_acc[i] + j_n
            q_acc[i + 1] = phi_n @ q_acc[i] @ phi_n.T + l_n
        suffix = np.empty((n + 1, 12, 12))
        suffix[n] = np.eye(12)
        for i in range(n - 1, -1, -1):
            suffix[i] = suffix[i + 1] @ seg_phi[i]

        self._prefix, self._suffix = prefix, suffix
        self._seg_phi = seg_phi
        self._i_acc, self._q_acc = i_acc, q_acc
        self.phi = prefix[n]
        self.q_full = 0.5 * (q_acc[n] + q_acc[n].T)
        self.q_full_inv = np.linalg.inv(self.q_full)
        self.input_full = i_acc[n]

    def _segment_pieces(self, co: SegmentCoeffs, upto: float):
        """Transition, input integral, and noise integral over [0, upto] of one segment.

        Quadrature windows are composed from knot-anchored transitions,
        phi(upto, s) = phi(upto, 0) phi(s, 0)^-1, so that splitting an
        integral at any interior time stays exact rather than accumulating
        independent truncation residuals per window.
        """
        half = upto / 2.0
        s_nodes = half * (_GL_X + 1.0)
        args = _magnus_argument(co, np.zeros(6),
                                np.concatenate([s_nodes, [upto]]))
        mats = expm_ss(args)
        phi = mats[5]
        phi_s = phi @ np.linalg.inv(mats[:5])
        u = np.concatenate(
            [co.v0 + np.outer(s_nodes, co.dv), co.a0 + np.outer(s_nodes, co.da)], axis=1
        )
        j = half * np.einsum("k,kij,kj->i", _GL_W, phi_s, u)
        g = phi_s[:, :, 6:]
        l = half * np.einsum("k,kij,jl,kml->im", _GL_W, g, self.hyper.qc, g)
        return phi, j, l

    def _locate(self, tau: float) -> int:
        if not (self.t0 - 1e-9 <= tau <= self.t1 + 1e-9):
            raise DomainError(f"query time {tau} outside interval [{self.t0}, {self.t1}]")
        idx = int(np.searchsorted(self._knots, tau, side="right")) - 1
        return min(max(idx, 0), len(self._coeffs) - 1)

    def at(self, tau: float) -> QueryBlocks:
        """Blocks for a query time in [t0, t1]."""
        if self.closed_form:
            if not (self.t0 - 1e-9 <= tau <= self.t1 + 1e-9):
                raise DomainError(f"query time {tau} outside interval [{self.t0}, {self.t1}]")
            return QueryBlocks(tau, wnoa_phi(tau - self.t0), wnoa_phi(self.t1 - tau),
                               wnoa_q(tau - self.t0, self.hyper.qc), np.zeros(12))

        m = self._locate(tau)
        co = self._coeffs[m]
        local = tau - self._knots[m]
        if local <= 1e-12:
            return QueryBlocks(tau, self._prefix[m].copy(), self._suffix[m].copy(),
                               0.5 * (self._q_acc[m] + self._q_acc[m].T), self._i_acc[m].copy())
        if co.duration - local <= 1e-12:
            return QueryBlocks(tau, self._prefix[m + 1].copy(), self._suffix[m + 1].copy(),
                               0.5 * (self._q_acc[m + 1] + self._q_acc[m + 1].T),
                               self._i_acc[m + 1].copy())
        phi_part, j_part, l_part = self._segment_pieces(co, local)
        phi_from_start = phi_part @ self._prefix[m]
        q_tau = phi_part @ self._q_acc[m] @ phi_part.T + l_part
        input_tau = phi_part @ self._i_acc[m] + j_part
        phi_rest = self._seg_phi[m] @ np.linalg.inv(phi_part)
        phi_to_end = self._suffix[m + 1] @ phi_rest
        return QueryBlocks(tau, phi_from_start, phi_to_end,
                           0.5 * (q_tau + q_tau.T), input_tau)


def precompute_intervals(profiles, hyper: PriorHyper, *, force_general: bool = False):
    """IntervalBlocks for each per-interval profile, in order."""
    blocks = [IntervalBlocks(p, hyper, force_general=force_general) for p in profiles]
    for prev, nxt in zip(blocks, blocks[1:]):
        if abs(prev.t1 - nxt.t0) > 1e-9:
            raise DegenerateInputError("interval profiles must be contiguous")
    return blocks


def interval_transition(blocks: IntervalBlocks, tau: float | None = None):
    """Transition from the interval start to tau (default: interval end)."""
    if tau is None:
        return blocks.phi.copy()
    return blocks.at(tau).phi_from_start


def input_integral(blocks: IntervalBlocks, tau: float | None = None):
    """Integral of transition-weighted inputs from the interval start to tau."""
    if tau is None:
        return blocks.input_full.copy()
    return blocks.at(tau).input_tau


def accumulated_q(blocks: IntervalBlocks, tau: float | None = None):
    """Accumulated process-noise covariance from the interval start to tau."""
    if tau is None:
        return blocks.q_full.copy()
    return blocks.at(tau).q_tau


def local_state(gamma):
    """Split a 12-vector into (xi, psi)."""
    gamma = np.asarray(gamma, dtype=float)
    return gamma[:6], gamma[6:]


def prior_mean_propagate(node: StateNode, blocks: IntervalBlocks, tau: float) -> StateNode:
    """Prior mean state at tau, propagated from the node at the interval start.

    Raises IntervalTooLongError when the local chart leaves its valid range
    (angular norm of xi reaching pi).
    """
    if abs(node.time - blocks.t0) > 1e-9:
        raise WiringError("node time does not match the interval start")
    qb = blocks.at(tau)
    gamma0 = np.concatenate([np.zeros(6), node.bias])
    gamma = qb.phi_from_start @ gamma0 + qb.input_tau
    xi, psi = local_state(gamma)
    ang = float(np.linalg.norm(xi[3:]))
    if ang >= np.pi:
        raise IntervalTooLongError(
            f"local chart left its valid range (|xi_ang| = {ang:.3f} >= pi); shorten the interval"
        )
    pose = exp_map(xi) @ node.pose
    bias = left_jacobian(xi) @ psi
    return StateNode(tau, pose, bias)
