"""SE(3) primitives for twists ordered translation-first.

A twist is a plain length-6 ndarray [rho, phi]: linear part first, angular
part second. All kernel functions broadcast over leading axes, so a (N, 6)
stack of twists yields (N, 4, 4) wedges, (N, 3, 3) rotations, and so on.
Closed-form Rodrigues-style expressions are used everywhere, with Taylor
fallbacks once the angular norm drops below SMALL_ANGLE.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import IllConditionedRotationError

# Below this angular norm the closed-form coefficients switch to Taylor series.
SMALL_ANGLE = 1e-6
# log_map refuses rotations closer than this to the pi singularity.
LOG_SINGULARITY_MARGIN = 1e-6

_BERNOULLI = np.array(
    [1.0, -0.5, 1.0 / 6, 0.0, -1.0 / 30, 0.0, 1.0 / 42, 0.0, -1.0 / 30, 0.0,
     5.0 / 66, 0.0, -691.0 / 2730, 0.0, 7.0 / 6, 0.0, -3617.0 / 510, 0.0,
     43867.0 / 798, 0.0, -174611.0 / 330]
)


def skew(v):
    """3-vector(s) to skew-symmetric matrix/matrices."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def unskew(m):
    m = np.asarray(m, dtype=float)
    return np.stack([m[..., 2, 1], m[..., 0, 2], m[..., 1, 0]], axis=-1)


def wedge(xi):
    """Twist to 4x4 algebra element: [[skew(phi), rho], [0, 0]]."""
    xi = np.asarray(xi, dtype=float)
    out = np.zeros(xi.shape[:-1] + (4, 4))
    out[..., :3, :3] = skew(xi[..., 3:])
    out[..., :3, 3] = xi[..., :3]
    return out


def curlywedge(xi):
    """Twist to 6x6 adjoint-algebra element: [[skew(phi), skew(rho)], [0, skew(phi)]]."""
    xi = np.asarray(xi, dtype=float)
    out = np.zeros(xi.shape[:-1] + (6, 6))
    ang = skew(xi[..., 3:])
    out[..., :3, :3] = ang
    out[..., :3, 3:] = skew(xi[..., :3])
    out[..., 3:, 3:] = ang
    return out


def _angle(phi):
    return np.linalg.norm(phi, axis=-1)


def _coeffs(theta):
    """Rodrigues/Jacobian scalar coefficients with small-angle Taylor fallback.

    Returns (a, b, c, d) where a = sin/t, b = (1-cos)/t^2, c = (t-sin)/t^3 and
    d is the quadratic coefficient of the inverse SO(3) left Jacobian.
    """
    theta = np.asarray(theta, dtype=float)
    small = theta < SMALL_ANGLE
    # Guard the divisions; small entries are overwritten by the series.
    t = np.where(small, 1.0, theta)
    t2 = t * t
    s, co = np.sin(t), np.cos(t)
    a = np.where(small, 1.0 - theta**2 / 6.0, s / t)
    b = np.where(small, 0.5 - theta**2 / 24.0, (1.0 - co) / t2)
    c = np.where(small, 1.0 / 6.0 - theta**2 / 120.0, (t - s) / (t2 * t))
    with np.errstate(divide="ignore", invalid="ignore"):
        d_closed = 1.0 / t2 - (1.0 + co) / (2.0 * t * s)
    d = np.where(small, 1.0 / 12.0 + theta**2 / 720.0, d_closed)
    return a, b, c, d


def so3_exp(phi):
    phi = np.asarray(phi, dtype=float)
    a, b, _, _ = _coeffs(_angle(phi))
    p = skew(phi)
    eye = np.broadcast_to(np.eye(3), p.shape)
    return eye + a[..., None, None] * p + b[..., None, None] * (p @ p)


def so3_log(R):
    """Rotation matrix/matrices to rotation vector. Raises near the pi singularity."""
    R = np.asarray(R, dtype=float)
    vec = unskew((R - np.swapaxes(R, -1, -2)) / 2.0)
    s = np.linalg.norm(vec, axis=-1)
    c = (np.trace(R, axis1=-2, axis2=-1) - 1.0) / 2.0
    theta = np.arctan2(s, np.clip(c, -1.0, 1.0))
    if np.any(theta >= np.pi - LOG_SINGULARITY_MARGIN):
        raise IllConditionedRotationError(
            "rotation angle within %.0e of pi; log is ill-conditioned" % LOG_SINGULARITY_MARGIN
        )
    small = theta < SMALL_ANGLE
    scale = np.where(small, 1.0 + theta**2 / 6.0, theta / np.where(small, 1.0, s))
    return scale[..., None] * vec


def so3_left_jacobian(phi):
    phi = np.asarray(phi, dtype=float)
    _, b, c, _ = _coeffs(_angle(phi))
    p = skew(phi)
    eye = np.broadcast_to(np.eye(3), p.shape)
    return eye + b[..., None, None] * p + c[..., None, None] * (p @ p)


def so3_left_jacobian_inv(phi):
    phi = np.asarray(phi, dtype=float)
    theta = _angle(phi)
    if np.any(theta >= 2.0 * np.pi - 1e-9):
        raise IllConditionedRotationError("inverse left Jacobian undefined at angle 2*pi")
    _, _, _, d = _coeffs(theta)
    p = skew(phi)
    eye = np.broadcast_to(np.eye(3), p.shape)
    return eye - 0.5 * p + d[..., None, None] * (p @ p)


def se3_exp(xi):
    """Batched exponential: twist(s) to (rotation, translation) arrays."""
    xi = np.asarray(xi, dtype=float)
    rho, phi = xi[..., :3], xi[..., 3:]
    R = so3_exp(phi)
    t = np.einsum("...ij,...j->...i", so3_left_jacobian(phi), rho)
    return R, t


def se3_log(R, t):
    """Batched logarithm of (rotation, translation) back to twist(s)."""
    phi = so3_log(R)
    rho = np.einsum("...ij,...j->...i", so3_left_jacobian_inv(phi), np.asarray(t, dtype=float))
    return np.concatenate([rho, phi], axis=-1)


def _q_matrix(xi):
    """Upper-right block of the SE(3) left Jacobian (closed form)."""
    xi = np.asarray(xi, dtype=float)
    rho, phi = xi[..., :3], xi[..., 3:]
    theta = _angle(phi)
    small = theta < SMALL_ANGLE
    t = np.where(small, 1.0, theta)
    t2, t4 = t * t, t**4
    s, co = np.sin(t), np.cos(t)
    c2 = np.where(small, 1.0 / 6.0 - theta**2 / 120.0, (t - s) / (t2 * t))
    c3 = np.where(small, 1.0 / 24.0 - theta**2 / 720.0, (t2 + 2.0 * co - 2.0) / (2.0 * t4))
    c4 = np.where(small, 1.0 / 120.0 - theta**2 / 2520.0,
                  (2.0 * t - 3.0 * s + t * co) / (2.0 * t4 * t))
    P = skew(phi)
    Rh = skew(rho)
    PR, RP = P @ Rh, Rh @ P
    PRP = P @ Rh @ P
    c2 = c2[..., None, None]
    c3 = c3[..., None, None]
    c4 = c4[..., None, None]
    return (0.5 * Rh
            + c2 * (PR + RP + PRP)
            + c3 * (P @ PR + RP @ P - 3.0 * PRP)
            + c4 * (PRP @ P + P @ PRP))


def left_jacobian(xi):
    """SE(3) left Jacobian, 6x6: [[J, Q], [0, J]]."""
    xi = np.asarray(xi, dtype=float)
    J = so3_left_jacobian(xi[..., 3:])
    out = np.zeros(xi.shape[:-1] + (6, 6))
    out[..., :3, :3] = J
    out[..., :3, 3:] = _q_matrix(xi)
    out[..., 3:, 3:] = J
    return out


def left_jacobian_inv(xi):
    """Inverse SE(3) left Jacobian, 6x6. Domain: angular norm below 2*pi."""
    xi = np.asarray(xi, dtype=float)
    Ji = so3_left_jacobian_inv(xi[..., 3:])
    out = np.zeros(xi.shape[:-1] + (6, 6))
    out[..., :3, :3] = Ji
    out[..., :3, 3:] = -Ji @ _q_matrix(xi) @ Ji
    out[..., 3:, 3:] = Ji
    return out


def _series_dx(xi, vec, coeffs):
    """d/dxi of sum_n coeffs[n] * curlywedge(xi)^n @ vec, as a 6x6 matrix.

    Shared kernel for the derivatives of J(xi) @ v and Jinv(xi) @ v; converges
    for angular norms below 2*pi. Batched over leading axes.
    """
    xi = np.asarray(xi, dtype=float)
    vec = np.asarray(vec, dtype=float)
    X = curlywedge(xi)
    batch = X.shape[:-2]
    out = np.zeros(batch + (6, 6))
    y = np.broadcast_to(vec, batch + (6,)).copy()
    # term n contributes coeffs[n] * sum_{j=0}^{n-1} X^j @ (-curlywedge(X^{n-1-j} vec)),
    # accumulated through S_n = X @ S_{n-1} - curlywedge(X^{n-1} vec)
    S = np.zeros(batch + (6, 6))
    for n in range(1, len(coeffs)):
        S = X @ S - curlywedge(y)
        if coeffs[n] != 0.0:
            term = coeffs[n] * S
            out += term
            if np.max(np.abs(term)) < 1e-17:
                break
        y = np.einsum("...ij,...j->...i", X, y)
    return out


def jinv_vec_dx(xi, vec, n_terms=21):
    """Exact derivative of left_jacobian_inv(xi) @ vec with respect to xi."""
    coeffs = [_BERNOULLI[n] / float(math.factorial(n)) for n in range(min(n_terms, len(_BERNOULLI)))]
    return _series_dx(xi, vec, coeffs)


def j_vec_dx(xi, vec, n_terms=21):
    """Exact derivative of left_jacobian(xi) @ vec with respect to xi."""
    coeffs = [1.0 / float(math.factorial(n + 1)) for n in range(n_terms)]
    return _series_dx(xi, vec, coeffs)


@dataclass(frozen=True)
class Pose:
    """Rigid transform with a 3x3 rotation and a 3-vector translation."""

    rotation: np.ndarray
    translation: np.ndarray

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m):
        m = np.asarray(m, dtype=float)
        return cls(m[:3, :3].copy(), m[:3, 3].copy())

    def matrix(self):
        out = np.eye(4)
        out[:3, :3] = self.rotation
        out[:3, 3] = self.translation
        return out

    def compose(self, other: "Pose") -> "Pose":
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def __matmul__(self, other: "Pose") -> "Pose":
        return self.compose(other)

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def adjoint(self):
        """6x6 adjoint [[R, skew(t) R], [0, R]] matching the twist ordering."""
        out = np.zeros((6, 6))
        out[:3, :3] = self.rotation
        out[:3, 3:] = skew(self.translation) @ self.rotation
        out[3:, 3:] = self.rotation
        return out

    def apply(self, points):
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.translation

    def renormalized(self) -> "Pose":
        """Project the rotation back onto SO(3); use after repeated composition."""
        u, _, vt = np.linalg.svd(self.rotation)
        r = u @ vt
        if np.linalg.det(r) < 0.0:
            u[:, -1] = -u[:, -1]
            r = u @ vt
        return Pose(r, self.translation.copy())


def exp_map(xi) -> Pose:
    """Twist to Pose."""
    R, t = se3_exp(np.asarray(xi, dtype=float))
    return Pose(R, t)


def log_map(pose: Pose):
    """Pose to twist. Raises IllConditionedRotationError within 1e-6 of angle pi."""
    return se3_log(pose.rotation, pose.translation)
