"""Error terms and analytic Jacobians for the MAP problem.

Conventions shared with the solver: poses perturb on the left,
T <- exp_map(delta) T, biases additively. Each per-node Jacobian block has
12 columns, pose coordinates first. Errors follow the measured-minus-
predicted sign so information-weighted costs read 0.5 e^T Omega e.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateInputError,
    HyperparameterError,
    SingularGeometryError,
    WiringError,
)
from .interpolation import interpolate_with_jacobian, query_kernel
from .liegroup import (
    Pose,
    curlywedge,
    jinv_vec_dx,
    left_jacobian_inv,
    log_map,
    se3_log,
    skew,
    so3_left_jacobian_inv,
    so3_log,
)
from .prior import IntervalBlocks, StateNode

_TIME_TOL = 1e-9


@dataclass(frozen=True)
class FactorEval:
    """One linearized factor: error, per-node Jacobians, information weight."""

    error: np.ndarray
    jacobians: tuple  # ((node index, d error / d node perturbation), ...)
    information: np.ndarray

    def cost(self) -> float:
        return 0.5 * float(self.error @ self.information @ self.error)


def _information_from_covariance(covariance, label):
    cov = np.atleast_2d(np.asarray(covariance, dtype=float))
    if cov.shape[0] != cov.shape[1] or not np.allclose(cov, cov.T, atol=1e-10):
        raise HyperparameterError(f"{label} covariance must be square symmetric")
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise HyperparameterError(f"{label} covariance must be positive definite")
    return np.linalg.inv(cov)


def prior_factor_error(node_k: StateNode, node_k1: StateNode,
                       blocks: IntervalBlocks, *,
                       exact_bias_jacobian: bool = True,
                       indices=(0, 1)) -> FactorEval:
    """Motion-prior error between adjacent nodes, weighted by Q_k^-1.

    error = [ln(T_k1 T_k^-1)^v; Jinv(xi) b_k1] - Phi [0; b_k] - input integral.
    The bias-term Jacobian d(Jinv(xi) b_k1)/dxi defaults to the exact series
    derivative; exact_bias_jacobian=False selects the first-order
    0.5 curlywedge(b_k1) form instead.
    """
    if (abs(node_k.time - blocks.t0) > _TIME_TOL
            or abs(node_k1.time - blocks.t1) > _TIME_TOL):
        raise WiringError("node times do not match the interval the blocks were built for")

    rel = node_k1.pose @ node_k.pose.inverse()
    xi = log_map(rel)
    jinv = left_jacobian_inv(xi)
    gamma_k1 = np.concatenate([xi, jinv @ node_k1.bias])
    gamma_prop = blocks.phi @ np.concatenate([np.zeros(6), node_k.bias])
    error = gamma_k1 - gamma_prop - blocks.input_full

    d = (jinv_vec_dx(xi, node_k1.bias) if exact_bias_jacobian
         else 0.5 * curlywedge(node_k1.bias))
    chart = np.vstack([jinv, d @ jinv])  # d gamma_k1 / d xi, chained to charts
    j_pose_k1 = chart
    j_pose_k = -chart @ rel.adjoint()
    j_k = np.zeros((12, 12))
    j_k[:, :6] = j_pose_k
    j_k[:, 6:] = -blocks.phi[:, 6:]
    j_k1 = np.zeros((12, 12))
    j_k1[:, :6] = j_pose_k1
    j_k1[6:, 6:] = jinv
    return FactorEval(error, ((indices[0], j_k), (indices[1], j_k1)),
                      blocks.q_full_inv)


def prior_factor_batch(nodes, blocks_list, *, exact_bias_jacobian: bool = True,
                       with_jacobians: bool = True):
    """Evaluate all adjacent-pair prior factors in one vectorized pass.

    Matches prior_factor_error applied to each pair. Returns a dict with
    stacked arrays: error (K-1, 12), info (K-1, 12, 12), and, when
    with_jacobians is set, j_k / j_k1 (K-1, 12, 12). The stacked interval
    quantities (phi, input integral, information) are read from blocks_list,
    so precompute once and reuse across solver iterations.
    """
    if len(blocks_list) != len(nodes) - 1:
        raise WiringError("need one IntervalBlocks per adjacent node pair")
    for node, blocks, node1 in zip(nodes, blocks_list, nodes[1:]):
        if (abs(node.time - blocks.t0) > _TIME_TOL
                or abs(node1.time - blocks.t1) > _TIME_TOL):
            raise WiringError("node times do not match the interval the blocks were built for")

    rot = np.stack([n.pose.rotation for n in nodes])
    trans = np.stack([n.pose.translation for n in nodes])
    bias = np.stack([n.bias for n in nodes])
    rel_rot = rot[1:] @ np.swapaxes(rot[:-1], -1, -2)
    rel_trans = trans[1:] - np.einsum("nij,nj->ni", rel_rot, trans[:-1])
    xi = se3_log(rel_rot, rel_trans)
    jinv = left_jacobian_inv(xi)
    psi1 = np.einsum("nij,nj->ni", jinv, bias[1:])

    phi_bias = np.stack([b.phi[:, 6:] for b in blocks_list])
    input_full = np.stack([b.input_full for b in blocks_list])
    info = np.stack([b.q_full_inv for b in blocks_list])
    error = (np.concatenate([xi, psi1], axis=-1)
             - np.einsum("nij,nj->ni", phi_bias, bias[:-1]) - input_full)
    out = {"error": error, "info": info}
    if not with_jacobians:
        return out

    d = (jinv_vec_dx(xi, bias[1:]) if exact_bias_jacobian
         else 0.5 * curlywedge(bias[1:]))
    chart = np.concatenate([jinv, d @ jinv], axis=-2)
    adj = np.zeros((len(xi), 6, 6))
    adj[:, :3, :3] = rel_rot
    adj[:, :3, 3:] = skew(rel_trans) @ rel_rot
    adj[:, 3:, 3:] = rel_rot

    j_k = np.zeros((len(xi), 12, 12))
    j_k[:, :, :6] = -chart @ adj
    j_k[:, :, 6:] = -phi_bias
    j_k1 = np.zeros((len(xi), 12, 12))
    j_k1[:, :, :6] = chart
    j_k1[:, 6:, 6:] = jinv
    out["j_k"], out["j_k1"] = j_k, j_k1
    return out


def range_factor_error(node: StateNode, landmark, measured_range: float,
                       variance: float, *, index=0) -> FactorEval:
    """Scalar range residual to a known landmark."""
    if variance <= 0:
        raise HyperparameterError("range variance must be positive")
    landmark = np.asarray(landmark, dtype=float)
    offset = landmark - node.pose.translation
    rng = float(np.linalg.norm(offset))
    if rng < 1e-9:
        raise SingularGeometryError("range factor undefined at the landmark position")
    error = np.array([measured_range - rng])
    jac = np.zeros((1, 12))
    # left perturbation moves the position by [I, -skew(t)] delta
    jac[0, :3] = offset / rng
    jac[0, 3:6] = (offset / rng) @ (-skew(node.pose.translation))
    return FactorEval(error, ((index, jac),), np.array([[1.0 / variance]]))


def pose_factor_error(node: StateNode, measured: Pose, covariance, *,
                      index=0) -> FactorEval:
    """Full pose residual e = ln(measured pose^-1)^v."""
    info = _information_from_covariance(covariance, "pose")
    if info.shape != (6, 6):
        raise HyperparameterError("pose covariance must be 6x6")
    error = log_map(measured @ node.pose.inverse())
    jac = np.zeros((6, 12))
    jac[:, :6] = -left_jacobian_inv(-error)
    return FactorEval(error, ((index, jac),), info)


def position_factor_error(node: StateNode, measured, covariance, *,
                          index=0) -> FactorEval:
    """Translation-only residual."""
    info = _information_from_covariance(covariance, "position")
    if info.shape != (3, 3):
        raise HyperparameterError("position covariance must be 3x3")
    error = np.asarray(measured, dtype=float) - node.pose.translation
    jac = np.zeros((3, 12))
    jac[:, :3] = -np.eye(3)
    jac[:, 3:6] = skew(node.pose.translation)
    return FactorEval(error, ((index, jac),), info)


def velocity_factor_error(node: StateNode, measured, covariance, mask, *,
                          input_velocity=None, index=0) -> FactorEval:
    """Masked body-velocity residual.

    The predicted velocity is bias + input_velocity when inputs drive the
    prior, or the bias alone when they do not (input_velocity None).
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (6,) or not mask.any():
        raise DegenerateInputError("velocity mask must select at least one component")
    cov = np.asarray(covariance, dtype=float)
    if cov.shape == (6, 6):
        cov = cov[np.ix_(mask, mask)]
    info = _information_from_covariance(cov, "velocity")
    if info.shape != (int(mask.sum()),) * 2:
        raise HyperparameterError("velocity covariance does not match the mask")
    predicted = node.bias if input_velocity is None else node.bias + input_velocity
    error = (np.asarray(measured, dtype=float) - predicted)[mask]
    jac = np.zeros((int(mask.sum()), 12))
    jac[:, 6:] = -np.eye(6)[mask]
    return FactorEval(error, ((index, jac),), info)


def interpolated_factor(node_k: StateNode, node_k1: StateNode,
                        blocks: IntervalBlocks, tau: float, inner, *,
                        indices=(0, 1), kernel=None) -> FactorEval:
    """Measurement factor evaluated at an interpolated state.

    inner maps the interpolated StateNode to a FactorEval with a single
    12-column Jacobian; that Jacobian is chained onto both bracketing nodes.
    A prebuilt query kernel may be passed to amortize repeated evaluations
    at the same time.
    """
    if kernel is None:
        kernel = query_kernel(blocks, tau)
    pose, bias, _, g = interpolate_with_jacobian(node_k, node_k1, kernel)
    inner_eval = inner(StateNode(tau, pose, bias))
    (_, j_inner), = inner_eval.jacobians
    return FactorEval(inner_eval.error,
                      ((indices[0], j_inner @ g[:, :12]),
                       (indices[1], j_inner @ g[:, 12:])),
                      inner_eval.information)


# out-of-plane selection: z translation, roll/pitch, and the matching bias rows
_PLANAR_BIAS_ROWS = np.array([1, 2, 3, 4])


@dataclass(frozen=True)
class PlanarLockFactor:
    """Soft lock of the out-of-plane freedoms for planar problems.

    Penalizes z position, roll/pitch rotation, and the lateral, vertical,
    roll, and pitch bias components with a high-information zero-mean
    pseudo-measurement. With bias_only the pose rows are dropped; that keeps
    the lock information independent of how far the trajectory wanders from
    the origin (the t_z row couples rotation through skew(t), which grows
    with distance and ruins conditioning on long runs), so planarity is then
    maintained by the rate locks plus an anchor on the first node.
    """

    index: int
    information: float = 1e8
    bias_only: bool = False

    @property
    def indices(self):
        return (self.index,)

    def evaluate(self, nodes) -> FactorEval:
        node = nodes[self.index]
        bias_jac = np.zeros((4, 12))
        bias_jac[:, 6:] = -np.eye(6)[_PLANAR_BIAS_ROWS]
        if self.bias_only:
            return FactorEval(-node.bias[_PLANAR_BIAS_ROWS],
                              ((self.index, bias_jac),),
                              self.information * np.eye(4))
        rotvec = so3_log(node.pose.rotation)
        value = np.concatenate([
            [node.pose.translation[2]], rotvec[:2],
            node.bias[_PLANAR_BIAS_ROWS],
        ])
        jac = np.zeros((7, 12))
        jac[0, :3] = -np.array([0.0, 0.0, 1.0])
        jac[0, 3:6] = skew(node.pose.translation)[2]
        jac[1:3, 3:6] = -so3_left_jacobian_inv(rotvec)[:2]
        jac[3:] = bias_jac
        return FactorEval(-value, ((self.index, jac),),
                          self.information * np.eye(7))


@dataclass(frozen=True)
class AnchorFactor:
    """Absolute pose-and-bias prior on one node (gauge or initial knowledge)."""

    index: int
    pose: Pose
    bias: np.ndarray
    pose_covariance: np.ndarray
    bias_covariance: np.ndarray

    @property
    def indices(self):
        return (self.index,)

    def evaluate(self, nodes) -> FactorEval:
        node = nodes[self.index]
        pose_eval = pose_factor_error(node, self.pose, self.pose_covariance)
        error = np.concatenate([pose_eval.error, self.bias - node.bias])
        jac = np.zeros((12, 12))
        jac[:6] = pose_eval.jacobians[0][1]
        jac[6:, 6:] = -np.eye(6)
        info = np.zeros((12, 12))
        info[:6, :6] = pose_eval.information
        info[6:, 6:] = _information_from_covariance(self.bias_covariance, "anchor bias")
        return FactorEval(error, ((self.index, jac),), info)


@dataclass(frozen=True)
class PriorFactor:
    """Motion-prior factor binding adjacent nodes k and k+1."""

    index: int
    blocks: IntervalBlocks
    exact_bias_jacobian: bool = True

    @property
    def indices(self):
        return (self.index, self.index + 1)

    def evaluate(self, nodes) -> FactorEval:
        return prior_factor_error(nodes[self.index], nodes[self.index + 1],
                                  self.blocks,
                                  exact_bias_jacobian=self.exact_bias_jacobian,
                                  indices=self.indices)


@dataclass(frozen=True)
class RangeFactor:
    index: int
    landmark: np.ndarray
    measured: float
    variance: float

    @property
    def indices(self):
        return (self.index,)

    def evaluate(self, nodes) -> FactorEval:
        return range_factor_error(nodes[self.index], self.landmark,
                                  self.measured, self.variance, index=self.index)


@dataclass(frozen=True)
class PoseFactor:
    index: int
    measured: Pose
    covariance: np.ndarray

    @property
    def indices(self):
        return (self.index,)

    def evaluate(self, nodes) -> FactorEval:
        return pose_factor_error(nodes[self.index], self.measured,
                                 self.covariance, index=self.index)


@dataclass(frozen=True)
class PositionFactor:
    index: int
    measured: np.ndarray
    covariance: np.ndarray

    @property
    def indices(self):
        return (self.index,)

    def evaluate(self, nodes) -> FactorEval:
        return position_factor_error(nodes[self.index], self.measured,
                                     self.covariance, index=self.index)


@dataclass(frozen=True)
class VelocityFactor:
    index: int
    measured: np.ndarray
    covariance: np.ndarray
    mask: np.ndarray
    input_velocity: np.ndarray | None = None

    @property
    def indices(self):
        return (self.index,)

    def evaluate(self, nodes) -> FactorEval:
        return velocity_factor_error(nodes[self.index], self.measured,
                                     self.covariance, self.mask,
                                     input_velocity=self.input_velocity,
                                     index=self.index)


@dataclass
class InterpolatedFactor:
    """Measurement factor at a query time between nodes index and index+1.

    The state-independent query kernel is built once at construction and
    reused across solver iterations.
    """

    index: int
    blocks: IntervalBlocks
    tau: float
    inner: object  # StateNode -> FactorEval
    _kernel: object = field(default=None, repr=False)

    def __post_init__(self):
        self._kernel = query_kernel(self.blocks, self.tau)

    @property
    def indices(self):
        return (self.index, self.index + 1)

    def evaluate(self, nodes) -> FactorEval:
        return interpolated_factor(nodes[self.index], nodes[self.index + 1],
                                   self.blocks, self.tau, self.inner,
                                   indices=self.indices, kernel=self._kernel)
