"""Posterior queries at arbitrary times between estimation nodes.

The motion prior is Markovian in the local state gamma = (xi, psi), so the
posterior at an interior time depends only on the two bracketing nodes, the
interval's precomputed transition/integral blocks, and a conditional noise
term. The query-time gain matrices are state independent, which lets
repeated queries at a fixed time reuse one kernel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import HyperparameterError, IntervalTooLongError, WiringError
from .liegroup import (
    Pose,
    exp_map,
    j_vec_dx,
    jinv_vec_dx,
    left_jacobian,
    left_jacobian_inv,
    log_map,
)
from .prior import IntervalBlocks, StateNode, local_state

_TIME_TOL = 1e-9


@dataclass(frozen=True)
class QueryResult:
    """Posterior state at one query time.

    velocity is the full body twist: the latent bias plus the input velocity
    at the query time. covariance, when present, is the 12x12 joint
    covariance of the local pose and bias perturbations;
    covariance_is_approximate marks results computed without the
    cross-covariance of the bracketing nodes.
    """

    time: float
    pose: Pose
    bias: np.ndarray
    velocity: np.ndarray
    covariance: np.ndarray | None = None
    covariance_is_approximate: bool = False


@dataclass(frozen=True)
class QueryKernel:
    """State-independent pieces of one query time inside one interval."""

    blocks: IntervalBlocks
    tau: float
    lam: np.ndarray
    psi_gain: np.ndarray
    q_cond: np.ndarray
    input_tau: np.ndarray


def query_kernel(blocks: IntervalBlocks, tau: float) -> QueryKernel:
    """Build the reusable query kernel for one time inside the interval."""
    qb = blocks.at(tau)
    psi_gain = qb.q_tau @ qb.phi_to_end.T @ blocks.q_full_inv
    lam = qb.phi_from_start - psi_gain @ blocks.phi
    q_cond = qb.q_tau - psi_gain @ qb.phi_to_end @ qb.q_tau
    return QueryKernel(blocks, tau, lam, psi_gain,
                       0.5 * (q_cond + q_cond.T), qb.input_tau)


def lambda_psi(blocks: IntervalBlocks, tau: float):
    """Interpolation gain matrices (lam, psi) for a query time."""
    kernel = query_kernel(blocks, tau)
    return kernel.lam, kernel.psi_gain


def _guard_chart(xi):
    ang = float(np.linalg.norm(xi[3:]))
    if ang >= np.pi:
        raise IntervalTooLongError(
            f"local chart left its valid range (|xi_ang| = {ang:.3f} >= pi); shorten the interval"
        )


class _Chain:
    """One query evaluation: mean state plus the node-perturbation Jacobian.

    Perturbation conventions match the factors and solver: pose updates
    multiply on the left, T <- exp(delta) T, and biases update additively.
    """

    def __init__(self, node_k: StateNode, node_k1: StateNode, kernel: QueryKernel):
        blocks = kernel.blocks
        if (abs(node_k.time - blocks.t0) > _TIME_TOL
                or abs(node_k1.time - blocks.t1) > _TIME_TOL):
            raise WiringError("node times do not match the interval the blocks were built for")

        rel = node_k1.pose @ node_k.pose.inverse()
        xi1 = log_map(rel)
        _guard_chart(xi1)
        jinv1 = left_jacobian_inv(xi1)
        psi1 = jinv1 @ node_k1.bias

        gamma_k = np.concatenate([np.zeros(6), node_k.bias])
        gamma_k1 = np.concatenate([xi1, psi1])
        gamma_tau = (kernel.input_tau + kernel.lam @ gamma_k
                     + kernel.psi_gain @ (gamma_k1 - blocks.input_full))
        xi_tau, psi_tau = local_state(gamma_tau)
        _guard_chart(xi_tau)

        self.kernel = kernel
        self.node_k, self.node_k1 = node_k, node_k1
        self.xi_tau, self.psi_tau = xi_tau, psi_tau
        self.exp_tau = exp_map(xi_tau)
        self.pose = self.exp_tau @ node_k.pose
        self.j_tau = left_jacobian(xi_tau)
        self.bias = self.j_tau @ psi_tau
        self._rel_adjoint = rel.adjoint()
        self._jinv1 = jinv1
        self._xi1 = xi1

    def velocity(self):
        if self.kernel.blocks.profile.is_zero():
            return self.bias.copy()
        v_in, _ = self.kernel.blocks.profile.evaluate(self.kernel.tau)
        return self.bias + v_in

    def output_map(self):
        """Map d(xi_tau, psi_tau) to the pose/bias perturbation at tau."""
        h = np.zeros((12, 12))
        h[:6, :6] = self.j_tau
        h[6:, :6] = j_vec_dx(self.xi_tau, self.psi_tau)
        h[6:, 6:] = self.j_tau
        return h

    def node_jacobian(self):
        """12x24 Jacobian of the query perturbation w.r.t. both nodes.

        Column order: (pose_k, bias_k, pose_k1, bias_k1) local coordinates.
        """
        kernel = self.kernel
        a1 = self._jinv1
        a0 = -a1 @ self._rel_adjoint
        d1 = jinv_vec_dx(self._xi1, self.node_k1.bias)
        # columns of dgamma_tau through the far-node chart value (xi1, psi1)
        via_xi1 = kernel.psi_gain[:, :6] + kernel.psi_gain[:, 6:] @ d1
        dgamma = np.zeros((12, 24))
        dgamma[:, 0:6] = via_xi1 @ a0
        dgamma[:, 6:12] = kernel.lam[:, 6:]
        dgamma[:, 12:18] = via_xi1 @ a1
        dgamma[:, 18:24] = kernel.psi_gain[:, 6:] @ self._jinv1
        g = self.output_map() @ dgamma
        # the query chart is anchored at node k, so its motion enters directly
        g[:6, 0:6] += self.exp_tau.adjoint()
        return g


def interpolate_mean(node_k: StateNode, node_k1: StateNode,
                     blocks: IntervalBlocks, tau: float) -> QueryResult:
    """Posterior mean state at tau conditioned on the bracketing nodes."""
    chain = _Chain(node_k, node_k1, query_kernel(blocks, tau))
    return QueryResult(tau, chain.pose, chain.bias, chain.velocity())


def interpolate_with_jacobian(node_k: StateNode, node_k1: StateNode,
                              kernel: QueryKernel):
    """Mean state at the kernel's query time plus the 12x24 node Jacobian."""
    chain = _Chain(node_k, node_k1, kernel)
    return chain.pose, chain.bias, chain.velocity(), chain.node_jacobian()


def _check_covariance(cov, label):
    cov = np.asarray(cov, dtype=float)
    if cov.shape != (12, 12) or not np.allclose(cov, cov.T, atol=1e-8):
        raise HyperparameterError(f"{label} covariance must be symmetric 12x12")
    eigs = np.linalg.eigvalsh(cov)
    if eigs[0] < -1e-9 * max(eigs[-1], 1.0):
        raise HyperparameterError(f"{label} covariance must be positive semidefinite")
    return cov


def interpolate_covariance(node_k: StateNode, node_k1: StateNode,
                           cov_k, cov_k1, blocks: IntervalBlocks, tau: float,
                           *, cross_covariance=None):
    """Posterior covariance at tau, with its approximation flag.

    Returns (covariance, is_approximate). cross_covariance is
    cov(node_k, node_k1) in local coordinates; without it the joint is
    treated as block diagonal, which is exact only when one node is pinned
    or the two nodes are uncorrelated, so the result is flagged.
    """
    cov_k = _check_covariance(cov_k, "node_k")
    cov_k1 = _check_covariance(cov_k1, "node_k1")
    chain = _Chain(node_k, node_k1, query_kernel(blocks, tau))

    joint = np.zeros((24, 24))
    joint[:12, :12] = cov_k
    joint[12:, 12:] = cov_k1
    if cross_covariance is not None:
        cross = np.asarray(cross_covariance, dtype=float)
        joint[:12, 12:] = cross
        joint[12:, :12] = cross.T

    g = chain.node_jacobian()
    h = chain.output_map()
    cov = g @ joint @ g.T + h @ chain.kernel.q_cond @ h.T
    return 0.5 * (cov + cov.T), cross_covariance is None


class Trajectory:
    """Continuous read-only view of a solved trajectory.

    Wraps the node estimates and the per-interval blocks; queries between
    nodes interpolate the posterior, queries at node times return the node
    values. Covariances are attached when the solver marginals (and
    optionally the adjacent-node cross-covariances) are supplied.
    """

    def __init__(self, nodes, blocks_list, covariances=None, cross_covariances=None):
        if len(nodes) < 2 or len(blocks_list) != len(nodes) - 1:
            raise WiringError("need K nodes and K-1 interval blocks")
        for node, blocks, node1 in zip(nodes, blocks_list, nodes[1:]):
            if (abs(node.time - blocks.t0) > _TIME_TOL
                    or abs(node1.time - blocks.t1) > _TIME_TOL):
                raise WiringError("interval blocks do not line up with node times")
        if covariances is not None and len(covariances) != len(nodes):
            raise WiringError("need one covariance per node")
        if cross_covariances is not None and len(cross_covariances) != len(nodes) - 1:
            raise WiringError("need one cross-covariance per interval")
        self.nodes = list(nodes)
        self.blocks = list(blocks_list)
        self.covariances = None if covariances is None else list(covariances)
        self.cross_covariances = (None if cross_covariances is None
                                  else list(cross_covariances))
        self._times = np.array([n.time for n in nodes])

    @property
    def start(self):
        return float(self._times[0])

    @property
    def end(self):
        return float(self._times[-1])

    def _locate(self, tau):
        idx = int(np.searchsorted(self._times, tau, side="right")) - 1
        return min(max(idx, 0), len(self.blocks) - 1)

    def query(self, tau: float, *, with_covariance: bool = False) -> QueryResult:
        tau = float(tau)
        k = self._locate(tau)
        hit = int(np.argmin(np.abs(self._times - tau)))
        if abs(self._times[hit] - tau) <= _TIME_TOL:
            node = self.nodes[hit]
            blocks = self.blocks[k]
            v_in = (np.zeros(6) if blocks.profile.is_zero()
                    else blocks.profile.evaluate(node.time)[0])
            cov = None
            if with_covariance and self.covariances is not None:
                cov = self.covariances[hit].copy()
            return QueryResult(node.time, node.pose, node.bias.copy(),
                               node.bias + v_in, cov, False)
        node_k, node_k1 = self.nodes[k], self.nodes[k + 1]
        blocks = self.blocks[k]
        if not with_covariance or self.covariances is None:
            return interpolate_mean(node_k, node_k1, blocks, tau)
        cross = (None if self.cross_covariances is None
                 else self.cross_covariances[k])
        cov, approx = interpolate_covariance(
            node_k, node_k1, self.covariances[k], self.covariances[k + 1],
            blocks, tau, cross_covariance=cross)
        mean = interpolate_mean(node_k, node_k1, blocks, tau)
        return QueryResult(mean.time, mean.pose, mean.bias, mean.velocity,
                           cov, approx)

    def query_many(self, times, *, with_covariance: bool = False):
        return [self.query(t, with_covariance=with_covariance) for t in times]
