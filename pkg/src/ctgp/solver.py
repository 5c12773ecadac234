"""MAP batch estimation over the block-tridiagonal factor graph.

The motion prior chains adjacent nodes and every measurement factor touches
one node or an adjacent pair, so the Gauss-Newton normal equations stay
block tridiagonal. Each iteration linearizes, solves by a forward-backward
block-Cholesky sweep, and applies manifold updates; Levenberg-style diagonal
damping activates only when a step is rejected. Posterior covariance blocks
come from the same factorization via the Takahashi recursion.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import factors as _factors
from .errors import GaugeFreedomError, HyperparameterError, WiringError
from .liegroup import exp_map
from .prior import StateNode

_ABSOLUTE_FACTORS = (_factors.RangeFactor, _factors.PoseFactor,
                     _factors.PositionFactor, _factors.AnchorFactor,
                     _factors.InterpolatedFactor)

_REJECT_LIMIT = 50


@dataclass
class SolverSettings:
    max_iterations: int = 100
    relative_cost_tolerance: float = 1e-8
    step_norm_tolerance: float = 1e-10
    initial_damping: float = 0.0
    damping_growth: float = 10.0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise HyperparameterError("max_iterations must be at least 1")
        if self.relative_cost_tolerance <= 0 or self.step_norm_tolerance <= 0:
            raise HyperparameterError("convergence tolerances must be positive")
        if self.initial_damping < 0 or self.damping_growth <= 1:
            raise HyperparameterError("damping settings out of range")


@dataclass(frozen=True)
class Solution:
    """Posterior means, covariance blocks, and solve diagnostics."""

    nodes: tuple
    node_covariances: np.ndarray  # (K, 12, 12)
    cross_covariances: np.ndarray  # (K-1, 12, 12), cov(node_k, node_k+1)
    cost_history: tuple
    converged: bool
    iterations: int


class Problem:
    """Factor graph for one batch solve.

    gauge: "auto" adds a tight anchor on the first node when no factor
    carries absolute information, "fix-first" always adds it, "none" trusts
    the given factors (a genuinely gauge-deficient graph then fails with
    GaugeFreedomError).
    """

    def __init__(self, nodes, prior_factors, measurement_factors=(),
                 settings: SolverSettings | None = None, gauge: str = "auto"):
        nodes = list(nodes)
        if len(nodes) < 2:
            raise WiringError("need at least two nodes")
        times = [n.time for n in nodes]
        if any(t1 - t0 <= 0 for t0, t1 in zip(times, times[1:])):
            raise WiringError("node times must be strictly increasing")
        prior_factors = list(prior_factors)
        if len(prior_factors) != len(nodes) - 1:
            raise WiringError("need exactly one prior factor per adjacent node pair")
        for k, f in enumerate(prior_factors):
            if tuple(f.indices) != (k, k + 1):
                raise WiringError(f"prior factor {k} is not wired to nodes ({k}, {k + 1})")
        measurement_factors = list(measurement_factors)
        for f in measurement_factors:
            idx = tuple(f.indices)
            if any(i < 0 or i >= len(nodes) for i in idx):
                raise WiringError("measurement factor references a missing node")
            if len(idx) == 2 and idx[1] != idx[0] + 1:
                raise WiringError("measurement factors may couple only adjacent nodes")
            if len(idx) > 2:
                raise WiringError("factors coupling more than two nodes break the band structure")
        if gauge not in ("auto", "fix-first", "none"):
            raise HyperparameterError("gauge must be auto, fix-first, or none")
        self.nodes = nodes
        self.prior_factors = prior_factors
        self.measurement_factors = measurement_factors
        self.settings = settings or SolverSettings()
        self.gauge = gauge

    def gauge_factors(self):
        """Extra anchoring factors implied by the gauge policy."""
        if self.gauge == "none":
            return []
        if self.gauge == "auto" and any(isinstance(f, _ABSOLUTE_FACTORS)
                                        for f in self.measurement_factors):
            return []
        first = self.nodes[0]
        return [_factors.AnchorFactor(0, first.pose, first.bias.copy(),
                                      1e-12 * np.eye(6), 1e-12 * np.eye(6))]


class _Linearizer:
    """Evaluates cost and assembles the block-tridiagonal normal equations."""

    def __init__(self, problem: Problem):
        self.k = len(problem.nodes)
        self.measurement_factors = (list(problem.measurement_factors)
                                    + problem.gauge_factors())
        fast = all(isinstance(f, _factors.PriorFactor) for f in problem.prior_factors)
        flags = {f.exact_bias_jacobian for f in problem.prior_factors
                 if isinstance(f, _factors.PriorFactor)}
        self._batch_blocks = ([f.blocks for f in problem.prior_factors]
                              if fast and len(flags) == 1 else None)
        self._exact_bias = flags.pop() if len(flags) == 1 else True
        self._prior_factors = problem.prior_factors

    def _prior_terms(self, nodes, with_jacobians):
        if self._batch_blocks is not None:
            return _factors.prior_factor_batch(
                nodes, self._batch_blocks,
                exact_bias_jacobian=self._exact_bias,
                with_jacobians=with_jacobians)
        evals = [f.evaluate(nodes) for f in self._prior_factors]
        out = {
            "error": np.stack([e.error for e in evals]),
            "info": np.stack([e.information for e in evals]),
        }
        if with_jacobians:
            out["j_k"] = np.stack([e.jacobians[0][1] for e in evals])
            out["j_k1"] = np.stack([e.jacobians[1][1] for e in evals])
        return out

    def cost(self, nodes) -> float:
        p = self._prior_terms(nodes, with_jacobians=False)
        total = 0.5 * float(np.einsum("ni,nij,nj->", p["error"], p["info"], p["error"]))
        for f in self.measurement_factors:
            total += f.evaluate(nodes).cost()
        return total

    def assemble(self, nodes):
        """Returns (cost, D diagonal blocks, E subdiagonal blocks, gradient)."""
        k = self.k
        d = np.zeros((k, 12, 12))
        e = np.zeros((k - 1, 12, 12))
        g = np.zeros((k, 12))

        p = self._prior_terms(nodes, with_jacobians=True)
        err, info, j_k, j_k1 = p["error"], p["info"], p["j_k"], p["j_k1"]
        cost = 0.5 * float(np.einsum("ni,nij,nj->", err, info, err))
        w_k = info @ j_k
        w_k1 = info @ j_k1
        d[:-1] += np.einsum("nji,njl->nil", j_k, w_k)
        d[1:] += np.einsum("nji,njl->nil", j_k1, w_k1)
        e += np.einsum("nji,njl->nil", j_k1, w_k)
        we = np.einsum("nij,nj->ni", info, err)
        g[:-1] -= np.einsum("nji,nj->ni", j_k, we)
        g[1:] -= np.einsum("nji,nj->ni", j_k1, we)

        for f in self.measurement_factors:
            ev = f.evaluate(nodes)
            cost += ev.cost()
            we_f = ev.information @ ev.error
            blocks = sorted(ev.jacobians, key=lambda ij: ij[0])
            for i, jac in blocks:
                d[i] += jac.T @ ev.information @ jac
                g[i] -= jac.T @ we_f
            if len(blocks) == 2:
                (i, ja), (_, jb) = blocks
                e[i] += jb.T @ ev.information @ ja
        return cost, d, e, g


def _tridiag_factor(d, e, damping):
    """Block LDL^T sweep; returns per-node S blocks. Raises LinAlgError if not PD."""
    k = len(d)
    s = np.empty_like(d)
    if damping > 0.0:
        # scale-invariant damping; the absolute floor covers zero diagonal entries
        d = d.copy()
        idx = np.arange(12)
        d[:, idx, idx] += damping * d[:, idx, idx] + 1e-12
    s[0] = d[0]
    np.linalg.cholesky(s[0])
    for i in range(1, k):
        gain = np.linalg.solve(s[i - 1], e[i - 1].T).T
        s[i] = d[i] - gain @ e[i - 1].T
        np.linalg.cholesky(s[i])
    return s


def _tridiag_solve(s, e, g):
    k = len(s)
    z = np.empty_like(g)
    z[0] = g[0]
    for i in range(1, k):
        z[i] = g[i] - e[i - 1] @ np.linalg.solve(s[i - 1], z[i - 1])
    delta = np.empty_like(g)
    delta[k - 1] = np.linalg.solve(s[k - 1], z[k - 1])
    for i in range(k - 2, -1, -1):
        delta[i] = np.linalg.solve(s[i], z[i] - e[i].T @ delta[i + 1])
    return delta


def _takahashi(s, e):
    """Marginal covariance blocks and adjacent cross blocks from the factorization."""
    k = len(s)
    p = np.empty_like(s)
    cross = np.empty_like(e)
    p[k - 1] = np.linalg.inv(s[k - 1])
    for i in range(k - 2, -1, -1):
        s_inv = np.linalg.inv(s[i])
        u = s_inv @ e[i].T
        p[i] = s_inv + u @ p[i + 1] @ u.T
        cross[i] = -u @ p[i + 1]
    p = 0.5 * (p + np.swapaxes(p, -1, -2))
    return p, cross


def _apply_step(nodes, delta):
    return [StateNode(n.time,
                      (exp_map(d[:6]) @ n.pose).renormalized(),
                      n.bias + d[6:])
            for n, d in zip(nodes, delta)]


def solve(problem: Problem) -> Solution:
    """Damped Gauss-Newton to convergence, then covariance extraction.

    Raises GaugeFreedomError when the undamped normal equations are singular.
    A run that exhausts max_iterations or cannot decrease the cost at any
    damping returns the best state found with converged=False.
    """
    settings = problem.settings
    lin = _Linearizer(problem)
    nodes = list(problem.nodes)
    lam = settings.initial_damping
    history = []
    converged = False
    iterations = 0

    cost, d, e, g = lin.assemble(nodes)
    history.append(cost)
    for _ in range(settings.max_iterations):
        rejected = 0
        accepted = None
        while rejected <= _REJECT_LIMIT:
            try:
                s = _tridiag_factor(d, e, lam)
            except np.linalg.LinAlgError:
                # indefinite at this damping; a singular problem surfaces at the
                # final undamped factorization instead
                lam = 1e-6 if lam == 0.0 else lam * settings.damping_growth
                rejected += 1
                continue
            delta = _tridiag_solve(s, e, g)
            candidate = _apply_step(nodes, delta)
            new_cost = lin.cost(candidate)
            if new_cost <= cost + 1e-12 * max(1.0, cost):
                accepted = (candidate, new_cost, delta)
                break
            lam = 1e-6 if lam == 0.0 else lam * settings.damping_growth
            rejected += 1
        if accepted is None:
            break
        nodes, new_cost, delta = accepted
        history.append(new_cost)
        iterations += 1
        lam = 0.0 if lam < 1e-12 else lam / settings.damping_growth
        small_change = abs(cost - new_cost) <= settings.relative_cost_tolerance * max(cost, 1e-300)
        small_step = float(np.linalg.norm(delta)) <= settings.step_norm_tolerance
        cost = new_cost
        if small_change or small_step:
            converged = True
            break
        _, d, e, g = lin.assemble(nodes)

    _, d, e, _ = lin.assemble(nodes)
    try:
        s = _tridiag_factor(d, e, 0.0)
    except np.linalg.LinAlgError:
        raise GaugeFreedomError(
            "normal equations are singular or numerically indefinite at the "
            "solution; covariance undefined (set gauge='fix-first' or add "
            "measurements)")
    covariances, cross = _takahashi(s, e)
    return Solution(tuple(nodes), covariances, cross, tuple(history),
                    converged, iterations)
