"""Ground-truth generation for the simulated experiments.

The mobile simulator integrates the pose kinematics driven by the scripted
body velocity, optionally perturbed by an initial-state draw and a
velocity-bias random walk whose intensity matches the estimator's prior.
Integration runs a fourth-order Runge-Kutta scheme on the homogeneous
transform at a fine fixed step, batched across input ticks: the per-tick
transition matrices are independent of each other, so they are computed in
parallel and chained afterwards.

The continuum simulator integrates the same kinematics over arclength, with
the strain obtained exactly from the piecewise-linear actuation inputs plus
any disturbance load withheld from the estimator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .continuum import STRAIGHT_STRAIN, tensions_to_inputs
from .liegroup import Pose, exp_map
from .scenario import ContinuumScenario, Disturbance, MobileScenario

# sub-tick resolution of the simulated bias walk; fine enough that the
# discrete walk is indistinguishable from the continuous process at the
# tick scale
_WALK_SUBSTEPS = 20


@dataclass(frozen=True)
class RangeSample:
    time: float
    landmark_index: int
    value: float


@dataclass(frozen=True)
class MobileTruth:
    """One simulated run: truth at the input ticks plus the measurement log.

    input_velocities holds the estimator-visible velocity stream (the
    scripted commands); biases holds the true deviation from that stream,
    zero unless the scenario samples initial errors or process noise.
    """

    scenario: MobileScenario
    times: np.ndarray
    poses: tuple[Pose, ...]
    biases: np.ndarray
    input_velocities: np.ndarray
    ranges: tuple[RangeSample, ...]

    def pose_at_tick(self, time) -> Pose:
        idx = int(np.argmin(np.abs(self.times - time)))
        if abs(self.times[idx] - time) > 1e-9:
            raise ValueError(f"no simulated tick at t = {time}")
        return self.poses[idx]


def _wedge_batch(v):
    """(K, 6) twists to (K, 4, 4) matrix generators."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (4, 4))
    out[..., 0, 1] = -v[..., 5]
    out[..., 0, 2] = v[..., 4]
    out[..., 1, 0] = v[..., 5]
    out[..., 1, 2] = -v[..., 3]
    out[..., 2, 0] = -v[..., 4]
    out[..., 2, 1] = v[..., 3]
    out[..., :3, 3] = v[..., :3]
    return out


def _transitions(velocity_fn, t0s, dt, step):
    """Batched RK4 transition matrices over [t0, t0 + dt] per entry."""
    n_sub = max(1, int(round(dt / step)))
    h = dt / n_sub
    t0s = np.asarray(t0s, dtype=float)
    phi = np.broadcast_to(np.eye(4), (len(t0s), 4, 4)).copy()
    a_start = _wedge_batch(velocity_fn(t0s))
    for j in range(n_sub):
        ta = t0s + j * h
        a_mid = _wedge_batch(velocity_fn(ta + 0.5 * h))
        a_end = _wedge_batch(velocity_fn(ta + h))
        k1 = a_start @ phi
        k2 = a_mid @ (phi + 0.5 * h * k1)
        k3 = a_mid @ (phi + 0.5 * h * k2)
        k4 = a_end @ (phi + h * k3)
        phi = phi + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        a_start = a_end
    return phi


def simulate_mobile(scenario: MobileScenario, *, seed=None) -> MobileTruth:
    """Simulate one run; deterministic for a fixed seed."""
    rng = np.random.default_rng(scenario.seed if seed is None else seed)
    times = scenario.tick_times()
    n_ticks = len(times) - 1
    dt = scenario.tick
    commanded = scenario.sample_script(times)

    walk_mask = np.ones(6)
    if scenario.planar:
        # keep the sampled deviations in the plane the estimator locks
        walk_mask = np.array([1.0, 0.0, 0.0, 0.0, 0.0, 1.0])

    pose_err = rng.standard_normal(6) * scenario.anchor_pose_sigma
    bias_err = rng.standard_normal(6) * scenario.anchor_bias_sigma * walk_mask
    start = exp_map(pose_err) @ scenario.start

    h_walk = dt / _WALK_SUBSTEPS
    n_walk = n_ticks * _WALK_SUBSTEPS
    if scenario.process_noise:
        steps = rng.standard_normal((n_walk, 6))
        steps *= np.sqrt(scenario.qc_inputs * h_walk) * walk_mask
    else:
        steps = np.zeros((n_walk, 6))
    walk = np.concatenate([np.zeros((1, 6)), np.cumsum(steps, axis=0)])

    def true_bias(t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        idx = np.clip((t / h_walk + 1e-9).astype(int), 0, n_walk)
        return bias_err + walk[idx]

    def velocity(t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        v = np.stack([np.interp(t, times, commanded[:, d]) for d in range(6)],
                     axis=-1)
        return v + true_bias(t)

    phis = _transitions(velocity, times[:-1], dt, scenario.sim_step)
    poses = [start]
    for k in range(n_ticks):
        poses.append(Pose.from_matrix(phis[k] @ poses[-1].matrix()).renormalized())

    stride = int(round(scenario.range_schedule.interval / dt))
    meas_idx = np.arange(0, n_ticks + 1, stride)
    sigma = np.sqrt(scenario.range_schedule.variance)
    noise = rng.standard_normal((len(meas_idx), len(scenario.landmarks))) * sigma
    ranges = []
    for row, k in enumerate(meas_idx):
        p = poses[k].translation
        for lm_idx, lm in enumerate(scenario.landmarks):
            dist = float(np.linalg.norm(lm - p))
            if (scenario.range_schedule.max_range is not None
                    and dist > scenario.range_schedule.max_range):
                continue
            ranges.append(RangeSample(
                float(times[k]), lm_idx,
                dist * scenario.range_schedule.scale + float(noise[row, lm_idx])))

    return MobileTruth(scenario, times, tuple(poses), true_bias(times),
                       commanded, tuple(ranges))


def filter_ranges(ranges, interval, *, start=0.0):
    """Keep the range samples that fall on the coarser schedule."""
    out = []
    for s in ranges:
        k = (s.time - start) / interval
        if abs(k - round(k)) < 1e-6:
            out.append(s)
    return tuple(out)


def _strain_table(rod, profiles, disturbance: Disturbance | None):
    """Exact strain at the actuation knots plus an evaluator between them.

    The actuation inputs are piecewise linear, so the trapezoid rule over
    the knots integrates them exactly and the strain between knots is the
    quadratic continuation from the previous knot.
    """
    knots = [profiles[0].start]
    accel = [profiles[0].evaluate(profiles[0].start)[1]]
    for p in profiles:
        for seg in p.segments:
            knots.append(seg.t1)
            accel.append(seg.a1)
    knots = np.asarray(knots)
    accel = np.asarray(accel)
    strain = np.zeros_like(accel)
    strain[0] = STRAIGHT_STRAIN
    widths = np.diff(knots)
    strain[1:] = STRAIGHT_STRAIN + np.cumsum(
        0.5 * (accel[:-1] + accel[1:]) * widths[:, None], axis=0)

    if disturbance is None:
        dist_accel = np.zeros(6)
        lo = hi = rod.length
    else:
        lo, hi = (disturbance.span[0] * rod.length,
                  disturbance.span[1] * rod.length)
        density = np.concatenate([np.zeros(3), disturbance.moment]) / (hi - lo)
        dist_accel = density / rod.stiffness

    def strain_at(s):
        s = float(s)
        j = int(np.clip(np.searchsorted(knots, s, side="right") - 1,
                        0, len(widths) - 1))
        u = s - knots[j]
        slope = (accel[j + 1] - accel[j]) / widths[j]
        value = strain[j] + accel[j] * u + 0.5 * slope * u * u
        return value + dist_accel * np.clip(s - lo, 0.0, hi - lo)

    return strain_at


def simulate_rod(rod, tendons, node_arclengths, sample_arclengths, *,
                 disturbance: Disturbance | None = None, step=1e-4):
    """Truth poses at the sampled arclengths for one rod configuration.

    Uses the same tendon-to-input conversion the estimator sees, plus the
    optional disturbance load that stays hidden from it.
    """
    profiles = tensions_to_inputs(rod, tendons, node_arclengths)
    strain_at = _strain_table(rod, profiles, disturbance)

    sample_arclengths = np.asarray(sample_arclengths, dtype=float)
    grid = np.unique(np.concatenate([
        np.arange(0.0, rod.length, step), [rod.length], sample_arclengths]))
    if grid[0] < 0.0 or grid[-1] > rod.length + 1e-12:
        raise ValueError("sample arclengths must lie on the rod")

    pose = Pose.identity()
    mat = pose.matrix()
    out = {0.0: pose}
    for s0, s1 in zip(grid[:-1], grid[1:]):
        h = s1 - s0
        a0 = _wedge_batch(strain_at(s0)[None])[0]
        am = _wedge_batch(strain_at(s0 + 0.5 * h)[None])[0]
        a1 = _wedge_batch(strain_at(s1)[None])[0]
        k1 = a0 @ mat
        k2 = am @ (mat + 0.5 * h * k1)
        k3 = am @ (mat + 0.5 * h * k2)
        k4 = a1 @ (mat + h * k3)
        mat = mat + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[float(s1)] = Pose.from_matrix(mat).renormalized()

    return [out[float(s)] for s in sample_arclengths]
