"""Estimation runs on simulated data: problem assembly, metrics, sweeps.

The two mobile methods share one odometry stream. With method="inputs" the
stream drives the motion prior as piecewise-linear velocity inputs; with
method="wnoa" the prior carries no inputs and the stream is attached as
masked velocity measurements instead, interpolated into the bracketing
nodes when a reading falls between estimation times.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, fields

import numpy as np

from .continuum import estimate_shape
from .errors import ScenarioError
from .factors import (AnchorFactor, InterpolatedFactor, PlanarLockFactor,
                      PositionFactor, PriorFactor, RangeFactor, VelocityFactor,
                      velocity_factor_error)
from .inputs import InputProfile, InputSegment, from_samples
from .interpolation import Trajectory
from .liegroup import Pose, exp_map, skew, so3_log
from .prior import IntervalBlocks, PriorHyper, StateNode, prior_mean_propagate
from .scenario import ContinuumScenario, MobileScenario
from .simulate import MobileTruth, filter_ranges, simulate_mobile, simulate_rod
from .solver import Problem, SolverSettings, solve

# wheel odometry observes the forward and yaw components only
ODOMETRY_MASK = np.array([True, False, False, False, False, True])

_TIME_TOL = 1e-6
_SIGMA_FLOOR = 1e-6

TRAJECTORY_COLUMNS = (
    ["time"]
    + [f"gt_{c}" for c in ("x", "y", "z", "rx", "ry", "rz")]
    + [f"est_{c}" for c in ("x", "y", "z", "rx", "ry", "rz")]
    + [f"vel_{c}" for c in ("vx", "vy", "vz", "wx", "wy", "wz")]
    + [f"cov_{c}" for c in ("x", "y", "z", "rx", "ry", "rz",
                            "vx", "vy", "vz", "wx", "wy", "wz")]
)

FIG3_COLUMNS = (
    ["time"]
    + [f"{c}" for c in ("x", "y", "z", "rx", "ry", "rz")]
    + [f"vel_{c}" for c in ("vx", "vy", "vz", "wx", "wy", "wz")]
    + [f"sigma_{c}" for c in ("x", "y", "z", "rx", "ry", "rz",
                              "vx", "vy", "vz", "wx", "wy", "wz")]
)


@dataclass(frozen=True)
class Metrics:
    scenario: str
    method: str
    node_policy: str
    dt_landmark: float
    node_count: int
    position_rmse: float
    position_max: float
    rotation_rmse: float
    rotation_max: float
    solve_time: float
    iterations: int
    converged: bool
    interpolated_fraction: float


@dataclass(frozen=True)
class ContinuumMetrics:
    scenario: str
    config: str
    method: str
    position_rmse: float
    position_max: float
    rotation_rmse: float
    rotation_max: float
    solve_time: float
    iterations: int
    converged: bool


@dataclass(frozen=True)
class ExperimentResult:
    metrics: Metrics
    truth: MobileTruth
    trajectory: Trajectory
    solution: object
    rows: np.ndarray


def _rotation_angle(r_truth, r_est) -> float:
    return float(np.linalg.norm(so3_log(r_truth @ r_est.T)))


def _pose_to_columns(pose: Pose):
    return np.concatenate([pose.translation, so3_log(pose.rotation)])


def _dead_reckon(truth: MobileTruth):
    """Odometry-only pose chain at the tick times, used as the initial guess."""
    dt = truth.scenario.tick
    cmd = truth.input_velocities
    poses = [truth.scenario.start]
    for k in range(len(truth.times) - 1):
        mid = 0.5 * (cmd[k] + cmd[k + 1])
        poses.append((exp_map(dt * mid) @ poses[-1]).renormalized())
    return poses


def _anchor(scenario: MobileScenario, bias_measured):
    pose_cov = np.diag(np.maximum(scenario.anchor_pose_sigma, _SIGMA_FLOOR) ** 2)
    bias_cov = np.diag(np.maximum(scenario.anchor_bias_sigma, _SIGMA_FLOOR) ** 2)
    return AnchorFactor(0, scenario.start, np.asarray(bias_measured, dtype=float),
                        pose_cov, bias_cov)


def build_mobile_problem(truth: MobileTruth, *, method="inputs",
                         node_policy=None, dt_landmark=None,
                         settings: SolverSettings | None = None):
    """Factor graph for one run. Returns (problem, blocks list, node times)."""
    scenario = truth.scenario
    if method not in ("inputs", "wnoa"):
        raise ScenarioError(f"method: expected 'inputs' or 'wnoa', got {method!r}")
    node_policy = node_policy or scenario.node_policy
    if node_policy not in ("all", "meas-only"):
        raise ScenarioError(f"node_policy: expected 'all' or 'meas-only', "
                            f"got {node_policy!r}")
    dt_landmark = (scenario.range_schedule.interval if dt_landmark is None
                   else float(dt_landmark))
    base = scenario.range_schedule.interval
    if dt_landmark < base - _TIME_TOL or abs(dt_landmark / base
                                             - round(dt_landmark / base)) > 1e-6:
        raise ScenarioError("dt_landmark: must be a multiple of the simulated "
                            f"range interval ({base} s)")

    tick = scenario.tick
    if node_policy == "all":
        stride = 1
    else:
        stride = int(round(dt_landmark / tick))
        if (len(truth.times) - 1) % stride != 0:
            raise ScenarioError("dt_landmark: must divide the scenario duration")
    node_times = truth.times[::stride]
    node_dt = node_times[1] - node_times[0]

    qc = scenario.qc_inputs if method == "inputs" else scenario.qc_baseline
    hyper = PriorHyper(qc)
    full_profile = from_samples(truth.times, truth.input_velocities)
    blocks_list = []
    for t0, t1 in zip(node_times[:-1], node_times[1:]):
        profile = (full_profile.slice(t0, t1) if method == "inputs"
                   else InputProfile.zero(t0, t1))
        blocks_list.append(IntervalBlocks(profile, hyper))

    reckoned = _dead_reckon(truth)
    nodes = []
    for k, t in enumerate(node_times):
        bias = (np.zeros(6) if method == "inputs"
                else truth.input_velocities[k * stride].copy())
        nodes.append(StateNode(float(t), reckoned[k * stride], bias))
    prior_factors = [PriorFactor(k, b) for k, b in enumerate(blocks_list)]

    measured_bias = (np.zeros(6) if method == "inputs"
                     else truth.input_velocities[0] * ODOMETRY_MASK)
    meas = [_anchor(scenario, measured_bias)]

    for s in filter_ranges(truth.ranges, dt_landmark):
        idx = int(round(s.time / node_dt))
        if abs(node_times[idx] - s.time) > _TIME_TOL:
            raise ScenarioError(f"range sample at {s.time} s is off the node grid")
        meas.append(RangeFactor(idx, scenario.landmarks[s.landmark_index],
                                s.value, scenario.range_schedule.variance))

    if scenario.planar and scenario.planar_lock_mode != "none":
        bias_only = scenario.planar_lock_mode == "bias"
        for k in range(len(nodes)):
            meas.append(PlanarLockFactor(k, scenario.planar_lock_information,
                                         bias_only=bias_only))

    if method == "wnoa":
        odo_cov = np.diag(scenario.odometry_variance)
        for kt, t in enumerate(truth.times):
            measured = truth.input_velocities[kt]
            if kt % stride == 0:
                meas.append(VelocityFactor(kt // stride, measured, odo_cov,
                                           ODOMETRY_MASK))
            else:
                k = kt // stride

                def inner(node, m=measured):
                    return velocity_factor_error(node, m, odo_cov, ODOMETRY_MASK)

                meas.append(InterpolatedFactor(k, blocks_list[k], float(t), inner))

    problem = Problem(nodes, prior_factors, meas, settings=settings, gauge="auto")
    return problem, blocks_list, node_times


def run_experiment(scenario: MobileScenario, *, method="inputs", node_policy=None,
                   dt_landmark=None, seed=None, truth=None,
                   settings: SolverSettings | None = None) -> ExperimentResult:
    """Simulate (or reuse) a run, solve it, and score it against the truth."""
    if truth is None:
        truth = simulate_mobile(scenario, seed=seed)
    problem, blocks_list, node_times = build_mobile_problem(
        truth, method=method, node_policy=node_policy, dt_landmark=dt_landmark,
        settings=settings)
    t0 = time.perf_counter()
    solution = solve(problem)
    solve_time = time.perf_counter() - t0
    trajectory = Trajectory(list(solution.nodes), blocks_list,
                            covariances=solution.node_covariances,
                            cross_covariances=solution.cross_covariances)

    rows = np.empty((len(truth.times), len(TRAJECTORY_COLUMNS)))
    pos_err = np.empty(len(truth.times))
    rot_err = np.empty(len(truth.times))
    interpolated = 0
    for i, t in enumerate(truth.times):
        q = trajectory.query(float(t), with_covariance=True)
        gt = truth.poses[i]
        pos_err[i] = float(np.linalg.norm(gt.translation - q.pose.translation))
        rot_err[i] = _rotation_angle(gt.rotation, q.pose.rotation)
        if np.min(np.abs(node_times - t)) > 1e-9:
            interpolated += 1
        rows[i] = np.concatenate([[t], _pose_to_columns(gt),
                                  _pose_to_columns(q.pose), q.velocity,
                                  np.diag(q.covariance)])

    metrics = Metrics(
        scenario=scenario.name,
        method=method,
        node_policy=node_policy or scenario.node_policy,
        dt_landmark=(scenario.range_schedule.interval if dt_landmark is None
                     else float(dt_landmark)),
        node_count=len(node_times),
        position_rmse=float(np.sqrt(np.mean(pos_err ** 2))),
        position_max=float(np.max(pos_err)),
        rotation_rmse=float(np.sqrt(np.mean(rot_err ** 2))),
        rotation_max=float(np.max(rot_err)),
        solve_time=solve_time,
        iterations=solution.iterations,
        converged=solution.converged,
        interpolated_fraction=interpolated / len(truth.times),
    )
    return ExperimentResult(metrics, truth, trajectory, solution, rows)


def sweep(scenario: MobileScenario, dt_values=(0.5, 1.0, 2.0, 3.0, 4.0, 5.0),
          methods=("inputs", "wnoa"), *, node_policy="meas-only", seed=None,
          settings: SolverSettings | None = None):
    """Metrics over measurement sparsities, both methods on one simulated run."""
    truth = simulate_mobile(scenario, seed=seed)
    out = []
    for dt_landmark in dt_values:
        for method in methods:
            out.append(run_experiment(
                scenario, method=method, node_policy=node_policy,
                dt_landmark=dt_landmark, truth=truth, settings=settings).metrics)
    return out


def xy_nees(truth_pose: Pose, query) -> float:
    """Planar-position NEES of one query against its 2x2 marginal."""
    if query.covariance is None:
        raise ScenarioError("query carries no covariance; solve marginals first")
    a = np.zeros((3, 6))
    a[:, :3] = np.eye(3)
    a[:, 3:] = -skew(query.pose.translation)
    cov_xy = (a @ query.covariance[:6, :6] @ a.T)[:2, :2]
    err = (truth_pose.translation - query.pose.translation)[:2]
    return float(err @ np.linalg.solve(cov_xy, err))


# fig-3-style illustration: hyperparameters anchored to the tuned mobile regime
_FIG3_QC = np.array([1.77e-5] * 3 + [3.50e-5] * 3)
_FIG3_NODE_SPACING = 0.5
_FIG3_DURATION = 3.0
_FIG3_ARC_RATES = (1.2, -1.5, 0.9)
_FIG3_SIN_AMPLITUDE = 1.2
_FIG3_SIN_PERIOD = 6.0
_FIG3_MEAS_OFFSET = np.array([0.05, -0.04, 0.0])
_FIG3_MEAS_VARIANCE = 1e-4


def _fig3_profile(variant):
    knots = np.round(np.arange(31) * 0.1, 12)
    if variant == "velocity":
        segs = []
        for t0, t1 in zip(knots[:-1], knots[1:]):
            rate = _FIG3_ARC_RATES[min(int(t0), 2)]
            v = np.array([1.0, 0.0, 0.0, 0.0, 0.0, rate])
            segs.append(InputSegment(float(t0), float(t1), v, v,
                                     np.zeros(6), np.zeros(6)))
        # piecewise-constant arcs with jumps at the arc boundaries
        return InputProfile(tuple(segs)), np.zeros(6)
    if variant == "acceleration":
        accel = np.zeros((31, 6))
        accel[:, 5] = _FIG3_SIN_AMPLITUDE * np.cos(
            2.0 * np.pi * knots / _FIG3_SIN_PERIOD)
        profile = from_samples(knots, np.zeros((31, 6)), accel)
        return profile, np.array([1.0, 0.0, 0.0, 0.0, 0.0, 0.0])
    raise ScenarioError(f"variant: expected 'velocity' or 'acceleration', "
                        f"got {variant!r}")


def _fig3_rows(trajectory, times):
    rows = np.empty((len(times), len(FIG3_COLUMNS)))
    for i, t in enumerate(times):
        q = trajectory.query(float(t), with_covariance=True)
        rows[i] = np.concatenate([[t], _pose_to_columns(q.pose), q.velocity,
                                  np.sqrt(np.diag(q.covariance))])
    return rows


def reproduce_fig3(variant="velocity", *, query_rate=100.0):
    """Prior and posterior curves for one illustration variant.

    A 3 s trajectory from a known start at 1 m/s forward, nodes every 0.5 s,
    and a single position measurement at the end, offset from the prior mean
    so the update is visible. Returns the sampled curves plus the pieces
    tests need to check them.
    """
    profile, bias0 = _fig3_profile(variant)
    hyper = PriorHyper(_FIG3_QC)
    node_times = np.round(np.arange(0.0, _FIG3_DURATION + 1e-9,
                                    _FIG3_NODE_SPACING), 12)
    nodes = [StateNode(0.0, Pose.identity(), bias0)]
    blocks_list = []
    for t0, t1 in zip(node_times[:-1], node_times[1:]):
        blocks = IntervalBlocks(profile.slice(float(t0), float(t1)), hyper)
        blocks_list.append(blocks)
        nodes.append(prior_mean_propagate(nodes[-1], blocks, float(t1)))
    priors = [PriorFactor(k, b) for k, b in enumerate(blocks_list)]
    anchor = AnchorFactor(0, Pose.identity(), bias0.copy(),
                          1e-12 * np.eye(6), 1e-12 * np.eye(6))

    prior_problem = Problem([n for n in nodes], priors, [anchor], gauge="none")
    prior_solution = solve(prior_problem)
    prior_traj = Trajectory(list(prior_solution.nodes), blocks_list,
                            covariances=prior_solution.node_covariances,
                            cross_covariances=prior_solution.cross_covariances)

    measured = nodes[-1].pose.translation + _FIG3_MEAS_OFFSET
    tip = PositionFactor(len(nodes) - 1, measured,
                         _FIG3_MEAS_VARIANCE * np.eye(3))
    post_problem = Problem([n for n in nodes], priors, [anchor, tip],
                           gauge="none")
    post_solution = solve(post_problem)
    post_traj = Trajectory(list(post_solution.nodes), blocks_list,
                           covariances=post_solution.node_covariances,
                           cross_covariances=post_solution.cross_covariances)

    times = np.arange(0.0, _FIG3_DURATION + 1e-9, 1.0 / query_rate)
    return {
        "variant": variant,
        "times": times,
        "node_times": node_times,
        "profile": profile,
        "measured_position": measured,
        "measurement_sigma": float(np.sqrt(_FIG3_MEAS_VARIANCE)),
        "prior": _fig3_rows(prior_traj, times),
        "posterior": _fig3_rows(post_traj, times),
        "prior_trajectory": prior_traj,
        "posterior_trajectory": post_traj,
        "prior_converged": prior_solution.converged,
        "posterior_converged": post_solution.converged,
    }


def run_continuum(scenario: ContinuumScenario, *, method="inputs",
                  settings: SolverSettings | None = None):
    """Benchmark every (tension set, disturbance) pair of the scenario.

    Truth comes from integrating the rod with the disturbance load applied;
    the estimator sees only the tip position (and, with method="inputs",
    the tendon tensions).
    """
    if method not in ("inputs", "wnoa"):
        raise ScenarioError(f"method: expected 'inputs' or 'wnoa', got {method!r}")
    rod = scenario.rod
    rng = np.random.default_rng(scenario.seed)
    node_arclengths = np.linspace(0.0, rod.length, scenario.node_count)
    samples = np.unique(np.concatenate([rod.disk_arclengths, [rod.length]]))
    hyper = PriorHyper(scenario.qc)
    sigma = float(np.sqrt(scenario.tip_variance))

    out = []
    for i, j, tendons, disturbance in scenario.configs():
        truth_poses = simulate_rod(rod, tendons, node_arclengths, samples,
                                   disturbance=disturbance,
                                   step=scenario.sim_step)
        truth = dict(zip((float(s) for s in samples), truth_poses))
        tip_measured = truth[rod.length].translation + rng.standard_normal(3) * sigma
        meas = [PositionFactor(scenario.node_count - 1, tip_measured,
                               scenario.tip_variance * np.eye(3))]
        used = tendons if method == "inputs" else ()
        t0 = time.perf_counter()
        solution, trajectory = estimate_shape(rod, used, meas, hyper,
                                              scenario.node_count,
                                              settings=settings)
        solve_time = time.perf_counter() - t0

        pos_err, rot_err = [], []
        for s in rod.disk_arclengths:
            q = trajectory.query(float(s))
            ref = truth[float(s)]
            pos_err.append(float(np.linalg.norm(ref.translation
                                                - q.pose.translation)))
            rot_err.append(_rotation_angle(ref.rotation, q.pose.rotation))
        pos_err = np.asarray(pos_err)
        rot_err = np.asarray(rot_err)
        out.append(ContinuumMetrics(
            scenario=scenario.name,
            config=f"tensions{i}-load{j}",
            method=method,
            position_rmse=float(np.sqrt(np.mean(pos_err ** 2))),
            position_max=float(np.max(pos_err)),
            rotation_rmse=float(np.sqrt(np.mean(rot_err ** 2))),
            rotation_max=float(np.max(rot_err)),
            solve_time=solve_time,
            iterations=solution.iterations,
            converged=solution.converged,
        ))
    return out


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def write_trajectory_csv(path, rows):
    """One row per evaluation time; see TRAJECTORY_COLUMNS for the layout."""
    rows = np.asarray(rows)
    if rows.ndim != 2 or rows.shape[1] != len(TRAJECTORY_COLUMNS):
        raise ScenarioError(f"trajectory rows must have "
                            f"{len(TRAJECTORY_COLUMNS)} columns")
    _write_csv(path, TRAJECTORY_COLUMNS, [[f"{v:.12g}" for v in r] for r in rows])


def write_fig3_csv(path, rows):
    rows = np.asarray(rows)
    if rows.ndim != 2 or rows.shape[1] != len(FIG3_COLUMNS):
        raise ScenarioError(f"fig3 rows must have {len(FIG3_COLUMNS)} columns")
    _write_csv(path, FIG3_COLUMNS, [[f"{v:.12g}" for v in r] for r in rows])


def write_metrics_csv(path, metrics_list):
    """One row per run; the header comes from the metrics dataclass."""
    if not metrics_list:
        raise ScenarioError("no metrics to write")
    names = [f.name for f in fields(metrics_list[0])]
    rows = []
    for m in metrics_list:
        rows.append([getattr(m, n) for n in names])
    _write_csv(path, names, rows)
