"""Scenario runner, Monte Carlo driver and batch/recursive cross-check."""
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from app.exceptions import DegenerateSpectrum, InnovationOutlier, NavigationError, ScenarioError
from app.schemas import DEG_PER_HOUR, MICRO_G, ScenarioConfig
from app.services import ekfbase, simkit
from app.services.jape import (
    BatchEstimator,
    EstimateX,
    JapeEstimator,
    RecursiveAccumulators,
    RecursiveEstimator,
    accumulate,
    attitude_only_init,
    current_attitude,
)
from app.services.obsbuild import CoefficientBuilder, WindowDifferencer, earth_rate_term_ratio
from app.services.rotations import euler_error_deg

logger = logging.getLogger(__name__)

#: Columns of the per-run time series, in file order.
SERIES_COLUMNS = [
    "t", "err_yaw_deg", "err_pitch_deg", "err_roll_deg",
    "ba_x", "ba_y", "ba_z", "bg_x", "bg_y", "bg_z",
    "lever_err_x_mm", "lever_err_y_mm", "lever_err_z_mm",
    "objective", "objective_at_truth", "iters",
    "init_err_yaw_deg", "init_err_pitch_deg", "init_err_roll_deg",
]
_NAN3 = [float("nan")] * 3


# ===== RESULT TYPES =====
@dataclass
class EstimatorTrack:
    """Time series and final record of one estimator within one run."""
    name: str
    rows: List[Dict[str, float]] = field(default_factory=list)
    final: Optional[Dict[str, float]] = None
    final_step_norms: List[float] = field(default_factory=list)
    trajectory: List[np.ndarray] = field(default_factory=list)

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=SERIES_COLUMNS)


@dataclass
class RunReport:
    run_index: int
    seed: int
    tracks: Dict[str, EstimatorTrack]
    earth_rate_ratio: float
    wall_time_s: float

    def finals(self) -> pd.DataFrame:
        """One row per estimator with the final-epoch record."""
        records = [{"run": self.run_index, "estimator": name, **track.final}
                   for name, track in self.tracks.items() if track.final is not None]
        return pd.DataFrame(records)


@dataclass
class CrosscheckResult:
    max_difference: float
    epochs: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_difference <= self.tolerance


# ===== ROW HELPERS =====
def _row(t: float, C_est: Optional[np.ndarray], C_true: np.ndarray, b_a, b_g, lever_err,
         objective: float, objective_at_truth: float, iterations: int,
         C_init: Optional[np.ndarray]) -> Dict[str, float]:
    err = euler_error_deg(C_est, C_true) if C_est is not None else _NAN3
    init_err = euler_error_deg(C_init, C_true) if C_init is not None else _NAN3
    values = [t, *err, *(np.asarray(b_a) / MICRO_G), *(np.asarray(b_g) / DEG_PER_HOUR),
              *(np.asarray(lever_err) * 1000), objective, objective_at_truth, iterations, *init_err]
    return dict(zip(SERIES_COLUMNS, (float(v) for v in values)))


def _final_record(row: Dict[str, float], accel_bias_true: np.ndarray) -> Dict[str, float]:
    record = dict(row)
    for axis, truth in zip("xyz", accel_bias_true / MICRO_G):
        record[f"ba_err_{axis}"] = row[f"ba_{axis}"] - truth
    return record


class _EkfRunner:
    """Attitude-only warm-up followed by the error-state filter."""

    def __init__(self, tuning: ekfbase.EkfTuning, warmup_s: float):
        self.tuning = tuning
        self.warmup_s = warmup_s
        self.state: Optional[ekfbase.EkfState] = None

    def step(self, imu: simkit.ImuIncrement, fix: simkit.GnssFix, C_init: Optional[np.ndarray]) -> None:
        if self.state is None:
            if fix.t >= self.warmup_s and C_init is not None:
                self.state = ekfbase.ekf_init(C_init, fix, self.tuning)
                logger.info("ekf: initialized at t = %.2f s", fix.t)
            return
        self.state = ekfbase.ekf_propagate(self.state, imu)
        try:
            self.state = ekfbase.ekf_update(self.state, fix)
        except InnovationOutlier as e:
            logger.warning("ekf: fix at %.2f s rejected: %s", fix.t, e)


def _make_estimator(name: str, config: ScenarioConfig) -> JapeEstimator:
    settings = config.solver_settings()
    if name == "ra-jape":
        return RecursiveEstimator(settings, config.warmup_s)
    return BatchEstimator(settings, config.warmup_s)


# ===== RUN =====
def run_scenario(config: ScenarioConfig, run_index: int = 0,
                 estimators: Optional[List[str]] = None, batch_stride: Optional[int] = None,
                 keep_trajectory: bool = False) -> RunReport:
    """Simulate one run and process it epoch by epoch with the selected estimators.

    Deterministic in ``(config, run_index)``.

    Raises:
        ScenarioError: Wrapping any navigation error with the run context.
    """
    seed = config.seed + run_index
    names = list(estimators or config.estimators)
    stride = batch_stride or config.solver.batch_stride
    started = time.perf_counter()
    epoch_index = 0
    try:
        profile = config.motion_profile()
        spec = config.sensor_spec()
        imu = simkit.synthesize_imu(profile, spec, seed, config.duration)
        gnss = simkit.synthesize_gnss(profile, spec, seed, config.duration)
        truth = simkit.truth_series(profile, [fix.t for fix in gnss])
        x_true = EstimateX(q=profile.initial_attitude, b_a=spec.accel_bias, b_g=spec.gyro_bias,
                           lever_arm=spec.lever_arm)

        builder = CoefficientBuilder(spec.interval, config.solver.gyro_bias_coupling)
        differencer = WindowDifferencer(config.nabla)
        differencer.push(builder.snapshot(gnss[0].t))
        epochs = [builder.snapshot(gnss[0].t)]
        acc = RecursiveAccumulators()

        jape = {name: _make_estimator(name, config) for name in names if name != "ekf"}
        ekf = _EkfRunner(config.ekf_tuning(), config.warmup_s) if "ekf" in names else None
        tracks = {name: EstimatorTrack(name) for name in names}
        last = len(imu)

        for k, increment in enumerate(imu):
            epoch_index = k + 1
            epoch = builder.step(increment, gnss[k], gnss[k + 1])
            epochs.append(epoch)
            diff = differencer.push(epoch)
            if diff is None:
                continue
            acc = accumulate(acc, diff)
            for estimator in jape.values():
                estimator.feed(diff)

            C_true = truth.C_bn[k + 1]
            try:
                C_init = current_attitude(EstimateX(q=attitude_only_init(acc.S_qq)), epoch.C_n, epoch.C_b)
            except DegenerateSpectrum:
                C_init = None
            if ekf is not None:
                ekf.step(increment, gnss[k + 1], C_init)

            record = epoch_index % config.report_stride == 0 or epoch_index == last
            for name, estimator in jape.items():
                track = tracks[name]
                solve = (name == "ra-jape" or epoch_index % stride == 0
                         or epoch_index == last or (keep_trajectory and name == "ba-jape"))
                if not solve:
                    continue
                result = estimator.estimate()
                if keep_trajectory and result is not None and not estimator.warming_up:
                    track.trajectory.append(np.concatenate([[diff.t], result.estimate.vector]))
                if not record:
                    continue
                if result is None:
                    track.rows.append(_row(epoch.t, None, C_true, _NAN3, _NAN3, _NAN3,
                                           float("nan"), float("nan"), 0, C_init))
                    continue
                x = result.estimate
                track.rows.append(_row(
                    epoch.t, current_attitude(x, epoch.C_n, epoch.C_b, epoch.chi), C_true, x.b_a, x.b_g,
                    x.lever_arm - spec.lever_arm, result.objective, estimator.objective_at(x_true),
                    result.iterations, C_init))
                track.final_step_norms = list(result.step_norms)

            if ekf is not None and record:
                track = tracks["ekf"]
                state = ekf.state
                if state is None:
                    track.rows.append(_row(epoch.t, C_init, C_true, np.zeros(3), np.zeros(3), -spec.lever_arm,
                                           float("nan"), float("nan"), 0, C_init))
                else:
                    track.rows.append(_row(epoch.t, state.C_bn, C_true, state.accel_bias, state.gyro_bias,
                                           state.lever_arm - spec.lever_arm, float("nan"), float("nan"), 0,
                                           C_init))

        for track in tracks.values():
            if track.rows:
                track.final = _final_record(track.rows[-1], spec.accel_bias)
        ratio = earth_rate_term_ratio(epochs, imu, profile.initial_position, truth.C_bn[0])
    except NavigationError as e:
        raise ScenarioError(e, {"run": run_index, "seed": seed, "epoch": epoch_index}) from e

    wall_time = time.perf_counter() - started
    logger.info("Run %d (seed %d) finished in %.1f s", run_index, seed, wall_time)
    return RunReport(run_index=run_index, seed=seed, tracks=tracks, earth_rate_ratio=ratio, wall_time_s=wall_time)


def _run_indexed(args) -> RunReport:
    config, run_index = args
    return run_scenario(config, run_index)


def run_campaign(config: ScenarioConfig, workers: int = 1) -> List[RunReport]:
    """Execute ``config.runs`` runs, serially or in a process pool, ordered by run index.

    Every run draws from its own seed, so the worker count does not change results.
    """
    jobs = [(config, index) for index in range(config.runs)]
    if workers > 1 and config.runs > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(_run_indexed, jobs))
    else:
        reports = [_run_indexed(job) for job in jobs]
    return sorted(reports, key=lambda report: report.run_index)


# ===== SUMMARY =====
#: Table rows of the campaign summary: label, column prefix, scale of the reported unit.
SUMMARY_ROWS = [
    ("Attitude (0.001deg)", "err_{}_deg", 1000.0, ("yaw", "pitch", "roll")),
    ("Accelerometer Bias (μg)", "ba_err_{}", 1.0, ("x", "y", "z")),
    ("Gyroscope Bias (deg/h)", "bg_{}", 1.0, ("x", "y", "z")),
    ("GPS Lever Arm (mm)", "lever_err_{}_mm", 1.0, ("x", "y", "z")),
]


def _clean(value: float) -> Optional[float]:
    return None if value is None or not np.isfinite(value) else float(value)


def summarize(reports: List[RunReport]) -> Dict[str, Dict]:
    """Mean and sample standard deviation of every final quantity, per estimator.

    Returns:
        Mapping estimator -> table label -> ``{"mean": [...], "std": [...]}``,
        plus ``runs`` and ``objective_dominance`` entries for the JAPE estimators.
    """
    if not reports:
        return {}
    finals = pd.concat([report.finals() for report in reports], ignore_index=True)
    if finals.empty:
        return {}
    summary: Dict[str, Dict] = {}
    for name, group in finals.groupby("estimator", sort=True):
        group = group.sort_values("run")
        entry: Dict[str, object] = {"runs": int(len(group))}
        for label, pattern, scale, axes in SUMMARY_ROWS:
            columns = [pattern.format(axis) for axis in axes]
            values = group[columns].to_numpy(dtype=float) * scale
            std = values.std(axis=0, ddof=1) if len(values) > 1 else np.full(3, np.nan)
            entry[label] = {"mean": [_clean(v) for v in values.mean(axis=0)], "std": [_clean(v) for v in std]}
        if name != "ekf":
            dominance = group["objective"] <= group["objective_at_truth"]
            entry["objective_dominance"] = int(dominance.sum())
        summary[name] = entry
    return summary


def crosscheck(config: ScenarioConfig, run_index: int = 0, tolerance: float = 1e-8) -> CrosscheckResult:
    """Run both JAPE solvers on one run and compare their estimate trajectories."""
    report = run_scenario(config, run_index, estimators=["ra-jape", "ba-jape"], batch_stride=1,
                          keep_trajectory=True)
    recursive = np.array(report.tracks["ra-jape"].trajectory)
    batch = np.array(report.tracks["ba-jape"].trajectory)
    if len(recursive) == 0 or len(recursive) != len(batch):
        return CrosscheckResult(max_difference=float("inf"), epochs=0, tolerance=tolerance)

    # q and -q are the same attitude
    signs = np.sign(np.sum(recursive[:, 1:5] * batch[:, 1:5], axis=1, keepdims=True))
    batch_aligned = batch.copy()
    batch_aligned[:, 1:5] *= signs
    difference = float(np.max(np.abs(recursive[:, 1:] - batch_aligned[:, 1:])))
    logger.info("Cross-check over %d epochs: max difference %.3e", len(recursive), difference)
    return CrosscheckResult(max_difference=difference, epochs=len(recursive), tolerance=tolerance)


@dataclass
class Campaign:
    config: ScenarioConfig
    reports: List[RunReport]
    summary: Dict[str, Dict]


def monte_carlo(config: ScenarioConfig, workers: int = 1) -> Campaign:
    """Run the whole campaign and aggregate the final estimates in run order."""
    reports = run_campaign(config, workers)
    summary = summarize(reports)
    logger.info("Campaign of %d runs done", len(reports))
    return Campaign(config=config, reports=reports, summary=summary)
