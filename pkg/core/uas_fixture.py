#!/usr/bin/env python3
"""
UAS case study.
Planar UAS navigation with an observer-based guidance loop and a spoofable
on-board GPS, plus an optional secure off-board position stream every five
steps. Reproduces the vulnerability, detection and identification runs.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
from scipy import stats
from tqdm import tqdm

from .detect import DetectabilityReport, Thresholds, alarm, analyze_detectability, compute_thresholds
from .errors import LiftGuardError
from .identify import (
    IdentifiabilityReport,
    IdentificationHistory,
    build_residual_bank,
    calibrate_identification_thresholds,
    check_identifiable,
    run_identification,
)
from .model import (
    LiftedPlant,
    NominalModel,
    SensorSchedule,
    SensorSpec,
    SimulationTrace,
    ball_noise,
    lift,
    simulate,
    stack_steps,
)
from .serialization import (
    identifiability_to_dict,
    plan_to_dict,
    report_to_dict,
    thresholds_to_dict,
    write_identification_csv,
    write_json,
    write_trace_csv,
)
from .synth import AttackPlan, synthesize

logger = logging.getLogger(__name__)

ONBOARD = "onboard"
OFFBOARD = "offboard"
GPS_MODE = "gps"
NORTH_MODE = "1"
EAST_MODE = "2"


@dataclass(frozen=True)
class UasScenario:
    """Kinematics, guidance gain and observer gain of the planar UAS."""
    dt: float = 0.1
    observer_position_gain: float = 1.09
    observer_velocity_gain: float = 0.94
    position_gain: float = 9.89
    velocity_gain: float = 7.24
    frame_period: int = 5
    offboard_delay: int = 4

    @property
    def a_o(self) -> np.ndarray:
        i2 = np.eye(2)
        return np.block([[i2, self.dt * i2], [np.zeros((2, 2)), i2]])

    @property
    def b_o(self) -> np.ndarray:
        return np.vstack([0.5 * self.dt ** 2 * np.eye(2), self.dt * np.eye(2)])

    @property
    def c_o(self) -> np.ndarray:
        return np.hstack([np.eye(2), np.zeros((2, 2))])

    @property
    def l_o(self) -> np.ndarray:
        return np.vstack([self.observer_position_gain * np.eye(2), self.observer_velocity_gain * np.eye(2)])

    @property
    def k_o(self) -> np.ndarray:
        return np.hstack([self.position_gain * np.eye(2), self.velocity_gain * np.eye(2)])

    @property
    def b_u_hat(self) -> np.ndarray:
        """Reference channel: u = -K_o (xhat - r) pushes plant and observer alike."""
        return np.vstack([self.b_o @ self.k_o, self.b_o @ self.k_o])

    @property
    def a_hat(self) -> np.ndarray:
        a_o, b_o, c_o, l_o, k_o = self.a_o, self.b_o, self.c_o, self.l_o, self.k_o
        return np.block([[a_o, -b_o @ k_o], [l_o @ c_o, a_o - b_o @ k_o - l_o @ c_o]])

    def attack_channels(self, mode: str):
        """(B^a, D^a on the on-board sensor) for a spoofing mode."""
        columns = {GPS_MODE: [0, 1], NORTH_MODE: [0], EAST_MODE: [1]}[mode]
        select = np.eye(2)[:, columns]
        b_a = np.vstack([np.zeros((4, len(columns))), self.l_o @ select])
        d_a = np.vstack([select, np.zeros((4, len(columns)))])
        return b_a, d_a


def build_uas_model(scenario: Optional[UasScenario] = None) -> NominalModel:
    """Per-step deviation model with modes "gps" (both axes), "1" (north) and "2" (east)."""
    s = scenario or UasScenario()
    zeros = np.zeros
    b_w = np.block([[s.b_o, zeros((4, 2))], [zeros((4, 2)), s.l_o]])
    channels = {q: s.attack_channels(q) for q in (GPS_MODE, NORTH_MODE, EAST_MODE)}
    onboard = SensorSpec(
        name=ONBOARD,
        c=np.block([[s.c_o, zeros((2, 4))], [zeros((4, 4)), np.eye(4)]]),
        d_a={q: d for q, (_, d) in channels.items()},
        d_w=np.block([[zeros((2, 2)), np.eye(2)], [zeros((4, 2)), zeros((4, 2))]]),
    )
    offboard = SensorSpec(name=OFFBOARD, c=np.hstack([s.c_o, zeros((2, 4))]))
    return NominalModel(
        a_hat=s.a_hat,
        sensors=[onboard, offboard],
        b_a={q: b for q, (b, _) in channels.items()},
        e_hat=np.hstack([np.eye(2), zeros((2, 6))]),
        b_u_hat=s.b_u_hat,
        b_w=b_w,
    )


def per_step_schedule() -> SensorSchedule:
    """Every step, on-board sensor only."""
    return SensorSchedule(1, {ONBOARD: (0,)})


def lifted_schedule(scenario: Optional[UasScenario] = None) -> SensorSchedule:
    """On-board every step, off-board once per frame with its arrival delay."""
    s = scenario or UasScenario()
    return SensorSchedule(
        s.frame_period,
        {ONBOARD: tuple(range(s.frame_period)), OFFBOARD: (0,)},
        {OFFBOARD: s.offboard_delay},
    )


def _per_step_plan(model: NominalModel, mode: str, budget: float):
    plant = lift(model, per_step_schedule())
    report = analyze_detectability(plant, mode)
    if not report.vulnerable:
        raise LiftGuardError(f"per-step plant is not vulnerable in mode {mode}; no stealthy attack to replay")
    return plant, report, synthesize(plant, report, epsilon_budget=budget)


def _replayed_attack(step_plant: LiftedPlant, plan: AttackPlan, mode: str, frames: int, period: int) -> np.ndarray:
    steps = simulate(step_plant, mode, attack=plan, horizon=frames * period)
    return stack_steps(steps.a, period)


@dataclass
class VulnerabilityResult:
    report: DetectabilityReport
    plan: AttackPlan
    trace: SimulationTrace
    slope: float
    r_squared: float
    budget: float
    disengaged_trace: Optional[SimulationTrace] = None


def experiment_vulnerability(steps: int = 500, budget: float = 1e-3, disengage_at: Optional[int] = None,
                             scenario: Optional[UasScenario] = None) -> VulnerabilityResult:
    """
    Per-step plant under the synthesized stealthy GPS attack.

    ||z_t|| is regressed on t after the steering prelude. With
    `disengage_at` a second run stops attacking at that step.
    """
    model = build_uas_model(scenario)
    plant, report, plan = _per_step_plan(model, GPS_MODE, budget)
    trace = simulate(plant, GPS_MODE, attack=plan, horizon=steps)
    start = plan.certificate.prelude_length
    t = np.arange(start, steps)
    fit = stats.linregress(t, trace.z_norms[start:])
    logger.info(f"vulnerability run: slope {fit.slope:.6g}, R^2 {fit.rvalue ** 2:.6f}, "
                f"max |y| {trace.y_norms.max():.3e}")

    disengaged = None
    if disengage_at is not None:
        def stopped(k, x):
            return plan(k, x) if k < disengage_at else np.zeros(plan.attack_dim)
        disengaged = simulate(plant, GPS_MODE, attack=stopped, horizon=steps)
    return VulnerabilityResult(report, plan, trace, float(fit.slope), float(fit.rvalue ** 2), budget, disengaged)


@dataclass
class DetectionResult:
    report: DetectabilityReport
    thresholds: Thresholds
    false_alarms: int
    runs: int
    attack_trace: SimulationTrace
    alarm_frame: Optional[int]
    exceed_frame: Optional[int]
    attack_scale: float


def experiment_detection(frames: int = 200, runs: int = 100, seed: int = 0, noise_bound: float = 1.0,
                         severity_factor: float = 2.0, budget: float = 1e-3, progress: bool = False,
                         scenario: Optional[UasScenario] = None) -> DetectionResult:
    """
    Lifted plant with the off-board stream: noise-only false alarms, then the
    per-step stealthy attack replayed frame by frame.

    The replayed attack is scaled so that the largest severity over the run
    equals `severity_factor` times the certified bound delta.
    """
    s = scenario or UasScenario()
    model = build_uas_model(s)
    plant = lift(model, lifted_schedule(s))
    report = analyze_detectability(plant, GPS_MODE)
    if report.vulnerable:
        raise LiftGuardError("lifted plant is unexpectedly vulnerable")
    thresholds = compute_thresholds(plant, GPS_MODE, noise_bound=noise_bound, report=report)
    rng = np.random.default_rng(seed)

    false_alarms = 0
    for _ in tqdm(range(runs), disable=not progress, desc="noise-only runs"):
        noise = ball_noise(rng, frames, plant.n_noise, noise_bound)
        trace = simulate(plant, GPS_MODE, noise=noise, horizon=frames)
        if alarm(trace, thresholds.epsilon) is not None:
            false_alarms += 1

    step_plant, _, plan = _per_step_plan(model, GPS_MODE, budget)
    attack = _replayed_attack(step_plant, plan, GPS_MODE, frames, s.frame_period)
    unit = simulate(plant, GPS_MODE, attack=attack, horizon=frames)
    peak = float(unit.z_norms.max())
    scale = severity_factor * thresholds.delta / peak if peak > 0 else 0.0
    noise = ball_noise(rng, frames, plant.n_noise, noise_bound)
    trace = simulate(plant, GPS_MODE, attack=scale * attack, noise=noise, horizon=frames)
    alarm_frame = alarm(trace, thresholds.epsilon)
    above = np.nonzero(trace.z_norms >= thresholds.delta)[0]
    exceed_frame = int(above[0]) if above.size else None
    logger.info(f"detection run: {false_alarms}/{runs} false alarms, alarm at {alarm_frame}, "
                f"|z| >= delta from {exceed_frame}")
    return DetectionResult(report, thresholds, false_alarms, runs, trace, alarm_frame, exceed_frame, scale)


@dataclass
class IdentificationResult:
    true_mode: Optional[str]
    identifiability: IdentifiabilityReport
    thresholds: Dict[str, float]
    history: IdentificationHistory
    trace: SimulationTrace
    attack_scale: float
    modes: List[str] = field(default_factory=lambda: [NORTH_MODE, EAST_MODE])


def experiment_identification(true_mode: Optional[str] = NORTH_MODE, frames: int = 60, seed: int = 0,
                              noise_bound: float = 1.0, severity_factor: float = 4.0, budget: float = 1e-3,
                              scenario: Optional[UasScenario] = None) -> IdentificationResult:
    """
    Residual-based identification between the north and east spoofing modes.

    The replayed attack is scaled so that, without noise, the largest
    residual of the competing mode is `severity_factor` times its threshold.
    `true_mode=None` runs noise only.
    """
    s = scenario or UasScenario()
    model = build_uas_model(s)
    plant = lift(model, lifted_schedule(s))
    modes = [NORTH_MODE, EAST_MODE]
    identifiability = check_identifiable(plant, modes)
    thresholds = calibrate_identification_thresholds(plant, modes, noise_bound)
    bank = build_residual_bank(plant, modes, thresholds)
    rng = np.random.default_rng(seed)
    noise = ball_noise(rng, frames, plant.n_noise, noise_bound)

    scale, attack, mode = 0.0, None, true_mode
    if true_mode is not None:
        other = EAST_MODE if true_mode == NORTH_MODE else NORTH_MODE
        step_plant, _, plan = _per_step_plan(model, true_mode, budget)
        attack = _replayed_attack(step_plant, plan, true_mode, frames, s.frame_period)
        unit = simulate(plant, true_mode, attack=attack, horizon=frames)
        peak = float(run_identification(bank, unit).residual_series(other).max())
        scale = severity_factor * thresholds[other] / peak if peak > 0 else 0.0
        attack = scale * attack
    else:
        mode = NORTH_MODE
    trace = simulate(plant, mode, attack=attack, noise=noise, horizon=frames)
    history = run_identification(bank, trace)
    logger.info(f"identification run (true mode {true_mode}): final estimate {history.final_estimate}")
    return IdentificationResult(true_mode, identifiability, thresholds, history, trace, scale, modes)


def run_all(out_dir: Union[str, Path], seed: int = 0, noise_bound: float = 1.0, runs: int = 100,
            progress: bool = False) -> Dict[str, Dict]:
    """Run the three experiments and write their CSV and JSON bundles under `out_dir`."""
    out = Path(out_dir)
    summary: Dict[str, Dict] = {}
    try:
        vul = experiment_vulnerability()
        write_trace_csv(out / "vulnerability" / "trace.csv", vul.trace)
        summary["vulnerability"] = {
            "report": report_to_dict(vul.report),
            "plan": plan_to_dict(vul.plan),
            "slope": vul.slope,
            "r_squared": vul.r_squared,
            "max_output_norm": float(vul.trace.y_norms.max()),
        }
        write_json(out / "vulnerability" / "report.json", summary["vulnerability"])

        det = experiment_detection(runs=runs, seed=seed, noise_bound=noise_bound, progress=progress)
        write_trace_csv(out / "detection" / "trace.csv", det.attack_trace)
        summary["detection"] = {
            "report": report_to_dict(det.report),
            "thresholds": thresholds_to_dict(det.thresholds),
            "false_alarms": det.false_alarms,
            "runs": det.runs,
            "alarm_frame": det.alarm_frame,
            "exceed_frame": det.exceed_frame,
            "attack_scale": det.attack_scale,
        }
        write_json(out / "detection" / "report.json", summary["detection"])

        for mode in (NORTH_MODE, EAST_MODE):
            ident = experiment_identification(mode, seed=seed, noise_bound=noise_bound)
            folder = out / f"identification_mode{mode}"
            write_identification_csv(folder / "residuals.csv", ident.history)
            write_trace_csv(folder / "trace.csv", ident.trace)
            summary[f"identification_mode{mode}"] = {
                "identifiability": identifiability_to_dict(ident.identifiability),
                "thresholds": ident.thresholds,
                "final_estimate": list(ident.history.final_estimate),
                "collapse_frame": ident.history.collapse_frame(),
                "events": ident.history.events,
                "attack_scale": ident.attack_scale,
            }
            write_json(folder / "report.json", summary[f"identification_mode{mode}"])
    except LiftGuardError as e:
        logger.error(f"UAS experiments failed: {e}")
        raise
    return summary
