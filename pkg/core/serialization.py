#!/usr/bin/env python3
"""
Serialization module.
JSON codecs for models, schedules, reports and attack plans, and CSV writers
for traces, identification histories and subspace dumps. Matrices are stored
row-major as nested lists; complex arrays as {"re": ..., "im": ...}.
"""

import csv
import json
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .detect import DetectabilityReport, EigenWitness, KernelWitness, NullingWitness, Thresholds
from .errors import LiftGuardError, ModelFormatError
from .identify import IdentifiabilityReport, IdentificationHistory
from .model import LiftedPlant, NominalModel, SensorSchedule, SensorSpec, SimulationTrace
from .subspace import Subspace
from .synth import AttackPlan, Certificate, PLAN_KINDS

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
FLOAT_FORMAT = ".17g"

MODEL_KEYS = {"a_hat", "sensors", "modes", "e_hat", "b_u_hat", "b_w", "schedule", "strict"}
SENSOR_KEYS = {"name", "c", "d_u", "d_a", "d_w"}
SCHEDULE_KEYS = {"frame_period", "samples", "delays", "one_based"}


def encode_array(value) -> object:
    if value is None:
        return None
    arr = np.asarray(value)
    if np.iscomplexobj(arr):
        return {"re": arr.real.tolist(), "im": arr.imag.tolist()}
    return arr.astype(float).tolist()


def decode_array(value) -> Optional[np.ndarray]:
    if value is None:
        return None
    if isinstance(value, dict):
        return np.array(value["re"], dtype=float) + 1j * np.array(value["im"], dtype=float)
    return np.array(value, dtype=float)


def encode_complex(value: complex) -> Dict[str, float]:
    return {"re": float(np.real(value)), "im": float(np.imag(value))}


def _reject_unknown(data: Dict, allowed: set, where: str):
    if not isinstance(data, dict):
        raise ModelFormatError(f"{where} must be a JSON object")
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ModelFormatError(f"unknown keys in {where}: {unknown}")


def read_json(path: PathLike) -> Dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise ModelFormatError(f"{path} is not valid JSON: {e}") from e


def write_json(path: PathLike, data: Dict):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")
    logger.debug(f"wrote {path}")


# Models and schedules

def schedule_to_dict(schedule: SensorSchedule) -> Dict:
    return {
        "frame_period": schedule.frame_period,
        "samples": {name: list(offsets) for name, offsets in schedule.samples.items()},
        "delays": dict(schedule.delays),
    }


def schedule_from_dict(data: Dict) -> SensorSchedule:
    _reject_unknown(data, SCHEDULE_KEYS, "schedule")
    if "frame_period" not in data or "samples" not in data:
        raise ModelFormatError("schedule needs 'frame_period' and 'samples'")
    return SensorSchedule.from_offsets(data["frame_period"], data["samples"],
                                       one_based=bool(data.get("one_based", False)),
                                       delays=data.get("delays"))


def model_to_dict(model: NominalModel, schedule: Optional[SensorSchedule] = None) -> Dict:
    data = {
        "a_hat": encode_array(model.a_hat),
        "b_u_hat": encode_array(model.b_u_hat),
        "b_w": encode_array(model.b_w),
        "e_hat": encode_array(model.e_hat),
        "modes": {q: encode_array(b) for q, b in model.b_a.items()},
        "sensors": [
            {
                "name": s.name,
                "c": encode_array(s.c),
                "d_u": encode_array(s.d_u),
                "d_a": {q: encode_array(d) for q, d in s.d_a.items()},
                "d_w": encode_array(s.d_w),
            }
            for s in model.sensors
        ],
        "strict": model.strict,
    }
    if schedule is not None:
        data["schedule"] = schedule_to_dict(schedule)
    return data


def model_from_dict(data: Dict) -> Tuple[NominalModel, Optional[SensorSchedule]]:
    _reject_unknown(data, MODEL_KEYS, "model")
    for key in ("a_hat", "sensors", "e_hat"):
        if key not in data:
            raise ModelFormatError(f"model is missing '{key}'")
    sensors = []
    for i, entry in enumerate(data["sensors"]):
        _reject_unknown(entry, SENSOR_KEYS, f"sensor #{i}")
        if "name" not in entry or "c" not in entry:
            raise ModelFormatError(f"sensor #{i} needs 'name' and 'c'")
        sensors.append(SensorSpec(
            name=str(entry["name"]),
            c=decode_array(entry["c"]),
            d_u=decode_array(entry.get("d_u")),
            d_a={str(q): decode_array(d) for q, d in (entry.get("d_a") or {}).items()},
            d_w=decode_array(entry.get("d_w")),
        ))
    model = NominalModel(
        a_hat=decode_array(data["a_hat"]),
        sensors=sensors,
        b_a={str(q): decode_array(b) for q, b in (data.get("modes") or {}).items()},
        e_hat=decode_array(data["e_hat"]),
        b_u_hat=decode_array(data.get("b_u_hat")),
        b_w=decode_array(data.get("b_w")),
        strict=bool(data.get("strict", True)),
    )
    schedule = schedule_from_dict(data["schedule"]) if data.get("schedule") is not None else None
    return model, schedule


def load_model(path: PathLike) -> Tuple[NominalModel, Optional[SensorSchedule]]:
    """Read a model file; the schedule is None when the file has none."""
    try:
        return model_from_dict(read_json(path))
    except (TypeError, KeyError, AttributeError) as e:
        raise ModelFormatError(f"{path}: malformed model: {e}") from e


def save_model(path: PathLike, model: NominalModel, schedule: Optional[SensorSchedule] = None):
    write_json(path, model_to_dict(model, schedule))


def load_schedule(path: PathLike) -> SensorSchedule:
    return schedule_from_dict(read_json(path))


def plant_to_dict(plant: LiftedPlant) -> Dict:
    return {
        "frame_period": plant.frame_period,
        "delay_frames": plant.delay_frames,
        "a": encode_array(plant.a),
        "b_u": encode_array(plant.b_u),
        "c": encode_array(plant.c),
        "d_u": encode_array(plant.d_u),
        "b_a": {q: encode_array(m) for q, m in plant.b_a.items()},
        "d_a": {q: encode_array(m) for q, m in plant.d_a.items()},
        "f_a": {q: encode_array(m) for q, m in plant.f_a.items()},
        "b_w": encode_array(plant.b_w),
        "d_w": encode_array(plant.d_w),
        "e": encode_array(plant.e),
        "f_w": encode_array(plant.f_w),
        "output_labels": list(plant.output_labels),
        "severity_labels": list(plant.severity_labels),
    }


# Reports

def _witness_to_dict(witness) -> Optional[Dict]:
    if witness is None:
        return None
    if isinstance(witness, KernelWitness):
        return {"kind": "kernel-direction", "direction": encode_array(witness.direction),
                "severity_gain": witness.severity_gain}
    if isinstance(witness, NullingWitness):
        return {"kind": "nulling-column", "power": witness.power, "column": witness.column,
                "vector": encode_array(witness.vector), "injection": encode_array(witness.injection)}
    if isinstance(witness, EigenWitness):
        return {"kind": "eigen-chain", "eigenvalue": encode_complex(witness.eigenvalue),
                "modulus": witness.modulus, "jordan_size": witness.jordan_size,
                "multiplicity": witness.multiplicity, "chain": encode_array(witness.chain),
                "gain": encode_array(witness.gain)}
    raise LiftGuardError(f"unknown witness type {type(witness).__name__}")


def report_to_dict(report: DetectabilityReport) -> Dict:
    data = {
        "mode": report.mode,
        "verdict": report.verdict,
        "triggered_condition": report.triggered_condition,
        "witness": _witness_to_dict(report.witness),
        "dim_v": report.v.dim,
        "dim_v_star": report.v_star.dim,
        "friend": None if report.friend is None else {
            "m": encode_array(report.friend.m), "n": encode_array(report.friend.n_mat)},
        "eigenvalues": [
            {"eigenvalue": encode_complex(s.eigenvalue), "modulus": s.modulus,
             "multiplicity": s.multiplicity, "jordan_size": s.jordan_size,
             "controllable": s.controllable, "borderline": s.borderline}
            for s in report.eigenvalues
        ],
        "borderline_flags": list(report.borderline_flags),
        "low_confidence": report.low_confidence,
        "tolerances": dict(report.tolerances),
        "severity_bound": None,
    }
    if report.severity_bound is not None:
        data["severity_bound"] = {"gain": report.severity_bound.gain,
                                  "components": dict(report.severity_bound.components),
                                  "provenance": report.severity_bound.provenance}
    return data


def thresholds_to_dict(thresholds: Thresholds) -> Dict:
    return dict(vars(thresholds))


def identifiability_to_dict(report: IdentifiabilityReport) -> Dict:
    return {
        "modes": list(report.modes),
        "identifiable": report.identifiable,
        "pairs": [
            {"p": v.p, "q": v.q, "discernible": v.discernible,
             "failed_condition": v.failed_condition, "witness_kind": v.witness_kind,
             "witness": encode_array(v.witness), "residual": v.residual}
            for v in report.pairs.values()
        ],
    }


# Plans

def plan_to_dict(plan: AttackPlan) -> Dict:
    cert = plan.certificate
    return {
        "kind": plan.kind,
        "mode": plan.mode,
        "scale": plan.scale,
        "prelude": encode_array(plan.prelude),
        "feedback": encode_array(plan.feedback),
        "feedforward": encode_array(plan.feedforward),
        "certificate": {
            "growth": cert.growth,
            "stealth_bound": cert.stealth_bound,
            "alpha": cert.alpha,
            "rate": cert.rate,
            "eigenvalue": encode_complex(cert.eigenvalue),
            "i_star": cert.i_star,
            "eta": encode_array(cert.eta),
            "prelude_severity": encode_array(cert.prelude_severity),
            "prelude_length": cert.prelude_length,
            "peak_frame": cert.peak_frame,
            "peak_severity": encode_array(cert.peak_severity),
        },
    }


def plan_from_dict(data: Dict) -> AttackPlan:
    try:
        if data["kind"] not in PLAN_KINDS:
            raise ModelFormatError(f"unknown plan kind {data['kind']!r}")
        c = data["certificate"]
        cert = Certificate(
            growth=c["growth"],
            stealth_bound=float(c["stealth_bound"]),
            alpha=float(c["alpha"]),
            rate=float(c["rate"]),
            eigenvalue=complex(c["eigenvalue"]["re"], c["eigenvalue"]["im"]),
            i_star=c["i_star"],
            eta=decode_array(c["eta"]),
            prelude_severity=decode_array(c["prelude_severity"]),
            prelude_length=int(c["prelude_length"]),
            peak_frame=c["peak_frame"],
            peak_severity=decode_array(c["peak_severity"]),
        )
        prelude = decode_array(data["prelude"])
        return AttackPlan(
            kind=data["kind"],
            mode=data["mode"],
            prelude=prelude.reshape(prelude.shape[0], -1) if prelude.size else prelude,
            feedback=decode_array(data["feedback"]),
            scale=float(data["scale"]),
            certificate=cert,
            feedforward=decode_array(data["feedforward"]),
        )
    except (KeyError, TypeError) as e:
        raise ModelFormatError(f"malformed attack plan: {e}") from e


def save_plan(path: PathLike, plan: AttackPlan):
    write_json(path, plan_to_dict(plan))


def load_plan(path: PathLike) -> AttackPlan:
    return plan_from_dict(read_json(path))


# CSV writers

def _fmt(values: Iterable[float]) -> List[str]:
    return [format(float(v), FLOAT_FORMAT) for v in values]


def write_trace_csv(path: PathLike, trace: SimulationTrace, output_labels: Sequence[str] = (),
                    severity_labels: Sequence[str] = ()):
    """One row per frame: norms, then states, outputs, severities, attack blocks and noise."""
    y_labels = list(output_labels) or [f"y{i}" for i in range(trace.y.shape[1])]
    z_labels = list(severity_labels) or [f"z{i}" for i in range(trace.z.shape[1])]
    header = (["frame", "y_norm", "z_norm"] + [f"x{i}" for i in range(trace.x.shape[1])]
              + y_labels + z_labels
              + [f"a{i}" for i in range(trace.a.shape[1])]
              + [f"w{i}" for i in range(trace.w.shape[1])])
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        y_norms, z_norms = trace.y_norms, trace.z_norms
        for k in range(trace.horizon):
            writer.writerow([k] + _fmt([y_norms[k], z_norms[k]]) + _fmt(trace.x[k]) + _fmt(trace.y[k])
                            + _fmt(trace.z[k]) + _fmt(trace.a[k]) + _fmt(trace.w[k]))


def write_identification_csv(path: PathLike, history: IdentificationHistory):
    """frame, r^q per mode, bitmask of the estimate (bit i = i-th mode)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["frame"] + [f"r_{q}" for q in history.modes] + ["estimate_mask"])
        for step in history.steps:
            writer.writerow([step.frame] + _fmt(step.residuals[q] for q in history.modes)
                            + [history.membership_mask(step)])


def write_subspace_csv(path: PathLike, subspace: Subspace):
    """Basis columns of a subspace, one ambient coordinate per row."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow([f"v{j}" for j in range(subspace.dim)])
        for row in subspace.basis:
            writer.writerow(_fmt(row))
