#!/usr/bin/env python3
"""
Plant model module.
Holds the nominal per-step plant, the sensor schedule over a frame period, the
lifted deviation system built from them, and the simulators for both.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import DimensionError, InvarianceError, ModeError, ScheduleError, UnstablePlantError

logger = logging.getLogger(__name__)

# None, an (H x dim) array of blocks, or a policy (k, x_k) -> block
InputSource = Union[None, np.ndarray, Sequence, Callable[[int, np.ndarray], np.ndarray]]

TRACE_RESIDUAL_RTOL = 1e-9


def as_matrix(value, rows: Optional[int] = None, cols: Optional[int] = None,
              name: str = "matrix") -> np.ndarray:
    """Convert nested lists to a read-only float matrix, checking its shape."""
    if value is None:
        if rows is None or cols is None:
            raise DimensionError(f"{name} is missing and its shape is unknown")
        arr = np.zeros((rows, cols))
    else:
        arr = np.array(value, dtype=float)
        if arr.size == 0 and rows is not None and cols is not None:
            arr = np.zeros((rows, cols))
        elif arr.ndim != 2:
            raise DimensionError(f"{name} must be two-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DimensionError(f"{name} has non-finite entries")
    if rows is not None and arr.shape[0] != rows:
        raise DimensionError(f"{name} has {arr.shape[0]} rows, expected {rows}")
    if cols is not None and arr.shape[1] != cols:
        raise DimensionError(f"{name} has {arr.shape[1]} columns, expected {cols}")
    arr.setflags(write=False)
    return arr


def spectral_radius(a: np.ndarray) -> float:
    if a.shape[0] == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(a))))


@dataclass(frozen=True, eq=False)
class SensorSpec:
    """One sensor of the nominal plant; missing feedthroughs default to zero."""
    name: str
    c: np.ndarray
    d_u: Optional[np.ndarray] = None
    d_a: Dict[str, np.ndarray] = field(default_factory=dict)
    d_w: Optional[np.ndarray] = None

    @property
    def n_outputs(self) -> int:
        return self.c.shape[0]


@dataclass(frozen=True, eq=False)
class NominalModel:
    """Per-step plant with its sensors, attack modes, noise channel and severity map."""
    a_hat: np.ndarray
    sensors: Sequence[SensorSpec]
    b_a: Dict[str, np.ndarray]
    e_hat: np.ndarray
    b_u_hat: Optional[np.ndarray] = None
    b_w: Optional[np.ndarray] = None
    strict: bool = True

    def __post_init__(self):
        a_hat = as_matrix(self.a_hat, name="a_hat")
        n = a_hat.shape[0]
        if a_hat.shape[1] != n:
            raise DimensionError(f"a_hat must be square, got shape {a_hat.shape}")
        b_u_hat = as_matrix(self.b_u_hat, n, None if self.b_u_hat is not None else 0, name="b_u_hat")
        b_w = as_matrix(self.b_w, n, None if self.b_w is not None else 0, name="b_w")
        e_hat = as_matrix(self.e_hat, None, n, name="e_hat")
        b_a = {str(q): as_matrix(mat, n, None, name=f"b_a[{q}]") for q, mat in self.b_a.items()}

        if not self.sensors:
            raise DimensionError("model has no sensors")
        names = [s.name for s in self.sensors]
        if len(set(names)) != len(names):
            raise DimensionError(f"duplicate sensor names: {names}")

        sensors = []
        for sensor in self.sensors:
            c = as_matrix(sensor.c, None, n, name=f"{sensor.name}.c")
            p = c.shape[0]
            given = {str(k): v for k, v in sensor.d_a.items()}
            unknown = set(given) - set(b_a)
            if unknown:
                raise ModeError(f"sensor {sensor.name} references unknown modes {sorted(unknown)}")
            d_a = {q: as_matrix(given.get(q), p, b_a[q].shape[1], name=f"{sensor.name}.d_a[{q}]")
                   for q in b_a}
            sensors.append(SensorSpec(
                name=sensor.name,
                c=c,
                d_u=as_matrix(sensor.d_u, p, b_u_hat.shape[1], name=f"{sensor.name}.d_u"),
                d_a=d_a,
                d_w=as_matrix(sensor.d_w, p, b_w.shape[1], name=f"{sensor.name}.d_w"),
            ))

        object.__setattr__(self, "a_hat", a_hat)
        object.__setattr__(self, "b_u_hat", b_u_hat)
        object.__setattr__(self, "b_w", b_w)
        object.__setattr__(self, "e_hat", e_hat)
        object.__setattr__(self, "b_a", b_a)
        object.__setattr__(self, "sensors", tuple(sensors))

        rho = spectral_radius(a_hat)
        if rho >= 1.0:
            message = f"nominal dynamics are not stable (spectral radius {rho:.6g})"
            if self.strict:
                raise UnstablePlantError(message)
            logger.warning(message)

    @property
    def n_states(self) -> int:
        return self.a_hat.shape[0]

    @property
    def mode_ids(self) -> List[str]:
        return list(self.b_a)

    def sensor(self, name: str) -> SensorSpec:
        for sensor in self.sensors:
            if sensor.name == name:
                return sensor
        raise ScheduleError(f"unknown sensor: {name}")

    def attack_dim(self, mode: Optional[str]) -> int:
        if mode is None:
            return 0
        if mode not in self.b_a:
            raise ModeError(f"unknown attack mode: {mode}")
        return self.b_a[mode].shape[1]


@dataclass(frozen=True, eq=False)
class SensorSchedule:
    """
    Sample offsets per sensor within one frame of `frame_period` steps.

    Offsets are 0-based. Sensors absent from `samples` are not sampled.
    `delays` holds arrival delays in steps; they never change the lifted
    matrices, only when a window becomes evaluable.
    """
    frame_period: int
    samples: Dict[str, Tuple[int, ...]]
    delays: Dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        period = self.frame_period
        if isinstance(period, bool) or not isinstance(period, (int, np.integer)) or period < 1:
            raise ScheduleError(f"frame period must be a positive integer, got {period!r}")
        samples = {}
        for name, offsets in self.samples.items():
            offsets = tuple(int(t) for t in offsets)
            if any(b <= a for a, b in zip(offsets, offsets[1:])):
                raise ScheduleError(f"offsets of {name} must be strictly increasing: {offsets}")
            if any(t < 0 or t >= period for t in offsets):
                raise ScheduleError(f"offsets of {name} must lie in [0, {period}): {offsets}")
            if offsets:
                samples[str(name)] = offsets
        if not samples:
            raise ScheduleError("schedule has no samples in a frame")
        delays = {str(k): int(v) for k, v in self.delays.items()}
        for name, delay in delays.items():
            if name not in samples:
                raise ScheduleError(f"delay given for unsampled sensor {name}")
            if delay < 0 or delay >= period:
                raise ScheduleError(f"delay of {name} must lie in [0, {period}), got {delay}")
        object.__setattr__(self, "frame_period", int(period))
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "delays", delays)

    @classmethod
    def from_offsets(cls, frame_period: int, samples: Dict[str, Sequence[int]],
                     one_based: bool = False, delays: Optional[Dict[str, int]] = None):
        """Build a schedule, shifting 1-based offsets to the 0-based convention."""
        shift = 1 if one_based else 0
        normalized = {name: tuple(int(t) - shift for t in offsets) for name, offsets in samples.items()}
        return cls(frame_period, normalized, dict(delays or {}))

    @property
    def total_samples(self) -> int:
        return sum(len(v) for v in self.samples.values())

    @property
    def delay_frames(self) -> int:
        """Extra frames to wait before the last sample of a frame has arrived."""
        return 1 if any(d > 0 for d in self.delays.values()) else 0


@dataclass(frozen=True)
class AttackChannels:
    """The matrices of the deviation system seen by one attack mode."""
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    e: np.ndarray
    f: np.ndarray

    @property
    def n_states(self) -> int:
        return self.a.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.b.shape[1]


@dataclass(frozen=True, eq=False)
class LiftedPlant:
    """Lifted deviation system; one frame of this plant spans `frame_period` steps."""
    a: np.ndarray
    b_u: np.ndarray
    c: np.ndarray
    d_u: np.ndarray
    b_a: Dict[str, np.ndarray]
    d_a: Dict[str, np.ndarray]
    b_w: np.ndarray
    d_w: np.ndarray
    e: np.ndarray
    f_a: Dict[str, np.ndarray]
    f_w: np.ndarray
    frame_period: int = 1
    output_labels: Tuple[str, ...] = ()
    severity_labels: Tuple[str, ...] = ()
    delay_frames: int = 0

    def __post_init__(self):
        a = as_matrix(self.a, name="a")
        n = a.shape[0]
        if a.shape[1] != n:
            raise DimensionError(f"a must be square, got shape {a.shape}")
        c = as_matrix(self.c, None, n, name="c")
        e = as_matrix(self.e, None, n, name="e")
        p, pz = c.shape[0], e.shape[0]
        b_u = as_matrix(self.b_u, n, None, name="b_u")
        d_u = as_matrix(self.d_u, p, b_u.shape[1], name="d_u")
        b_w = as_matrix(self.b_w, n, None, name="b_w")
        d_w = as_matrix(self.d_w, p, b_w.shape[1], name="d_w")
        f_w = as_matrix(self.f_w, pz, b_w.shape[1], name="f_w")
        modes = [str(q) for q in self.b_a]
        if set(modes) != set(map(str, self.d_a)) or set(modes) != set(map(str, self.f_a)):
            raise ModeError("b_a, d_a and f_a must cover the same modes")
        d_a_in = {str(k): v for k, v in self.d_a.items()}
        f_a_in = {str(k): v for k, v in self.f_a.items()}
        b_a, d_a, f_a = {}, {}, {}
        for q, mat in self.b_a.items():
            q = str(q)
            b_a[q] = as_matrix(mat, n, None, name=f"b_a[{q}]")
            m = b_a[q].shape[1]
            d_a[q] = as_matrix(d_a_in[q], p, m, name=f"d_a[{q}]")
            f_a[q] = as_matrix(f_a_in[q], pz, m, name=f"f_a[{q}]")
        labels = tuple(self.output_labels) or tuple(f"y{i}" for i in range(p))
        severity_labels = tuple(self.severity_labels) or tuple(f"z{i}" for i in range(pz))
        if len(labels) != p or len(severity_labels) != pz:
            raise DimensionError("label count does not match output or severity dimension")
        for name, value in (("a", a), ("b_u", b_u), ("c", c), ("d_u", d_u), ("b_w", b_w),
                            ("d_w", d_w), ("e", e), ("f_w", f_w), ("b_a", b_a), ("d_a", d_a),
                            ("f_a", f_a), ("output_labels", labels),
                            ("severity_labels", severity_labels)):
            object.__setattr__(self, name, value)

    @classmethod
    def from_matrices(cls, a, c, e, b_a=None, d_a=None, f_a=None, b_w=None, d_w=None,
                      f_w=None, b_u=None, d_u=None, frame_period: int = 1):
        """Build a plant directly; missing channels are zero with matching shapes."""
        a = as_matrix(a, name="a")
        c = as_matrix(c, None, a.shape[0], name="c")
        e = as_matrix(e, None, a.shape[0], name="e")
        n, p, pz = a.shape[0], c.shape[0], e.shape[0]
        b_a = {str(q): as_matrix(mat, n, None, name=f"b_a[{q}]") for q, mat in (b_a or {}).items()}
        d_a = {str(q): mat for q, mat in (d_a or {}).items()}
        f_a = {str(q): mat for q, mat in (f_a or {}).items()}
        for q, mat in b_a.items():
            d_a.setdefault(q, np.zeros((p, mat.shape[1])))
            f_a.setdefault(q, np.zeros((pz, mat.shape[1])))
        b_w = as_matrix(b_w, n, None if b_w is not None else 0, name="b_w")
        m_w = b_w.shape[1]
        b_u = as_matrix(b_u, n, None if b_u is not None else 0, name="b_u")
        m_u = b_u.shape[1]
        return cls(
            a=a, b_u=b_u, c=c,
            d_u=np.zeros((p, m_u)) if d_u is None else d_u,
            b_a=b_a, d_a=d_a,
            b_w=b_w,
            d_w=np.zeros((p, m_w)) if d_w is None else d_w,
            e=e, f_a=f_a,
            f_w=np.zeros((pz, m_w)) if f_w is None else f_w,
            frame_period=frame_period,
        )

    @property
    def n_states(self) -> int:
        return self.a.shape[0]

    @property
    def n_outputs(self) -> int:
        return self.c.shape[0]

    @property
    def n_severity(self) -> int:
        return self.e.shape[0]

    @property
    def n_noise(self) -> int:
        return self.b_w.shape[1]

    @property
    def mode_ids(self) -> List[str]:
        return list(self.b_a)

    def attack_dim(self, mode: Optional[str]) -> int:
        return self.channels(mode).n_inputs

    def channels(self, mode: Optional[str]) -> AttackChannels:
        """Attack-channel view of the plant; `None` means no attack input."""
        if mode is None:
            return AttackChannels(self.a, np.zeros((self.n_states, 0)), self.c,
                                  np.zeros((self.n_outputs, 0)), self.e,
                                  np.zeros((self.n_severity, 0)))
        mode = str(mode)
        if mode not in self.b_a:
            raise ModeError(f"unknown attack mode: {mode} (known: {self.mode_ids})")
        return AttackChannels(self.a, self.b_a[mode], self.c, self.d_a[mode], self.e, self.f_a[mode])


@dataclass(frozen=True, eq=False)
class SimulationTrace:
    """Frame-by-frame record of the deviation system; row k holds frame k."""
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    a: np.ndarray
    w: np.ndarray
    x_final: np.ndarray
    mode: Optional[str] = None
    frame_period: int = 1

    @property
    def horizon(self) -> int:
        return self.x.shape[0]

    @property
    def y_norms(self) -> np.ndarray:
        return np.linalg.norm(self.y, axis=1)

    @property
    def z_norms(self) -> np.ndarray:
        return np.linalg.norm(self.z, axis=1)

    def verify(self, plant: LiftedPlant, rtol: float = TRACE_RESIDUAL_RTOL) -> float:
        """Check the recursion residual; returns it, raises InvarianceError if too large."""
        ch = plant.channels(self.mode)
        states = np.vstack([self.x, self.x_final[None, :]])
        residual = 0.0
        for recorded, maps in ((states[1:], (ch.a, ch.b, plant.b_w)),
                               (self.y, (ch.c, ch.d, plant.d_w)),
                               (self.z, (ch.e, ch.f, plant.f_w))):
            value = self.x @ maps[0].T + self.a @ maps[1].T + self.w @ maps[2].T
            magnitude = (np.abs(self.x) @ np.abs(maps[0]).T + np.abs(self.a) @ np.abs(maps[1]).T
                         + np.abs(self.w) @ np.abs(maps[2]).T)
            if recorded.size:
                excess = np.abs(recorded - value) / (1.0 + magnitude)
                residual = max(residual, float(np.max(excess)))
        if residual > rtol:
            raise InvarianceError(f"trace violates the recursion (relative residual {residual:.3e})")
        return residual


@dataclass(frozen=True, eq=False)
class StepTrace:
    """Per-step record of the nominal-resolution deviation system."""
    x: np.ndarray
    z: np.ndarray
    y: Dict[str, np.ndarray]
    a: np.ndarray
    w: np.ndarray
    x_final: np.ndarray

    @property
    def steps(self) -> int:
        return self.x.shape[0]


def _input_source(source: InputSource, dim: int, name: str):
    """Normalize an input source to a callable (k, x) -> block of size `dim`."""
    if source is None:
        zero = np.zeros(dim)
        return lambda k, x: zero

    if callable(source):
        def policy(k, x):
            block = np.asarray(source(k, x), dtype=float).ravel()
            if block.size != dim:
                raise DimensionError(f"{name} policy returned {block.size} entries at frame {k}, expected {dim}")
            return block
        return policy

    blocks = np.asarray(source, dtype=float)
    if blocks.size == 0:
        blocks = np.zeros((0, dim))
    if blocks.ndim != 2 or blocks.shape[1] != dim:
        raise DimensionError(f"{name} sequence has shape {blocks.shape}, expected (frames, {dim})")
    zero = np.zeros(dim)

    # sequences shorter than the horizon are zero-padded
    return lambda k, x: blocks[k] if k < blocks.shape[0] else zero


def _initial_state(x0, n: int) -> np.ndarray:
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).ravel().copy()
    if x.size != n:
        raise DimensionError(f"x0 has {x.size} entries, expected {n}")
    return x


def ball_noise(rng: np.random.Generator, frames: int, dim: int, bound: float) -> np.ndarray:
    """Noise blocks drawn uniformly from the ball of radius `bound`."""
    if dim == 0 or bound == 0:
        return np.zeros((frames, dim))
    directions = rng.standard_normal((frames, dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    radii = bound * rng.uniform(0.0, 1.0, size=(frames, 1)) ** (1.0 / dim)
    return directions * radii


def simulate(plant: LiftedPlant, mode: Optional[str], x0=None, attack: InputSource = None,
             noise: InputSource = None, horizon: int = 100) -> SimulationTrace:
    """
    Simulate the lifted deviation system for `horizon` frames.

    Args:
        plant: lifted plant
        mode: attack mode id, or None for no attack channel
        x0: initial state deviation (zeros when omitted)
        attack: None, an array of attack blocks, or a policy called as policy(k, x_k)
        noise: None, an array of noise blocks, or a callable(k, x_k)
        horizon: number of frames

    Returns:
        SimulationTrace satisfying the recursion of the plant
    """
    if horizon < 0:
        raise ValueError(f"horizon must be non-negative, got {horizon}")
    ch = plant.channels(mode)
    n = plant.n_states
    attack_at = _input_source(attack, ch.n_inputs, "attack")
    noise_at = _input_source(noise, plant.n_noise, "noise")

    xs = np.zeros((horizon, n))
    ys = np.zeros((horizon, plant.n_outputs))
    zs = np.zeros((horizon, plant.n_severity))
    a_rec = np.zeros((horizon, ch.n_inputs))
    w_rec = np.zeros((horizon, plant.n_noise))

    x = _initial_state(x0, n)
    for k in range(horizon):
        a_k = attack_at(k, x.copy())
        w_k = noise_at(k, x.copy())
        xs[k], a_rec[k], w_rec[k] = x, a_k, w_k
        ys[k] = ch.c @ x + ch.d @ a_k + plant.d_w @ w_k
        zs[k] = ch.e @ x + ch.f @ a_k + plant.f_w @ w_k
        x = ch.a @ x + ch.b @ a_k + plant.b_w @ w_k

    trace = SimulationTrace(xs, ys, zs, a_rec, w_rec, x, mode=mode, frame_period=plant.frame_period)
    trace.verify(plant)
    return trace


def simulate_steps(model: NominalModel, mode: Optional[str], x0=None, attack: InputSource = None,
                   noise: InputSource = None, steps: int = 100) -> StepTrace:
    """Step-by-step simulation of the per-step deviation system, every sensor every step."""
    n = model.n_states
    m_a = model.attack_dim(mode)
    b_a = model.b_a[mode] if mode is not None else np.zeros((n, 0))
    attack_at = _input_source(attack, m_a, "attack")
    noise_at = _input_source(noise, model.b_w.shape[1], "noise")

    xs = np.zeros((steps, n))
    zs = np.zeros((steps, model.e_hat.shape[0]))
    ys = {s.name: np.zeros((steps, s.n_outputs)) for s in model.sensors}
    a_rec = np.zeros((steps, m_a))
    w_rec = np.zeros((steps, model.b_w.shape[1]))

    x = _initial_state(x0, n)
    for t in range(steps):
        a_t = attack_at(t, x.copy())
        w_t = noise_at(t, x.copy())
        xs[t], a_rec[t], w_rec[t] = x, a_t, w_t
        zs[t] = model.e_hat @ x
        for sensor in model.sensors:
            d_a = sensor.d_a[mode] if mode is not None else np.zeros((sensor.n_outputs, 0))
            ys[sensor.name][t] = sensor.c @ x + d_a @ a_t + sensor.d_w @ w_t
        x = model.a_hat @ x + b_a @ a_t + model.b_w @ w_t
    return StepTrace(xs, zs, ys, a_rec, w_rec, x)


def sample_outputs(steps: StepTrace, model: NominalModel, schedule: SensorSchedule) -> np.ndarray:
    """Pick the scheduled samples out of a per-step trace, in lifted output order."""
    period = schedule.frame_period
    frames = steps.steps // period
    rows = []
    for k in range(frames):
        row = []
        for sensor in model.sensors:
            for t in schedule.samples.get(sensor.name, ()):
                row.append(steps.y[sensor.name][k * period + t])
        rows.append(np.concatenate(row))
    width = sum(model.sensor(name).n_outputs * len(offs) for name, offs in schedule.samples.items())
    return np.array(rows) if rows else np.zeros((0, width))


def stack_steps(step_inputs: np.ndarray, frame_period: int) -> np.ndarray:
    """Group per-step inputs (S x m) into frame blocks (S/T x T*m)."""
    arr = np.asarray(step_inputs, dtype=float)
    if arr.ndim != 2 or arr.shape[0] % frame_period:
        raise DimensionError(f"cannot split {arr.shape} into frames of {frame_period} steps")
    return arr.reshape(arr.shape[0] // frame_period, frame_period * arr.shape[1])


def unstack_blocks(blocks: np.ndarray, frame_period: int) -> np.ndarray:
    """Inverse of stack_steps."""
    arr = np.asarray(blocks, dtype=float)
    if arr.ndim != 2 or arr.shape[1] % frame_period:
        raise DimensionError(f"blocks of width {arr.shape[1]} do not split into {frame_period} steps")
    return arr.reshape(arr.shape[0] * frame_period, arr.shape[1] // frame_period)


def replay_steps(model: NominalModel, trace: SimulationTrace) -> StepTrace:
    """Re-run a lifted trace at step resolution from its recorded inputs."""
    period = trace.frame_period
    return simulate_steps(
        model, trace.mode, trace.x[0] if trace.horizon else None,
        attack=unstack_blocks(trace.a, period),
        noise=unstack_blocks(trace.w, period),
        steps=trace.horizon * period,
    )


def lift(model: NominalModel, schedule: SensorSchedule) -> LiftedPlant:
    """
    Lift the per-step plant over one frame period.

    Output rows are sensor-major (model order), then offset-major. Every
    feedthrough block row is causal: the sample at offset t sees inputs at
    offsets below t through the dynamics plus its own direct feedthrough.
    """
    period = schedule.frame_period
    known = {s.name for s in model.sensors}
    unknown = set(schedule.samples) - known
    if unknown:
        raise ScheduleError(f"schedule samples unknown sensors: {sorted(unknown)}")

    n = model.n_states
    powers = [np.eye(n)]
    for _ in range(period):
        powers.append(powers[-1] @ model.a_hat)

    def input_row(b_hat):
        return np.hstack([powers[period - 1 - s] @ b_hat for s in range(period)])

    def feedthrough_row(row_map, b_hat, d_hat, t):
        blocks = []
        for s in range(period):
            if s < t:
                blocks.append(row_map @ powers[t - 1 - s] @ b_hat)
            elif s == t:
                blocks.append(d_hat)
            else:
                blocks.append(np.zeros((row_map.shape[0], b_hat.shape[1])))
        return np.hstack(blocks)

    c_rows, d_u_rows, d_w_rows, labels = [], [], [], []
    d_a_rows = {q: [] for q in model.mode_ids}
    for sensor in model.sensors:
        for t in schedule.samples.get(sensor.name, ()):
            c_rows.append(sensor.c @ powers[t])
            d_u_rows.append(feedthrough_row(sensor.c, model.b_u_hat, sensor.d_u, t))
            d_w_rows.append(feedthrough_row(sensor.c, model.b_w, sensor.d_w, t))
            for q in model.mode_ids:
                d_a_rows[q].append(feedthrough_row(sensor.c, model.b_a[q], sensor.d_a[q], t))
            labels.extend(f"{sensor.name}[{i}]@{t}" for i in range(sensor.n_outputs))

    pz = model.e_hat.shape[0]

    def severity_rows(b_hat):
        zero = np.zeros((pz, b_hat.shape[1]))
        return np.vstack([feedthrough_row(model.e_hat, b_hat, zero, s) for s in range(period)])

    plant = LiftedPlant(
        a=powers[period],
        b_u=input_row(model.b_u_hat),
        c=np.vstack(c_rows),
        d_u=np.vstack(d_u_rows),
        b_a={q: input_row(model.b_a[q]) for q in model.mode_ids},
        d_a={q: np.vstack(d_a_rows[q]) for q in model.mode_ids},
        b_w=input_row(model.b_w),
        d_w=np.vstack(d_w_rows),
        e=np.vstack([model.e_hat @ powers[s] for s in range(period)]),
        f_a={q: severity_rows(model.b_a[q]) for q in model.mode_ids},
        f_w=severity_rows(model.b_w),
        frame_period=period,
        output_labels=tuple(labels),
        severity_labels=tuple(f"z[{i}]@{s}" for s in range(period) for i in range(pz)),
        delay_frames=schedule.delay_frames,
    )
    logger.info(f"Lifted plant: n={plant.n_states}, p={plant.n_outputs}, T={period}, "
                f"modes={plant.mode_ids}")
    return plant


def observability_stack(a: np.ndarray, c: np.ndarray, length: int) -> np.ndarray:
    """Stack C A^j for j = 0..length-1."""
    blocks, power = [], np.eye(a.shape[0])
    for _ in range(length):
        blocks.append(c @ power)
        power = a @ power
    return np.vstack(blocks) if blocks else np.zeros((0, a.shape[0]))


def markov_stack(a: np.ndarray, b: np.ndarray, c: np.ndarray, d: np.ndarray, length: int) -> np.ndarray:
    """Block lower-triangular input-to-output map over `length` frames."""
    p, m = c.shape[0], b.shape[1]
    markov = [d]
    power = np.eye(a.shape[0])
    for _ in range(1, length):
        markov.append(c @ power @ b)
        power = a @ power
    out = np.zeros((length * p, length * m))
    for i in range(length):
        for j in range(i + 1):
            out[i * p:(i + 1) * p, j * m:(j + 1) * m] = markov[i - j]
    return out
