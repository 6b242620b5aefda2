#!/usr/bin/env python3
"""
Attack mode identification module.
Pairwise discernibility on the augmented pair system, projection residuals
over an n+2 frame window and the elimination logic that shrinks the
mode-set estimate after an alarm.
"""

import itertools
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as sla
from tqdm import tqdm

from .config import get_setting
from .errors import ModeError, UnstablePlantError, WindowError
from .model import (
    LiftedPlant,
    SimulationTrace,
    ball_noise,
    markov_stack,
    observability_stack,
    simulate,
    spectral_radius,
)
from .subspace import (
    Friend,
    Subspace,
    compute_friend,
    controllable_subspace,
    kernel_basis,
    max_output_nulling,
    range_basis,
    v_star,
)

logger = logging.getLogger(__name__)

UNMODELED_ATTACK = "unmodeled-attack"


def _scale(*mats) -> float:
    norms = [float(np.linalg.norm(m, 2)) for m in mats if m.size]
    return max([1.0] + norms)


@dataclass(frozen=True, eq=False)
class AugmentedPair:
    """
    Two copies of the plant driven by modes p and q.

    The output is y^p - y^q; the severity stacks z^p over z^q.
    """
    p: str
    q: str
    a: np.ndarray
    b_a: np.ndarray
    c: np.ndarray
    d_a: np.ndarray
    e: np.ndarray
    f_a: np.ndarray
    v: Subspace
    v_star: Subspace
    friend: Friend
    n_plant: int
    split: int

    @property
    def n_states(self) -> int:
        return self.a.shape[0]

    def split_state(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return x[:self.n_plant], x[self.n_plant:]

    def split_attack(self, a: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return a[..., :self.split], a[..., self.split:]


@dataclass(frozen=True, eq=False)
class Discernibility:
    p: str
    q: str
    discernible: bool
    failed_condition: Optional[str] = None
    witness_kind: Optional[str] = None
    witness: Optional[np.ndarray] = None
    residual: float = 0.0


@dataclass(frozen=True, eq=False)
class IdentifiabilityReport:
    modes: Tuple[str, ...]
    pairs: Dict[Tuple[str, str], Discernibility]

    @property
    def identifiable(self) -> bool:
        return all(v.discernible for v in self.pairs.values())

    def indiscernible_pairs(self) -> List[Tuple[str, str]]:
        return [key for key, v in self.pairs.items() if not v.discernible]


def build_augmented(plant: LiftedPlant, p: str, q: str, tol: Optional[float] = None) -> AugmentedPair:
    """Assemble the pair system for modes p and q and its maximal y-nulling subspace."""
    p, q = str(p), str(q)
    if p == q:
        raise ModeError(f"a pair needs two different modes, got {p} twice")
    ch_p, ch_q = plant.channels(p), plant.channels(q)
    a = sla.block_diag(plant.a, plant.a)
    b_a = sla.block_diag(ch_p.b, ch_q.b)
    c = np.hstack([plant.c, -plant.c])
    d_a = np.hstack([ch_p.d, -ch_q.d])
    e = sla.block_diag(plant.e, plant.e)
    f_a = sla.block_diag(ch_p.f, ch_q.f)

    v = max_output_nulling(a, b_a, c, d_a, tol)
    friend = compute_friend(v, a, b_a, c, d_a, tol)
    reachable = v_star(v, a, b_a, tol)
    logger.debug(f"pair ({p}, {q}): n = {a.shape[0]}, dim V = {v.dim}, dim V* = {reachable.dim}")
    return AugmentedPair(p, q, a, b_a, c, d_a, e, f_a, v, reachable, friend,
                         n_plant=plant.n_states, split=ch_p.n_inputs)


def check_discernibility(pair: AugmentedPair, tol: Optional[float] = None) -> Discernibility:
    """
    Discernible unless an attack direction is hidden from state and output
    but seen by the severity map, or an output-matching motion reachable
    from the nominal state moves the severity.
    """
    rtol = get_setting("rank_rtol")
    check = get_setting("residual_rtol", tol)
    scale = _scale(pair.b_a, pair.d_a, pair.f_a)

    if pair.b_a.shape[1]:
        joint = kernel_basis(np.vstack([pair.b_a, pair.d_a]), rtol, reference=_scale(pair.b_a, pair.d_a))
        if joint.shape[1]:
            _, s, vh = sla.svd(pair.f_a @ joint, full_matrices=False)
            if s.size and s[0] > check * scale:
                direction = joint @ vh[0]
                logger.info(f"pair ({pair.p}, {pair.q}): indiscernible through a hidden attack direction")
                return Discernibility(pair.p, pair.q, False, "i", "attack", direction, float(s[0]))

    friend = pair.friend
    if friend.n_mat.size:
        hit = pair.f_a @ friend.n_mat
        norms = np.linalg.norm(hit, axis=0)
        col = int(np.argmax(norms))
        if norms[col] > check * scale:
            injection = np.zeros(friend.n_mat.shape[1])
            injection[col] = 1.0
            logger.info(f"pair ({pair.p}, {pair.q}): indiscernible through injection column {col}")
            return Discernibility(pair.p, pair.q, False, "ii", "injection", injection, float(norms[col]))

    # Decided on V* = V cap reachable, not V: V always holds the diagonal
    # {(x, x)}, which nulls y^p - y^q but is not reachable from (0, 0).
    if pair.v_star.dim:
        severity = (pair.e + pair.f_a @ friend.m) @ pair.v_star.basis
        _, s, vh = sla.svd(severity, full_matrices=False)
        if s.size and s[0] > check * _scale(pair.e, pair.f_a) * max(1.0, _scale(friend.m)):
            state = pair.v_star.basis @ vh[0]
            logger.info(f"pair ({pair.p}, {pair.q}): indiscernible along an output-matching motion")
            return Discernibility(pair.p, pair.q, False, "ii", "state", state, float(s[0]))

    logger.info(f"pair ({pair.p}, {pair.q}): discernible")
    return Discernibility(pair.p, pair.q, True)


def check_identifiable(plant: LiftedPlant, modes: Optional[Iterable[str]] = None,
                       tol: Optional[float] = None) -> IdentifiabilityReport:
    """Pairwise discernibility over `modes` (all plant modes by default)."""
    modes = tuple(str(q) for q in (plant.mode_ids if modes is None else modes))
    for q in modes:
        plant.channels(q)
    pairs = {}
    for p, q in itertools.combinations(modes, 2):
        pairs[(p, q)] = check_discernibility(build_augmented(plant, p, q, tol), tol)
    report = IdentifiabilityReport(modes, pairs)
    logger.info(f"modes {list(modes)}: {'identifiable' if report.identifiable else 'not identifiable'}")
    return report


@dataclass(frozen=True, eq=False)
class IndiscernibleRun:
    """Two mode simulations with matching outputs and a severe first frame."""
    pair: Tuple[str, str]
    x0_p: np.ndarray
    x0_q: np.ndarray
    attack_p: np.ndarray
    attack_q: np.ndarray
    trace_p: SimulationTrace
    trace_q: SimulationTrace

    @property
    def output_gap(self) -> float:
        return float(np.max(np.linalg.norm(self.trace_p.y - self.trace_q.y, axis=1)))

    @property
    def severity(self) -> float:
        return float(np.linalg.norm(np.concatenate([self.trace_p.z[0], self.trace_q.z[0]])))


def synth_indiscernible(plant: LiftedPlant, pair: AugmentedPair, verdict: Discernibility,
                        target_severity: float = 10.0, frames: int = 20) -> IndiscernibleRun:
    """Realize an indiscernibility witness as two explanations of the same outputs."""
    if verdict.discernible:
        raise ModeError(f"modes {pair.p} and {pair.q} are discernible")
    n_aug, m_aug = pair.n_states, pair.b_a.shape[1]
    x0 = np.zeros(n_aug)
    first = np.zeros(m_aug)
    feedback = pair.friend.m
    if verdict.witness_kind == "attack":
        first = verdict.witness.copy()
        feedback = np.zeros((m_aug, n_aug))
    elif verdict.witness_kind == "injection":
        first = pair.friend.n_mat @ verdict.witness
    else:
        x0 = verdict.witness.copy()
        first = feedback @ x0
    z0 = pair.e @ x0 + pair.f_a @ first
    factor = target_severity / float(np.linalg.norm(z0))
    x0, first = factor * x0, factor * first

    attacks = np.zeros((frames, m_aug))
    x = x0
    for k in range(frames):
        attacks[k] = first if k == 0 else feedback @ x
        x = pair.a @ x + pair.b_a @ attacks[k]

    x0_p, x0_q = pair.split_state(x0)
    attack_p, attack_q = pair.split_attack(attacks)
    trace_p = simulate(plant, pair.p, x0=x0_p, attack=attack_p, horizon=frames)
    trace_q = simulate(plant, pair.q, x0=x0_q, attack=attack_q, horizon=frames)
    return IndiscernibleRun((pair.p, pair.q), x0_p, x0_q, attack_p, attack_q, trace_p, trace_q)


def window_gain(pair: AugmentedPair, length: Optional[int] = None) -> float:
    """
    Smallest g with |z^{pq}_{k0}| <= g |Y^{pq}_{k0:k0+length-1}| for pair
    motions whose window start is reachable from the nominal state.

    Infinite when some motion is invisible over the window but severe at k0.
    """
    length = pair.n_plant + 2 if length is None else length
    if length < 1:
        raise WindowError(f"window must span at least one frame, got {length}")
    rtol = get_setting("rank_rtol")
    reach = controllable_subspace(pair.a, pair.b_a).basis
    obs = observability_stack(pair.a, pair.c, length) @ reach
    markov = markov_stack(pair.a, pair.b_a, pair.c, pair.d_a, length)
    window = np.hstack([obs, markov])
    severity = np.hstack([pair.e @ reach, pair.f_a, np.zeros((pair.e.shape[0], markov.shape[1] - pair.f_a.shape[1]))])
    if window.size == 0:
        return 0.0 if not severity.size or not np.any(severity) else float("inf")
    hidden = kernel_basis(window, rtol, reference=_scale(window))
    if hidden.shape[1] and np.linalg.norm(severity @ hidden) > get_setting("residual_rtol") * _scale(severity, window):
        return float("inf")
    return float(np.linalg.norm(severity @ sla.pinv(window, atol=rtol * _scale(window)), 2))


class ResidualBank:
    """
    Per-mode projection residual generators and the live mode-set estimate.

    For mode q the window map [O^q G^q] sends the window start state and
    the window's attack blocks to the stacked outputs; a mode-q window
    without noise lies in its range, so the projector onto the orthogonal
    complement gives a zero residual.
    """

    def __init__(self, plant: LiftedPlant, modes: Sequence[str], thresholds: Dict[str, float],
                 window: Optional[int] = None, tol: Optional[float] = None):
        self.logger = logging.getLogger(__name__)
        self.plant = plant
        self.modes = tuple(str(q) for q in modes)
        self.window = plant.n_states + 2 if window is None else int(window)
        if self.window < 1:
            raise WindowError(f"window must span at least one frame, got {self.window}")
        missing = [q for q in self.modes if q not in thresholds]
        if missing:
            raise ModeError(f"no identification threshold for modes {missing}")
        self.thresholds = {q: float(thresholds[q]) for q in self.modes}
        rtol = get_setting("rank_rtol", tol)

        self.observability: Dict[str, np.ndarray] = {}
        self.propagation: Dict[str, np.ndarray] = {}
        self.projectors: Dict[str, np.ndarray] = {}
        obs = observability_stack(plant.a, plant.c, self.window)
        for q in self.modes:
            ch = plant.channels(q)
            prop = markov_stack(ch.a, ch.b, ch.c, ch.d, self.window)
            span = range_basis(np.hstack([obs, prop]), rtol, reference=_scale(obs, prop))
            self.observability[q] = obs
            self.propagation[q] = prop
            self.projectors[q] = np.eye(obs.shape[0]) - span @ span.T
            self.logger.debug(f"mode {q}: window range has dim {span.shape[1]} of {obs.shape[0]}")
        self.estimate = set(self.modes)

    @property
    def lag(self) -> int:
        """Frames after a window's last frame before all of its samples have arrived."""
        return self.plant.delay_frames

    def reset(self):
        self.estimate = set(self.modes)

    def residuals(self, outputs: np.ndarray) -> Dict[str, float]:
        """Residual per mode for one window of outputs (window x p, frame-major)."""
        stacked = np.asarray(outputs, dtype=float).reshape(-1)
        if stacked.shape[0] != self.window * self.plant.n_outputs:
            raise WindowError(f"window of {self.window} frames needs {self.window * self.plant.n_outputs} "
                              f"output values, got {stacked.shape[0]}")
        return {q: float(np.linalg.norm(self.projectors[q] @ stacked)) for q in self.modes}

    def update(self, residuals: Dict[str, float]) -> List[str]:
        """Drop modes whose residual reached their threshold; returns the dropped modes."""
        dropped = sorted(q for q in self.estimate if residuals[q] >= self.thresholds[q])
        self.estimate.difference_update(dropped)
        return dropped


def build_residual_bank(plant: LiftedPlant, modes: Optional[Sequence[str]],
                        thresholds: Dict[str, float], window: Optional[int] = None) -> ResidualBank:
    modes = plant.mode_ids if modes is None else modes
    return ResidualBank(plant, modes, thresholds, window)


@dataclass(frozen=True)
class IdentificationStep:
    frame: int
    evaluated_at: int
    residuals: Dict[str, float]
    estimate: Tuple[str, ...]
    dropped: Tuple[str, ...] = ()


@dataclass
class IdentificationHistory:
    modes: Tuple[str, ...]
    steps: List[IdentificationStep] = field(default_factory=list)
    events: List[Dict] = field(default_factory=list)

    @property
    def final_estimate(self) -> Tuple[str, ...]:
        return self.steps[-1].estimate if self.steps else self.modes

    def residual_series(self, mode: str) -> np.ndarray:
        return np.array([s.residuals[mode] for s in self.steps])

    def collapse_frame(self) -> Optional[int]:
        """First window start after which exactly one mode is left."""
        for s in self.steps:
            if len(s.estimate) == 1:
                return s.frame
        return None

    def membership_mask(self, step: IdentificationStep) -> int:
        return sum(1 << i for i, q in enumerate(self.modes) if q in step.estimate)


def run_identification(bank: ResidualBank, trace: SimulationTrace, alarm_frame: int = 0,
                       frames: Optional[int] = None) -> IdentificationHistory:
    """
    Slide the window over the trace from `alarm_frame` and eliminate modes.

    An empty estimate is recorded as an unmodeled-attack event; the
    residuals keep being reported after it.
    """
    if alarm_frame < 0:
        raise WindowError(f"alarm frame must be non-negative, got {alarm_frame}")
    last_start = trace.horizon - bank.window
    if last_start < alarm_frame:
        raise WindowError(f"trace of {trace.horizon} frames cannot hold a {bank.window}-frame window "
                          f"starting at frame {alarm_frame}")
    if frames is not None:
        last_start = min(last_start, alarm_frame + frames - 1)

    bank.reset()
    history = IdentificationHistory(bank.modes)
    for k in range(alarm_frame, last_start + 1):
        residuals = bank.residuals(trace.y[k:k + bank.window])
        dropped = bank.update(residuals)
        if dropped:
            bank.logger.info(f"frame {k}: eliminated modes {dropped}, estimate {sorted(bank.estimate)}")
        if not bank.estimate and not history.events:
            bank.logger.warning(f"frame {k}: every mode eliminated, attack is not among {list(bank.modes)}")
            history.events.append({"event": UNMODELED_ATTACK, "frame": k})
        history.steps.append(IdentificationStep(
            frame=k,
            evaluated_at=k + bank.window - 1 + bank.lag,
            residuals=residuals,
            estimate=tuple(q for q in bank.modes if q in bank.estimate),
            dropped=tuple(dropped),
        ))
    return history


def calibrate_identification_thresholds(plant: LiftedPlant, modes: Optional[Sequence[str]] = None,
                                        noise_bound: float = 1.0, horizon: Optional[int] = None,
                                        margin: Optional[float] = None,
                                        floor: Optional[float] = None) -> Dict[str, float]:
    """
    Per-mode thresholds exceeding every noise-only residual with |w_k| <= noise_bound.

    The projector removes the window start state, so only noise inside the
    window reaches the residual and the bound is exact over the window.
    `horizon` overrides the window length.
    """
    rho = spectral_radius(plant.a)
    if rho >= 1.0:
        raise UnstablePlantError(f"identification thresholds need stable lifted dynamics, got radius {rho:.6g}")
    margin = get_setting("threshold_margin", margin)
    floor = get_setting("threshold_floor", floor)
    modes = plant.mode_ids if modes is None else modes
    bank = ResidualBank(plant, modes, {str(q): 0.0 for q in modes}, window=horizon)
    noise = markov_stack(plant.a, plant.b_w, plant.c, plant.d_w, bank.window)
    m_w = plant.n_noise
    thresholds = {}
    for q in bank.modes:
        if m_w == 0:
            thresholds[q] = float(floor)
            continue
        projected = bank.projectors[q] @ noise
        total = sum(float(np.linalg.norm(projected[:, j * m_w:(j + 1) * m_w], 2)) for j in range(bank.window))
        thresholds[q] = float((1.0 + margin) * noise_bound * total + floor)
        logger.info(f"mode {q}: identification threshold {thresholds[q]:.6g}")
    return thresholds


@dataclass(frozen=True)
class SeverityEstimate:
    """Monte-Carlo estimate of the severity that forces a unique mode; not certified."""
    mode: str
    delta: Optional[float]
    runs: int
    collapsed: int
    certified: bool = False


def estimate_identification_severity(plant: LiftedPlant, bank: ResidualBank, mode: str,
                                     attack_factory: Callable[[np.random.Generator, float], object],
                                     scales: Sequence[float], runs: int = 20, noise_bound: float = 0.0,
                                     horizon: Optional[int] = None, seed: int = 0,
                                     progress: bool = False) -> SeverityEstimate:
    """
    Smallest window-start severity at which the estimate collapsed to `mode`.

    `attack_factory(rng, scale)` returns an attack source for `simulate`.
    Noise is drawn uniformly in the ball of radius `noise_bound`.
    """
    mode = str(mode)
    horizon = 3 * bank.window if horizon is None else horizon
    rng = np.random.default_rng(seed)
    best, collapsed = None, 0
    trials = [(s, r) for s in scales for r in range(runs)]
    for scale, _ in tqdm(trials, disable=not progress, desc=f"severity mode {mode}"):
        noise = ball_noise(rng, horizon, plant.n_noise, noise_bound)
        trace = simulate(plant, mode, attack=attack_factory(rng, scale), noise=noise, horizon=horizon)
        history = run_identification(bank, trace)
        frame = history.collapse_frame()
        if frame is None or history.final_estimate != (mode,):
            continue
        collapsed += 1
        severity = float(np.linalg.norm(trace.z[frame]))
        best = severity if best is None else min(best, severity)
    logger.info(f"mode {mode}: non-certified identification severity estimate {best} "
                f"({collapsed}/{len(trials)} runs collapsed)")
    return SeverityEstimate(mode, best, len(trials), collapsed)

