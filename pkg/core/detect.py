#!/usr/bin/env python3
"""
Detectability module.
Decides whether an attack mode can stay stealthy while driving the severity
output without bound, and turns a detectable verdict into alarm thresholds
for bounded noise.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import scipy.linalg as sla

from .config import get_setting
from .errors import ThresholdError
from .model import LiftedPlant, SimulationTrace, markov_stack, observability_stack, spectral_radius
from .subspace import (
    EigStructure,
    Friend,
    RestrictedMap,
    Subspace,
    compute_friend,
    controllable_subspace,
    eig_structure,
    eigenspace_assignment_solutions,
    jordan_block,
    kernel_basis,
    max_output_nulling,
    range_basis,
    real_columns,
    restrict,
    smallest_nonzero_singular_value,
    unvec,
    v_star,
    verify_friend,
)

logger = logging.getLogger(__name__)

DETECTABLE = "detectable"
VULNERABLE = "vulnerable"
OVER_APPROXIMATION = "time-domain over-approximation"

# decay rates below this are rounded up when fitting tail bounds
TAIL_RATE_FLOOR = 0.5


def _scale(*mats) -> float:
    return max([1.0] + [float(np.linalg.norm(m, 2)) for m in mats if m.size])


@dataclass(frozen=True, eq=False)
class KernelWitness:
    """Attack direction invisible to state and output but not to severity."""
    direction: np.ndarray
    severity_gain: float


@dataclass(frozen=True, eq=False)
class NullingWitness:
    """
    A nonzero column of the injection-to-severity matrix.

    `power` is the closed-loop power p of the block (E+FM)(A+BM)^p BN, or None
    for the direct block FN. `injection` is the unit injection direction.
    """
    power: Optional[int]
    column: int
    vector: np.ndarray
    injection: np.ndarray


@dataclass(frozen=True, eq=False)
class EigenWitness:
    """Unstable eigenvalue with a chain escaping the severity kernel and a gain realizing it."""
    eigenvalue: complex
    chain: np.ndarray
    state_chain: np.ndarray
    gain: np.ndarray
    jordan_size: int
    multiplicity: int
    v_star_basis: np.ndarray

    @property
    def modulus(self) -> float:
        return float(abs(self.eigenvalue))


Witness = Union[KernelWitness, NullingWitness, EigenWitness]


@dataclass(frozen=True)
class SeverityBound:
    """delta_bar(eps) = gain * eps for a detectable mode, with the constants it is built from."""
    gain: float
    components: Dict[str, float] = field(default_factory=dict)
    provenance: str = OVER_APPROXIMATION

    def __call__(self, epsilon: float) -> float:
        return self.gain * epsilon


@dataclass(frozen=True, eq=False)
class DetectabilityReport:
    mode: Optional[str]
    verdict: str
    triggered_condition: Optional[str]
    witness: Optional[Witness]
    friend: Optional[Friend]
    v: Subspace
    v_star: Subspace
    restricted: Optional[RestrictedMap] = None
    eigenvalues: List[EigStructure] = field(default_factory=list)
    borderline_flags: List[str] = field(default_factory=list)
    low_confidence: bool = False
    tolerances: Dict[str, float] = field(default_factory=dict)
    severity_bound: Optional[SeverityBound] = None

    @property
    def vulnerable(self) -> bool:
        return self.verdict == VULNERABLE


@dataclass(frozen=True)
class Thresholds:
    epsilon: float
    delta_noise: float
    delta_attack: float
    delta: float
    truncation_horizon: int
    tail_bound: float
    tail_bound_severity: float
    noise_sum: float
    margin: float
    floor: float
    noise_bound: float = 1.0
    provenance: str = OVER_APPROXIMATION


def check_condition_i(plant: LiftedPlant, mode: Optional[str], tol: Optional[float] = None) -> Optional[KernelWitness]:
    """A unit attack direction in ker B and ker D that F does not annihilate, or None."""
    ch = plant.channels(mode)
    if ch.n_inputs == 0 or ch.f.shape[0] == 0:
        return None
    joint = kernel_basis(np.vstack([ch.b, ch.d]), get_setting("rank_rtol"), reference=_scale(ch.b, ch.d))
    if joint.shape[1] == 0:
        return None
    _, s, vh = sla.svd(ch.f @ joint, full_matrices=False)
    if s[0] <= get_setting("residual_rtol", tol) * _scale(ch.b, ch.d, ch.f):
        return None
    direction = joint @ vh[0]
    logger.info(f"mode {mode}: condition (i) holds, |F v| = {s[0]:.6g}")
    return KernelWitness(direction / np.linalg.norm(direction), float(s[0]))


def _closed_loop(plant: LiftedPlant, mode: Optional[str], friend: Friend):
    ch = plant.channels(mode)
    return ch, ch.a + ch.b @ friend.m, ch.e + ch.f @ friend.m


def check_condition_ii(plant: LiftedPlant, mode: Optional[str], friend: Friend,
                       tol: Optional[float] = None) -> Optional[NullingWitness]:
    """
    First nonzero column of [(E+FM)(A+BM)^{n-1}BN ... (E+FM)BN, FN].

    Assumes condition (i) failed; one friend suffices.
    """
    ch, closed, severity = _closed_loop(plant, mode, friend)
    verify_friend(friend, ch.a, ch.b, ch.c, ch.d)
    n_cols = friend.n_mat.shape[1]
    if n_cols == 0:
        return None
    bn = ch.b @ friend.n_mat
    powers = [np.eye(plant.n_states)]
    for _ in range(plant.n_states - 1):
        powers.append(closed @ powers[-1])
    blocks: List[Tuple[Optional[int], np.ndarray]] = [
        (p, severity @ powers[p] @ bn) for p in range(plant.n_states - 1, -1, -1)
    ]
    blocks.append((None, ch.f @ friend.n_mat))
    threshold = get_setting("residual_rtol", tol) * _scale(closed, severity, bn)
    for power, block in blocks:
        for col in range(block.shape[1]):
            if np.linalg.norm(block[:, col]) > threshold:
                injection = np.zeros(n_cols)
                injection[col] = 1.0
                logger.info(f"mode {mode}: condition (ii) holds at power {power}, column {col}")
                return NullingWitness(power, col, block[:, col].copy(), injection)
    return None


def _realize_chain(rmap: RestrictedMap, severity_vs: np.ndarray, structure: EigStructure,
                   size: int, solutions: Subspace, rng: np.random.Generator,
                   tol: Optional[float]) -> Optional[EigenWitness]:
    rtol = get_setting("rank_rtol")
    check = get_setting("residual_rtol", tol)
    r = rmap.dim
    lam = structure.eigenvalue
    is_complex = lam.imag != 0
    lam_value = lam if is_complex else lam.real
    basis = solutions.basis
    scale = _scale(severity_vs)

    images = np.kron(np.eye(size), severity_vs) @ basis
    if images.size == 0 or np.linalg.norm(images, 2) <= check * scale:
        return None
    coeff = rng.standard_normal(basis.shape[1])
    if is_complex:
        coeff = coeff + 1j * rng.standard_normal(basis.shape[1])
    chain = unvec(basis @ coeff, r)
    if np.linalg.norm(severity_vs @ real_columns(chain)) <= check * scale * np.linalg.norm(chain):
        _, _, vh = sla.svd(images)
        chain = unvec(basis @ vh[0].conj(), r)

    if is_complex:
        stacked = np.hstack([chain, chain.conj()])
        j_block = sla.block_diag(jordan_block(lam_value, size), jordan_block(np.conj(lam_value), size))
    else:
        stacked = chain.real
        chain = chain.real
        j_block = jordan_block(lam_value, size)
    if range_basis(stacked, rtol).shape[1] < stacked.shape[1]:
        return None

    a_r, b_r = rmap.a_restricted, rmap.b_n_restricted
    target = stacked @ j_block - a_r @ stacked
    a_scale = _scale(a_r, b_r) * max(1.0, float(np.linalg.norm(stacked, 2)))
    if b_r.shape[1] == 0:
        if np.linalg.norm(target) > check * a_scale:
            return None
        gain = np.zeros((0, r))
    else:
        inject = sla.lstsq(b_r, target)[0]
        if np.linalg.norm(b_r @ inject - target) > check * a_scale:
            return None
        gain = np.real(inject @ sla.pinv(stacked))
        closed = a_r + b_r @ gain
        if np.linalg.norm(closed @ stacked - stacked @ j_block) > check * a_scale * max(1.0, _scale(gain)):
            return None
    return EigenWitness(
        eigenvalue=lam,
        chain=chain,
        state_chain=rmap.v_star.basis @ chain,
        gain=gain,
        jordan_size=size,
        multiplicity=structure.multiplicity,
        v_star_basis=rmap.v_star.basis,
    )


def _condition_iii(plant: LiftedPlant, mode: Optional[str], friend: Friend, vs: Subspace,
                   tol: Optional[float]):
    ch, _, severity = _closed_loop(plant, mode, friend)
    rmap = restrict(vs, friend, ch.a, ch.b)
    structures = eig_structure(rmap)
    severity_vs = severity @ vs.basis
    rng = np.random.default_rng(get_setting("candidate_seed"))
    for structure in sorted(structures, key=lambda s: -s.modulus):
        if structure.stable or structure.controllable:
            continue
        for size in range(1, structure.multiplicity + 1):
            solutions = eigenspace_assignment_solutions(rmap, structure.eigenvalue, size)
            if solutions.dim == 0:
                continue
            witness = _realize_chain(rmap, severity_vs, structure, size, solutions, rng, tol)
            if witness is not None:
                logger.info(f"mode {mode}: condition (iii) holds, lambda = {witness.eigenvalue:.12g}, "
                            f"chain length {size}")
                return witness, structures, rmap
    return None, structures, rmap


def check_condition_iii(plant: LiftedPlant, mode: Optional[str], friend: Friend,
                        tol: Optional[float] = None) -> Optional[EigenWitness]:
    """
    Unstable uncontrollable eigenvalue of the restricted closed loop with a chain
    escaping ker (E+FM)V*, or None. Assumes conditions (i) and (ii) failed.
    """
    ch = plant.channels(mode)
    vs = v_star(friend.subspace, ch.a, ch.b)
    return _condition_iii(plant, mode, friend, vs, tol)[0]


def _power_norm_sum(left: np.ndarray, a: np.ndarray, right: np.ndarray, count: int,
                    rtol: float) -> Tuple[float, float]:
    """
    Sum of ||L A^j R|| for j < count, and a bound on the terms j >= count.

    The tail uses ||A^j|| <= c rho^j with rho = spectral radius + 10 rtol and
    c fitted over j = 0..count.
    """
    if left.size == 0 or right.size == 0 or a.shape[0] == 0:
        return 0.0, 0.0
    radius = spectral_radius(a)
    if radius + 10 * rtol >= 1.0:
        raise ThresholdError(f"thresholds undefined: spectral radius {radius:.6g} is not below one")
    rho = max(radius + 10 * rtol, TAIL_RATE_FLOOR)
    total, fit = 0.0, 1.0
    power = np.eye(a.shape[0])
    for j in range(count):
        total += float(np.linalg.norm(left @ power @ right, 2))
        fit = max(fit, float(np.linalg.norm(power, 2)) / rho ** j)
        power = a @ power
    fit = max(fit, float(np.linalg.norm(power, 2)) / rho ** count)
    tail = float(np.linalg.norm(left, 2) * np.linalg.norm(right, 2)) * fit * rho ** count / (1.0 - rho)
    return total, tail


def _stable_part_sum(rmap: RestrictedMap, severity_vs: np.ndarray, rtol: float, horizon: int) -> float:
    """Sum over j of ||(E+FM)V* A|^j|| restricted to the stable invariant subspace of A|."""
    r = rmap.dim
    if r == 0 or severity_vs.size == 0 or not np.any(severity_vs):
        return 0.0
    band = 10 * rtol
    t, z, sdim = sla.schur(rmap.a_restricted.astype(complex), output="complex",
                           sort=lambda x: abs(x) < 1.0 - band)
    if sdim == 0:
        return 0.0
    t11, t12, t22 = t[:sdim, :sdim], t[:sdim, sdim:], t[sdim:, sdim:]
    coupling = sla.solve_sylvester(t11, -t22, -t12) if sdim < r else np.zeros((sdim, 0))
    left = severity_vs @ z[:, :sdim]
    right = np.hstack([np.eye(sdim), -coupling]) @ z.conj().T
    if sdim < r:
        unstable = z[:, :sdim] @ coupling + z[:, sdim:]
        leak = float(np.linalg.norm(severity_vs @ unstable, 2))
        if leak > get_setting("residual_rtol") * _scale(severity_vs) * max(1.0, _scale(unstable)):
            logger.warning(f"unstable part of the restricted map is visible in severity (|.| = {leak:.3e})")
    total, tail = _power_norm_sum(left, t11, right, horizon, rtol)
    return total + tail


def severity_gain(plant: LiftedPlant, mode: Optional[str], friend: Friend, v: Subspace,
                  vs: Subspace, rmap: RestrictedMap, tol: Optional[float] = None,
                  horizon: Optional[int] = None) -> SeverityBound:
    """
    Constant c with ||z_k|| <= c * eps whenever ||y_j|| <= eps for all j, from x_0 = 0.

    Chain of bounds: distance of x_k to V from an (n+1)-frame output window,
    distance to V* through the controllable subspace, the part of B a_k
    outside B ker D intersected with V, the stable-part impulse sum of the
    restricted closed loop and the feedthrough of the residual input.
    """
    rtol = get_setting("rank_rtol", tol)
    horizon = get_setting("threshold_horizon", horizon)
    ch, closed, severity = _closed_loop(plant, mode, friend)
    n = plant.n_states
    window = n + 1

    comp = v.complement()
    comp_proj = comp.projector()
    if comp.dim == 0:
        state_gain = 0.0
    else:
        obs = observability_stack(ch.a, ch.c, window) @ comp.basis
        markov = markov_stack(ch.a, ch.b, ch.c, ch.d, window)
        q = range_basis(markov, rtol)
        visible = obs - q @ (q.T @ obs)
        s = sla.svdvals(visible) if visible.size else np.zeros(0)
        gamma = float(s[-1]) if s.size == comp.dim else 0.0
        if gamma <= rtol * _scale(visible):
            raise ThresholdError("window output map does not separate states outside V")
        state_gain = np.sqrt(window) / gamma

    controllable = controllable_subspace(ch.a, ch.b, rtol)
    sigma_c = smallest_nonzero_singular_value(comp_proj @ controllable.basis, rtol) if controllable.dim else None
    star_gain = state_gain / sigma_c if sigma_c else 0.0

    closed_out = float(np.linalg.norm(comp_proj @ closed @ comp_proj, 2))
    invariance_gain = state_gain * (1.0 + closed_out)
    output_gain = 1.0 + float(np.linalg.norm((ch.c + ch.d @ friend.m) @ comp_proj, 2)) * state_gain

    sigma_d = smallest_nonzero_singular_value(ch.d, rtol) if ch.d.size else None
    kernel_dist = _scale(ch.b) * output_gain / sigma_d if sigma_d else 0.0
    if ch.n_inputs:
        b_kernel = Subspace.span(ch.b @ kernel_basis(ch.d, rtol, reference=_scale(ch.d)))
        summed = comp_proj + b_kernel.complement_projector()
        pinv_norm = float(np.linalg.norm(sla.pinv(summed, atol=rtol * 2.0), 2))
    else:
        pinv_norm = 0.0
    residual_input = pinv_norm * (invariance_gain + kernel_dist)

    sigma_bd = smallest_nonzero_singular_value(np.vstack([ch.b, ch.d]), rtol) if ch.n_inputs else None
    feedthrough = float(np.linalg.norm(ch.f, 2)) * (residual_input + output_gain) / sigma_bd \
        if sigma_bd and ch.f.size else 0.0

    star_proj = np.eye(n) - vs.projector()
    drift = float(np.linalg.norm(closed @ star_proj, 2)) * star_gain + residual_input
    stable_sum = _stable_part_sum(rmap, severity @ vs.basis, rtol, horizon)
    direct = float(np.linalg.norm(severity @ star_proj, 2)) * star_gain if severity.size else 0.0

    gain = direct + drift * stable_sum + feedthrough
    components = {
        "state_gain": float(state_gain),
        "star_gain": float(star_gain),
        "residual_input": float(residual_input),
        "drift": float(drift),
        "stable_sum": float(stable_sum),
        "feedthrough": float(feedthrough),
    }
    logger.debug(f"severity gain for mode {mode}: {gain:.6g} {components}")
    return SeverityBound(float(gain), components)


def analyze_detectability(plant: LiftedPlant, mode: Optional[str], friend: Optional[Friend] = None,
                          tol: Optional[float] = None, with_bound: bool = True) -> DetectabilityReport:
    """
    Run conditions (i), (ii) and (iii) in order and assemble the report.

    Args:
        plant: lifted plant
        mode: attack mode id
        friend: optional friend of the output-nulling subspace to use instead of computing one
        tol: residual tolerance override
        with_bound: attach the severity certificate to detectable verdicts

    Returns:
        DetectabilityReport
    """
    ch = plant.channels(mode)
    rtol = get_setting("rank_rtol")
    tolerances = {"rank_rtol": rtol, "residual_rtol": get_setting("residual_rtol", tol),
                  "eig_cluster_tol": get_setting("eig_cluster_tol")}
    v = max_output_nulling(ch.a, ch.b, ch.c, ch.d)
    if friend is None:
        friend = compute_friend(v, ch.a, ch.b, ch.c, ch.d)
    else:
        verify_friend(friend, ch.a, ch.b, ch.c, ch.d)
    vs = v_star(v, ch.a, ch.b)
    logger.info(f"mode {mode}: dim V = {v.dim}, dim V* = {vs.dim}")

    def report(condition, witness, **extra):
        verdict = VULNERABLE if condition else DETECTABLE
        logger.info(f"mode {mode}: {verdict}" + (f" via condition ({condition})" if condition else ""))
        return DetectabilityReport(mode=mode, verdict=verdict, triggered_condition=condition,
                                   witness=witness, friend=friend, v=v, v_star=vs,
                                   tolerances=tolerances, **extra)

    witness_i = check_condition_i(plant, mode, tol)
    if witness_i is not None:
        return report("i", witness_i)
    witness_ii = check_condition_ii(plant, mode, friend, tol)
    if witness_ii is not None:
        return report("ii", witness_ii)

    witness_iii, structures, rmap = _condition_iii(plant, mode, friend, vs, tol)
    flags = [f"|lambda| = {s.modulus:.12g} lies in the band around 1" for s in structures if s.borderline]
    low_confidence = any(s.low_confidence for s in structures)
    extra = dict(restricted=rmap, eigenvalues=structures, borderline_flags=flags, low_confidence=low_confidence)
    if witness_iii is not None:
        return report("iii", witness_iii, **extra)

    bound = None
    if with_bound:
        try:
            bound = severity_gain(plant, mode, friend, v, vs, rmap, tol)
        except ThresholdError as e:
            logger.warning(f"mode {mode}: no severity certificate: {e}")
    return report(None, None, severity_bound=bound, **extra)


def compute_thresholds(plant: LiftedPlant, mode: Optional[str], horizon: Optional[int] = None,
                       margin: Optional[float] = None, floor: Optional[float] = None,
                       noise_bound: float = 1.0,
                       report: Optional[DetectabilityReport] = None) -> Thresholds:
    """
    Alarm threshold eps and severity bound delta for noise with ||w_k|| <= noise_bound.

    eps exceeds the worst noise-only output; delta = delta_bar(2 eps) + delta_noise.
    """
    horizon = get_setting("threshold_horizon", horizon)
    margin = get_setting("threshold_margin", margin)
    floor = get_setting("threshold_floor", floor)
    rtol = get_setting("rank_rtol")
    if horizon < 1:
        raise ThresholdError(f"horizon must be at least one frame, got {horizon}")
    rho = spectral_radius(plant.a)
    if rho >= 1.0:
        raise ThresholdError(f"thresholds undefined: lifted dynamics have spectral radius {rho:.6g}")

    if report is None:
        report = analyze_detectability(plant, mode)
    if report.vulnerable:
        raise ThresholdError(f"mode {mode} is vulnerable via condition ({report.triggered_condition}); "
                             "no finite severity bound exists")
    if report.severity_bound is None:
        raise ThresholdError(f"mode {mode} has no severity certificate")

    y_sum, y_tail = _power_norm_sum(plant.c, plant.a, plant.b_w, horizon - 1, rtol)
    z_sum, z_tail = _power_norm_sum(plant.e, plant.a, plant.b_w, horizon - 1, rtol)
    y_sum += float(np.linalg.norm(plant.d_w, 2)) if plant.d_w.size else 0.0
    z_sum += float(np.linalg.norm(plant.f_w, 2)) if plant.f_w.size else 0.0

    epsilon = (1.0 + margin) * noise_bound * (y_sum + y_tail) + floor
    delta_noise = (1.0 + margin) * noise_bound * (z_sum + z_tail)
    delta_attack = report.severity_bound(2.0 * epsilon)
    thresholds = Thresholds(
        epsilon=float(epsilon),
        delta_noise=float(delta_noise),
        delta_attack=float(delta_attack),
        delta=float(delta_attack + delta_noise),
        truncation_horizon=int(horizon),
        tail_bound=float(noise_bound * y_tail),
        tail_bound_severity=float(noise_bound * z_tail),
        noise_sum=float(noise_bound * y_sum),
        margin=float(margin),
        floor=float(floor),
        noise_bound=float(noise_bound),
    )
    logger.info(f"mode {mode}: epsilon = {thresholds.epsilon:.6g}, delta = {thresholds.delta:.6g}")
    return thresholds


def alarm(trace: SimulationTrace, epsilon: float,
          residual_filter: Optional[Callable[[np.ndarray], np.ndarray]] = None) -> Optional[int]:
    """
    First frame k with ||y_k|| >= epsilon, or None.

    `residual_filter` maps the (frames x p) output history to a reshaped
    residual history before the norm test; it is the hook for stable,
    stably invertible output filters.
    """
    outputs = trace.y if residual_filter is None else np.asarray(residual_filter(trace.y))
    if outputs.size == 0:
        return None
    hits = np.nonzero(np.linalg.norm(outputs, axis=1) >= epsilon)[0]
    return int(hits[0]) if hits.size else None
