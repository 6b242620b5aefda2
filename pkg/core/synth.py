#!/usr/bin/env python3
"""
Attack synthesis module.
Builds stealthy, severe attack plans from vulnerability witnesses. A plan is
replayable as a closed-loop attack source: plan(k, x_k) returns the attack
block for frame k.
"""

import logging
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .config import get_setting
from .detect import DetectabilityReport, EigenWitness, KernelWitness, NullingWitness
from .errors import SynthesisError
from .model import LiftedPlant
from .subspace import Friend, feedback_friend

logger = logging.getLogger(__name__)

KERNEL_DIRECTION = "kernel-direction"
NULLING_POLICY = "nulling-policy"
EIG_CASE1 = "eig-case1"
EIG_CASE2 = "eig-case2"
EIG_CASE3 = "eig-case3"
PLAN_KINDS = (KERNEL_DIRECTION, NULLING_POLICY, EIG_CASE1, EIG_CASE2, EIG_CASE3)

STEERING_RTOL = 1e-8


@dataclass(frozen=True, eq=False)
class Certificate:
    """
    What simulating a plan from x_0 = 0 must show.

    `growth` is "impulse" (one severe frame at `peak_frame`), "geometric",
    "linear-power" or "linear". For the eigenvalue plans `eta` holds the
    severity images of the chain and `prelude_severity` the (complex)
    severity during the first period.
    """
    growth: str
    stealth_bound: float
    alpha: float = 1.0
    rate: float = 0.0
    eigenvalue: complex = 0j
    i_star: Optional[int] = None
    eta: Optional[np.ndarray] = None
    prelude_severity: Optional[np.ndarray] = None
    prelude_length: int = 0
    peak_frame: Optional[int] = None
    peak_severity: Optional[np.ndarray] = None


@dataclass(frozen=True, eq=False)
class AttackPlan:
    kind: str
    mode: Optional[str]
    prelude: np.ndarray
    feedback: Optional[np.ndarray]
    scale: float
    certificate: Certificate
    feedforward: Optional[np.ndarray] = None

    @property
    def attack_dim(self) -> int:
        return self.prelude.shape[1]

    def __call__(self, k: int, x: np.ndarray) -> np.ndarray:
        if self.kind == EIG_CASE3:
            period = self.feedforward.shape[0]
            cycle, offset = divmod(k, period)
            lam = self.certificate.eigenvalue
            drive = np.real(lam ** (cycle * period) * self.feedforward[offset])
            return self.feedback @ x + drive
        if k < self.prelude.shape[0]:
            return self.prelude[k]
        if self.feedback is None:
            return np.zeros(self.attack_dim)
        return self.feedback @ x

    def scaled(self, factor: float) -> "AttackPlan":
        """The same plan with every open-loop term multiplied by `factor`."""
        cert = self.certificate
        scaled_cert = replace(
            cert,
            stealth_bound=cert.stealth_bound * abs(factor),
            alpha=cert.alpha * factor,
            prelude_severity=None if cert.prelude_severity is None else cert.prelude_severity * factor,
            peak_severity=None if cert.peak_severity is None else cert.peak_severity * factor,
        )
        return replace(
            self,
            prelude=self.prelude * factor,
            feedforward=None if self.feedforward is None else self.feedforward * factor,
            scale=self.scale * factor,
            certificate=scaled_cert,
        )

    def predicted_severity(self, k: int) -> Optional[np.ndarray]:
        """Certified severity vector at frame k, where the growth law defines it."""
        cert = self.certificate
        if cert.growth == "impulse":
            return cert.peak_severity if k == cert.peak_frame else None
        n = cert.prelude_length
        lam, alpha, eta, i = cert.eigenvalue, cert.alpha, cert.eta, cert.i_star
        if k < n:
            return None if cert.prelude_severity is None else np.real(cert.prelude_severity[k])
        if self.kind == EIG_CASE1:
            return np.real(alpha * lam ** (k - n) * eta[:, i])
        if self.kind == EIG_CASE2:
            return np.real(alpha * (k - n) * lam ** (k - n - 1) * eta[:, i]
                           + alpha * lam ** (k - n) * eta[:, i + 1])
        cycle, offset = divmod(k, n)
        return np.real(alpha * cycle * lam ** (cycle * n + offset - n) * eta[:, i]
                       + lam ** (cycle * n) * cert.prelude_severity[offset])


def _reachability(plant: LiftedPlant, mode: Optional[str], frames: int) -> np.ndarray:
    ch = plant.channels(mode)
    blocks, power = [], np.eye(plant.n_states)
    for _ in range(frames):
        blocks.append(power @ ch.b)
        power = ch.a @ power
    return np.hstack(blocks[::-1])


def _severity_response(plant: LiftedPlant, mode: Optional[str], frames: int) -> np.ndarray:
    """Map from the stacked inputs a_0..a_{frames-1} to the stacked severities z_0..z_{frames-1}."""
    ch = plant.channels(mode)
    m, pz = ch.n_inputs, plant.n_severity
    response = np.zeros((frames * pz, frames * m))
    state = np.zeros((plant.n_states, frames * m))
    for j in range(frames):
        block = ch.e @ state
        block[:, j * m:(j + 1) * m] += ch.f
        response[j * pz:(j + 1) * pz] = block
        state = ch.a @ state
        state[:, j * m:(j + 1) * m] += ch.b
    return response


def _ramp_prelude(reach: np.ndarray, response: np.ndarray, steer: np.ndarray, ramp: np.ndarray) -> np.ndarray:
    """
    Move `steer` within the inputs reaching the same state so the prelude
    severity follows `ramp` in least squares.
    """
    free = sla.null_space(reach)
    if free.shape[1] == 0 or response.size == 0:
        return steer
    coeff = sla.lstsq(response @ free, ramp - response @ steer)[0]
    return steer + free @ coeff


def synth_condition_i(plant: LiftedPlant, mode: Optional[str], witness: KernelWitness,
                      target_severity: float, tol: Optional[float] = None) -> AttackPlan:
    """One-frame attack along a direction hidden from state and output."""
    ch = plant.channels(mode)
    direction = np.asarray(witness.direction, dtype=float)
    hit = ch.f @ direction
    gain = float(np.linalg.norm(hit))
    if gain <= get_setting("residual_rtol", tol) * max(1.0, float(np.linalg.norm(ch.f, 2))):
        raise SynthesisError("kernel witness is not seen by the severity map")
    factor = target_severity / gain
    cert = Certificate(growth="impulse", stealth_bound=0.0, alpha=factor,
                       peak_frame=0, peak_severity=factor * hit)
    logger.info(f"mode {mode}: kernel-direction plan, scale {factor:.6g}")
    return AttackPlan(KERNEL_DIRECTION, mode, (factor * direction)[None, :], None, factor, cert)


def synth_condition_ii(plant: LiftedPlant, mode: Optional[str], friend: Friend, witness: NullingWitness,
                       target_severity: float, tol: Optional[float] = None) -> AttackPlan:
    """Impulsive injection through N followed by the nulling feedback; outputs stay zero."""
    gain = float(np.linalg.norm(witness.vector))
    if gain <= get_setting("residual_rtol", tol):
        raise SynthesisError("nulling witness column is zero")
    factor = target_severity / gain
    first = friend.n_mat @ (factor * witness.injection)
    peak = 0 if witness.power is None else witness.power + 1
    cert = Certificate(growth="impulse", stealth_bound=0.0, alpha=factor,
                       peak_frame=peak, peak_severity=factor * witness.vector)
    logger.info(f"mode {mode}: nulling-policy plan, severe frame {peak}")
    return AttackPlan(NULLING_POLICY, mode, first[None, :], friend.m.copy(), factor, cert)


def synth_condition_iii(plant: LiftedPlant, mode: Optional[str], friend: Friend, witness: EigenWitness,
                        epsilon_budget: float, target_severity: float = 10.0,
                        tol: Optional[float] = None) -> AttackPlan:
    """
    Steer into the escaping chain over n frames, then keep the state in V*.

    The prelude is the minimum-norm n-frame input reaching alpha * g, where
    g is the chain vector picked by the case rule; alpha is the largest
    scale keeping every prelude output at or below `epsilon_budget`. When
    the prelude is silent alpha sizes the first period to `target_severity`.

    The periodic plan repeats the prelude severity on top of its linear
    growth, so its prelude is instead the input reaching g whose severity
    is closest to the ramp j/n * lambda^(j-n) * eta.
    """
    ch = plant.channels(mode)
    n = plant.n_states
    band = 10 * get_setting("rank_rtol")
    feedback = feedback_friend(friend, witness.v_star_basis, witness.gain).m
    severity = ch.e + ch.f @ feedback

    chain = witness.state_chain
    eta = severity @ chain
    norms = np.linalg.norm(eta, axis=0)
    if norms.size == 0 or norms.max() == 0:
        raise SynthesisError("eigen witness chain is invisible to the severity map")
    i_star = int(np.argmax(norms > get_setting("residual_rtol", tol) * norms.max()))

    lam = complex(witness.eigenvalue)
    modulus = abs(lam)
    if modulus > 1.0 + band:
        kind, target = EIG_CASE1, i_star
    elif i_star < chain.shape[1] - 1:
        kind, target = EIG_CASE2, i_star + 1
    else:
        kind, target = EIG_CASE3, i_star
    goal = chain[:, target]

    reach = _reachability(plant, mode, n)
    if reach.size == 0:
        raise SynthesisError(f"mode {mode} has no attack input to steer with")
    steer = sla.lstsq(reach, goal.real)[0]
    if np.iscomplexobj(goal) and np.any(goal.imag):
        steer = steer + 1j * sla.lstsq(reach, goal.imag)[0]
    if kind == EIG_CASE3:
        ramp = np.concatenate([j / n * lam ** (j - n) * eta[:, i_star] for j in range(n)])
        steer = _ramp_prelude(reach, _severity_response(plant, mode, n), steer, ramp)
    miss = float(np.linalg.norm(reach @ steer - goal))
    if miss > STEERING_RTOL * float(np.linalg.norm(goal)):
        raise SynthesisError(f"chain vector is not reachable in {n} frames (miss {miss:.3e})")
    inputs = steer.reshape(n, ch.n_inputs)

    dtype = inputs.dtype
    states = np.zeros((n, n), dtype=dtype)
    outputs = np.zeros((n, plant.n_outputs), dtype=dtype)
    severities = np.zeros((n, plant.n_severity), dtype=dtype)
    x = np.zeros(n, dtype=dtype)
    for j in range(n):
        states[j] = x
        outputs[j] = ch.c @ x + ch.d @ inputs[j]
        severities[j] = ch.e @ x + ch.f @ inputs[j]
        x = ch.a @ x + ch.b @ inputs[j]

    peak_output = float(np.max(np.linalg.norm(outputs, axis=1)))
    if peak_output > 0:
        alpha = epsilon_budget / peak_output
    else:
        alpha = target_severity / float(np.linalg.norm(eta[:, i_star]))
        logger.info(f"mode {mode}: prelude is silent, scaling to severity {target_severity:.6g}")
    if alpha < get_setting("alpha_floor"):
        raise SynthesisError(f"stealth budget {epsilon_budget:.3e} admits no usable attack scale")

    cert = Certificate(
        growth={EIG_CASE1: "geometric", EIG_CASE2: "linear-power", EIG_CASE3: "linear"}[kind],
        stealth_bound=alpha * peak_output,
        alpha=alpha,
        rate=modulus,
        eigenvalue=lam,
        i_star=i_star,
        eta=eta,
        prelude_severity=alpha * severities,
        prelude_length=n,
    )
    feedforward = None
    if kind == EIG_CASE3:
        feedforward = alpha * (inputs - states @ feedback.T)
    plan = AttackPlan(kind, mode, np.real(alpha * inputs), feedback.copy(), alpha, cert, feedforward)
    logger.info(f"mode {mode}: {kind} plan, lambda = {lam:.12g}, alpha = {alpha:.6g}, i* = {i_star}")
    return plan


def synthesize(plant: LiftedPlant, report: DetectabilityReport, target_severity: float = 10.0,
               epsilon_budget: float = 1e-3) -> AttackPlan:
    """Build the plan matching a vulnerable report's witness."""
    if not report.vulnerable:
        raise SynthesisError(f"mode {report.mode} is detectable; nothing to synthesize")
    condition = report.triggered_condition
    if condition == "i":
        return synth_condition_i(plant, report.mode, report.witness, target_severity)
    if condition == "ii":
        return synth_condition_ii(plant, report.mode, report.friend, report.witness, target_severity)
    return synth_condition_iii(plant, report.mode, report.friend, report.witness, epsilon_budget,
                               target_severity)
