#!/usr/bin/env python3
"""
Unit tests for the attack synthesis module.
"""

import json
import unittest
from pathlib import Path

import numpy as np

# Add the project root to the path
import sys
sys.path.insert(0, str(Path(__file__).parent.parent))

from core.detect import EigenWitness, analyze_detectability
from core.errors import SynthesisError
from core.model import LiftedPlant, lift, simulate
from core.serialization import plan_from_dict, plan_to_dict
from core.synth import (
    EIG_CASE1,
    EIG_CASE2,
    EIG_CASE3,
    KERNEL_DIRECTION,
    NULLING_POLICY,
    synth_condition_iii,
    synthesize,
)
from core.subspace import Friend, Subspace
from core.uas_fixture import GPS_MODE, build_uas_model, per_step_schedule
from tests.systems import detectable_plant, escape_plant, jordan_plant, kernel_plant, nulling_plant

BUDGET = 1e-3


def assert_certificate(test, plan, trace):
    """Every frame with a certified severity matches the simulation."""
    checked = 0
    for k in range(trace.horizon):
        predicted = plan.predicted_severity(k)
        if predicted is None:
            continue
        scale = max(1.0, float(np.linalg.norm(predicted)))
        test.assertLess(np.linalg.norm(trace.z[k] - predicted) / scale, 1e-8, f"frame {k}")
        checked += 1
    test.assertGreater(checked, 0)


class TestImpulsePlans(unittest.TestCase):
    """Test cases for plans built from conditions (i) and (ii)."""

    def test_kernel_direction_plan(self):
        """Test that the kernel-direction plan hits the target severity unseen."""
        plant = kernel_plant()
        plan = synthesize(plant, analyze_detectability(plant, "k"), target_severity=10.0)
        self.assertEqual(plan.kind, KERNEL_DIRECTION)
        trace = simulate(plant, "k", attack=plan, horizon=5)
        self.assertAlmostEqual(trace.z_norms[0], 10.0, places=9)
        self.assertLess(trace.y_norms.max(), 1e-12)
        assert_certificate(self, plan, trace)

    def test_nulling_policy_plan(self):
        """Test that the nulling plan reaches the target at the certified frame."""
        plant = nulling_plant()
        plan = synthesize(plant, analyze_detectability(plant, "n"), target_severity=10.0)
        self.assertEqual(plan.kind, NULLING_POLICY)
        self.assertEqual(plan.certificate.peak_frame, 2)
        trace = simulate(plant, "n", attack=plan, horizon=10)
        self.assertAlmostEqual(trace.z_norms[2], 10.0, places=9)
        self.assertLess(trace.y_norms.max(), 1e-12)
        assert_certificate(self, plan, trace)


class TestEigenPlans(unittest.TestCase):
    """Test cases for the three eigenvalue plan shapes."""

    def test_geometric_growth(self):
        """Test that |lambda| > 1 gives geometric growth under the stealth budget."""
        plant = escape_plant()
        plan = synthesize(plant, analyze_detectability(plant, "u"), epsilon_budget=BUDGET)
        self.assertEqual(plan.kind, EIG_CASE1)
        self.assertEqual(plan.certificate.growth, "geometric")
        self.assertAlmostEqual(plan.certificate.rate, 1.2, places=9)
        trace = simulate(plant, "u", attack=plan, horizon=40)
        self.assertLessEqual(trace.y_norms.max(), BUDGET * (1 + 1e-9))
        self.assertLess(trace.y_norms[2:].max(), 1e-10)
        assert_certificate(self, plan, trace)
        slope = np.polyfit(np.arange(2, 40), np.log(trace.z_norms[2:]), 1)[0]
        self.assertAlmostEqual(slope, np.log(1.2), places=6)

    def test_linear_growth_on_unit_circle(self):
        """Test that a unit eigenvalue seen at the chain end gives a periodic linear plan."""
        plant = jordan_plant()
        plan = synthesize(plant, analyze_detectability(plant, "u"), epsilon_budget=BUDGET)
        self.assertEqual(plan.kind, EIG_CASE3)
        self.assertEqual(plan.certificate.growth, "linear")
        trace = simulate(plant, "u", attack=plan, horizon=60)
        self.assertLessEqual(trace.y_norms.max(), BUDGET * (1 + 1e-6))
        assert_certificate(self, plan, trace)
        self.assertGreater(trace.z_norms[57], 5 * trace.z_norms[9])

    def test_linear_power_growth(self):
        """Test the longer-chain plan steering to the vector after the visible one."""
        plant = jordan_plant()
        friend = analyze_detectability(plant, "u").friend
        chain = np.eye(3)[:, :2]
        witness = EigenWitness(eigenvalue=1.0 + 0j, chain=chain, state_chain=chain,
                               gain=np.zeros((0, 3)), jordan_size=2, multiplicity=2,
                               v_star_basis=np.eye(3))
        plan = synth_condition_iii(plant, "u", friend, witness, BUDGET)
        self.assertEqual(plan.kind, EIG_CASE2)
        self.assertEqual(plan.certificate.i_star, 0)
        trace = simulate(plant, "u", attack=plan, horizon=30)
        alpha = plan.certificate.alpha
        np.testing.assert_allclose(trace.z[3:, 0], alpha * np.arange(27), atol=1e-10)
        self.assertLess(trace.y_norms[3:].max(), 1e-10)
        assert_certificate(self, plan, trace)

    def test_periodic_state_decomposition(self):
        """Test that the periodic plan's state is the chain term plus the replayed first period."""
        step_plant = lift(build_uas_model(), per_step_schedule())
        for plant, mode in ((jordan_plant(), "u"), (step_plant, GPS_MODE)):
            report = analyze_detectability(plant, mode)
            plan = synthesize(plant, report, epsilon_budget=BUDGET)
            self.assertEqual(plan.kind, EIG_CASE3)
            cert = plan.certificate
            n, lam, alpha = cert.prelude_length, cert.eigenvalue, cert.alpha
            chain = report.witness.state_chain
            g = chain[:, cert.i_star]
            rest = np.linalg.qr(chain[:, :-1])[0] if chain.shape[1] > 1 else None
            trace = simulate(plant, mode, attack=plan, horizon=6 * n)
            for k in range(n, 6 * n):
                cycle, offset = divmod(k, n)
                expected = alpha * cycle * lam ** (k - n) * g + lam ** (cycle * n) * trace.x[offset]
                residual = trace.x[k] - np.real(expected)
                if rest is not None:
                    residual = residual - np.real(rest @ (rest.conj().T @ residual))
                scale = max(float(np.linalg.norm(trace.x[k])), alpha * float(np.linalg.norm(g)))
                self.assertLess(np.linalg.norm(residual), 1e-6 * scale, f"{mode} frame {k}")

    def test_silent_prelude_scales_to_target(self):
        """Test that a prelude with no output is sized by the target severity."""
        plant = LiftedPlant.from_matrices(a=[[1.0]], c=[[0.0]], e=[[2.0]], b_a={"s": [[1.0]]})
        friend = Friend(np.zeros((1, 1)), np.zeros((1, 0)), Subspace.full(1))
        witness = EigenWitness(eigenvalue=1.0 + 0j, chain=np.eye(1), state_chain=np.eye(1),
                               gain=np.zeros((0, 1)), jordan_size=1, multiplicity=1,
                               v_star_basis=np.eye(1))
        plan = synth_condition_iii(plant, "s", friend, witness, BUDGET, target_severity=10.0)
        self.assertEqual(plan.kind, EIG_CASE3)
        self.assertAlmostEqual(plan.certificate.alpha, 5.0)
        self.assertEqual(plan.certificate.stealth_bound, 0.0)
        trace = simulate(plant, "s", attack=plan, horizon=6)
        np.testing.assert_allclose(trace.z[:, 0], 10.0 * np.arange(6))
        assert_certificate(self, plan, trace)

    def test_zero_budget(self):
        """Test that a zero stealth budget leaves no usable scale."""
        plant = escape_plant()
        report = analyze_detectability(plant, "u")
        with self.assertRaises(SynthesisError):
            synthesize(plant, report, epsilon_budget=0.0)

    def test_detectable_report(self):
        """Test that nothing is synthesized for a detectable mode."""
        plant = detectable_plant()
        with self.assertRaises(SynthesisError):
            synthesize(plant, analyze_detectability(plant, "d"))


class TestPlanScaling(unittest.TestCase):
    """Test cases for plan scaling and persistence."""

    def setUp(self):
        """Set up test fixtures."""
        self.plant = jordan_plant()
        self.plan = synthesize(self.plant, analyze_detectability(self.plant, "u"), epsilon_budget=BUDGET)

    def test_zero_scale_is_silent(self):
        """Test that scaling by zero gives an all-zero run."""
        trace = simulate(self.plant, "u", attack=self.plan.scaled(0.0), horizon=30)
        self.assertEqual(np.abs(trace.z).max(), 0.0)
        self.assertEqual(np.abs(trace.y).max(), 0.0)

    def test_double_scale_doubles_severity(self):
        """Test that the plan is linear in its scale."""
        once = simulate(self.plant, "u", attack=self.plan, horizon=30)
        twice = simulate(self.plant, "u", attack=self.plan.scaled(2.0), horizon=30)
        np.testing.assert_allclose(twice.z, 2.0 * once.z, atol=1e-12)
        self.assertAlmostEqual(self.plan.scaled(2.0).certificate.stealth_bound,
                               2.0 * self.plan.certificate.stealth_bound)

    def test_json_round_trip_replays_identically(self):
        """Test that a plan read back from JSON replays bit for bit."""
        restored = plan_from_dict(json.loads(json.dumps(plan_to_dict(self.plan))))
        self.assertEqual(restored.kind, self.plan.kind)
        first = simulate(self.plant, "u", attack=self.plan, horizon=20)
        second = simulate(self.plant, "u", attack=restored, horizon=20)
        np.testing.assert_array_equal(first.z, second.z)
        np.testing.assert_array_equal(first.a, second.a)


if __name__ == '__main__':
    unittest.main()
