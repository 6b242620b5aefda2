#!/usr/bin/env python3
"""
Unit tests for the subspace module.
"""

import unittest
from pathlib import Path

import numpy as np
import scipy.linalg as sla

# Add the project root to the path
import sys
sys.path.insert(0, str(Path(__file__).parent.parent))

from core.errors import DimensionError, InvarianceError
from core.model import markov_stack, observability_stack
from core.subspace import (
    Friend,
    RestrictedMap,
    Subspace,
    compute_friend,
    controllable_subspace,
    eig_structure,
    feedback_friend,
    intersect,
    jordan_block,
    kernel_basis,
    max_output_nulling,
    null_space,
    output_nulling_iterates,
    project,
    project_complement,
    range_basis,
    restrict,
    sum_spaces,
    unvec,
    v_star,
    verify_friend,
)
from tests.systems import random_system


def finite_horizon_nulling(a, b, c, d, frames):
    """States from which some input keeps the output at zero for `frames` frames."""
    n = a.shape[0]
    window = np.hstack([observability_stack(a, c, frames), markov_stack(a, b, c, d, frames)])
    kernel = kernel_basis(window, 1e-9, reference=max(1.0, float(np.linalg.norm(window, 2))))
    return Subspace(range_basis(kernel[:n], 1e-9, reference=1.0), n, 1e-9)


class TestSubspaceBasics(unittest.TestCase):
    """Test cases for subspace construction and set operations."""

    def test_null_space(self):
        """Test the kernel of a rank-one diagonal matrix."""
        kernel = null_space(np.diag([1.0, 0.0]))
        self.assertEqual(kernel.dim, 1)
        self.assertTrue(kernel.contains(np.array([0.0, 1.0])))

    def test_empty_matrix_kernel_is_everything(self):
        """Test that a matrix with no rows has the whole space as kernel."""
        self.assertTrue(null_space(np.zeros((0, 3))).is_full)

    def test_rejects_non_orthonormal_basis(self):
        """Test that a non-orthonormal basis is rejected."""
        with self.assertRaises(DimensionError):
            Subspace(np.array([[2.0], [0.0]]), 2, 1e-9)

    def test_intersect_and_sum(self):
        """Test intersection and sum of two coordinate planes in R^3."""
        eye = np.eye(3)
        first = Subspace.span(eye[:, :2])
        second = Subspace.span(eye[:, 1:])
        meet = intersect(first, second)
        self.assertEqual(meet.dim, 1)
        self.assertTrue(meet.equals(Subspace.span(eye[:, [1]])))
        self.assertTrue(sum_spaces(first, second).is_full)

    def test_intersect_with_trivial(self):
        """Test that intersecting with {0} gives {0}."""
        self.assertTrue(intersect(Subspace.full(3), Subspace.trivial(3)).is_trivial)

    def test_complement(self):
        """Test that a subspace and its complement fill the space."""
        v = Subspace.span(np.array([[1.0], [1.0], [0.0]]))
        comp = v.complement()
        self.assertEqual(comp.dim, 2)
        self.assertLess(np.max(np.abs(v.basis.T @ comp.basis)), 1e-12)

    def test_projectors(self):
        """Test that the projector and its complement add up to the identity."""
        v = Subspace.span(np.array([[1.0], [1.0], [0.0]]))
        np.testing.assert_allclose(project(v) + project_complement(v), np.eye(3), atol=1e-12)
        np.testing.assert_allclose(project(v) @ np.array([1.0, -1.0, 0.0]), np.zeros(3), atol=1e-12)
        np.testing.assert_allclose(project(Subspace.full(3)), np.eye(3), atol=1e-12)

    def test_controllable_subspace_chain(self):
        """Test the reachable subspace of a shift chain fed at its last state."""
        a = np.diag([1.0, 1.0], 1)
        b = np.array([[0.0], [0.0], [1.0]])
        self.assertTrue(controllable_subspace(a, b).is_full)
        self.assertEqual(controllable_subspace(np.diag([0.5, 0.3]), np.array([[1.0], [0.0]])).dim, 1)

    def test_jordan_and_unvec(self):
        """Test the Jordan block layout and column unstacking."""
        np.testing.assert_allclose(jordan_block(2.0, 2), [[2.0, 1.0], [0.0, 2.0]])
        np.testing.assert_allclose(unvec(np.arange(6.0), 3), [[0.0, 3.0], [1.0, 4.0], [2.0, 5.0]])


class TestOutputNulling(unittest.TestCase):
    """Test cases for the output-nulling subspace and its friends."""

    def test_hidden_direction(self):
        """Test a plant whose input can keep x1 + x2 at zero."""
        a = np.diag([0.5, 0.3])
        b = np.array([[1.0], [0.0]])
        c = np.array([[1.0, 1.0]])
        d = np.zeros((1, 1))
        v = max_output_nulling(a, b, c, d)
        self.assertTrue(v.equals(Subspace.span(np.array([[1.0], [-1.0]]))))
        friend = compute_friend(v, a, b, c, d)
        direction = np.array([1.0, -1.0])
        np.testing.assert_allclose(friend.m @ direction, [-0.2], atol=1e-12)
        closed = a + b @ friend.m
        np.testing.assert_allclose(closed @ direction, 0.3 * direction, atol=1e-12)
        self.assertEqual(friend.n_mat.shape, (1, 0))

    def test_invertible_feedthrough(self):
        """Test that an invertible feedthrough nulls every state."""
        a = np.array([[0.5, 0.1], [0.0, 0.2]])
        b = np.eye(2)
        c = np.array([[1.0, 2.0], [0.0, 1.0]])
        d = np.eye(2)
        v = max_output_nulling(a, b, c, d)
        self.assertTrue(v.is_full)
        friend = compute_friend(v, a, b, c, d)
        np.testing.assert_allclose(friend.m, -c, atol=1e-10)

    def test_injection_directions(self):
        """Test that N spans the inputs moving the state inside V unseen by D."""
        a = np.diag([0.5, 0.4])
        b = np.array([[0.0], [1.0]])
        c = np.array([[1.0, 0.0]])
        d = np.zeros((1, 1))
        v = max_output_nulling(a, b, c, d)
        self.assertTrue(v.equals(Subspace.span(np.array([[0.0], [1.0]]))))
        friend = compute_friend(v, a, b, c, d)
        self.assertEqual(friend.n_mat.shape, (1, 1))
        self.assertTrue(v_star(v, a, b).equals(v))

    def test_iterates_shrink_to_fixed_point(self):
        """Test that the iteration starts at R^n and stops at V."""
        a = np.diag([0.5, 0.3])
        b = np.array([[1.0], [0.0]])
        c = np.array([[1.0, 1.0]])
        d = np.zeros((1, 1))
        iterates = output_nulling_iterates(a, b, c, d)
        self.assertEqual([s.dim for s in iterates], [2, 1, 1])
        self.assertTrue(iterates[-1].equals(max_output_nulling(a, b, c, d)))

    def test_feedback_friend_places_restricted_eigenvalue(self):
        """Test that N K moves the eigenvalue of the closed loop on V*."""
        a = np.diag([0.5, 0.4])
        b = np.array([[0.0], [1.0]])
        c = np.array([[1.0, 0.0]])
        d = np.zeros((1, 1))
        v = max_output_nulling(a, b, c, d)
        friend = compute_friend(v, a, b, c, d)
        vs = v_star(v, a, b)
        rmap = restrict(vs, friend, a, b)
        gain = (0.9 - rmap.a_restricted) / rmap.b_n_restricted
        moved = feedback_friend(friend, vs.basis, gain)
        verify_friend(moved, a, b, c, d)
        np.testing.assert_allclose(restrict(vs, moved, a, b).a_restricted, [[0.9]], atol=1e-12)
        self.assertIs(feedback_friend(friend, vs.basis, np.zeros((1, 0))), friend)

    def test_verify_friend_rejects_bad_feedback(self):
        """Test that a feedback breaking invariance is rejected."""
        a = np.diag([0.5, 0.3])
        b = np.array([[1.0], [0.0]])
        c = np.array([[1.0, 1.0]])
        d = np.zeros((1, 1))
        v = max_output_nulling(a, b, c, d)
        bad = Friend(np.zeros((1, 2)), np.zeros((1, 0)), v)
        with self.assertRaises(InvarianceError):
            verify_friend(bad, a, b, c, d)

    def test_matches_finite_horizon_oracle(self):
        """Test the fixed point against zero-output trajectories over n+1 frames."""
        rng = np.random.default_rng(11)
        checked = 0
        for _ in range(60):
            n = int(rng.integers(1, 5))
            m = int(rng.integers(1, 4))
            p = int(rng.integers(1, 4))
            a, b, c, d = random_system(rng, n, m, p, feedthrough=bool(rng.integers(0, 2)))
            v = max_output_nulling(a, b, c, d)
            oracle = finite_horizon_nulling(a, b, c, d, n + 1)
            self.assertTrue(v.equals(oracle, threshold=1e-6), f"n={n} m={m} p={p}")
            friend = compute_friend(v, a, b, c, d)
            verify_friend(friend, a, b, c, d)
            checked += 1
        self.assertEqual(checked, 60)


class TestRestriction(unittest.TestCase):
    """Test cases for the restricted closed loop and its eigenstructure."""

    def test_jordan_staircase(self):
        """Test that a Jordan block at 1 is found with chain length 2."""
        a = np.array([[1.0, 1.0, 0.0], [0.0, 1.0, 1.0], [0.0, 0.0, 0.5]])
        b = np.array([[0.0], [0.0], [1.0]])
        c = np.array([[0.0, 0.0, 1.0]])
        d = np.array([[1.0]])
        v = max_output_nulling(a, b, c, d)
        friend = compute_friend(v, a, b, c, d)
        rmap = restrict(v_star(v, a, b), friend, a, b)
        structures = {round(s.eigenvalue.real, 6): s for s in eig_structure(rmap)}
        self.assertIn(1.0, structures)
        unit = structures[1.0]
        self.assertEqual(unit.multiplicity, 2)
        self.assertEqual(unit.jordan_size, 2)
        self.assertFalse(unit.controllable)
        self.assertFalse(unit.stable)
        self.assertTrue(unit.borderline)
        self.assertTrue(structures[-0.5].stable)
        chain = unit.chain
        self.assertEqual(chain.shape, (rmap.dim, 2))
        residual = rmap.a_restricted @ chain - chain @ jordan_block(1.0, 2)
        self.assertLess(np.linalg.norm(residual), 1e-8)

    def test_chain_of_hidden_jordan_block(self):
        """Test that a rotated Jordan block yields a chain with A G = G J."""
        rng = np.random.default_rng(11)
        q, _ = np.linalg.qr(rng.standard_normal((4, 4)))
        form = sla.block_diag(jordan_block(0.7, 2), [[0.2]], [[-0.4]])
        rmap = RestrictedMap(Subspace.full(4), q @ form @ q.T, np.zeros((4, 0)))
        structures = {round(s.eigenvalue.real, 4): s for s in eig_structure(rmap)}
        block = structures[0.7]
        self.assertEqual(block.jordan_size, 2)
        self.assertEqual(block.kernel_dims, (1, 2))
        chain = block.chain
        residual = rmap.a_restricted @ chain - chain @ jordan_block(0.7, 2)
        self.assertLess(np.linalg.norm(residual), 1e-7)
        self.assertGreater(np.linalg.norm(chain[:, 0]), 1e-3)
        self.assertEqual(structures[0.2].chain.shape, (4, 1))

    def test_restricted_map_similar(self):
        """Test that the restricted map has the eigenvalues of the closed loop on V*."""
        rng = np.random.default_rng(5)
        a, b, c, d = random_system(rng, 4, 3, 2, feedthrough=False)
        v = max_output_nulling(a, b, c, d)
        friend = compute_friend(v, a, b, c, d)
        vs = v_star(v, a, b)
        rmap = restrict(vs, friend, a, b)
        closed = a + b @ friend.m
        np.testing.assert_allclose(closed @ vs.basis, vs.basis @ rmap.a_restricted, atol=1e-9)
        if vs.dim:
            eigs = sla.eigvals(rmap.a_restricted)
            for lam in eigs:
                smallest = sla.svdvals(closed - lam * np.eye(4))[-1]
                self.assertLess(smallest, 1e-7)


if __name__ == '__main__':
    unittest.main()
