#!/usr/bin/env python3
"""
Subspace module.
SVD-based subspace lattice plus the geometric-control algorithms built on it:
the maximal output-nulling subspace, its friends, restricted maps and the
eigenstructure of the restricted closed loop.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy.linalg as sla

from .config import get_setting
from .errors import DimensionError, InvarianceError, NotOutputNullingError

logger = logging.getLogger(__name__)

ORTHONORMAL_ATOL = 1e-10


def _rank_cut(singular_values: np.ndarray, rtol: float, reference: Optional[float]) -> int:
    if singular_values.size == 0:
        return 0
    ref = singular_values[0] if reference is None else reference
    if ref <= 0:
        return 0
    return int(np.sum(singular_values > rtol * ref))


def range_basis(mat: np.ndarray, rtol: float, reference: Optional[float] = None) -> np.ndarray:
    """Orthonormal basis of the column space; `reference` replaces sigma_max in the cutoff."""
    mat = np.asarray(mat)
    dtype = complex if np.iscomplexobj(mat) else float
    rows, cols = mat.shape
    if rows == 0 or cols == 0:
        return np.zeros((rows, 0), dtype=dtype)
    u, s, _ = sla.svd(mat, full_matrices=False)
    return u[:, :_rank_cut(s, rtol, reference)]


def kernel_basis(mat: np.ndarray, rtol: float, reference: Optional[float] = None) -> np.ndarray:
    """Orthonormal basis of the right kernel; same cutoff rule as range_basis."""
    mat = np.asarray(mat)
    dtype = complex if np.iscomplexobj(mat) else float
    rows, cols = mat.shape
    if cols == 0:
        return np.zeros((0, 0), dtype=dtype)
    if rows == 0:
        return np.eye(cols, dtype=dtype)
    _, s, vh = sla.svd(mat, full_matrices=True)
    return vh[_rank_cut(s, rtol, reference):].conj().T


def smallest_nonzero_singular_value(mat: np.ndarray, rtol: float) -> Optional[float]:
    """Smallest singular value above the rank cutoff, or None for a numerically zero matrix."""
    mat = np.asarray(mat)
    if mat.size == 0:
        return None
    s = sla.svdvals(mat)
    rank = _rank_cut(s, rtol, None)
    return float(s[rank - 1]) if rank else None


@dataclass(frozen=True, eq=False)
class Subspace:
    """A subspace stored as an orthonormal basis (zero columns means {0})."""
    basis: np.ndarray
    ambient_dim: int
    tol: float

    def __post_init__(self):
        basis = np.asarray(self.basis)
        if basis.ndim != 2 or basis.shape[0] != self.ambient_dim:
            raise DimensionError(f"basis shape {basis.shape} does not fit ambient dimension {self.ambient_dim}")
        if basis.shape[1] > self.ambient_dim:
            raise DimensionError("more basis columns than the ambient dimension")
        gram = basis.conj().T @ basis
        if basis.shape[1] and np.max(np.abs(gram - np.eye(basis.shape[1]))) > ORTHONORMAL_ATOL:
            raise DimensionError("subspace basis is not orthonormal")
        basis = basis.copy()
        basis.setflags(write=False)
        object.__setattr__(self, "basis", basis)

    @classmethod
    def span(cls, columns: np.ndarray, tol: Optional[float] = None, reference: Optional[float] = None):
        columns = np.asarray(columns)
        rtol = get_setting("rank_rtol", tol)
        return cls(range_basis(columns, rtol, reference), columns.shape[0], rtol)

    @classmethod
    def full(cls, n: int, tol: Optional[float] = None):
        return cls(np.eye(n), n, get_setting("rank_rtol", tol))

    @classmethod
    def trivial(cls, n: int, tol: Optional[float] = None):
        return cls(np.zeros((n, 0)), n, get_setting("rank_rtol", tol))

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    @property
    def is_trivial(self) -> bool:
        return self.dim == 0

    @property
    def is_full(self) -> bool:
        return self.dim == self.ambient_dim

    def projector(self) -> np.ndarray:
        return self.basis @ self.basis.conj().T

    def complement_projector(self) -> np.ndarray:
        return np.eye(self.ambient_dim) - self.projector()

    def complement(self) -> "Subspace":
        return Subspace(kernel_basis(self.basis.conj().T, self.tol, reference=1.0),
                        self.ambient_dim, self.tol)

    def distance(self, vectors: np.ndarray) -> float:
        """Largest norm of the component outside the subspace, per unit input norm."""
        vectors = np.asarray(vectors).reshape(self.ambient_dim, -1)
        if vectors.shape[1] == 0:
            return 0.0
        outside = vectors - self.basis @ (self.basis.conj().T @ vectors)
        norms = np.linalg.norm(vectors, axis=0)
        norms[norms == 0] = 1.0
        return float(np.max(np.linalg.norm(outside, axis=0) / norms))

    def contains(self, vectors: np.ndarray, threshold: Optional[float] = None) -> bool:
        return self.distance(vectors) <= get_setting("angle_threshold", threshold)

    def angles(self, other: "Subspace") -> np.ndarray:
        _check_ambient(self, other)
        if self.is_trivial or other.is_trivial:
            return np.zeros(0)
        return sla.subspace_angles(self.basis, other.basis)

    def equals(self, other: "Subspace", threshold: Optional[float] = None) -> bool:
        """Same dimension and every principal angle below the threshold."""
        if self.ambient_dim != other.ambient_dim or self.dim != other.dim:
            return False
        angles = self.angles(other)
        return bool(angles.size == 0 or np.max(angles) < get_setting("angle_threshold", threshold))


def _check_ambient(v: Subspace, w: Subspace):
    if v.ambient_dim != w.ambient_dim:
        raise DimensionError(f"ambient dimensions differ: {v.ambient_dim} vs {w.ambient_dim}")


def null_space(mat: np.ndarray, tol: Optional[float] = None) -> Subspace:
    """
    Numerical kernel of `mat`.

    Singular values at or below tol * sigma_max count as zero; the default
    tol is max(rows, cols) * machine epsilon. An empty matrix has the whole
    space as kernel.
    """
    mat = np.asarray(mat)
    rtol = tol if tol is not None else max(mat.shape) * np.finfo(float).eps
    return Subspace(kernel_basis(mat, rtol), mat.shape[1], rtol)


def intersect(v: Subspace, w: Subspace, tol: Optional[float] = None) -> Subspace:
    """Intersection from the kernel of [V, -W]."""
    _check_ambient(v, w)
    rtol = get_setting("rank_rtol", tol)
    if v.is_trivial or w.is_trivial:
        return Subspace.trivial(v.ambient_dim, rtol)
    coeffs = kernel_basis(np.hstack([v.basis, -w.basis]), rtol, reference=1.0)
    return Subspace(range_basis(v.basis @ coeffs[:v.dim], rtol, reference=1.0), v.ambient_dim, rtol)


def intersect_by_projection(v: Subspace, w: Subspace, tol: Optional[float] = None) -> Subspace:
    """Intersection as the kernel of the summed complement projectors."""
    _check_ambient(v, w)
    rtol = get_setting("rank_rtol", tol)
    total = v.complement_projector() + w.complement_projector()
    return Subspace(kernel_basis(total, rtol, reference=1.0), v.ambient_dim, rtol)


def sum_spaces(v: Subspace, w: Subspace, tol: Optional[float] = None) -> Subspace:
    _check_ambient(v, w)
    return Subspace.span(np.hstack([v.basis, w.basis]), tol, reference=1.0)


def sum_by_projection(v: Subspace, w: Subspace, tol: Optional[float] = None) -> Subspace:
    """V + W as the range of (P_V + P_W)^+ (P_V + P_W)."""
    _check_ambient(v, w)
    rtol = get_setting("rank_rtol", tol)
    total = v.projector() + w.projector()
    projector = sla.pinv(total, atol=rtol * 2.0) @ total
    return Subspace(range_basis(projector, rtol, reference=1.0), v.ambient_dim, rtol)


def project(v: Subspace) -> np.ndarray:
    return v.projector()


def project_complement(v: Subspace) -> np.ndarray:
    return v.complement_projector()


def _check_system(a, b, c, d):
    n = a.shape[0]
    if a.shape != (n, n):
        raise DimensionError(f"a must be square, got {a.shape}")
    if b.shape[0] != n or c.shape[1] != n:
        raise DimensionError(f"b {b.shape} / c {c.shape} do not match a {a.shape}")
    if d.shape != (c.shape[0], b.shape[1]):
        raise DimensionError(f"d has shape {d.shape}, expected {(c.shape[0], b.shape[1])}")


def _scale(*mats) -> float:
    return max([1.0] + [float(np.linalg.norm(m, 2)) for m in mats if m.size])


def controllable_subspace(a: np.ndarray, b: np.ndarray, tol: Optional[float] = None) -> Subspace:
    """Column space of [B, AB, ..., A^{n-1}B], grown one Krylov step at a time."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    n = a.shape[0]
    if a.shape != (n, n) or b.shape[0] != n:
        raise DimensionError(f"controllable_subspace needs square a and matching b, got {a.shape}, {b.shape}")
    rtol = get_setting("rank_rtol", tol)
    basis = range_basis(b, rtol)
    for _ in range(n):
        grown = range_basis(np.hstack([basis, a @ basis]), rtol, reference=_scale(a))
        if grown.shape[1] == basis.shape[1]:
            break
        basis = grown
    return Subspace(basis, n, rtol)


def output_nulling_iterates(a, b, c, d, tol: Optional[float] = None) -> List[Subspace]:
    """
    The decreasing sequence V_0 = R^n, V_{i+1} = {x : exists u, Ax+Bu in V_i, Cx+Du = 0}.

    The last element is the fixed point.
    """
    a, b, c, d = (np.asarray(m, dtype=float) for m in (a, b, c, d))
    _check_system(a, b, c, d)
    rtol = get_setting("rank_rtol", tol)
    n, m = a.shape[0], b.shape[1]
    current = Subspace.full(n, rtol)
    iterates = [current]
    for step in range(n + 1):
        comp = current.complement().basis
        stacked = np.vstack([np.hstack([comp.T @ a, comp.T @ b]), np.hstack([c, d])])
        kernel = kernel_basis(stacked, rtol, reference=_scale(a, b, c, d))
        nxt = Subspace(range_basis(kernel[:n], rtol, reference=1.0), n, rtol)
        iterates.append(nxt)
        logger.debug(f"output-nulling iteration {step + 1}: dim {current.dim} -> {nxt.dim}")
        if nxt.dim >= current.dim:
            break
        current = nxt
    return iterates


def max_output_nulling(a, b, c, d, tol: Optional[float] = None) -> Subspace:
    """Maximal subspace V with (A+BM)V in V and (C+DM)V = 0 for some M."""
    return output_nulling_iterates(a, b, c, d, tol)[-1]


@dataclass(frozen=True, eq=False)
class Friend:
    """Feedback M and injection N befriending `subspace`."""
    m: np.ndarray
    n_mat: np.ndarray
    subspace: Subspace

    def policy(self, x: np.ndarray, injection: Optional[np.ndarray] = None) -> np.ndarray:
        a = self.m @ x
        if injection is not None and self.n_mat.shape[1]:
            a = a + self.n_mat @ injection
        return a


def verify_friend(friend: Friend, a, b, c, d, tol: Optional[float] = None) -> Dict[str, float]:
    """Residuals of the friend identities; raises InvarianceError when any exceeds tolerance."""
    rtol = get_setting("residual_rtol", tol)
    v = friend.subspace
    basis = v.basis
    scale = _scale(a, b, c, d) * max(1.0, _scale(friend.m))
    closed = a + b @ friend.m
    residuals = {
        "invariance": float(np.linalg.norm(v.complement_projector() @ closed @ basis, 2)) if v.dim else 0.0,
        "output": float(np.linalg.norm((c + d @ friend.m) @ basis, 2)) if v.dim and c.size else 0.0,
        "injection_kernel": float(np.linalg.norm(d @ friend.n_mat, 2)) if friend.n_mat.size and d.size else 0.0,
    }
    target = intersect(Subspace.span(b @ kernel_basis(d, get_setting("rank_rtol"), reference=_scale(d))
                                     if d.shape[0] else b), v)
    image = Subspace.span(b @ friend.n_mat) if friend.n_mat.size else Subspace.trivial(a.shape[0])
    residuals["injection_image"] = 0.0 if image.equals(target, threshold=rtol * 10) else 1.0
    bad = {k: r for k, r in residuals.items() if r > rtol * scale}
    if bad:
        raise InvarianceError(f"friend identities fail: {bad}")
    return residuals


def compute_friend(v: Subspace, a, b, c, d, tol: Optional[float] = None) -> Friend:
    """
    One friend (M, N) of an output-nulling subspace.

    M solves A V + B U in V, C V + D U = 0 column by column in the least-squares
    sense and is zero on the orthogonal complement. N keeps the kernel-of-D
    directions whose image under B lands in V, selected left to right so that
    B N has independent columns.
    """
    a, b, c, d = (np.asarray(mat, dtype=float) for mat in (a, b, c, d))
    _check_system(a, b, c, d)
    rtol = get_setting("rank_rtol", tol)
    check_tol = get_setting("residual_rtol")
    n, m = a.shape[0], b.shape[1]
    basis = v.basis
    comp = v.complement().basis
    scale = _scale(a, b, c, d)

    if v.dim == 0:
        m_mat = np.zeros((m, n))
    else:
        lhs = np.vstack([comp.T @ b, d])
        rhs = -np.vstack([comp.T @ a @ basis, c @ basis])
        if m:
            u = sla.lstsq(lhs, rhs)[0]
        else:
            u = np.zeros((0, v.dim))
        residual = float(np.linalg.norm(lhs @ u - rhs, 2)) if rhs.size else 0.0
        if residual > check_tol * scale * max(1.0, float(np.linalg.norm(u, 2)) if u.size else 1.0):
            raise NotOutputNullingError(f"subspace of dim {v.dim} is not output-nulling (residual {residual:.3e})")
        m_mat = u @ basis.T

    d_kernel = kernel_basis(d, rtol, reference=_scale(d)) if d.shape[0] else np.eye(m)
    candidates = d_kernel @ kernel_basis(comp.T @ b @ d_kernel, rtol, reference=_scale(b)) \
        if d_kernel.shape[1] else np.zeros((m, 0))
    chosen, image = [], np.zeros((n, 0))
    for j in range(candidates.shape[1]):
        col = b @ candidates[:, j]
        rest = col - image @ (image.T @ col)
        if np.linalg.norm(rest) > rtol * _scale(b):
            chosen.append(j)
            image = np.hstack([image, (rest / np.linalg.norm(rest))[:, None]])
    n_mat = candidates[:, chosen] if chosen else np.zeros((m, 0))

    friend = Friend(m_mat, n_mat, v)
    verify_friend(friend, a, b, c, d)
    logger.debug(f"friend computed: dim V={v.dim}, N columns={n_mat.shape[1]}")
    return friend


def friend_difference(first: Friend, second: Friend, b, d) -> Tuple[np.ndarray, np.ndarray]:
    """
    Split (M1 - M2) V into N1 K + H with H in ker B and ker D.

    Returns (K, H).
    """
    basis = first.subspace.basis
    diff = (first.m - second.m) @ basis
    bn = b @ first.n_mat
    if bn.size:
        k = sla.lstsq(bn, b @ diff)[0]
    else:
        k = np.zeros((first.n_mat.shape[1], basis.shape[1]))
    return k, diff - first.n_mat @ k


def feedback_friend(friend: Friend, v_star_basis: np.ndarray, gain: np.ndarray) -> Friend:
    """The friend whose restriction to V* is A| + B_N K, with K in the coordinates of `v_star_basis`."""
    gain = np.real_if_close(np.asarray(gain))
    if gain.size == 0:
        return friend
    if np.iscomplexobj(gain):
        raise InvarianceError("feedback gain must be real")
    return Friend(friend.m + friend.n_mat @ gain @ np.asarray(v_star_basis).T, friend.n_mat, friend.subspace)


def v_star(v: Subspace, a, b, tol: Optional[float] = None) -> Subspace:
    """V intersected with the controllable subspace of (A, B)."""
    return intersect(v, controllable_subspace(a, b, tol), tol)


@dataclass(frozen=True, eq=False)
class RestrictedMap:
    v_star: Subspace
    a_restricted: np.ndarray
    b_n_restricted: np.ndarray

    @property
    def dim(self) -> int:
        return self.a_restricted.shape[0]


def restrict(v_star_space: Subspace, friend: Friend, a, b, tol: Optional[float] = None) -> RestrictedMap:
    """Matrices of A+BM and BN in the orthonormal coordinates of V*."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    rtol = get_setting("residual_rtol", tol)
    basis = v_star_space.basis
    closed = a + b @ friend.m
    bn = b @ friend.n_mat
    a_r = basis.T @ closed @ basis
    b_r = basis.T @ bn
    scale = _scale(a, b) * max(1.0, _scale(friend.m))
    invariance = float(np.linalg.norm(closed @ basis - basis @ a_r, 2)) if basis.size else 0.0
    injection = float(np.linalg.norm(bn - basis @ b_r, 2)) if bn.size else 0.0
    if invariance > rtol * scale or injection > rtol * scale:
        raise InvarianceError(f"V* is not invariant under the friend (residuals {invariance:.3e}, {injection:.3e})")
    return RestrictedMap(v_star_space, a_r, b_r)


def jordan_block(lam: complex, size: int) -> np.ndarray:
    dtype = complex if np.iscomplex(lam) else float
    block = np.diag(np.full(size, lam, dtype=dtype))
    if size > 1:
        block += np.diag(np.ones(size - 1), 1)
    return block


def real_columns(chain: np.ndarray) -> np.ndarray:
    """Real and imaginary parts of a (possibly complex) chain as real columns."""
    chain = np.asarray(chain)
    if not np.iscomplexobj(chain):
        return chain
    return np.hstack([chain.real, chain.imag])


@dataclass(frozen=True, eq=False)
class EigStructure:
    """One distinct eigenvalue of a restricted map (one per conjugate pair)."""
    eigenvalue: complex
    multiplicity: int
    jordan_size: int
    chain: np.ndarray
    kernel_dims: Tuple[int, ...]
    controllable: bool
    stable: bool
    borderline: bool
    low_confidence: bool = False

    @property
    def unstable(self) -> bool:
        return not self.stable

    @property
    def is_real(self) -> bool:
        return np.imag(self.eigenvalue) == 0

    @property
    def modulus(self) -> float:
        return float(abs(self.eigenvalue))

    def real_chain(self) -> np.ndarray:
        return real_columns(self.chain)


def _cluster(values: np.ndarray, cluster_tol: float) -> List[np.ndarray]:
    clusters: List[List[complex]] = []
    for val in sorted(values, key=lambda v: (np.real(v), np.imag(v))):
        for group in clusters:
            if any(abs(val - other) <= cluster_tol * max(1.0, abs(val)) for other in group):
                group.append(val)
                break
        else:
            clusters.append([val])
    return [np.array(group) for group in clusters]


def _jordan_chain(shifted: np.ndarray, kernels: List[np.ndarray]) -> np.ndarray:
    """
    g_0 .. g_{s-1} with shifted @ g_{j+1} = g_j; the top vector lies in
    ker shifted^s outside ker shifted^(s-1).
    """
    if not kernels:
        return np.zeros((shifted.shape[0], 0), dtype=shifted.dtype)
    top = kernels[-1]
    if len(kernels) > 1:
        below = kernels[-2]
        top = top - below @ (below.conj().T @ top)
    column = top[:, int(np.argmax(np.linalg.norm(top, axis=0)))]
    columns = [column / np.linalg.norm(column)]
    for _ in range(len(kernels) - 1):
        columns.append(shifted @ columns[-1])
    return np.column_stack(columns[::-1])


def eig_structure(rmap: RestrictedMap, tol: Optional[float] = None,
                  cluster_tol: Optional[float] = None) -> List[EigStructure]:
    """
    Distinct eigenvalues of the restricted map with kernel staircases.

    Nearby eigenvalues are merged and replaced by their mean. Each chain is
    the longest Jordan chain read off the staircase of kernels of
    (A - lambda I)^j, eigenvector first, so that A G = G J(lambda).
    """
    rtol = get_setting("rank_rtol", tol)
    ctol = get_setting("eig_cluster_tol", cluster_tol)
    a_r, b_r = rmap.a_restricted, rmap.b_n_restricted
    r = a_r.shape[0]
    if r == 0:
        return []
    band = 10 * rtol
    clusters = _cluster(sla.eigvals(a_r), ctol)
    means = []
    for group in clusters:
        lam = complex(np.mean(group))
        if abs(lam.imag) <= ctol * max(1.0, abs(lam)):
            lam = complex(lam.real, 0.0)
        means.append((lam, len(group)))

    low = set()
    for i, (li, _) in enumerate(means):
        for j, (lj, _) in enumerate(means[:i]):
            if abs(li - lj) < 10 * ctol * max(1.0, abs(li)):
                low.update((i, j))
    if low:
        logger.warning(f"clustered eigenvalues {[means[i][0] for i in sorted(low)]}; results are low-confidence")

    scale = max(1.0, float(np.linalg.norm(a_r, 2)))
    structures = []
    for idx, (lam, mult) in enumerate(means):
        if lam.imag < 0:
            continue
        shifted = a_r - lam * np.eye(r) if lam.imag else a_r - lam.real * np.eye(r)
        power = np.eye(r, dtype=shifted.dtype)
        dims, kernels = [], []
        for j in range(1, mult + 1):
            power = shifted @ power
            kernel = kernel_basis(power, rtol, reference=(2 * scale) ** j)
            if dims and kernel.shape[1] <= dims[-1]:
                break
            dims.append(kernel.shape[1])
            kernels.append(kernel)
            if kernel.shape[1] >= mult:
                break
        chain = _jordan_chain(shifted, kernels)
        confident = idx not in low and dims and dims[-1] == mult
        if not confident and idx not in low:
            logger.warning(f"eigenvalue {lam:.6g}: staircase reached {dims[-1] if dims else 0} of {mult} dimensions")
        if len(dims) > get_setting("long_chain_warning"):
            logger.warning(f"eigenvalue {lam:.6g} has a Jordan chain of length {len(dims)}; conditioning is poor")

        pbh = np.hstack([shifted, b_r.astype(shifted.dtype)])
        controllable = range_basis(pbh, rtol, reference=max(scale, _scale(b_r))).shape[1] == r
        modulus = abs(lam)
        structures.append(EigStructure(
            eigenvalue=lam if lam.imag else complex(lam.real, 0.0),
            multiplicity=mult,
            jordan_size=len(dims),
            chain=chain if lam.imag else chain.real,
            kernel_dims=tuple(dims),
            controllable=controllable,
            stable=modulus < 1.0 - band,
            borderline=abs(modulus - 1.0) <= band,
            low_confidence=not confident,
        ))
        logger.debug(f"eigenvalue {lam:.6g}: multiplicity {mult}, staircase {dims}, "
                     f"controllable={controllable}")
    return structures


def eigenspace_assignment_solutions(rmap: RestrictedMap, lam: complex, jordan_size: int,
                                    tol: Optional[float] = None) -> Subspace:
    """
    Solutions G (r x jordan_size) of (I - B B^+)(G J(lambda) - A G) = 0.

    The equation is linearized as a kernel in vec(G) (column stacking); each
    basis column of the returned subspace reshapes to one candidate chain.
    """
    if jordan_size < 1:
        raise ValueError(f"jordan_size must be at least 1, got {jordan_size}")
    rtol = get_setting("rank_rtol", tol)
    a_r, b_r = rmap.a_restricted, rmap.b_n_restricted
    r = a_r.shape[0]
    lam = complex(lam)
    lam_value = lam if lam.imag else lam.real
    q = range_basis(b_r, rtol)
    proj = np.eye(r) - q @ q.T
    j_block = jordan_block(lam_value, jordan_size)
    eye_s = np.eye(jordan_size)
    lhs = np.kron(eye_s, proj) @ (np.kron(j_block.T, np.eye(r)) - np.kron(eye_s, a_r))
    reference = max(1.0, float(np.linalg.norm(a_r, 2)) if r else 1.0, abs(lam))
    return Subspace(kernel_basis(lhs, rtol, reference=reference), r * jordan_size, rtol)


def unvec(column: np.ndarray, rows: int) -> np.ndarray:
    """Undo column stacking."""
    return np.asarray(column).reshape(rows, -1, order="F")
