"""Discrete measures on F, their functionals, constraints and moment measures."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .fgeometry import (
    FPoint,
    ModelParams,
    operator_norm,
    pair_tables,
    stack_factors,
    zero_point,
)

__all__ = [
    "DiscreteMeasure",
    "ConstraintSpec",
    "MomentView",
    "identity_basis",
    "action_S",
    "action_T",
    "pair_table",
    "bnorm",
    "constraint_residuals",
    "scale_measure",
    "conjugate_measure",
    "moment_decompose",
    "graph_reconstruct",
    "functionals_via_moments",
    "same_measure",
]

WEIGHT_TOL = 1e-12
MERGE_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """A normalized positive measure ``sum_i w_i delta_{x_i}`` on F."""

    points: tuple
    weights: np.ndarray

    def __post_init__(self):
        pts = tuple(self.points)
        w = np.array(self.weights, dtype=float, copy=True)
        if len(pts) == 0:
            raise ValueError("a measure needs at least one point")
        if w.shape != (len(pts),):
            raise ValueError(f"{len(pts)} points but {w.size} weights")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and non-negative")
        if abs(w.sum() - 1.0) > WEIGHT_TOL * len(w):
            raise ValueError(f"weights sum to {w.sum()!r}, not 1")
        shapes = {p.a_factor.shape for p in pts}
        if len(shapes) != 1:
            raise ValueError(f"points of mixed dimensions: {sorted(shapes)}")
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_unnormalized(cls, points, weights) -> "DiscreteMeasure":
        w = np.asarray(weights, dtype=float)
        return cls(tuple(points), w / w.sum())

    @property
    def params(self) -> ModelParams:
        return self.points[0].params

    def __len__(self):
        return len(self.points)

    @property
    def factors(self) -> np.ndarray:
        return stack_factors(self.points)

    @property
    def matrices(self) -> np.ndarray:
        return np.stack([p.matrix for p in self.points])

    def first_moment(self) -> np.ndarray:
        """``int x d rho``."""
        return np.einsum("i,iab->ab", self.weights, self.matrices)

    def pruned(self, tol: float = WEIGHT_TOL) -> "DiscreteMeasure":
        keep = [i for i, w in enumerate(self.weights) if w >= tol]
        if not keep:
            raise ValueError("every weight is below the pruning threshold")
        return DiscreteMeasure.from_unnormalized([self.points[i] for i in keep], self.weights[keep])


@dataclass(frozen=True, eq=False)
class ConstraintSpec:
    """Linear constraint (trace or identity) plus the boundedness bound ``C``.

    ``C`` may be a positive float, ``math.inf`` (no boundedness constraint)
    or the string ``"auto"``, which the solver front-end resolves from an
    estimate of the smallest feasible boundedness value.
    """

    kind: str
    basis: tuple
    C: float | str = math.inf

    def __post_init__(self):
        if self.kind not in ("trace", "identity"):
            raise ValueError(f"constraint kind must be 'trace' or 'identity', got {self.kind!r}")
        basis = tuple(np.array(e, dtype=complex) for e in self.basis)
        if not basis:
            raise ValueError("empty constraint basis")
        k = basis[0].shape[0]
        if not np.allclose(basis[0], np.eye(k)):
            raise ValueError("the first basis matrix must be the identity")
        for e in basis[1:]:
            if abs(np.trace(e)) > 1e-12:
                raise ValueError("basis matrices after the first must be trace-free")
        for e in basis:
            if np.max(np.abs(e - e.conj().T)) > 1e-12:
                raise ValueError("basis matrices must be Hermitian")
        if self.kind == "trace" and len(basis) != 1:
            raise ValueError("the trace constraint has a single basis element")
        flat = np.array([np.concatenate([e.real.ravel(), e.imag.ravel()]) for e in basis])
        if np.linalg.matrix_rank(flat) != len(basis):
            raise ValueError("constraint basis is linearly dependent")
        if isinstance(self.C, str):
            if self.C != "auto":
                raise ValueError(f"C must be a positive number or 'auto', got {self.C!r}")
        elif not self.C > 0:
            raise ValueError(f"C must be positive, got {self.C}")
        for e in basis:
            e.setflags(write=False)
        object.__setattr__(self, "basis", basis)

    @classmethod
    def trace(cls, k: int, C: float | str = math.inf) -> "ConstraintSpec":
        return cls("trace", (np.eye(k),), C)

    @classmethod
    def identity(cls, k: int, C: float | str = math.inf, real_symmetric: bool = False) -> "ConstraintSpec":
        return cls("identity", tuple(identity_basis(k, real_symmetric)), C)

    @property
    def k(self) -> int:
        return self.basis[0].shape[0]

    @property
    def L(self) -> int:
        return len(self.basis)

    @property
    def real_symmetric(self) -> bool:
        return self.kind == "identity" and self.L == self.k * (self.k + 1) // 2 and self.k > 1

    @property
    def bound(self) -> float:
        """Numeric value of C (``inf`` when unbounded)."""
        if isinstance(self.C, str):
            raise ValueError("C is still in auto mode; resolve it first")
        return float(self.C)

    def with_C(self, C: float) -> "ConstraintSpec":
        return ConstraintSpec(self.kind, self.basis, C)

    def basis_array(self) -> np.ndarray:
        return np.stack(self.basis)

    def g_matrix(self, points) -> np.ndarray:
        """``g[l, i] = Tr(e_l x_i)``."""
        X = np.stack([p.matrix for p in points])
        return np.einsum("lab,iba->li", self.basis_array(), X).real


def identity_basis(k: int, real_symmetric: bool = False) -> list:
    """Hermitian basis: identity, trace-free diagonals, symmetric and imaginary off-diagonals.

    The full basis has ``k**2`` elements; ``real_symmetric`` drops the
    imaginary antisymmetric ones, leaving ``k(k+1)/2``.
    """
    basis = [np.eye(k, dtype=complex)]
    for d in range(1, k):
        e = np.zeros((k, k), dtype=complex)
        e[np.arange(d), np.arange(d)] = 1.0
        e[d, d] = -d
        basis.append(e)
    for a in range(k):
        for b in range(a + 1, k):
            e = np.zeros((k, k), dtype=complex)
            e[a, b] = e[b, a] = 1.0
            basis.append(e)
    if not real_symmetric:
        for a in range(k):
            for b in range(a + 1, k):
                e = np.zeros((k, k), dtype=complex)
                e[a, b] = -1j
                e[b, a] = 1j
                basis.append(e)
    return basis


def pair_table(rho: DiscreteMeasure):
    """``(Lagrangian, |A|^2)`` tables over all ordered support pairs."""
    W = rho.factors
    return pair_tables(W, W, rho.params.n)


def _double_sum(w: np.ndarray, table: np.ndarray) -> float:
    # fixed index order: rows first, then the outer weighted sum
    return float(math.fsum(w[i] * math.fsum(w * table[i]) for i in range(len(w))))


def action_S(rho: DiscreteMeasure) -> float:
    lag, _ = pair_table(rho)
    return _double_sum(rho.weights, lag)


def action_T(rho: DiscreteMeasure) -> float:
    _, bc = pair_table(rho)
    return _double_sum(rho.weights, bc)


def bnorm(points: Sequence[FPoint], signed_weights) -> float:
    """``int (1 + |x|^2) d|mu|`` for a signed discrete measure."""
    w = np.asarray(signed_weights, dtype=float)
    if len(w) != len(points):
        raise ValueError("points and weights differ in length")
    return float(math.fsum(abs(wi) * (1.0 + p.norm() ** 2) for wi, p in zip(w, points)))


def constraint_residuals(rho: DiscreteMeasure, spec: ConstraintSpec) -> np.ndarray:
    """``G_l = Tr(e_l (1 - int x d rho))``; the zero vector means feasible."""
    if spec.k != rho.params.k:
        raise ValueError(f"constraint is for k={spec.k}, measure has k={rho.params.k}")
    g = spec.g_matrix(rho.points)
    return np.trace(spec.basis_array(), axis1=1, axis2=2).real - g @ rho.weights


def scale_measure(tau: float, rho: DiscreteMeasure) -> DiscreteMeasure:
    """Push-forward under ``x -> x / tau``, i.e. ``(s_tau mu)(Omega) = mu(tau Omega)``."""
    if tau == 0:
        raise ValueError("tau must be non-zero")
    return DiscreteMeasure(tuple(p.scaled(1.0 / tau) for p in rho.points), rho.weights)


def conjugate_measure(u: np.ndarray, rho: DiscreteMeasure) -> DiscreteMeasure:
    return DiscreteMeasure(tuple(p.conjugated(u) for p in rho.points), rho.weights)


# ---------------------------------------------------------------------------
# moment measures


@dataclass(frozen=True, eq=False)
class MomentView:
    """One representative per atom: ``x_i = f_i p_i`` with ``p_i`` in K.

    Directions are put on a canonical sheet of each line ``{p, -p}`` and the
    sign is carried by ``f``, which makes ``f`` odd by construction.
    ``graph_form`` is False when two atoms share a line with different
    ``f`` (the singular part of the second moment measure is then non-zero).
    """

    directions: tuple
    f_values: np.ndarray
    m_weights: np.ndarray
    graph_form: bool = True
    collisions: tuple = field(default=())

    @property
    def params(self) -> ModelParams:
        return self.directions[0].params


def _canonical_sign(x: np.ndarray) -> float:
    v = np.concatenate([x.real[np.triu_indices_from(x)], x.imag[np.triu_indices_from(x, 1)]])
    big = np.abs(v).max()
    for c in v:
        if abs(c) > 1e-8 * big:
            return 1.0 if c > 0 else -1.0
    return 1.0


def moment_decompose(rho: DiscreteMeasure, merge_tol: float = MERGE_TOL) -> MomentView:
    dirs, fs, ws = [], [], []
    for p, w in zip(rho.points, rho.weights):
        nrm = p.norm()
        if nrm == 0.0:
            dirs.append(zero_point(p.params))
            fs.append(0.0)
        else:
            sgn = _canonical_sign(p.matrix)
            dirs.append(p.scaled(sgn / nrm))
            fs.append(sgn * nrm)
        ws.append(w)
    collisions = []
    for i in range(len(dirs)):
        for j in range(i + 1, len(dirs)):
            if operator_norm(dirs[i].matrix - dirs[j].matrix) <= merge_tol:
                if abs(fs[i] - fs[j]) > merge_tol * max(1.0, abs(fs[i]), abs(fs[j])):
                    collisions.append((i, j))
    return MomentView(tuple(dirs), np.array(fs), np.array(ws), not collisions, tuple(collisions))


def graph_reconstruct(view: MomentView, merge_tol: float = MERGE_TOL) -> DiscreteMeasure:
    """The measure supported on the graph ``{f(p) p}``; coincident atoms are merged."""
    pts, ws = [], []
    for p, f, m in zip(view.directions, view.f_values, view.m_weights):
        x = p.scaled(float(f)) if f != 0 else zero_point(p.params)
        for idx, q in enumerate(pts):
            if operator_norm(q.matrix - x.matrix) <= merge_tol * max(1.0, q.norm()):
                ws[idx] += m
                break
        else:
            pts.append(x)
            ws.append(float(m))
    return DiscreteMeasure.from_unnormalized(pts, ws)


def functionals_via_moments(view: MomentView) -> tuple[float, float]:
    """``(S, T)`` from the moment representation via degree-two homogeneity."""
    W = stack_factors(view.directions)
    lag, bc = pair_tables(W, W, view.params.n)
    f2 = np.asarray(view.f_values) ** 2
    m2 = np.asarray(view.m_weights) * f2
    return _double_sum(m2, lag), _double_sum(m2, bc)


def same_measure(a: DiscreteMeasure, b: DiscreteMeasure, tol: float = 1e-12) -> bool:
    """Equality of two measures up to a permutation of atoms."""
    if len(a) != len(b) or a.params != b.params:
        return False
    used = set()
    for p, w in zip(a.points, a.weights):
        for j, (q, v) in enumerate(zip(b.points, b.weights)):
            if j in used:
                continue
            scale = max(1.0, p.norm())
            if abs(w - v) <= tol and operator_norm(p.matrix - q.matrix) <= tol * scale:
                used.add(j)
                break
        else:
            return False
    return True

