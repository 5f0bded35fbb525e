"""Geometry of the matrix set F: points, closed-chain spectra and Lagrangians.

A point ``x`` of F is a Hermitian ``k x k`` matrix of rank at most ``2n`` with
at most ``n`` positive and ``n`` negative eigenvalues.  Points are stored in the
factored form ``x = A A* - B B*`` with complex ``k x n`` factors, which keeps
every point inside F without any retraction.

Writing ``W = [A, B]`` and ``D = diag(1, .., 1, -1, .., -1)`` gives
``x = W D W*``.  The nonzero spectrum of ``x y`` then equals the spectrum of
the ``2n x 2n`` matrix ``D G D G*`` with ``G = W_x* W_y``, which is what every
batch routine below diagonalizes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

__all__ = [
    "ModelParams",
    "FPoint",
    "ChainSpectrum",
    "Causal",
    "make_point",
    "point_from_matrix",
    "zero_point",
    "closed_chain_spectrum",
    "spectral_weight",
    "spectral_weight_sq",
    "lagrangian",
    "bc_integrand",
    "eff_lagrangian",
    "classify_causal",
    "stack_factors",
    "chain_eigenvalues",
    "pair_tables",
    "pair_gradients",
    "operator_norm",
]

CAUSAL_TOL = 1e-9


@dataclass(frozen=True)
class ModelParams:
    """Matrix dimension ``k`` and spin dimension ``n`` (``k >= 2n``)."""

    k: int
    n: int

    def __post_init__(self):
        if int(self.k) != self.k or int(self.n) != self.n:
            raise ValueError("k and n must be integers")
        if self.k < 1 or self.n < 1:
            raise ValueError("k and n must be positive")
        if self.k < 2 * self.n:
            raise ValueError(f"need k >= 2n, got k={self.k}, n={self.n}")

    @property
    def signs(self) -> np.ndarray:
        return np.concatenate([np.ones(self.n), -np.ones(self.n)])


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=complex, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class FPoint:
    """A point of F in factored form ``a a* - b b*``."""

    a_factor: np.ndarray
    b_factor: np.ndarray
    matrix: np.ndarray = field(repr=False)

    @property
    def params(self) -> ModelParams:
        k, n = self.a_factor.shape
        return ModelParams(k, n)

    @property
    def k(self) -> int:
        return self.a_factor.shape[0]

    @property
    def n(self) -> int:
        return self.a_factor.shape[1]

    @property
    def factors(self) -> np.ndarray:
        """The ``k x 2n`` matrix ``W = [A, B]``."""
        return np.hstack([self.a_factor, self.b_factor])

    def norm(self) -> float:
        return operator_norm(self.matrix)

    def trace(self) -> float:
        return float(np.trace(self.matrix).real)

    def scaled(self, t: float) -> "FPoint":
        """The point ``t * x`` for real ``t`` (negative ``t`` swaps the factors)."""
        r = np.sqrt(abs(t))
        if t >= 0:
            return make_point(r * self.a_factor, r * self.b_factor)
        return make_point(r * self.b_factor, r * self.a_factor)

    def conjugated(self, u: np.ndarray) -> "FPoint":
        """The point ``u x u*`` for a unitary ``u``."""
        return make_point(u @ self.a_factor, u @ self.b_factor)

    def __eq__(self, other):
        if not isinstance(other, FPoint):
            return NotImplemented
        return (
            self.a_factor.shape == other.a_factor.shape
            and np.array_equal(self.a_factor, other.a_factor)
            and np.array_equal(self.b_factor, other.b_factor)
        )

    def __hash__(self):
        return hash((self.a_factor.tobytes(), self.b_factor.tobytes()))


def make_point(a_factor, b_factor, params: ModelParams | None = None) -> FPoint:
    """Build the point ``a a* - b b*`` from two complex ``k x n`` factors."""
    a = np.asarray(a_factor, dtype=complex)
    b = np.asarray(b_factor, dtype=complex)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.ndim != 2 or a.shape != b.shape:
        raise ValueError(f"factor shapes differ or are not matrices: {a.shape} vs {b.shape}")
    if params is None:
        params = ModelParams(*a.shape)
    elif a.shape != (params.k, params.n):
        raise ValueError(f"factors must be {params.k}x{params.n}, got {a.shape[0]}x{a.shape[1]}")
    x = a @ a.conj().T - b @ b.conj().T
    x = 0.5 * (x + x.conj().T)
    return FPoint(_frozen(a), _frozen(b), _frozen(x))


def zero_point(params: ModelParams) -> FPoint:
    z = np.zeros((params.k, params.n), dtype=complex)
    return make_point(z, z, params)


def point_from_matrix(x, params: ModelParams, tol: float = 1e-12) -> FPoint:
    """Factor a Hermitian matrix lying in F.

    Raises ``ValueError`` if ``x`` is not Hermitian or has more than ``n``
    eigenvalues of either sign (relative to ``tol`` times its norm).
    """
    x = np.asarray(x, dtype=complex)
    if x.shape != (params.k, params.k):
        raise ValueError(f"expected a {params.k}x{params.k} matrix, got {x.shape}")
    scale = max(operator_norm(x), 1.0)
    if np.max(np.abs(x - x.conj().T)) > tol * scale:
        raise ValueError("matrix is not Hermitian")
    evals, evecs = np.linalg.eigh(0.5 * (x + x.conj().T))
    cut = tol * scale
    pos = [i for i in np.argsort(-evals) if evals[i] > cut]
    neg = [i for i in np.argsort(evals) if evals[i] < -cut]
    if len(pos) > params.n or len(neg) > params.n:
        raise ValueError(
            f"matrix has {len(pos)} positive and {len(neg)} negative eigenvalues; at most {params.n} each allowed"
        )
    a = np.zeros((params.k, params.n), dtype=complex)
    b = np.zeros((params.k, params.n), dtype=complex)
    for c, i in enumerate(pos):
        a[:, c] = np.sqrt(evals[i]) * evecs[:, i]
    for c, i in enumerate(neg):
        b[:, c] = np.sqrt(-evals[i]) * evecs[:, i]
    return make_point(a, b, params)


def operator_norm(x: np.ndarray) -> float:
    """Largest singular value (the sup-norm used throughout)."""
    if not np.any(x):
        return 0.0
    return float(np.linalg.norm(x, 2))


@dataclass(frozen=True)
class ChainSpectrum:
    """The ``2n`` eigenvalues of a closed chain, zero padded and sorted."""

    eigenvalues: np.ndarray

    def __post_init__(self):
        ev = np.array(self.eigenvalues, dtype=complex, copy=True)
        ev.setflags(write=False)
        object.__setattr__(self, "eigenvalues", ev)

    def __len__(self):
        return len(self.eigenvalues)

    @property
    def moduli(self) -> np.ndarray:
        return np.abs(self.eigenvalues)


def _sort_spectrum(ev: np.ndarray) -> np.ndarray:
    # modulus descending, then argument ascending; deterministic only
    order = np.lexsort((np.angle(ev), -np.abs(ev)))
    return ev[order]


def _check_pair(x: FPoint, y: FPoint):
    if x.a_factor.shape != y.a_factor.shape:
        raise ValueError(f"points live in different spaces: {x.a_factor.shape} vs {y.a_factor.shape}")


def closed_chain_spectrum(x: FPoint, y: FPoint) -> ChainSpectrum:
    """Eigenvalues of ``A_xy = x y`` counted with algebraic multiplicity."""
    _check_pair(x, y)
    lam = chain_eigenvalues(x.factors[None], y.factors[None], x.n)[0, 0]
    return ChainSpectrum(_sort_spectrum(lam))


def spectral_weight(s: ChainSpectrum) -> float:
    """``|A| = sum_j |lambda_j|``."""
    return float(np.sum(s.moduli))


def spectral_weight_sq(s: ChainSpectrum) -> float:
    """``|A^2| = sum_j |lambda_j|^2``."""
    return float(np.sum(s.moduli**2))


def _lag_from_spectrum(s: ChainSpectrum) -> float:
    n2 = len(s)
    return spectral_weight_sq(s) - spectral_weight(s) ** 2 / n2


def lagrangian(x: FPoint, y: FPoint) -> float:
    """``L[A_xy] = |A_xy^2| - |A_xy|^2 / (2n)``; clipped at zero against round-off."""
    return max(_lag_from_spectrum(closed_chain_spectrum(x, y)), 0.0)


def bc_integrand(x: FPoint, y: FPoint) -> float:
    """``|A_xy|^2``, the integrand of the boundedness functional."""
    return spectral_weight(closed_chain_spectrum(x, y)) ** 2


def eff_lagrangian(x: FPoint, y: FPoint, kappa: float) -> float:
    if kappa < 0:
        raise ValueError(f"kappa must be non-negative, got {kappa}")
    s = closed_chain_spectrum(x, y)
    return max(_lag_from_spectrum(s), 0.0) + kappa * spectral_weight(s) ** 2


class Causal(str, Enum):
    TIMELIKE = "timelike"
    SPACELIKE = "spacelike"
    LIGHTLIKE = "lightlike"


def classify_spectrum(ev: np.ndarray, tol: float = CAUSAL_TOL) -> Causal:
    mod = np.abs(ev)
    rho = float(mod.max()) if len(ev) else 0.0
    if rho == 0.0:
        return Causal.SPACELIKE
    cut = tol * rho
    im = np.abs(ev.imag)
    if np.all(im <= cut):
        return Causal.TIMELIKE
    if np.all(im > cut) and (mod.max() - mod.min()) <= cut:
        return Causal.SPACELIKE
    return Causal.LIGHTLIKE


def classify_causal(x: FPoint, y: FPoint, tol: float = CAUSAL_TOL) -> Causal:
    """Timelike, spacelike or lightlike separation of ``x`` and ``y``.

    Tolerances are relative to the spectral radius of ``x y``.  The zero
    spectrum counts as spacelike.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    return classify_spectrum(closed_chain_spectrum(x, y).eigenvalues, tol)


# ---------------------------------------------------------------------------
# batch kernels


def stack_factors(points) -> np.ndarray:
    """Stack the ``W = [A, B]`` factors of a point list into ``(N, k, 2n)``."""
    return np.stack([p.factors for p in points])


def _chain_matrices(Wx: np.ndarray, Wy: np.ndarray, n: int):
    s = np.concatenate([np.ones(n), -np.ones(n)])
    G = np.einsum("iak,jal->ijkl", Wx.conj(), Wy)
    DGD = s[:, None] * G * s[None, :]
    M = DGD @ np.conj(np.swapaxes(G, -1, -2))
    return G, M, s


def chain_eigenvalues(Wx: np.ndarray, Wy: np.ndarray, n: int) -> np.ndarray:
    """Closed-chain spectra for every pair: shape ``(Nx, Ny, 2n)``."""
    _, M, _ = _chain_matrices(Wx, Wy, n)
    return np.linalg.eigvals(M)


def pair_tables(Wx: np.ndarray, Wy: np.ndarray, n: int):
    """Lagrangian and ``|A|^2`` tables for every pair ``(x_i, y_j)``."""
    mod = np.abs(chain_eigenvalues(Wx, Wy, n))
    w1 = mod.sum(-1)
    lag = np.maximum((mod**2).sum(-1) - w1**2 / (2 * n), 0.0)
    return lag, w1**2


def pair_gradients(Wx: np.ndarray, Wy: np.ndarray, n: int, kappa: float = 0.0, weight_bc: float | None = None):
    """Values and factor derivatives of ``F = L + kappa |A|^2`` for every pair.

    If ``weight_bc`` is given, the returned function is ``|A|^2`` scaled by
    it instead (``kappa`` is then ignored); this serves the boundedness
    objective.

    Returns ``(F, Q1, Q2)`` where ``F`` has shape ``(Nx, Ny)`` and ``Q1``
    (``Q2``) has shape ``(Nx, Ny, k, 2n)`` with ``dF = Re tr(Q^* dW)`` for a
    perturbation ``dW`` of the first (second) point.  Derivatives are exact
    where the chain eigenvalues are simple; a vanishing eigenvalue gets the
    zero subgradient for its modulus.
    """
    G, M, s = _chain_matrices(Wx, Wy, n)
    lam, V = np.linalg.eig(M)
    mod = np.abs(lam)
    w1 = mod.sum(-1, keepdims=True)
    if weight_bc is None:
        F = np.maximum((mod**2).sum(-1) - w1[..., 0] ** 2 / (2 * n), 0.0) + kappa * w1[..., 0] ** 2
        c = 2 * mod - w1 / n + kappa * 2 * w1
    else:
        F = weight_bc * w1[..., 0] ** 2
        c = weight_bc * 2 * w1 * np.ones_like(mod)
    scale = np.maximum(mod.max(-1, keepdims=True), 1e-300)
    small = mod <= 1e-13 * scale
    phase = np.where(small, 0.0, np.conj(lam) / np.where(small, 1.0, mod))
    gamma = c * phase
    Vinv = np.linalg.pinv(V)
    Gam = (V * gamma[..., None, :]) @ Vinv
    GH = np.conj(np.swapaxes(G, -1, -2))
    sD = s[:, None] * GH
    R = sD @ Gam * s[None, :] + (sD * s[None, :]) @ np.conj(np.swapaxes(Gam, -1, -2))
    Q1 = np.einsum("jak,ijkl->ijal", Wy, R)
    Q2 = np.einsum("iak,ijlk->ijal", Wx, np.conj(R))
    return F, Q1, Q2
