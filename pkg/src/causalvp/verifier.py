"""Optimality certificates for candidate minimizers.

Given a discrete measure ``rho`` and its constraint data, the verifier fits
the Lagrange multipliers ``(kappa, Lambda)`` and checks

* constancy of ``ell + kappa t`` on the support and the two level sets of
  ``Phi_1`` and ``Phi_2``,
* the off-support inequality ``Phi(x) >= -2 (S + kappa T)``,
* positivity of the second-variation kernel on ``J = <t, g_1..g_L>^perp``,
  also for the operator extended by one auxiliary point,

and reports regularity and a-priori diagnostics.  All functions of the
support are evaluated in x-space: the powers of ``f`` in the moment picture
are absorbed by homogeneity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .fgeometry import FPoint, make_point, operator_norm, pair_gradients, pair_tables
from .measures import (
    MERGE_TOL,
    ConstraintSpec,
    DiscreteMeasure,
    _canonical_sign,
    action_S,
    action_T,
    pair_table,
)

__all__ = [
    "SupportFunctions",
    "MultiplierFit",
    "ELCertificate",
    "VerifyConfig",
    "ScanResult",
    "support_functions",
    "fit_multipliers",
    "kappa_from_stationarity",
    "phi",
    "phi_batch",
    "level_set_residuals",
    "off_support_scan",
    "scan_points",
    "regularity_check",
    "pset_membership",
    "second_variation_operator",
    "j_basis",
    "j_projector",
    "psd_on_J",
    "extended_operator",
    "extended_psd_check",
    "apriori_diagnostics",
    "hilbert_schmidt_norm",
    "certify",
    "certificate_checks",
]


@dataclass(frozen=True)
class VerifyConfig:
    el_tol: float = 1e-6
    psd_tol: float = 1e-8
    rank_tol: float = 1e-8
    bc_tol: float = 1e-7
    merge_tol: float = MERGE_TOL
    pset_tol: float = 1e-8
    hs_tol: float = 1e-6
    scan_count: int = 10000
    aux_count: int = 100
    epsilon: float = 2.0
    seed: int = 0


@dataclass(frozen=True, eq=False)
class SupportFunctions:
    """``ell``, ``t`` and ``g_l`` evaluated on the support points."""

    weights: np.ndarray
    ell: np.ndarray
    tfrak: np.ndarray
    g: np.ndarray

    @property
    def N(self) -> int:
        return len(self.weights)

    @property
    def L(self) -> int:
        return self.g.shape[0]


def support_functions(rho: DiscreteMeasure, spec: ConstraintSpec) -> SupportFunctions:
    lag, bc = pair_table(rho)
    w = rho.weights
    ell = np.array([math.fsum(w * row) for row in lag])
    tfrak = np.array([math.fsum(w * row) for row in bc])
    return SupportFunctions(w.copy(), ell, tfrak, spec.g_matrix(rho.points))


@dataclass(frozen=True, eq=False)
class MultiplierFit:
    kappa: float
    lam: np.ndarray
    Lambda: np.ndarray
    c_value: float
    el_residual: float
    lambda_residual: float
    bc_active: bool
    kappa_identifiable: bool
    kappa_unclamped: float | None
    g_rank: int


def _basis_norms(spec: ConstraintSpec) -> np.ndarray:
    return np.array([np.linalg.norm(e) for e in spec.basis])


def fit_multipliers(
    sf: SupportFunctions,
    S: float,
    T: float,
    C: float,
    spec: ConstraintSpec,
    bc_tol: float = 1e-7,
    rank_tol: float = 1e-8,
) -> MultiplierFit:
    """Weighted least-squares fit of ``kappa`` and ``lambda``.

    ``kappa`` makes ``ell + kappa t`` as constant as possible on the support
    (and is forced to zero when the boundedness constraint is inactive);
    ``lambda`` then solves ``sum_l lambda_l g_l / 4 = S + kappa T``.  A rank
    deficient ``g`` gets the minimum Frobenius-norm ``Lambda``.
    """
    w = sf.weights
    active = math.isfinite(C) and T >= C * (1.0 - bc_tol)
    kappa, kappa_raw, identifiable = 0.0, None, True
    if active:
        tm = float(w @ sf.tfrak)
        lm = float(w @ sf.ell)
        dt = sf.tfrak - tm
        var = float(w @ dt**2)
        if var <= (rank_tol * max(abs(tm), 1e-300)) ** 2:
            identifiable = False
        else:
            kappa_raw = -float(w @ ((sf.ell - lm) * dt)) / var
            kappa = max(kappa_raw, 0.0)
    c = S + kappa * T
    resid = sf.ell + kappa * sf.tfrak - c
    el = float(np.max(np.abs(resid)))

    norms = _basis_norms(spec)
    sw = np.sqrt(w)
    design = (sw[:, None] * sf.g.T) / norms[None, :] / 4.0
    sv = np.linalg.svd(design, compute_uv=False)
    g_rank = int(np.sum(sv > rank_tol * sv[0])) if sv.size and sv[0] > 0 else 0
    mu, *_ = np.linalg.lstsq(design, sw * c, rcond=rank_tol)
    lam = mu / norms
    Lambda = np.einsum("l,lab->ab", lam, spec.basis_array())
    lres = float(np.max(np.abs(sf.g.T @ lam / 4.0 - c)))
    return MultiplierFit(kappa, lam, Lambda, c, el, lres, active, identifiable, kappa_raw, g_rank)


def kappa_from_stationarity(rho: DiscreteMeasure, spec: ConstraintSpec) -> tuple[float, np.ndarray, float]:
    """Fit ``(kappa, lambda)`` from stationarity of ``Phi`` at the support points.

    Solves ``2 grad ell + 2 kappa grad t - sum_l lambda_l grad g_l = 0`` in
    the least-squares sense over all factor directions of all support points
    (weighted by ``sqrt(w)``).  Returns ``(kappa, lambda, residual_norm)``;
    ``kappa`` is clamped at zero.  This identifies ``kappa`` when ``t`` is
    constant on the support.
    """
    W = rho.factors
    n = rho.params.n
    w = rho.weights
    s = rho.params.signs
    _, Ql, _ = pair_gradients(W, W, n, 0.0)
    _, Qt, _ = pair_gradients(W, W, n, weight_bc=1.0)
    grad_l = np.einsum("j,ijab->iab", w, Ql)
    grad_t = np.einsum("j,ijab->iab", w, Qt)
    grad_g = np.stack([2.0 * np.einsum("ab,ibc->iac", e, W) * s[None, None, :] for e in spec.basis])
    sw = np.sqrt(w)[:, None, None]

    def flat(a):
        a = a * sw
        return np.concatenate([a.real.ravel(), a.imag.ravel()])

    A = np.column_stack([2.0 * flat(grad_t)] + [-flat(gg) for gg in grad_g])
    b = -2.0 * flat(grad_l)
    sol, *_ = np.linalg.lstsq(A, b, rcond=1e-10)
    kappa = max(float(sol[0]), 0.0)
    if kappa != sol[0]:
        sol2, *_ = np.linalg.lstsq(A[:, 1:], b, rcond=1e-10)
        sol = np.concatenate([[0.0], sol2])
    res = float(np.linalg.norm(A @ sol - b))
    return kappa, sol[1:], res


def phi_batch(W: np.ndarray, rho: DiscreteMeasure, kappa: float, Lambda: np.ndarray):
    """``(Phi, Phi_1, Phi_2)`` for a stack of factor matrices ``W``."""
    lag, bc = pair_tables(W, rho.factors, rho.params.n)
    phi2 = 2.0 * ((lag + kappa * bc) @ rho.weights)
    s = rho.params.signs
    X = np.einsum("iak,k,ibk->iab", W, s, W.conj())
    phi1 = -np.einsum("ab,iba->i", Lambda, X).real
    return phi1 + phi2, phi1, phi2


def phi(x: FPoint, rho: DiscreteMeasure, kappa: float, Lambda: np.ndarray) -> tuple[float, float, float]:
    if kappa < 0:
        raise ValueError("kappa must be non-negative")
    p, p1, p2 = phi_batch(x.factors[None], rho, kappa, Lambda)
    return float(p[0]), float(p1[0]), float(p2[0])


def level_set_residuals(rho: DiscreteMeasure, fit) -> tuple[np.ndarray, np.ndarray]:
    """Per support point ``|Phi_1 + 4c|`` and ``|Phi_2 - 2c|`` with ``c = S + kappa T``."""
    _, p1, p2 = phi_batch(rho.factors, rho, fit.kappa, fit.Lambda)
    return np.abs(p1 + 4.0 * fit.c_value), np.abs(p2 - 2.0 * fit.c_value)


# ---------------------------------------------------------------------------
# off-support scan


@dataclass(frozen=True, eq=False)
class ScanResult:
    min_gap: float | None
    norms: np.ndarray
    phi: np.ndarray
    phi1: np.ndarray
    phi2: np.ndarray
    gap: np.ndarray
    kind: np.ndarray
    in_P: np.ndarray | None = None
    min_gap_in_P: float | None = None

    def __len__(self):
        return len(self.gap)


def _operator_norms(X: np.ndarray) -> np.ndarray:
    if len(X) == 0:
        return np.zeros(0)
    return np.linalg.norm(X, ord=2, axis=(1, 2))


def scan_points(W: np.ndarray, rho: DiscreteMeasure, fit, kind=None) -> ScanResult:
    """Evaluate ``Phi(x) + 2(S + kappa T)`` at the given factor matrices."""
    if len(W) == 0:
        e = np.zeros(0)
        return ScanResult(None, e, e, e, e, e, np.zeros(0, dtype="<U4"))
    p, p1, p2 = phi_batch(W, rho, fit.kappa, fit.Lambda)
    gap = p + 2.0 * fit.c_value
    s = rho.params.signs
    X = np.einsum("iak,k,ibk->iab", W, s, W.conj())
    if kind is None:
        kind = np.full(len(W), "pt")
    return ScanResult(float(gap.min()), _operator_norms(X), p, p1, p2, gap, np.asarray(kind))


def _sample_scan(rho: DiscreteMeasure, count: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    k, n = rho.params.k, rho.params.n
    W0 = rho.factors
    norms = np.array([p.norm() for p in rho.points])
    rmax = max(float(norms.max()), 1e-12)
    n_rand = count // 2
    n_ray = count // 4
    n_pert = count - n_rand - n_ray
    out, kinds = [], []

    # (i) random points with norms up to twice the support radius
    a = rng.normal(size=(n_rand, k, n)) + 1j * rng.normal(size=(n_rand, k, n))
    b = rng.uniform(0.0, 1.5, size=(n_rand, 1, 1)) * (rng.normal(size=(n_rand, k, n)) + 1j * rng.normal(size=(n_rand, k, n)))
    Wr = np.concatenate([a, b], axis=2)
    X = np.einsum("iak,k,ibk->iab", Wr, rho.params.signs, Wr.conj())
    nr = np.maximum(_operator_norms(X), 1e-300)
    target = rng.uniform(0.0, 2.0 * rmax, size=n_rand)
    Wr = Wr * np.sqrt(target / nr)[:, None, None]
    out.append(Wr)
    kinds += ["rand"] * n_rand

    # (ii) rays t * x0 through support directions
    idx = rng.integers(0, len(rho), size=n_ray)
    t = rng.uniform(-2.0, 2.0, size=n_ray)
    Wy = W0[idx] * np.sqrt(np.abs(t))[:, None, None]
    neg = t < 0
    Wy[neg] = np.concatenate([Wy[neg][:, :, n:], Wy[neg][:, :, :n]], axis=2)
    out.append(Wy)
    kinds += ["ray"] * n_ray

    # (iii) perturbations of support points
    idx = rng.integers(0, len(rho), size=n_pert)
    sig = 10.0 ** rng.uniform(-4.0, -1.0, size=n_pert)
    scale = np.linalg.norm(W0[idx], axis=(1, 2))
    noise = rng.normal(size=(n_pert, k, 2 * n)) + 1j * rng.normal(size=(n_pert, k, 2 * n))
    out.append(W0[idx] + (sig * scale / np.sqrt(2 * k * 2 * n))[:, None, None] * noise)
    kinds += ["pert"] * n_pert
    return np.concatenate(out, axis=0), np.array(kinds)


def off_support_scan(
    rho: DiscreteMeasure,
    fit,
    count: int,
    seed: int = 0,
    spec: ConstraintSpec | None = None,
    restrict_to_P: bool = False,
    pset_tol: float = 1e-8,
    chunk: int = 4096,
) -> ScanResult:
    """Sample F and return the smallest ``Phi(x) + 2(S + kappa T)``.

    Samples are random points scaled to the support's radius, points on rays
    through the support directions, and small perturbations of support
    points.  For singular minimizers pass ``restrict_to_P`` (with ``spec``)
    to additionally report the minimum over samples in the set P.
    """
    if count <= 0:
        e = np.zeros(0)
        return ScanResult(None, e, e, e, e, e, np.zeros(0, dtype="<U4"))
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5CA7]))
    W, kinds = _sample_scan(rho, count, rng)
    parts = [scan_points(W[i : i + chunk], rho, fit, kinds[i : i + chunk]) for i in range(0, len(W), chunk)]
    res = ScanResult(
        float(min(p.min_gap for p in parts)),
        np.concatenate([p.norms for p in parts]),
        np.concatenate([p.phi for p in parts]),
        np.concatenate([p.phi1 for p in parts]),
        np.concatenate([p.phi2 for p in parts]),
        np.concatenate([p.gap for p in parts]),
        kinds,
    )
    if restrict_to_P:
        if spec is None:
            raise ValueError("restricting to P needs the constraint spec")
        sf = support_functions(rho, spec)
        inP = np.array([_pset_from_factors(Wi, rho, sf, spec, pset_tol) for Wi in W])
        gmin = float(res.gap[inP].min()) if inP.any() else None
        res = ScanResult(res.min_gap, res.norms, res.phi, res.phi1, res.phi2, res.gap, kinds, inP, gmin)
    return res


# ---------------------------------------------------------------------------
# regularity and the set P


def regularity_check(sf: SupportFunctions, T: float, C: float, tol: float = 1e-8) -> tuple[bool, int, float]:
    """``(regular, g_rank, t_spread)``.

    Regular means the ``g_l`` are linearly independent on the support and,
    when ``T = C``, ``t`` is not constant there.
    """
    w = sf.weights
    Gw = sf.g * np.sqrt(w)[None, :]
    sv = np.linalg.svd(Gw, compute_uv=False)
    g_rank = int(np.sum(sv > tol * sv[0])) if sv.size and sv[0] > 0 else 0
    tm = float(w @ sf.tfrak)
    spread = float(np.sqrt(max(w @ (sf.tfrak - tm) ** 2, 0.0)))
    inactive = not math.isfinite(C) or T < C - tol * C
    regular = g_rank == sf.L and (inactive or spread > tol * abs(tm))
    return regular, g_rank, spread


def _pset_from_factors(Wx, rho, sf, spec, tol) -> bool:
    s = rho.params.signs
    X = (Wx * s[None, :]) @ Wx.conj().T
    if not np.any(X):
        raise ValueError("the zero point has no direction")
    gx = np.einsum("lab,ba->l", spec.basis_array(), X).real
    _, bc = pair_tables(Wx[None], rho.factors, rho.params.n)
    tx = float(bc[0] @ rho.weights)
    w = sf.weights
    N, L = sf.N, sf.L
    # unknowns (psi, phi)
    A = np.zeros((L + 2, 2 * N))
    rhs = np.zeros(L + 2)
    A[0, N:] = w
    rhs[0] = 1.0
    A[1 : L + 1, :N] = sf.g * w[None, :]
    rhs[1 : L + 1] = -gx
    A[L + 1, :N] = 2.0 * w * sf.tfrak
    A[L + 1, N:] = w * sf.tfrak
    rhs[L + 1] = -tx
    sol, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    res = float(np.linalg.norm(A @ sol - rhs))
    scale = 1.0 + float(np.linalg.norm(rhs)) + float(np.abs(sf.g).max()) + float(np.abs(sf.tfrak).max())
    return res <= tol * scale


def pset_membership(x: FPoint, rho: DiscreteMeasure, sf: SupportFunctions, spec: ConstraintSpec, tol: float = 1e-8) -> bool:
    """Whether ``x`` lies in the set P on which the off-support inequality still holds.

    ``x`` is a member iff there are ``phi, psi`` on the support with
    ``<phi|1> = 1``, ``g_l(x) = -<psi|g_l>`` and ``t(x) = -<2 psi + phi|t>``.
    """
    if x.norm() == 0.0:
        raise ValueError("the zero point has no direction")
    return _pset_from_factors(x.factors, rho, sf, spec, tol)


# ---------------------------------------------------------------------------
# second variations


def second_variation_operator(rho: DiscreteMeasure, kappa: float) -> np.ndarray:
    """Symmetrized kernel ``sqrt(w_i) L_eff(x_i, x_j) sqrt(w_j)``."""
    if kappa < 0:
        raise ValueError("kappa must be non-negative")
    lag, bc = pair_table(rho)
    K = lag + kappa * bc
    K = 0.5 * (K + K.T)
    sw = np.sqrt(rho.weights)
    return sw[:, None] * K * sw[None, :]


def hilbert_schmidt_norm(secvar: np.ndarray) -> float:
    """``sqrt(sum_ij w_i w_j K_ij^2)`` for the symmetrized kernel."""
    return float(np.linalg.norm(secvar, "fro"))


def _constraint_columns(sf: SupportFunctions) -> np.ndarray:
    sw = np.sqrt(sf.weights)
    return np.column_stack([sw * sf.tfrak] + [sw * gl for gl in sf.g])


def j_basis(V: np.ndarray, rank_tol: float = 1e-8) -> np.ndarray:
    """Orthonormal basis of the orthogonal complement of the columns of ``V``."""
    U, sv, _ = np.linalg.svd(V, full_matrices=True)
    r = int(np.sum(sv > rank_tol * sv[0])) if sv.size and sv[0] > 0 else 0
    return U[:, r:]


def j_projector(sf: SupportFunctions, rank_tol: float = 1e-8) -> np.ndarray:
    B = j_basis(_constraint_columns(sf), rank_tol)
    return B @ B.T


def _min_eig_on(B: np.ndarray, M: np.ndarray) -> float | None:
    if B.shape[1] == 0:
        return None
    P = B.T @ M @ B
    return float(np.linalg.eigvalsh(0.5 * (P + P.T))[0])


def psd_on_J(secvar: np.ndarray, sf: SupportFunctions, weights=None, rank_tol: float = 1e-8) -> tuple[float | None, int]:
    """Smallest eigenvalue of the kernel compressed to ``J``, and ``dim J``.

    ``weights`` defaults to the ones stored in ``sf``; the weighted inner
    product is realized by the ``sqrt(w)`` conjugation of the kernel.
    """
    if weights is not None and not np.allclose(weights, sf.weights):
        raise ValueError("weights disagree with the support functions")
    B = j_basis(_constraint_columns(sf), rank_tol)
    return _min_eig_on(B, secvar), B.shape[1]


def _line_collision(z: FPoint, rho: DiscreteMeasure, merge_tol: float) -> bool:
    nz = z.norm()
    pz = _canonical_sign(z.matrix) * z.matrix / nz
    for p in rho.points:
        nr = p.norm()
        if nr == 0.0:
            continue
        q = _canonical_sign(p.matrix) * p.matrix / nr
        if operator_norm(pz - q) <= merge_tol:
            return True
    return False


def extended_operator(rho: DiscreteMeasure, kappa: float, aux_point: FPoint, sf: SupportFunctions, spec: ConstraintSpec):
    """Kernel on ``L^2(m) + R`` with a unit mass at ``aux_point``.

    Returns ``(E, V)``: the ``(N+1) x (N+1)`` symmetric operator in an
    orthonormal basis and the columns spanning ``<t, g_1..g_L>`` extended to
    the auxiliary index by their defining formulas.
    """
    N = len(rho)
    sec = second_variation_operator(rho, kappa)
    Wz = aux_point.factors[None]
    lag, bc = pair_tables(Wz, rho.factors, rho.params.n)
    lz, bz = pair_tables(Wz, Wz, rho.params.n)
    kz = lag[0] + kappa * bc[0]
    sw = np.sqrt(rho.weights)
    E = np.zeros((N + 1, N + 1))
    E[:N, :N] = sec
    E[:N, N] = E[N, :N] = sw * kz
    E[N, N] = lz[0, 0] + kappa * bz[0, 0]
    tz = float(bc[0] @ rho.weights)
    gz = spec.g_matrix([aux_point])[:, 0]
    V = np.vstack([_constraint_columns(sf), np.concatenate([[tz], gz])[None, :]])
    return E, V


def extended_psd_check(
    rho: DiscreteMeasure,
    kappa: float,
    aux_point: FPoint,
    sf: SupportFunctions,
    spec: ConstraintSpec,
    merge_tol: float = MERGE_TOL,
    rank_tol: float = 1e-8,
) -> tuple[float | None, int]:
    if aux_point.norm() == 0.0:
        raise ValueError("auxiliary point must be non-zero")
    if _line_collision(aux_point, rho, merge_tol):
        raise ValueError("auxiliary point lies on a support direction")
    E, V = extended_operator(rho, kappa, aux_point, sf, spec)
    B = j_basis(V, rank_tol)
    return _min_eig_on(B, E), B.shape[1]


def random_aux_points(rho: DiscreteMeasure, count: int, seed: int, merge_tol: float = MERGE_TOL) -> list[FPoint]:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xA0C5]))
    k, n = rho.params.k, rho.params.n
    rmax = max(p.norm() for p in rho.points) or 1.0
    pts = []
    while len(pts) < count:
        a = rng.normal(size=(k, n)) + 1j * rng.normal(size=(k, n))
        b = rng.uniform(0, 1.5) * (rng.normal(size=(k, n)) + 1j * rng.normal(size=(k, n)))
        z = make_point(a, b)
        if z.norm() == 0.0:
            continue
        z = z.scaled(rng.uniform(0.1, 2.0) * rmax / z.norm())
        if not _line_collision(z, rho, merge_tol):
            pts.append(z)
    return pts


def apriori_diagnostics(rho: DiscreteMeasure, kappa: float, epsilon: float, S: float | None = None, T: float | None = None):
    """``(inf_diag, moment_integral, ratio)`` for the a-priori moment bound.

    ``inf_diag`` is the smallest ``L_eff(p, p)`` over unit support
    directions and ``moment_integral = sum_i w_i |f_i|^(4 - epsilon)``.
    """
    if not 0 < epsilon < 4:
        raise ValueError("epsilon must lie in (0, 4)")
    if S is None:
        S = action_S(rho)
    if T is None:
        T = action_T(rho)
    lag, bc = pair_table(rho)
    diag = np.diag(lag + kappa * bc)
    norms = np.array([p.norm() for p in rho.points])
    nz = norms > 0
    inf_diag = float(np.min(diag[nz] / norms[nz] ** 4)) if nz.any() else math.nan
    moment = float(math.fsum(rho.weights[nz] * norms[nz] ** (4.0 - epsilon)))
    denom = S + kappa * T
    ratio = moment * inf_diag * (1.0 - 2.0 ** (-epsilon)) / denom if denom > 0 else math.inf
    return inf_diag, moment, ratio


# ---------------------------------------------------------------------------
# full certificate


@dataclass(eq=False)
class ELCertificate:
    kappa: float
    lam: np.ndarray
    Lambda: np.ndarray
    c_value: float
    S: float
    T: float
    C: float
    el_residual_max: float
    levelset1_residual_max: float
    levelset2_residual_max: float
    scan_min_gap: float | None
    secvar_min_eig: float | None
    secvar_dim_J: int
    secvar_norm: float
    extended_min_eig: float | None
    extended_norm: float
    hs_norm: float
    regular: bool
    g_rank: int
    t_spread: float
    diagnostics: dict = field(default_factory=dict)


def certify(rho: DiscreteMeasure, spec: ConstraintSpec, cfg: VerifyConfig = VerifyConfig()) -> ELCertificate:
    """Run every first- and second-order check on ``rho``."""
    rho = rho.pruned()
    C = spec.bound
    S, T = action_S(rho), action_T(rho)
    sf = support_functions(rho, spec)
    fit = fit_multipliers(sf, S, T, C, spec, cfg.bc_tol, cfg.rank_tol)
    diag: dict = {
        "kappa_identifiable": fit.kappa_identifiable,
        "bc_active": fit.bc_active,
        "lambda_fit_residual_max": fit.lambda_residual,
        "g_fit_rank": fit.g_rank,
    }
    if fit.kappa_unclamped is not None:
        diag["kappa_unclamped"] = fit.kappa_unclamped
    if fit.bc_active and not fit.kappa_identifiable:
        kb, _, kres = kappa_from_stationarity(rho, spec)
        diag["kappa_bestfit"] = kb
        diag["kappa_bestfit_residual"] = kres
    ls1, ls2 = level_set_residuals(rho, fit)
    regular, g_rank, spread = regularity_check(sf, T, C, cfg.rank_tol)

    scan = off_support_scan(rho, fit, cfg.scan_count, cfg.seed, spec, restrict_to_P=not regular and cfg.scan_count > 0, pset_tol=cfg.pset_tol)
    gap = scan.min_gap
    if not regular and cfg.scan_count > 0:
        diag["scan_min_gap_all"] = scan.min_gap
        diag["scan_fraction_in_P"] = float(np.mean(scan.in_P))
        gap = scan.min_gap_in_P

    sec = second_variation_operator(rho, fit.kappa)
    min_eig, dim_J = psd_on_J(sec, sf, rank_tol=cfg.rank_tol)
    sec_norm = float(np.linalg.norm(sec, 2))
    ext_min, ext_norm = None, 0.0
    worst_ratio = None
    for z in random_aux_points(rho, cfg.aux_count, cfg.seed, cfg.merge_tol):
        E, V = extended_operator(rho, fit.kappa, z, sf, spec)
        m = _min_eig_on(j_basis(V, cfg.rank_tol), E)
        if m is None:
            continue
        en = float(np.linalg.norm(E, 2))
        r = m / en if en > 0 else 0.0
        if worst_ratio is None or r < worst_ratio:
            worst_ratio, ext_min, ext_norm = r, m, en

    inf_diag, moment, ratio = apriori_diagnostics(rho, fit.kappa, cfg.epsilon, S, T)
    diag.update({"apriori_inf_diag": inf_diag, "apriori_moment_integral": moment, "apriori_ratio": ratio, "apriori_epsilon": cfg.epsilon})
    return ELCertificate(
        kappa=fit.kappa,
        lam=fit.lam,
        Lambda=fit.Lambda,
        c_value=fit.c_value,
        S=S,
        T=T,
        C=C,
        el_residual_max=fit.el_residual,
        levelset1_residual_max=float(ls1.max()),
        levelset2_residual_max=float(ls2.max()),
        scan_min_gap=gap,
        secvar_min_eig=min_eig,
        secvar_dim_J=dim_J,
        secvar_norm=sec_norm,
        extended_min_eig=ext_min,
        extended_norm=ext_norm,
        hs_norm=hilbert_schmidt_norm(sec),
        regular=regular,
        g_rank=g_rank,
        t_spread=spread,
        diagnostics=diag,
    )


def certificate_checks(cert: ELCertificate, cfg: VerifyConfig = VerifyConfig()) -> dict[str, bool]:
    """Pass/fail per certificate condition.  Absent optional checks pass vacuously.

    The Hilbert-Schmidt bound is reported but is not part of certification.
    """
    c = cert.c_value
    tol = cfg.el_tol * c if c > 0 else cfg.el_tol
    return {
        "el_constancy": cert.el_residual_max <= tol,
        "levelset_phi1": cert.levelset1_residual_max <= tol,
        "levelset_phi2": cert.levelset2_residual_max <= tol,
        "off_support": cert.scan_min_gap is None or cert.scan_min_gap >= -tol,
        "psd_on_J": cert.secvar_min_eig is None or cert.secvar_min_eig >= -cfg.psd_tol * cert.secvar_norm,
        "extended_psd": cert.extended_min_eig is None or cert.extended_min_eig >= -cfg.psd_tol * cert.extended_norm,
    }
