"""Constrained minimization of the causal action over discrete measures.

Each support point is parameterized by its factors ``(A_i, B_i)``; the weights
live on the probability simplex and are kept there by Euclidean projection.
The linear constraints enter through an augmented Lagrangian, the boundedness
constraint through a one-sided quadratic penalty in multiplier form.  The
inner problems are solved by a monotone spectral projected gradient method.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .fgeometry import ModelParams, make_point, pair_gradients, pair_tables
from .measures import (
    ConstraintSpec,
    DiscreteMeasure,
    action_S,
    action_T,
    constraint_residuals,
)
from .verifier import fit_multipliers, support_functions

__all__ = [
    "SolverConfig",
    "SolveResult",
    "project_simplex",
    "minimize",
    "estimate_cmin",
    "penalized_objective",
    "restore_feasibility",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverConfig:
    N: int = 4
    restarts: int = 4
    max_iters: int = 4000
    outer_iters: int = 25
    penalty_init: float = 10.0
    penalty_growth: float = 10.0
    penalty_max: float = 1e10
    step_init: float = 1e-2
    step_shrink: float = 0.5
    armijo: float = 1e-4
    tol_el: float = 1e-6
    feas_tol: float = 1e-11
    inner_tol: float = 1e-12
    stall_window: int = 50
    stall_tol: float = 1e-12
    prune_tol: float = 1e-12
    gradient: str = "analytic"
    fd_step: float = 1e-6
    b_init_scale: float = 0.5
    bc_activation_tol: float = 1e-7
    revive_candidates: int = 64
    revive_weight: float = 1e-3
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        for name in ("N", "restarts", "max_iters", "outer_iters", "stall_window", "workers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        for name in ("tol_el", "feas_tol", "inner_tol", "penalty_init", "step_init", "fd_step"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.revive_candidates < 0 or not 0 < self.revive_weight < 1:
            raise ValueError("revive_candidates must be >= 0 and revive_weight in (0, 1)")
        if not 0 < self.step_shrink < 1:
            raise ValueError("step_shrink must lie in (0, 1)")
        if self.penalty_growth <= 1:
            raise ValueError("penalty_growth must exceed 1")
        if self.gradient not in ("analytic", "fd"):
            raise ValueError("gradient must be 'analytic' or 'fd'")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")


@dataclass(eq=False)
class SolveResult:
    measure: DiscreteMeasure
    S_value: float
    T_value: float
    constraint_residual_norm: float
    bc_active: bool
    iterations: int
    converged: bool
    objective: str = "S"
    objective_value: float = math.nan
    el_residual: float = math.nan
    kappa: float = 0.0
    restart_index: int = 0
    message: str = ""
    restarts: list = field(default_factory=list)


def project_simplex(weights) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based)."""
    v = np.asarray(weights, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("cannot project an empty vector")
    if not np.all(np.isfinite(v)):
        raise ValueError("cannot project a non-finite vector")
    # shifting by a constant leaves the projection unchanged and keeps r >= 1 for huge entries
    v = v - v.max()
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, v.size + 1)
    r = np.count_nonzero(u - css / ind > 0)
    theta = css[r - 1] / r
    return np.maximum(v - theta, 0.0)


# ---------------------------------------------------------------------------
# penalized objective


class _Problem:
    """Penalized objective over ``v = (Re W, Im W, w)``.

    The trace constraint is removed by scale invariance: both functionals
    are homogeneous of degree four, so we minimize ``(k/tau)^4 S`` with
    ``tau = sum_i w_i Tr x_i`` and rescale at the end.  The identity
    constraint goes through the augmented Lagrangian.
    """

    def __init__(self, params: ModelParams, spec: ConstraintSpec, N: int, objective: str):
        self.params = params
        self.spec = spec
        self.N = N
        self.objective = objective
        self.shape = (N, params.k, 2 * params.n)
        self.nz = N * params.k * 2 * params.n
        self.eliminate = spec.kind == "trace"
        self.E = spec.basis_array()
        self.trE = np.trace(self.E, axis1=1, axis2=2).real
        self.C = spec.bound if objective == "S" else math.inf
        self.nu = np.zeros(0 if self.eliminate else spec.L)
        self.mu = 1.0
        self.kb = 0.0
        self.mub = 1.0
        self.evals = 0

    def unpack(self, v):
        W = (v[: self.nz] + 1j * v[self.nz : 2 * self.nz]).reshape(self.shape)
        return W, v[2 * self.nz :]

    def pack(self, W, w):
        return np.concatenate([W.real.ravel(), W.imag.ravel(), w])

    def project(self, v):
        out = v.copy()
        out[2 * self.nz :] = project_simplex(v[2 * self.nz :])
        return out

    def _traces(self, W):
        return np.einsum("iak,k,iak->i", W, self.params.signs, W.conj()).real

    def scale(self, W, w):
        """``(k / tau)^4`` and ``tau``; ``(inf, tau)`` when ``tau <= 0``."""
        if not self.eliminate:
            return 1.0, float(self.params.k)
        tau = float(w @ self._traces(W))
        if tau <= 0:
            return math.inf, tau
        return (self.params.k / tau) ** 4, tau

    def constraint(self, W, w):
        """Residuals of the penalized linear constraints and ``g[l, i]``."""
        if self.eliminate:
            return np.zeros(0), np.zeros((0, len(w)))
        s = self.params.signs
        X = np.einsum("iak,k,ibk->iab", W, s, W.conj())
        g = np.einsum("lab,iba->li", self.E, X).real
        return self.trE - g @ w, g

    def bc_terms(self, T):
        """Value and derivative of the boundedness penalty at ``T``."""
        if not math.isfinite(self.C):
            return 0.0, 0.0
        z = max(0.0, self.kb + self.mub * (T - self.C))
        return (z * z - self.kb * self.kb) / (2.0 * self.mub), z

    def functionals(self, W, w):
        """``(S, T)`` of the measure the iterate represents."""
        t4, _ = self.scale(W, w)
        lag, bc = pair_tables(W, W, self.params.n)
        return t4 * float(w @ lag @ w), t4 * float(w @ bc @ w)

    def value(self, v):
        self.evals += 1
        W, w = self.unpack(v)
        t4, _ = self.scale(W, w)
        if not math.isfinite(t4):
            return math.inf
        S, T = self.functionals(W, w)
        f = S + self.bc_terms(T)[0] if self.objective == "S" else T
        G, _ = self.constraint(W, w)
        return f - float(self.nu @ G) + 0.5 * self.mu * float(G @ G)

    def value_grad(self, v):
        self.evals += 1
        W, w = self.unpack(v)
        n = self.params.n
        t4, tau = self.scale(W, w)
        if not math.isfinite(t4):
            raise ValueError("iterate left the region of positive trace")
        s = self.params.signs
        if self.objective == "S":
            _, bc = pair_tables(W, W, n)
            T = t4 * float(w @ bc @ w)
            pen, z = self.bc_terms(T)
            F, Q1, Q2 = pair_gradients(W, W, n, kappa=z)
        else:
            pen = z = 0.0
            F, Q1, Q2 = pair_gradients(W, W, n, weight_bc=1.0)
        raw = float(w @ F @ w)
        # f = t4 * raw - z T + pen; on differentiating, z dT cancels against pen'
        f = t4 * raw - z * (T if self.objective == "S" else 0.0) + pen
        gW = np.einsum("i,j,ijab->iab", w, w, Q1) + np.einsum("j,i,jiab->iab", w, w, Q2)
        gw = (F + F.T) @ w
        if self.eliminate:
            c = 4.0 * raw / tau
            gw = t4 * (gw - c * self._traces(W))
            gW = t4 * (gW - c * 2.0 * w[:, None, None] * W * s[None, None, :])
        G, g = self.constraint(W, w)
        if G.size:
            eta = -self.nu + self.mu * G
            f += -float(self.nu @ G) + 0.5 * self.mu * float(G @ G)
            gw = gw - g.T @ eta
            Lam = np.einsum("l,lab->ab", eta, self.E)
            gW = gW - 2.0 * w[:, None, None] * np.einsum("ab,ibk->iak", Lam, W) * s[None, None, :]
        return f, self.pack(gW, gw)

    def value_grad_fd(self, v, h):
        f = self.value(v)
        g = np.zeros_like(v)
        for i in range(len(v)):
            e = np.zeros_like(v)
            e[i] = h
            g[i] = (self.value(v + e) - self.value(v - e)) / (2 * h)
        return f, g


def penalized_objective(params, spec, measure: DiscreteMeasure, objective: str = "S", nu=None, mu=1.0, kb=0.0, mub=1.0):
    """Value and gradient of the penalized objective at a measure (for testing)."""
    prob = _Problem(params, spec, len(measure), objective)
    if nu is not None and prob.nu.size:
        prob.nu = np.asarray(nu, dtype=float)
    prob.mu, prob.kb, prob.mub = mu, kb, mub
    v = prob.pack(measure.factors, np.array(measure.weights))
    return prob, v


# ---------------------------------------------------------------------------
# inner solver


def _pattern_search(prob: _Problem, v, f, h0, tol=1e-12, max_sweeps=8):
    """Compass search; used when the gradient line search stalls."""
    h = h0
    sweeps = 0
    while h > tol and sweeps < max_sweeps:
        improved = False
        for i in range(len(v)):
            for sgn in (1.0, -1.0):
                cand = v.copy()
                cand[i] += sgn * h
                cand = prob.project(cand)
                fc = prob.value(cand)
                if fc < f:
                    v, f, improved = cand, fc, True
                    break
        sweeps += 1
        if not improved:
            h *= 0.5
    return v, f


def _spg(prob: _Problem, v, cfg: SolverConfig, trace: list | None = None):
    """Monotone spectral projected gradient; returns ``(v, f, iterations, pg_norm)``."""
    grad = prob.value_grad if cfg.gradient == "analytic" else (lambda x: prob.value_grad_fd(x, cfg.fd_step))
    v = prob.project(v)
    f, g = grad(v)
    alpha = cfg.step_init
    hist = [f]
    pg = np.inf
    it = 0
    searched = False
    for it in range(1, cfg.max_iters + 1):
        pg = float(np.max(np.abs(prob.project(v - g) - v)))
        if pg <= cfg.inner_tol:
            break
        while not np.all(np.isfinite(v - alpha * g)):
            alpha *= 1e-3
        d = prob.project(v - alpha * g) - v
        gd = float(g @ d)
        t = 1.0
        accepted = False
        while t > 1e-20:
            vn = v + t * d
            fn = prob.value(vn)
            if fn <= f + cfg.armijo * t * gd:
                accepted = True
                break
            t *= cfg.step_shrink
        if not accepted or fn >= f:
            if searched:
                break
            searched = True
            vp, fp = _pattern_search(prob, v, f, max(1e-6, 1e-3 * float(np.max(np.abs(v)))))
            if fp >= f:
                break
            vn, fn = vp, fp
        fn, gn = grad(vn)
        s = vn - v
        y = gn - g
        sy = float(s @ y)
        alpha = float(np.clip(s @ s / sy, 1e-12, 1e12)) if sy > 0 else 1e3 * alpha
        alpha = min(alpha, 1e12)
        v, f, g = vn, fn, gn
        hist.append(f)
        if trace is not None:
            trace.append(f)
        if len(hist) > cfg.stall_window and hist[-cfg.stall_window - 1] - f < cfg.stall_tol * max(1.0, abs(f)):
            break
    return v, f, it, pg


def _revive(prob: _Problem, v, f, rng, cfg: SolverConfig):
    """Relocate atoms whose weight has collapsed to zero.

    A massless atom has zero position gradient and would stay dead.  Each is
    moved to the best of a batch of random candidates, judged by the
    penalized objective with the atom given a small trial weight.  The move
    is kept only if it lowers the objective.
    """
    W, w = prob.unpack(v)
    dead = np.flatnonzero(w <= cfg.prune_tol)
    if dead.size == 0 or dead.size == len(w) or cfg.revive_candidates == 0:
        return v, f, 0
    k, n2 = prob.params.k, 2 * prob.params.n
    radius = float(np.sqrt(np.max(np.sum(np.abs(W[w > cfg.prune_tol]) ** 2, axis=(1, 2)))))
    revived = 0
    for i in dead:
        best_v, best_f = None, f
        cand = rng.normal(size=(cfg.revive_candidates, k, n2)) + 1j * rng.normal(size=(cfg.revive_candidates, k, n2))
        cand *= (radius * rng.uniform(0.2, 1.2, size=cfg.revive_candidates) / np.linalg.norm(cand, axis=(1, 2)))[:, None, None]
        for c in cand:
            Wt = W.copy()
            Wt[i] = c
            wt = w * (1 - cfg.revive_weight)
            wt[i] += cfg.revive_weight
            vt = prob.pack(Wt, wt)
            ft = prob.value(vt)
            if ft < best_f:
                best_v, best_f = vt, ft
        if best_v is not None:
            v, f = best_v, best_f
            W, w = prob.unpack(v)
            revived += 1
    return v, f, revived


# ---------------------------------------------------------------------------
# initialization and feasibility


def _random_initial(params: ModelParams, spec: ConstraintSpec, N: int, rng, b_scale: float) -> DiscreteMeasure:
    shape = (N, params.k, params.n)
    A = (rng.normal(size=shape) + 1j * rng.normal(size=shape)) / np.sqrt(2)
    B = b_scale * (rng.normal(size=shape) + 1j * rng.normal(size=shape)) / np.sqrt(2)
    w = np.full(N, 1.0 / N)
    rho = DiscreteMeasure(tuple(make_point(A[i], B[i], params) for i in range(N)), w)
    tr = float(np.trace(rho.first_moment()).real)
    if tr < 0:
        rho = DiscreteMeasure(tuple(make_point(B[i], A[i], params) for i in range(N)), w)
        tr = -tr
    return restore_feasibility(rho, spec)


def _congruence(rho: DiscreteMeasure, M: np.ndarray) -> DiscreteMeasure | None:
    evals, evecs = np.linalg.eigh(0.5 * (M + M.conj().T))
    if evals.min() <= 0:
        return None
    R = (evecs / np.sqrt(evals)) @ evecs.conj().T
    return DiscreteMeasure(tuple(make_point(R @ p.a_factor, R @ p.b_factor) for p in rho.points), rho.weights)


def restore_feasibility(rho: DiscreteMeasure, spec: ConstraintSpec) -> DiscreteMeasure:
    """Map ``rho`` onto the constraint set when possible.

    The trace constraint is met by a common rescaling.  The identity
    constraint is met by the congruence ``x -> M^(-1/2) x M^(-1/2)`` with
    ``M = int x d rho``; congruence preserves rank and inertia, so points
    stay in F.  Returns ``rho`` unchanged if neither map applies.
    """
    k = spec.k
    M = rho.first_moment()
    if spec.kind == "trace":
        tr = float(np.trace(M).real)
        if tr == 0:
            return rho
        t = k / tr
        return DiscreteMeasure(tuple(p.scaled(t) for p in rho.points), rho.weights)
    out = _congruence(rho, M)
    return rho if out is None else out


# ---------------------------------------------------------------------------
# driver


def _el_residual(rho: DiscreteMeasure, spec: ConstraintSpec, objective: str, C: float, bc_tol: float):
    sf = support_functions(rho, spec)
    if objective == "T":
        T = float(rho.weights @ sf.tfrak)
        return float(np.max(np.abs(sf.tfrak - T))) / max(T, 1e-300), 0.0
    S = float(rho.weights @ sf.ell)
    T = float(rho.weights @ sf.tfrak)
    fit = fit_multipliers(sf, S, T, C, spec, bc_tol)
    return fit.el_residual / max(fit.c_value, 1e-300), fit.kappa


def _solve_one(params, spec, cfg: SolverConfig, objective: str, init: DiscreteMeasure | None, child, index: int) -> SolveResult:
    rng = np.random.default_rng(child)
    if init is not None:
        rho0 = init
    else:
        rho0 = _random_initial(params, spec, cfg.N, rng, cfg.b_init_scale)
    prob = _Problem(params, spec, len(rho0), objective)
    prob.mu = cfg.penalty_init
    prob.mub = cfg.penalty_init
    v = prob.pack(rho0.factors, np.array(rho0.weights))
    C = prob.C
    total = 0
    last_G = last_viol = np.inf
    last_f = np.inf
    stalled = 0
    message = "outer iteration limit reached"
    for outer in range(cfg.outer_iters):
        v, f, its, pg = _spg(prob, v, cfg)
        total += its
        v, f, revived = _revive(prob, v, f, rng, cfg)
        if revived:
            log.debug("restart %d outer %d: revived %d atoms", index, outer, revived)
            stalled = 0
            continue
        W, w = prob.unpack(v)
        G, _ = prob.constraint(W, w)
        gn = float(np.linalg.norm(G))
        Tn = prob.functionals(W, w)[1]
        viol = max(0.0, Tn - C) if math.isfinite(C) else 0.0
        log.debug("restart %d outer %d: f=%.15g |G|=%.3e T-C=%.3e pg=%.3e its=%d", index, outer, f, gn, viol, pg, its)
        if G.size:
            prob.nu = prob.nu - prob.mu * G
        if math.isfinite(C):
            prob.kb = max(0.0, prob.kb + prob.mub * (Tn - C))
        g_ok = gn <= cfg.feas_tol * max(1.0, params.k)
        t_ok = viol <= cfg.feas_tol * max(1.0, C)
        if g_ok and t_ok and (pg <= cfg.inner_tol or abs(f - last_f) <= cfg.stall_tol * max(1.0, abs(f))):
            message = "converged"
            break
        # an infeasible point that stronger penalties no longer move is a
        # local minimizer of the violation; give up on this restart
        if (not g_ok and gn > 0.9 * last_G) or (not t_ok and viol > 0.9 * last_viol):
            stalled += 1
            if stalled >= 4:
                message = "stalled at an infeasible point"
                break
        else:
            stalled = 0
        last_f = f
        if not g_ok and gn > 0.25 * last_G:
            prob.mu = min(prob.mu * cfg.penalty_growth, cfg.penalty_max)
        if not t_ok and viol > 0.25 * last_viol:
            prob.mub = min(prob.mub * cfg.penalty_growth, cfg.penalty_max)
        last_G, last_viol = gn, viol

    W, w = prob.unpack(v)
    pts = tuple(make_point(W[i, :, : params.n], W[i, :, params.n :], params) for i in range(len(w)))
    rho = DiscreteMeasure.from_unnormalized(pts, project_simplex(w))
    rho = restore_feasibility(rho.pruned(cfg.prune_tol), spec)
    S, T = action_S(rho), action_T(rho)
    res = float(np.linalg.norm(constraint_residuals(rho, spec)))
    el, kappa = _el_residual(rho, spec, objective, C, cfg.bc_activation_tol)
    bc_active = math.isfinite(C) and abs(T - C) <= cfg.bc_activation_tol * C
    feasible = res <= 1e-8 * max(1.0, params.k) and (not math.isfinite(C) or T <= C * (1 + 1e-8))
    converged = feasible and el <= cfg.tol_el
    if not feasible:
        message = "infeasible: " + ("linear constraint residual" if res > 1e-8 else "boundedness constraint T > C")
    elif not converged:
        message = f"EL residual {el:.3e} above target"
    log.info("restart %d: %s=%.15g residual=%.2e el=%.2e iters=%d", index, objective, S if objective == "S" else T, res, el, total)
    return SolveResult(
        measure=rho,
        S_value=S,
        T_value=T,
        constraint_residual_norm=res,
        bc_active=bc_active,
        iterations=total,
        converged=converged,
        objective=objective,
        objective_value=S if objective == "S" else T,
        el_residual=el,
        kappa=prob.kb if objective == "S" and math.isfinite(C) else 0.0,
        restart_index=index,
        message=message,
    )


def _better(a: SolveResult, b: SolveResult, tie: float = 1e-12) -> bool:
    """Whether ``a`` beats ``b``: feasible first, then objective, residual, index."""
    fa = a.message != "" and not a.message.startswith("infeasible")
    fb = b.message != "" and not b.message.startswith("infeasible")
    if fa != fb:
        return fa
    d = a.objective_value - b.objective_value
    if abs(d) > tie * max(1.0, abs(b.objective_value)):
        return d < 0
    if a.constraint_residual_norm != b.constraint_residual_norm:
        return a.constraint_residual_norm < b.constraint_residual_norm
    return a.restart_index < b.restart_index


def minimize(
    params: ModelParams,
    spec: ConstraintSpec,
    cfg: SolverConfig = SolverConfig(),
    init: DiscreteMeasure | None = None,
    objective: str = "S",
) -> SolveResult:
    """Multistart minimization of ``S`` (or ``T``) under the constraints.

    Restart ``r`` draws from the ``r``-th child of ``SeedSequence(seed)``, so
    a run with more restarts contains every restart of a run with fewer.
    ``init``, if given, replaces the random start of restart 0.
    """
    if spec.k != params.k:
        raise ValueError(f"constraint is for k={spec.k}, model has k={params.k}")
    if isinstance(spec.C, str):
        raise ValueError("resolve C='auto' before solving (see estimate_cmin)")
    if objective not in ("S", "T"):
        raise ValueError("objective must be 'S' or 'T'")
    if init is not None and init.params != params:
        raise ValueError("initial measure does not match the model dimensions")
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.restarts)
    jobs = [(params, spec, cfg, objective, init if r == 0 else None, children[r], r) for r in range(cfg.restarts)]
    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as ex:
            results = list(ex.map(lambda a: _solve_one(*a), jobs))
    else:
        results = [_solve_one(*a) for a in jobs]
    best = results[0]
    for r in results[1:]:
        if _better(r, best):
            best = r
    best.restarts = [
        {"index": r.restart_index, "objective": r.objective_value, "residual": r.constraint_residual_norm, "converged": r.converged}
        for r in results
    ]
    return best


def estimate_cmin(params: ModelParams, spec: ConstraintSpec, cfg: SolverConfig = SolverConfig(), return_result: bool = False):
    """Upper bound on ``inf T`` over measures meeting the linear constraint."""
    res = minimize(params, spec.with_C(math.inf), cfg, objective="T")
    if return_result:
        return res
    return res.T_value
