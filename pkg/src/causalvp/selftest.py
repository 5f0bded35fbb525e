"""Fast built-in checks of closed-form example values (``causalvp selftest``)."""

from __future__ import annotations

import math

import numpy as np

from .fgeometry import (
    Causal,
    ModelParams,
    bc_integrand,
    classify_causal,
    closed_chain_spectrum,
    eff_lagrangian,
    lagrangian,
    make_point,
    point_from_matrix,
    spectral_weight,
    spectral_weight_sq,
    zero_point,
    ChainSpectrum,
)
from .measures import (
    ConstraintSpec,
    DiscreteMeasure,
    action_S,
    action_T,
    bnorm,
    constraint_residuals,
    functionals_via_moments,
    graph_reconstruct,
    moment_decompose,
    same_measure,
    scale_measure,
)
from .solver import project_simplex
from .verifier import apriori_diagnostics, fit_multipliers, psd_on_J, second_variation_operator, support_functions

P = ModelParams(2, 1)


def _pt(x):
    return point_from_matrix(np.array(x, dtype=complex), P)


def _delta(x):
    return DiscreteMeasure((_pt(x),), np.array([1.0]))


def _close(a, b, tol=1e-12):
    return abs(a - b) <= tol * max(1.0, abs(b))


def _checks():
    P1, PM = _pt(np.diag([1, 0])), _pt(np.diag([1, -1]))
    SX = _pt([[0, 1], [1, 0]])
    e1, e2 = np.array([1, 0]), np.array([0, 1])
    two = _delta(np.diag([2, 0]))
    pair = DiscreteMeasure((PM, SX), np.array([0.5, 0.5]))

    yield "point e1,0 -> diag(1,0)", np.allclose(make_point(e1, np.zeros(2), P).matrix, np.diag([1, 0]))
    yield "point 0,0 -> 0", np.allclose(make_point(np.zeros(2), np.zeros(2), P).matrix, 0)
    yield "point e1,e2 -> diag(1,-1)", np.allclose(make_point(e1, e2, P).matrix, np.diag([1, -1]))
    yield "spectrum diag(1,0)^2", np.allclose(closed_chain_spectrum(P1, P1).eigenvalues, [1, 0])
    yield "spectrum +-i", np.allclose(sorted(closed_chain_spectrum(PM, SX).eigenvalues, key=lambda z: z.imag), [-1j, 1j])
    yield "spectrum {1,1}", np.allclose(closed_chain_spectrum(PM, PM).eigenvalues, [1, 1])
    yield "|A| {2+i,2-i}", _close(spectral_weight(ChainSpectrum(np.array([2 + 1j, 2 - 1j]))), 2 * math.sqrt(5))
    yield "|A^2| {3,1}", _close(spectral_weight_sq(ChainSpectrum(np.array([3.0, 1.0]))), 10)
    yield "L diag(1,0)", _close(lagrangian(P1, P1), 0.5)
    yield "L spacelike", lagrangian(PM, SX) <= 1e-12
    yield "L diag(1,-1)", abs(lagrangian(PM, PM)) <= 1e-12
    yield "|A|^2 spacelike", _close(bc_integrand(PM, SX), 4)
    yield "|A|^2 zero", bc_integrand(zero_point(P), SX) == 0
    yield "L_eff kappa=1", _close(eff_lagrangian(PM, SX, 1.0), 4)
    yield "L_eff kappa=2", _close(eff_lagrangian(P1, P1, 2.0), 2.5)
    yield "timelike", classify_causal(P1, P1) is Causal.TIMELIKE
    yield "spacelike", classify_causal(PM, SX) is Causal.SPACELIKE
    yield "S delta diag(1,0)", _close(action_S(_delta(np.diag([1, 0]))), 0.5)
    yield "S spacelike pair", abs(action_S(pair)) <= 1e-12
    yield "S delta diag(2,0)", _close(action_S(two), 8)
    yield "T spacelike pair", _close(action_T(pair), 4)
    yield "T delta 0", action_T(DiscreteMeasure((zero_point(P),), np.array([1.0]))) == 0
    yield "bnorm signed", _close(bnorm([P1, _pt(np.diag([2, 0]))], [0.5, -0.5]), 3.5)
    yield "TC residual 0", abs(constraint_residuals(two, ConstraintSpec.trace(2))[0]) <= 1e-12
    yield "TC residual 2", _close(abs(constraint_residuals(_delta(np.diag([1, -1])), ConstraintSpec.trace(2))[0]), 2)
    ic = DiscreteMeasure((_pt(np.diag([2, 0])), _pt(np.diag([0, 2]))), np.array([0.5, 0.5]))
    yield "IC residuals 0", np.max(np.abs(constraint_residuals(ic, ConstraintSpec.identity(2)))) <= 1e-12
    yield "scale tau=2", same_measure(scale_measure(2.0, two), _delta(np.diag([1, 0])))
    mv = moment_decompose(two)
    yield "moment decompose", mv.graph_form and _close(mv.f_values[0], 2) and np.allclose(mv.directions[0].matrix, np.diag([1, 0]))
    nongraph = DiscreteMeasure((P1, _pt(np.diag([2, 0]))), np.array([0.5, 0.5]))
    yield "non-graph flagged", not moment_decompose(nongraph).graph_form
    yield "moment reconstruct", same_measure(graph_reconstruct(mv), two)
    yield "S via moments", _close(functionals_via_moments(mv)[0], 8)
    yield "simplex (2,0)", np.allclose(project_simplex([2.0, 0.0]), [1, 0])
    sf = support_functions(two, ConstraintSpec.trace(2))
    yield "support functions", _close(sf.ell[0], 8) and _close(sf.tfrak[0], 16) and _close(sf.g[0, 0], 2)
    fit = fit_multipliers(sf, action_S(two), action_T(two), math.inf, ConstraintSpec.trace(2))
    yield "single-point fit", fit.el_residual == 0 and fit.lambda_residual == 0 and fit.kappa == 0
    sec = second_variation_operator(two, 0.0)
    me, dim = psd_on_J(sec, sf)
    yield "single-point J empty", dim == 0 and me is None
    inf_diag, moment, _ = apriori_diagnostics(two, 0.0, 2.0)
    yield "a-priori diagnostics", _close(inf_diag, 0.5) and _close(moment, 4)


def run_selftest(stream=None) -> bool:
    ok = True
    for name, passed in _checks():
        passed = bool(passed)
        ok &= passed
        if stream is not None:
            print(f"{'PASS' if passed else 'FAIL'}  {name}", file=stream)
    return ok
