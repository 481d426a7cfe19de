import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ude_discover.dynamics import (NpiEffect, NpiVector, RcParams, RcState,
                                   SirParams, SirState, beta_npi, rc_rhs,
                                   sir_conservation_residual, sir_rhs)
from ude_discover.errors import (ParameterDomainError, StateDomainError,
                                 StructuralError)
from ude_discover.tape import finite_diff_gradient, grad, tape_eval

finite01 = st.floats(min_value=0.0, max_value=1.0, allow_nan=False)


def test_rc_rhs_basic_values():
    assert rc_rhs(RcState(0.0), RcParams(1.0, 1.0)) == 1.0
    assert rc_rhs(RcState(7.5), RcParams(3.0, 7.5)) == 0.0
    assert rc_rhs(RcState(2.0), RcParams(4.0, 10.0)) == 2.0


def test_rc_rhs_rejects_nonpositive_tau():
    with pytest.raises(ParameterDomainError):
        RcParams(0.0, 1.0)
    with pytest.raises(ParameterDomainError):
        RcParams(-2.0, 1.0)


@given(v_c=st.floats(-10, 10), v_s=st.floats(-10, 10),
       tau=st.floats(0.01, 50))
def test_rc_rhs_sign_follows_voltage_gap(v_c, v_s, tau):
    dv = rc_rhs(RcState(v_c), RcParams(tau, v_s))
    assert math.copysign(1.0, dv) == math.copysign(1.0, v_s - v_c) or dv == 0.0


def test_sir_rhs_frozen_dynamics():
    derivs = sir_rhs(SirState(0.4, 0.35, 0.25), SirParams(0.0, 0.0))
    assert all(v == 0.0 for v in derivs)


def test_sir_rhs_forced_arithmetic():
    ds, di, dr = sir_rhs(SirState(0.99, 0.01, 0.0), SirParams(0.3, 0.1))
    assert ds == pytest.approx(-0.00297, rel=1e-12)
    assert di == pytest.approx(0.00197, rel=1e-12)
    assert dr == pytest.approx(0.001, rel=1e-12)


def test_sir_disease_free_equilibrium():
    ds, di, dr = sir_rhs(SirState(1.0, 0.0, 0.0), SirParams(0.7, 0.2))
    assert ds == 0.0 and di == 0.0 and dr == 0.0


@settings(max_examples=300)
@given(s=finite01, frac=finite01, beta=finite01, gamma=finite01)
def test_sir_conservation_is_exact(s, frac, beta, gamma):
    i = (1.0 - s) * frac
    r = 1.0 - s - i
    if r < 0:
        r = 0.0
    state = SirState(s, i, r) if abs(s + i + r - 1) <= 1e-9 else None
    if state is None:
        return
    assert sir_conservation_residual(state, SirParams(beta, gamma)) == 0.0


def test_sir_state_validation():
    with pytest.raises(StateDomainError):
        SirState(0.5, 0.5, 0.5)
    with pytest.raises(StateDomainError):
        SirState(-0.2, 0.6, 0.6)
    with pytest.raises(ParameterDomainError):
        SirParams(1.5, 0.1)
    with pytest.raises(ParameterDomainError):
        SirParams(0.3, -0.1)


def test_beta_npi_values():
    assert beta_npi(NpiVector((0, 0)), NpiEffect((0.4, 0.9), 0.3)) == 0.3
    assert beta_npi(NpiVector((1, 1)), NpiEffect((0.5, 0.5), 0.3)) == pytest.approx(0.075, rel=1e-12)
    assert beta_npi(NpiVector((1, 0)), NpiEffect((0.8, 0.3), 0.25)) == pytest.approx(0.2, rel=1e-12)


@given(e1=finite01, e2=finite01, bhat=finite01,
       x1=st.integers(0, 1), x2=st.integers(0, 1))
def test_beta_npi_activation_never_increases_rate(e1, e2, bhat, x1, x2):
    effect = NpiEffect((e1, e2), bhat)
    base = beta_npi(NpiVector((x1, x2)), effect)
    assert 0.0 <= base <= bhat
    if x1 == 0:
        assert beta_npi(NpiVector((1, x2)), effect) <= base
    if x2 == 0:
        assert beta_npi(NpiVector((x1, 1)), effect) <= base


def test_npi_type_validation():
    with pytest.raises(StructuralError):
        NpiVector((0, 2))
    with pytest.raises(StructuralError):
        NpiEffect((1.5, 0.5), 0.3)
    with pytest.raises(ParameterDomainError):
        NpiEffect((0.5, 0.5), 1.3)


def rel_err(a, b):
    return abs(a - b) / max(1.0, abs(b))


def test_rc_rhs_gradients_through_tape():
    def expr(p):
        return rc_rhs(RcState(p[2]), RcParams(p[0], p[1]))

    rng = np.random.default_rng(3)
    for _ in range(30):
        params = [rng.uniform(0.5, 5.0), rng.uniform(-3, 8), rng.uniform(-2, 6)]
        _, tape = tape_eval(expr, params)
        g = grad(tape, params)
        fd = finite_diff_gradient(expr, params, 1e-6)
        assert all(rel_err(a, b) <= 1e-5 for a, b in zip(g, fd))


def test_sir_rhs_gradients_through_tape():
    def expr(p):
        ds, di, dr = sir_rhs(SirState(p[2], p[3], 1.0 - p[2] - p[3]),
                             SirParams(p[0], p[1]))
        return ds * ds + di * di + dr * dr

    rng = np.random.default_rng(4)
    for _ in range(30):
        s = rng.uniform(0.2, 0.9)
        i = rng.uniform(0.01, 1.0 - s)
        params = [rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95), s, i]
        _, tape = tape_eval(expr, params)
        g = grad(tape, params)
        fd = finite_diff_gradient(expr, params, 1e-6)
        assert all(rel_err(a, b) <= 1e-5 for a, b in zip(g, fd))
