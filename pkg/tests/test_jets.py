import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from anholo.jets import (
    Jet,
    JetDomainError,
    ScalarField,
    fd_oracle,
    jet_eval,
    jet_matrix_inverse,
    jet_space,
    var_jets,
)


def f_mixed(x, y, z):
    return (x * y).sin() * z.exp() + (1.0 + x * x + z * z).log() / (2.0 + y.cos())


def f_mixed_float(x, y, z):
    return math.sin(x * y) * math.exp(z) + math.log(1.0 + x * x + z * z) / (
        2.0 + math.cos(y)
    )


def test_value_and_gradient_against_closed_form():
    pt = (0.4, -0.7, 0.2)
    j = jet_eval(f_mixed, pt, 3)
    assert j.value == pytest.approx(f_mixed_float(*pt), abs=1e-14)
    # d/dx at pt, closed form
    x, y, z = pt
    dfdx = math.cos(x * y) * y * math.exp(z) + (2 * x / (1 + x * x + z * z)) / (
        2 + math.cos(y)
    )
    assert j.partial((1, 0, 0)) == pytest.approx(dfdx, rel=1e-13)


@pytest.mark.parametrize(
    "alpha",
    [(1, 0, 0), (0, 1, 0), (0, 0, 1), (2, 0, 0), (1, 1, 0), (1, 0, 2), (0, 3, 0)],
)
def test_partials_against_fd_oracle(alpha):
    pt = (0.4, -0.7, 0.2)
    j = jet_eval(f_mixed, pt, sum(alpha))
    fd = fd_oracle(f_mixed_float, pt, alpha, step=1e-2)
    assert j.partial(alpha) == pytest.approx(fd, rel=1e-6, abs=1e-8)


def test_deriv_matches_partial_extraction():
    pt = (0.3, 0.9, -0.5)
    j = jet_eval(f_mixed, pt, 4)
    d = j.deriv(0).deriv(2)
    assert d.value == pytest.approx(j.partial((1, 0, 1)), rel=1e-13)
    assert d.partial((0, 1, 0)) == pytest.approx(j.partial((1, 1, 1)), rel=1e-12)


def test_deriv_on_order_zero_raises():
    j = Jet.constant(3.0, 2, 0)
    with pytest.raises(JetDomainError):
        j.deriv(0)


def test_mixed_order_arithmetic_truncates():
    a = Jet.variable(1.0, 0, 2, 3)
    b = Jet.variable(2.0, 1, 2, 1)
    assert (a * b).order == 1
    assert (a + b).order == 1


def test_division_and_reciprocal():
    x, y = var_jets((0.7, -0.3), 4)
    expr = (1.0 + x * x) / (2.0 + y.sin())
    direct = (1.0 + x * x) * (2.0 + y.sin()).reciprocal()
    assert np.allclose(expr.coeffs, direct.coeffs, atol=1e-15)
    with pytest.raises(JetDomainError):
        (x - 0.7).reciprocal()


def test_integer_and_real_powers():
    (x,) = var_jets((0.8,), 5)
    assert np.allclose((x**3).coeffs, (x * x * x).coeffs, atol=1e-14)
    assert np.allclose((x**-2).coeffs, (1.0 / (x * x)).coeffs, atol=1e-13)
    p = x**0.5
    q = x.sqrt()
    assert np.allclose(p.coeffs, q.coeffs, atol=1e-13)


def test_domain_errors():
    (x,) = var_jets((0.0,), 2)
    with pytest.raises(JetDomainError):
        (x - 1.0).log()
    with pytest.raises(JetDomainError):
        (x - 1.0).sqrt()
    with pytest.raises(JetDomainError):
        abs(x)
    assert abs(x - 2.0).value == pytest.approx(2.0)


def test_trig_identity_as_jets():
    x, y = var_jets((0.5, 1.1), 4)
    s = (x * y).sin()
    c = (x * y).cos()
    one = s * s + c * c
    expect = np.zeros_like(one.coeffs)
    expect[0] = 1.0
    assert np.allclose(one.coeffs, expect, atol=1e-14)


def test_chain_rule_depth_three():
    # g(x) = exp(sin(log(1+x^2))), fourth derivative vs finite differences
    def g(x):
        return ((1.0 + x * x).log()).sin().exp()

    def gf(x):
        return math.exp(math.sin(math.log(1.0 + x * x)))

    j = jet_eval(g, (0.6,), 4)
    fd = fd_oracle(gf, (0.6,), (4,), step=1e-1)
    assert j.partial((4,)) == pytest.approx(fd, rel=2e-3)


@settings(max_examples=40, deadline=None)
@given(
    st.floats(-1.5, 1.5),
    st.floats(-1.5, 1.5),
    st.floats(-1.5, 1.5),
    st.floats(-1.5, 1.5),
)
def test_product_rule_property(a, b, c, d):
    x, y = var_jets((a, b), 3)
    f = x * x * y + c
    g = y.sin() + d * x
    lhs = (f * g).deriv(0)
    rhs = f.deriv(0) * g + f * g.deriv(0)
    assert np.allclose(lhs.coeffs, rhs.coeffs, atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.floats(-2.0, 2.0), st.floats(-2.0, 2.0))
def test_partial_derivatives_commute_exactly(a, b):
    x, y = var_jets((a, b), 4)
    f = (x * y).cos() + x * x * y
    d1 = f.deriv(0).deriv(1)
    d2 = f.deriv(1).deriv(0)
    assert np.array_equal(d1.coeffs, d2.coeffs)


def test_truncation_is_prefix():
    sp = jet_space(3, 4)
    sizes = [sp.trunc_size(k) for k in range(5)]
    assert sizes == [1, 4, 10, 20, 35]
    j = jet_eval(f_mixed, (0.1, 0.2, 0.3), 4)
    t = j.truncate(2)
    assert np.array_equal(t.coeffs, j.coeffs[:10])


def test_jet_matrix_inverse():
    x, y = var_jets((0.4, 0.9), 3)
    M = np.empty((2, 2), dtype=object)
    M[0, 0] = 2.0 + x * x
    M[0, 1] = x * y
    M[1, 0] = x * y
    M[1, 1] = 1.0 + y.exp()
    Minv = jet_matrix_inverse(M)
    for i in range(2):
        for j in range(2):
            acc = None
            for k in range(2):
                term = M[i, k] * Minv[k, j]
                acc = term if acc is None else acc + term
            expect = np.zeros_like(acc.coeffs)
            expect[0] = 1.0 if i == j else 0.0
            assert np.allclose(acc.coeffs, expect, atol=1e-13)


def test_jet_matrix_inverse_singular():
    M = np.array([[1.0, 1.0], [1.0, 1.0]], dtype=object)
    with pytest.raises(JetDomainError):
        jet_matrix_inverse(M)


def test_scalar_field_float_and_jet_agree():
    from anholo.jets import sin as jsin

    f = ScalarField(2, lambda x, u: jsin(x * u) + u * u, name="test")
    assert f.value((0.3, 0.8)) == pytest.approx(math.sin(0.24) + 0.64, abs=1e-14)
    j = f.jet((0.3, 0.8), 2)
    assert j.value == pytest.approx(f.value((0.3, 0.8)), abs=1e-15)
    fd = fd_oracle(lambda x, u: math.sin(x * u) + u * u, (0.3, 0.8), (1, 1))
    assert j.partial((1, 1)) == pytest.approx(fd, rel=1e-7)


def test_scalar_field_partial_fallback_on_floats_and_jets():
    f = ScalarField(2, lambda x, u: (x * u * u).exp(), name="blackbox")
    df = f.partial(1)
    # float arguments
    got = df(0.5, 0.7)
    want = 2 * 0.5 * 0.7 * math.exp(0.5 * 0.7**2)
    assert got == pytest.approx(want, rel=1e-12)
    # jet arguments: evaluate d f / d slot1 at composed jets
    x, u = var_jets((0.5, 0.7), 2)
    comp = df(x, u + x * x)  # slot partial, THEN composition
    u2 = 0.7 + 0.25

    def ref(xx, uu):
        return 2 * xx * uu * math.exp(xx * uu**2)

    assert comp.value == pytest.approx(ref(0.5, u2), rel=1e-12)
    fd = fd_oracle(lambda xx: ref(xx, 0.7 + xx * xx), (0.5,), (1,))
    assert comp.partial((1, 0)) == pytest.approx(fd, rel=1e-6)


def test_constant_field_shortcuts():
    c = ScalarField.constant(4.25, 3)
    assert c.is_constant
    assert c.value((1, 2, 3)) == 4.25
    assert c.jet((1, 2, 3), 2).partial((1, 0, 0)) == 0.0
    dc = c.partial(0)
    assert dc.is_constant and dc.value((0, 0, 0)) == 0.0
