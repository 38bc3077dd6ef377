import numpy as np
import pytest

from anholo.expressions import compile_field
from anholo.jets import ScalarField
from anholo.nconnection import (
    FrameCalc,
    NConnection,
    anholonomy,
    berwald_derivative,
    bundle_chart,
    manifold_chart,
    n_adapt_structure,
    n_curvature,
    n_frame,
    n_lift_bundle,
    prolongation_chart,
)

from conftest import build_so3

VARS22 = ("x1", "x2", "u1", "u2")
VARS33 = ("x1", "x2", "x3", "u1", "u2", "u3")


def make_n22():
    chart = manifold_chart(2, 2)
    fields = [
        [compile_field("u1*x2", VARS22), compile_field("u2^2 + x1", VARS22)],
        [compile_field("x1*u2", VARS22), compile_field("u1*u2", VARS22)],
    ]
    return chart, NConnection.from_fields(chart, fields), fields


def test_n_curvature_classical_formula(rng):
    chart, nc, fields = make_n22()
    for _ in range(4):
        pt = tuple(rng.uniform(-1.2, 1.2, 4))
        om = n_curvature(chart, nc, pt)
        for a in range(2):
            for i in range(2):
                for j in range(2):
                    want = fields[a][i].partial(j).value(pt) - fields[a][j].partial(
                        i
                    ).value(pt)
                    for e in range(2):
                        want += (
                            fields[e][i].value(pt)
                            * fields[a][j].partial(2 + e).value(pt)
                            - fields[e][j].value(pt)
                            * fields[a][i].partial(2 + e).value(pt)
                        )
                    assert om[a, i, j] == pytest.approx(want, abs=1e-11)


def test_n_curvature_matches_commutator_route(rng):
    chart, nc, _ = make_n22()
    for _ in range(3):
        pt = tuple(rng.uniform(-1, 1, 4))
        om = n_curvature(chart, nc, pt)
        rep = anholonomy(chart, nc, pt)
        # zz_v[A=i, B=j, D=a] vs om[a, i, j]
        assert np.allclose(np.moveaxis(rep.zz_v, 2, 0), om, atol=1e-11)
        assert np.max(np.abs(rep.zz_h)) < 1e-12  # manifold chart: C = 0


def test_n_curvature_with_structure_feedback(rng):
    # prolongation chart: the bracket of two adapted horizontal legs feeds
    # C^{e'}_{b'c'} N[a, e'] back into the vertical part
    so3 = build_so3()
    chart = prolongation_chart(so3)
    fields = [
        [compile_field(t, VARS33) for t in row]
        for row in (
            ("u1*x2", "u2", "0.3*u3"),
            ("x3*u2", "u1*u3", "x1"),
            ("u3", "0.2", "u1*x1"),
        )
    ]
    nc = NConnection.from_fields(chart, fields)
    for _ in range(3):
        pt = tuple(rng.uniform(-1, 1, 6))
        om = n_curvature(chart, nc, pt)
        rep = anholonomy(chart, nc, pt)
        assert np.allclose(np.moveaxis(rep.zz_v, 2, 0), om, atol=1e-10)
        # zz_h must reproduce the structure functions
        cvals = so3.c_values(pt[:3])
        assert np.allclose(np.moveaxis(rep.zz_h, 2, 0), cvals, atol=1e-11)


def test_linear_n_closed_form():
    # N[a, b'] = Lam[a, b', c] u^c on a trivial structure. The commutator
    # convention gives
    #   Omega^a_{b'c'} = Lam[a,c',e] Lam[e,b',f] u^f - Lam[a,b',e] Lam[e,c',f] u^f
    # (x-independent N kills the anchor terms; the fiber terms contract as
    # N^e_{b'} d_e N^a_{c'} = Lam[e,b',f] u^f Lam[a,c',e]).
    rng = np.random.default_rng(7)
    lam = rng.uniform(-1, 1, size=(2, 2, 2))
    chart = manifold_chart(2, 2)

    def entry(a, bp):
        def fn(*args):
            return lam[a, bp, 0] * args[2] + lam[a, bp, 1] * args[3]

        return ScalarField(4, fn)

    nc = NConnection.from_fields(
        chart, [[entry(a, bp) for bp in range(2)] for a in range(2)]
    )
    u = np.array([0.7, -0.4])
    pt = (0.0, 0.0, u[0], u[1])
    om = n_curvature(chart, nc, pt)
    want = np.einsum("ace,ebf,f->abc", lam, lam, u) - np.einsum(
        "abe,ecf,f->abc", lam, lam, u
    )
    assert np.allclose(om, want, atol=1e-12)


def test_frame_actions_and_pairing(rng):
    chart, nc, fields = make_n22()
    pt = tuple(rng.uniform(-1, 1, 4))
    fr = n_frame(chart, nc, pt)
    assert fr.pairing_residual < 1e-14
    nvals = nc.values(pt)
    assert np.allclose(fr.z_action[:, :2], np.eye(2), atol=1e-14)
    assert np.allclose(fr.z_action[:, 2:], -nvals.T, atol=1e-14)
    assert np.allclose(fr.v_action[:, 2:], np.eye(2), atol=1e-14)

    # zd on a known function
    f = compile_field("x1*u2 + u1^2", VARS22)
    fc = FrameCalc(chart, nc, pt, 1)
    for ap in range(2):
        got = fc.zd(f(*fc.vars), ap).value
        want = f.partial(ap).value(pt)
        for b in range(2):
            want -= nvals[b, ap] * f.partial(2 + b).value(pt)
        assert got == pytest.approx(want, rel=1e-12, abs=1e-12)


def test_fiber_derivative_of_n_in_anholonomy(rng):
    chart, nc, fields = make_n22()
    pt = tuple(rng.uniform(-1, 1, 4))
    rep = anholonomy(chart, nc, pt)
    # [z_i, v_b] = (d N[e, i] / d u^b) v_e
    for i in range(2):
        for b in range(2):
            for e in range(2):
                want = fields[e][i].partial(2 + b).value(pt)
                assert rep.w[i, 2 + b, 2 + e] == pytest.approx(want, abs=1e-11)
            assert np.max(np.abs(rep.w[i, 2 + b, :2])) < 1e-12


def test_adapted_structure_trivial_vielbeins(rng):
    so3 = build_so3()
    chart = bundle_chart(so3)
    fields = [
        [compile_field(t, VARS33) for t in row]
        for row in (("u1", "x2", "0"), ("0", "u2*u3", "x1"), ("x3", "0", "u1"))
    ]
    nc = NConnection.from_fields(chart, fields)
    for _ in range(3):
        pt = tuple(rng.uniform(-1, 1, 6))
        rep = n_adapt_structure(so3, nc, pt)
        assert np.allclose(rep.rho_hat, so3.rho_values(pt[:3]), atol=1e-13)
        assert np.allclose(rep.c_hat, so3.c_values(pt[:3]), atol=1e-13)
        assert np.max(np.abs(rep.q)) < 1e-13
        assert np.max(np.abs(rep.residual_anchor)) < 1e-11
        assert np.max(np.abs(rep.residual_jacobi)) < 1e-11


def test_adapted_structure_rotated_vielbeins_reports(rng):
    so3 = build_so3()
    chart = bundle_chart(so3)
    # a nonzero N makes the elongated derivative see the u-dependence of
    # the fiber vielbeins, engaging the derivative coupling
    nfields = [
        [compile_field(t, VARS33) for t in row]
        for row in (("u2", "0", "x1"), ("0", "u1*u3", "0"), ("x2", "0", "u3"))
    ]
    nc = NConnection.from_fields(chart, nfields)
    e_v = np.empty((3, 3), dtype=object)
    for a in range(3):
        for b in range(3):
            if a == b:
                e_v[a, b] = compile_field(f"1 + 0.2*u{a + 1}^2", VARS33)
            else:
                e_v[a, b] = ScalarField.constant(0.0, 6)
    pt = (0.3, -0.5, 0.8, 0.4, 1.1, -0.2)
    rep = n_adapt_structure(so3, nc, pt, e_v=e_v)
    # the fiber rotation is u-dependent: the derivative coupling must engage
    assert np.max(np.abs(rep.q)) > 1e-3
    assert np.all(np.isfinite(rep.residual_anchor))
    assert np.all(np.isfinite(rep.residual_jacobi))
    # rotated structure functions scale with the vielbeins
    assert not np.allclose(rep.c_hat, so3.c_values(pt[:3]), atol=1e-6)


def test_berwald_linear_n_coefficients(rng):
    so3 = build_so3()
    chart = bundle_chart(so3)
    gam = rng.uniform(-1, 1, size=(3, 3, 3))  # gam[a, b, i]

    def entry(a, i):
        def fn(*args):
            return sum(gam[a, b, i] * args[3 + b] for b in range(3))

        return ScalarField(6, fn)

    nc = NConnection.from_fields(
        chart, [[entry(a, i) for i in range(3)] for a in range(3)]
    )
    pt = tuple(rng.uniform(-1, 1, 6))
    # constant fiber section e_b, horizontal direction e_i:
    # the derivative must return the linear coefficients
    for b in range(3):
        B = tuple(ScalarField.constant(1.0 if k == b else 0.0, 6) for k in range(3))
        for i in range(3):
            X = (np.eye(3)[i], np.zeros(3))
            got = berwald_derivative(so3, nc, X, B, pt)
            assert np.allclose(got, gam[:, b, i], atol=1e-12)


def test_berwald_leibniz(rng):
    so3 = build_so3()
    chart = bundle_chart(so3)
    fields = [
        [compile_field(t, VARS33) for t in row]
        for row in (("u1*x1", "0", "u2"), ("x2", "u3", "0"), ("0", "x3*u1", "u2"))
    ]
    nc = NConnection.from_fields(chart, fields)
    f = compile_field("x1*u2 + sin(u1)", VARS33)
    B = tuple(compile_field(t, VARS33) for t in ("u1", "x2*u3", "1"))
    fB = tuple(
        ScalarField(6, lambda *a, _b=b: f(*a) * _b(*a)) for b in B
    )
    pt = tuple(rng.uniform(-0.8, 0.8, 6))
    Xh = rng.uniform(-1, 1, 3)
    Xv = rng.uniform(-1, 1, 3)
    X = (Xh, Xv)
    lhs = berwald_derivative(so3, nc, X, fB, pt)
    # X(f) along elongated horizontal plus fiber legs
    nvals = nc.values(pt)
    xf = 0.0
    for i in range(3):
        term = f.partial(i).value(pt)
        for c in range(3):
            term -= nvals[c, i] * f.partial(3 + c).value(pt)
        xf += Xh[i] * term
    for b in range(3):
        xf += Xv[b] * f.partial(3 + b).value(pt)
    rhs = xf * np.array([b.value(pt) for b in B]) + f.value(pt) * berwald_derivative(
        so3, nc, X, B, pt
    )
    assert np.allclose(lhs, rhs, atol=1e-10)


def test_n_lift_bundle(rng):
    so3 = build_so3()
    chart = prolongation_chart(so3)
    fields = [
        [compile_field(t, VARS33) for t in row]
        for row in (("u1", "0", "x2"), ("0", "u2", "0"), ("x1*u3", "0", "1"))
    ]
    nc = NConnection.from_fields(chart, fields)
    lifted = n_lift_bundle(so3, nc)
    pt = tuple(rng.uniform(-1, 1, 6))
    got = lifted(pt, 0)
    rho = so3.rho_values(pt[:3])
    nvals = nc.values(pt)
    want = np.einsum("ai,ab->ib", rho, nvals)
    got_v = np.array([[got[i, b].value for b in range(3)] for i in range(3)])
    assert np.allclose(got_v, want, atol=1e-12)
