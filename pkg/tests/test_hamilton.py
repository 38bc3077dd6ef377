"""Momentum-side structures: frames, Liouville pair, flows, brackets,
Legendre transform, and the canonical dual connection package."""

import warnings

import numpy as np
import pytest
from conftest import build_so3, eps3

from anholo import hamilton as ham
from anholo.expressions import compile_field
from anholo.jets import Jet, var_jets
from anholo.mechanics import (
    FlowError,
    HomogeneityError,
    LagrangianField,
    RegularityError,
    hessian,
    integrate_el,
    poincare_cartan,
)
from anholo.nconnection import NConnection, frame_d1, frame_d2, prolongation_chart

PV4 = ("x1", "x2", "p1", "p2")
PV6 = ("x1", "x2", "x3", "p1", "p2", "p3")
UV6 = ("x1", "x2", "x3", "u1", "u2", "u3")

INERTIA = np.array([1.0, 2.0, 3.0])


@pytest.fixture(scope="module")
def h_triv():
    return ham.HamiltonianField(compile_field("0.25*(p1^2 + p2^2)", PV4), 2)


@pytest.fixture(scope="module")
def h_rigid():
    return ham.HamiltonianField(
        compile_field("0.5*(p1^2 + p2^2/2 + p3^2/3)", PV6), 3
    )


@pytest.fixture(scope="module")
def h_conf():
    # x-dependent conformal kinetic term; its canonical coefficients have
    # the closed form checked in conf_n_closed below
    return ham.HamiltonianField(
        compile_field("0.25*exp(-x1)*(p1^2 + p2^2)", PV4), 2
    )


@pytest.fixture(scope="module")
def rigid_leg(so3):
    L = LagrangianField(
        compile_field("0.5*(u1^2 + 2*u2^2 + 3*u3^2)", UV6), 3, name="rigid"
    )
    return L, ham.legendre(so3, L)


@pytest.fixture(scope="module")
def rigid_flows(so3, rigid_leg):
    L, leg = rigid_leg
    x0, u0 = (0.1, -0.2, 0.3), (1.0, 0.5, 0.2)
    _, p0 = leg.forward(x0, u0)
    trh = ham.hamilton_flow(
        so3, leg.hamiltonian, x0, p0, (0.0, 10.0), dt=1e-3,
        invariant=lambda x, p: float(p @ p),
    )
    trl = integrate_el(so3, L, x0, u0, (0.0, 10.0), dt=1e-3)
    return trh, trl


def conf_n_closed(pt) -> np.ndarray:
    """Both-indices-low coefficients for the conformal Hamiltonian,
    derived by hand from the defining formula."""
    p1, p2 = pt[2], pt[3]
    return np.array(
        [[0.5 * p1, 0.5 * p2], [0.5 * p2, -0.5 * p1]]
    )


def quad_fn(A, b):
    """Quadratic observable z^T A z + b.z as a jet-evaluable callable."""

    def fn(*args):
        acc = None
        for i, ai in enumerate(args):
            t = ai * float(b[i])
            acc = t if acc is None else acc + t
            for j, aj in enumerate(args):
                acc = acc + ai * aj * float(A[i, j])
        return acc

    return fn


def pb_jet(spec, f, w, point, order):
    """Bracket of two observables as an honest jet at the point (same
    formula as the module, kept in jet arithmetic)."""
    n, m = spec.n, spec.m
    vars_ = var_jets(tuple(point), order + 1)
    fj = f(*vars_)
    wj = w(*vars_)
    rho = spec.rho_jets(vars_)
    c = spec.c_jets(vars_)
    acc = Jet.constant(0.0, n + m, order)
    for a in range(m):
        for i in range(n):
            acc = acc + rho[a, i] * (
                fj.deriv(n + a) * wj.deriv(i) - fj.deriv(i) * wj.deriv(n + a)
            )
    for e in range(m):
        for a in range(m):
            for b in range(m):
                acc = acc + vars_[n + e] * c[e, a, b] * fj.deriv(n + a) * wj.deriv(
                    n + b
                )
    return acc


def outer_bracket(spec, f, inner, point):
    """{f, G} at a point where G is known only through its jet `inner`."""
    n, m = spec.n, spec.m
    point = tuple(point)
    vars_ = var_jets(point, 1)
    fj = f(*vars_)
    rho = spec.rho_values(point[:n])
    c = spec.c_values(point[:n])
    fx = np.array([fj.deriv(i).value for i in range(n)])
    fp = np.array([fj.deriv(n + a).value for a in range(m)])
    gx = np.array([inner.deriv(i).value for i in range(n)])
    gp = np.array([inner.deriv(n + a).value for a in range(m)])
    val = fp @ (rho @ gx) - gp @ (rho @ fx)
    val += np.einsum("e,eab,a,b->", np.array(point[n:]), c, fp, gp)
    return float(val)


# ---------------------------------------------------------------------------
# Hamiltonian fields


class TestHamiltonianField:
    def test_accessors(self, h_rigid):
        assert h_rigid.n == 3 and h_rigid.m == 3
        assert h_rigid.value((0.0, 0.0, 0.0, 1.0, 1.0, 0.6)) == pytest.approx(0.81)

    def test_dual_hessian_trivial(self, h_triv):
        g = ham.dual_hessian(h_triv, (0.1, 0.2, 0.5, -0.3))
        assert np.allclose(g, 0.25 * np.eye(2), atol=1e-14)

    def test_dual_hessian_rigid(self, h_rigid):
        g = ham.dual_hessian(h_rigid, (0.0,) * 3 + (1.0, 1.0, 1.0))
        assert np.allclose(g, np.diag(0.5 / INERTIA), atol=1e-14)

    def test_degenerate_names_point(self):
        h = ham.HamiltonianField(compile_field("0.5*p1^2*p2^2", PV4), 2)
        with pytest.raises(RegularityError, match="degenerate"):
            ham.dual_hessian(h, (0.0, 0.0, 1.0, 0.0))

    def test_box_probe_accepts(self):
        box = ((-1, 1), (-1, 1), (0.5, 2), (0.5, 2))
        ham.HamiltonianField(compile_field("0.25*(p1^2 + p2^2)", PV4), 2, box=box)

    def test_box_signature_flip_rejected(self):
        # p2-direction curvature changes sign across x1 = -1
        box = ((-4.0, 0.0), (-1, 1), (-1, 1), (-1, 1))
        with pytest.raises(RegularityError, match="signature"):
            ham.HamiltonianField(
                compile_field("p1^2 + (1 + x1)*p2^2", PV4), 2, box=box
            )

    def test_bad_box_length(self):
        with pytest.raises(ValueError, match="interval"):
            ham.HamiltonianField(
                compile_field("p1^2 + p2^2", PV4), 2, box=((0, 1),)
            )

    def test_fiber_dim_out_of_range(self):
        with pytest.raises(ValueError, match="fiber"):
            ham.HamiltonianField(compile_field("p1^2", ("p1",)), 2)


# ---------------------------------------------------------------------------
# frames and differentials


class TestDualFrames:
    def test_trivial_plain_frame(self, trivial2):
        df = ham.dual_frames(trivial2, (0.1, 0.2, 0.5, -0.3))
        assert np.allclose(df.frame.z_action, np.hstack([np.eye(2), np.zeros((2, 2))]))
        assert np.allclose(df.frame.v_action, np.hstack([np.zeros((2, 2)), np.eye(2)]))
        assert df.frame.pairing_residual == 0.0

    def test_so3_anchor_action(self, so3):
        x = (0.1, -0.2, 0.3)
        df = ham.dual_frames(so3, x + (0.4, 0.7, -1.1))
        rho = so3.rho_values(x)
        assert np.allclose(df.frame.z_action[:, :3], rho, atol=1e-14)
        assert np.allclose(df.frame.z_action[:, 3:], 0.0)

    def test_so3_leg_brackets_close_on_structure(self, so3):
        df = ham.dual_frames(so3, (0.1, -0.2, 0.3, 0.4, 0.7, -1.1))
        w = df.brackets().w
        for a in range(3):
            for b in range(3):
                for e in range(3):
                    assert w[a, b, e] == pytest.approx(eps3(a, b, e), abs=1e-10)
        assert np.max(np.abs(w[:3, :3, 3:])) < 1e-10
        assert np.max(np.abs(w[3:, 3:, :])) < 1e-10

    def test_adapted_frame_tilts_by_coefficients(self, trivial2):
        chart = prolongation_chart(trivial2)
        fields = np.array(
            [
                [compile_field("p1*x2", PV4), compile_field("p2", PV4)],
                [compile_field("x1", PV4), compile_field("0", PV4)],
            ],
            dtype=object,
        )
        nc = NConnection.from_fields(chart, fields)
        pt = (0.3, -0.5, 0.8, 0.2)
        df = ham.dual_frames(trivial2, pt, nconn=nc)
        assert df.frame.z_action[0, 2] == pytest.approx(-0.8 * -0.5)
        assert df.frame.z_action[0, 3] == pytest.approx(-0.3)
        assert df.frame.pairing_residual < 1e-14

    def test_differential_components(self, trivial2):
        f = compile_field("x1*p2 + sin(x2)", PV4)
        comp = ham.dual_differential(trivial2, f)
        pt = (0.1, 0.2, 0.5, -0.3)
        vals = [j.value for j in comp(pt, 0)]
        assert vals == pytest.approx([-0.3, np.cos(0.2), 0.0, 0.1])

    def test_differential_squares_to_zero(self, so3, rng):
        chart = prolongation_chart(so3)
        n0 = NConnection.zero(chart)
        f = compile_field("x1*p2^2 + exp(x3)*p1 - x2*p3", PV6)
        comp = ham.dual_differential(so3, f)
        for _ in range(5):
            pt = tuple(rng.uniform(-1, 1, 6))
            dd = frame_d1(chart, n0, comp, pt)
            assert np.max(np.abs(dd)) < 1e-10

    def test_differential_squares_to_zero_adapted(self, trivial2, h_conf):
        # nonzero coefficients exercise the commutator corrections
        from anholo.nconnection import frame_differential

        dn = ham.dual_canonical_n(trivial2, h_conf, (0.3, -0.2, 0.7, -0.4))
        f = compile_field("x1*p2^2 + p1*x2", PV4)
        comp = frame_differential(dn.chart, dn.nconn, f)
        for pt in [(0.3, -0.2, 0.7, -0.4), (0.0, 0.5, 1.0, 0.3)]:
            dd = frame_d1(dn.chart, dn.nconn, comp, pt)
            assert np.max(np.abs(dd)) < 1e-10


# ---------------------------------------------------------------------------
# Liouville pair


class TestLiouville:
    def test_trivial_standard_form(self, trivial2):
        pt = (0.1, 0.2, 0.5, -0.3)
        forms = ham.liouville_symplectic(trivial2, pt)
        assert np.allclose(forms.theta, [0.5, -0.3, 0.0, 0.0])
        block = np.zeros((4, 4))
        block[:2, 2:] = np.eye(2)
        block[2:, :2] = -np.eye(2)
        assert np.allclose(forms.omega, block, atol=1e-14)
        assert forms.closure_residual < 1e-14

    def test_so3_structure_twist(self, so3):
        forms = ham.liouville_symplectic(so3, (0.1, -0.2, 0.3, 0.0, 0.0, 1.0))
        zz = forms.omega[:3, :3]
        expect = np.array([[eps3(a, b, 2) for b in range(3)] for a in range(3)])
        assert np.allclose(zz, expect, atol=1e-14)
        assert np.allclose(forms.omega[:3, 3:], np.eye(3), atol=1e-14)

    def test_theta_reproduces_momenta(self, so3, rng):
        pt = tuple(rng.uniform(-1, 1, 6))
        forms = ham.liouville_symplectic(so3, pt)
        assert np.allclose(forms.theta[:3], pt[3:])
        assert np.allclose(forms.theta[3:], 0.0)

    def test_closure_at_random_points(self, so3, rng):
        for _ in range(50):
            pt = tuple(np.concatenate([rng.uniform(-1, 1, 3), rng.uniform(-2, 2, 3)]))
            forms = ham.liouville_symplectic(so3, pt)
            assert forms.closure_residual < 1e-9

    def test_closure_with_adapted_frame(self, trivial2, h_conf):
        # the same two-form stays closed over the tilted frame legs
        dn = ham.dual_canonical_n(trivial2, h_conf, (0.3, -0.2, 0.7, -0.4))
        oc = ham.liouville_symplectic(trivial2, (0.3, -0.2, 0.7, -0.4)).omega_comp
        for pt in [(0.3, -0.2, 0.7, -0.4), (-0.5, 0.4, 1.1, 0.6)]:
            res = frame_d2(dn.chart, dn.nconn, oc, pt)
            assert np.max(np.abs(res)) < 1e-9


# ---------------------------------------------------------------------------
# flows


class TestHamiltonFlow:
    def test_trivial_straight_lines(self, trivial2, h_triv):
        tr = ham.hamilton_flow(trivial2, h_triv, (0.0, 0.0), (1.0, 0.4), (0, 1), dt=1e-2)
        assert np.allclose(tr.x[-1], [0.5, 0.2], atol=1e-12)
        assert np.allclose(tr.u[-1], [1.0, 0.4], atol=1e-13)
        assert tr.energy_drift < 1e-14

    def test_so3_drifts(self, so3, h_rigid):
        tr = ham.hamilton_flow(
            so3, h_rigid, (0.1, -0.2, 0.3), (1.0, 1.0, 0.6), (0.0, 10.0),
            dt=1e-3, invariant=lambda x, p: float(p @ p),
        )
        assert tr.energy_drift < 1e-8
        assert tr.invariant_drift < 1e-8

    def test_contraction_identity(self, so3, trivial2, h_rigid, h_triv, rng):
        for _ in range(5):
            pt6 = tuple(rng.uniform(-1, 1, 6))
            assert ham.flow_form_residual(so3, h_rigid, pt6) < 1e-11
            pt4 = tuple(rng.uniform(-1, 1, 4))
            assert ham.flow_form_residual(trivial2, h_triv, pt4) < 1e-11

    def test_finite_time_escape_raises(self, trivial2):
        h = ham.HamiltonianField(
            compile_field("0.25*(p1^2 + p2^2) - 0.5*x1^4", PV4), 2
        )
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            with pytest.raises(FlowError, match="non-finite"):
                ham.hamilton_flow(trivial2, h, (2.0, 0.0), (2.0, 0.0), (0, 5), dt=1e-2)

    def test_empty_span_rejected(self, trivial2, h_triv):
        with pytest.raises(ValueError, match="span"):
            ham.hamilton_flow(trivial2, h_triv, (0, 0), (1, 0), (1.0, 1.0))

    def test_step_error_estimate(self, so3, h_rigid):
        tr = ham.hamilton_flow(
            so3, h_rigid, (0.1, -0.2, 0.3), (1.0, 1.0, 0.6), (0.0, 1.0),
            dt=1e-2, error_estimate=True,
        )
        assert tr.step_error is not None
        assert 0.0 < tr.step_error < 1e-6


# ---------------------------------------------------------------------------
# Poisson bracket


class TestPoissonBracket:
    def test_coordinates_commute(self, so3, rng):
        x1 = compile_field("x1", PV6)
        x2 = compile_field("x2", PV6)
        for _ in range(3):
            pt = tuple(rng.uniform(-1, 1, 6))
            assert ham.poisson_bracket(so3, x1, x2, pt) == 0.0

    def test_momenta_close_on_structure(self, so3, rng):
        ps = [compile_field(s, PV6) for s in ("p1", "p2", "p3")]
        pt = tuple(rng.uniform(-1, 1, 6))
        assert ham.poisson_bracket(so3, ps[0], ps[1], pt) == pytest.approx(pt[5])
        assert ham.poisson_bracket(so3, ps[1], ps[2], pt) == pytest.approx(pt[3])
        assert ham.poisson_bracket(so3, ps[2], ps[0], pt) == pytest.approx(pt[4])

    def test_antisymmetry_exact(self, so3, rng):
        f = compile_field("x1*p2^2 + sin(x3)*p1", PV6)
        w = compile_field("p3*x2 + p1*p2", PV6)
        for _ in range(5):
            pt = tuple(rng.uniform(-1, 1, 6))
            assert ham.poisson_bracket(so3, f, w, pt) == -ham.poisson_bracket(
                so3, w, f, pt
            )

    def test_leibniz_on_polynomials(self, so3, rng):
        f = compile_field("p1*p2 + x3*p3", PV6)
        w = compile_field("x1*p2 + p3^2", PV6)
        v = compile_field("p1 + x2*p3", PV6)
        wv = compile_field("(x1*p2 + p3^2)*(p1 + x2*p3)", PV6)
        for _ in range(5):
            pt = tuple(rng.uniform(-1, 1, 6))
            lhs = ham.poisson_bracket(so3, f, wv, pt)
            rhs = ham.poisson_bracket(so3, f, w, pt) * v.value(pt) + w.value(
                pt
            ) * ham.poisson_bracket(so3, f, v, pt)
            assert lhs == pytest.approx(rhs, abs=1e-13)

    def test_jacobi_on_random_quadratics(self, so3, rng):
        for _ in range(5):
            fields = []
            for _ in range(3):
                A = rng.uniform(-1, 1, (6, 6))
                b = rng.uniform(-1, 1, 6)
                fields.append(quad_fn(0.5 * (A + A.T), b))
            f, g, h = fields
            pt = tuple(rng.uniform(-1, 1, 6))
            s = outer_bracket(so3, f, pb_jet(so3, g, h, pt, 1), pt)
            s += outer_bracket(so3, g, pb_jet(so3, h, f, pt, 1), pt)
            s += outer_bracket(so3, h, pb_jet(so3, f, g, pt, 1), pt)
            assert abs(s) < 1e-8

    def test_jet_bracket_matches_pointwise(self, so3, rng):
        f = compile_field("x1*p2^2 + sin(x3)*p1", PV6)
        w = compile_field("p3*x2 + p1*p2", PV6)
        pt = tuple(rng.uniform(-1, 1, 6))
        assert pb_jet(so3, f, w, pt, 0).value == pytest.approx(
            ham.poisson_bracket(so3, f, w, pt), abs=1e-14
        )

    def test_flow_is_bracket_derivative(self, so3, h_rigid):
        f = compile_field("p1*p2 + x3", PV6)
        tr = ham.hamilton_flow(
            so3, h_rigid, (0.1, -0.2, 0.3), (1.0, 1.0, 0.6), (0.0, 0.2), dt=1e-3
        )
        k = 100
        pts = [tuple(tr.x[j]) + tuple(tr.u[j]) for j in (k - 1, k, k + 1)]
        dfdt = (f.value(pts[2]) - f.value(pts[0])) / (2e-3)
        assert dfdt == pytest.approx(
            ham.poisson_bracket(so3, h_rigid.h, f, pts[1]), abs=1e-4
        )


# ---------------------------------------------------------------------------
# Legendre transform


class TestLegendre:
    def test_free_closed_form(self, trivial2):
        L = LagrangianField(compile_field("u1^2 + u2^2", ("x1", "x2", "u1", "u2")), 2)
        leg = ham.legendre(trivial2, L)
        x, p = leg.forward((0.3, -0.1), (0.5, -0.7))
        assert np.allclose(p, [1.0, -1.4])
        assert leg.hamiltonian.value((0.3, -0.1, 1.0, -1.4)) == pytest.approx(
            (1.0 + 1.4**2) / 4.0
        )
        closed = compile_field("0.25*(p1^2 + p2^2)", PV4)
        vj = var_jets((0.3, -0.1, 1.0, -1.4), 3)
        assert np.max(np.abs(leg.hamiltonian.h(*vj).coeffs - closed(*vj).coeffs)) < 1e-13

    def test_rigid_closed_form(self, rigid_leg):
        L, leg = rigid_leg
        x0, u0 = (0.1, -0.2, 0.3), (1.0, 0.5, 0.2)
        _, p = leg.forward(x0, u0)
        assert np.allclose(p, INERTIA * np.array(u0))
        pt = x0 + tuple(p)
        assert leg.hamiltonian.value(pt) == pytest.approx(0.5 * np.sum(p**2 / INERTIA))
        closed = compile_field("0.5*(p1^2 + p2^2/2 + p3^2/3)", PV6)
        vj = var_jets(pt, 3)
        assert np.max(np.abs(leg.hamiltonian.h(*vj).coeffs - closed(*vj).coeffs)) < 1e-13

    def test_legendre_point_helper(self, rigid_leg):
        L, leg = rigid_leg
        x, p = ham.legendre_point(L, (0.1, -0.2, 0.3), (1.0, 0.5, 0.2))
        xf, pf = leg.forward((0.1, -0.2, 0.3), (1.0, 0.5, 0.2))
        assert x == xf and np.allclose(p, pf)

    def test_round_trip_on_random_points(self, rigid_leg, rng):
        _, leg = rigid_leg
        worst = 0.0
        for _ in range(100):
            x = tuple(rng.uniform(-1, 1, 3))
            u = rng.uniform(-2, 2, 3)
            _, p = leg.forward(x, u)
            _, ub = leg.inverse(x, p)
            worst = max(worst, float(np.max(np.abs(ub - u))))
        assert worst < 1e-10

    def test_round_trip_nonquadratic(self, trivial2, rng):
        # quartic correction keeps the fiber map nonlinear
        L = LagrangianField(
            compile_field(
                "u1^2 + u2^2 + 0.05*(u1^4 + u2^4) + 0.1*x1*u1*u2",
                ("x1", "x2", "u1", "u2"),
            ),
            2,
        )
        leg = ham.legendre(trivial2, L)
        for _ in range(20):
            x = tuple(rng.uniform(-1, 1, 2))
            u = rng.uniform(-1.5, 1.5, 2)
            _, p = leg.forward(x, u)
            _, ub = leg.inverse(x, p)
            assert np.max(np.abs(ub - u)) < 1e-10

    def test_jet_path_nonquadratic(self, trivial2):
        # transform jets against nested finite differences of the value map
        L = LagrangianField(
            compile_field("u1^2 + u2^2 + 0.05*u1^4", ("x1", "x2", "u1", "u2")), 2
        )
        leg = ham.legendre(trivial2, L)
        H = leg.hamiltonian
        pt = (0.2, -0.4, 0.9, 0.5)
        hj = H.h(*var_jets(pt, 2))
        from anholo.jets import fd_oracle

        for mi in [(0, 0, 1, 0), (0, 0, 0, 1), (0, 0, 2, 0), (0, 0, 1, 1)]:
            want = fd_oracle(lambda *a: H.h(*a), pt, mi, step=1e-2)
            got = hj.partial(mi)
            assert got == pytest.approx(want, abs=5e-6)

    def test_flow_agreement(self, rigid_flows):
        trh, trl = rigid_flows
        assert np.max(np.abs(trh.x - trl.x)) < 1e-6
        assert np.max(np.abs(trh.u - INERTIA * trl.u)) < 1e-6

    def test_flow_drifts_under_transform(self, rigid_flows):
        trh, _ = rigid_flows
        assert trh.energy_drift < 1e-8
        assert trh.invariant_drift < 1e-8

    def test_nonconvergence_reports(self, trivial2):
        from anholo.algebroid import AlgebroidSpec

        spec1 = AlgebroidSpec.trivial(1)
        L = LagrangianField(compile_field("sqrt(1 + u1^2)", ("x1", "u1")), 1)
        leg = ham.legendre(spec1, L)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            with pytest.raises(ham.LegendreError, match="residual"):
                leg.inverse((0.0,), (1.5,))

    def test_cold_restart_after_flow(self, rigid_leg):
        _, leg = rigid_leg
        _, u = leg.inverse((5.0, 5.0, 5.0), np.array([30.0, -20.0, 12.0]))
        assert np.allclose(u, [30.0, -10.0, 4.0], atol=1e-10)

    def test_fiber_mismatch_rejected(self, so3):
        L = LagrangianField(compile_field("u1^2", ("x1", "u1")), 1)
        with pytest.raises(ValueError, match="fiber"):
            ham.legendre(so3, L)


class TestFormPullback:
    def tangent_map(self, spec, L, point):
        n, m = spec.n, spec.m
        vars_ = var_jets(tuple(point), 2)
        lj = L.l(*vars_)
        lxu = np.array(
            [[lj.deriv(i).deriv(n + a).value for a in range(m)] for i in range(n)]
        )
        rho = spec.rho_values(point[:n])
        M = np.einsum("bi,ia->ab", rho, lxu)
        J = np.zeros((2 * m, 2 * m))
        J[:m, :m] = np.eye(m)
        J[m:, :m] = M
        J[m:, m:] = 2.0 * hessian(L, point)
        return J

    @pytest.mark.parametrize("case", ["quad", "rigid"])
    def test_two_form_pullback(self, case, so3, trivial2, rigid_leg, rng):
        if case == "rigid":
            spec = so3
            L, leg = rigid_leg
            point = (0.1, -0.2, 0.3, 1.0, 0.5, 0.2)
        else:
            spec = trivial2
            L = LagrangianField(
                compile_field(
                    "(1 + 0.3*x1^2)*u1^2 + 0.2*x1*x2*u1*u2 + (1 + 0.2*x2^2)*u2^2",
                    ("x1", "x2", "u1", "u2"),
                ),
                2,
            )
            leg = ham.legendre(spec, L)
            point = (0.4, -0.3, 0.8, 0.6)
        n = spec.n
        pc = poincare_cartan(spec, L, point)
        x, p = leg.forward(point[:n], point[n:])
        forms = ham.liouville_symplectic(spec, tuple(x) + tuple(p))
        J = self.tangent_map(spec, L, point)
        assert np.max(np.abs(J.T @ forms.omega @ J - pc.omega)) < 1e-11

    def test_one_form_pullback(self, so3, rigid_leg):
        L, leg = rigid_leg
        point = (0.1, -0.2, 0.3, 1.0, 0.5, 0.2)
        pc = poincare_cartan(so3, L, point)
        x, p = leg.forward(point[:3], point[3:])
        forms = ham.liouville_symplectic(so3, tuple(x) + tuple(p))
        J = self.tangent_map(so3, L, point)
        assert np.max(np.abs(J.T @ forms.theta - pc.theta)) < 1e-12


# ---------------------------------------------------------------------------
# canonical dual connection


class TestDualCanonicalN:
    def test_trivial_vanishes(self, trivial2, h_triv):
        dn = ham.dual_canonical_n(trivial2, h_triv, (0.1, 0.2, 0.5, -0.3))
        assert np.max(np.abs(dn.nconn.values((0.1, 0.2, 0.5, -0.3)))) == 0.0
        assert np.max(np.abs(dn.tau)) == 0.0
        assert dn.symmetrization_residual == 0.0
        assert np.max(np.abs(dn.curvature)) == 0.0

    def test_rigid_x_independent_vanishes(self, so3, h_rigid):
        dn = ham.dual_canonical_n(so3, h_rigid, (0.1, -0.2, 0.3, 0.4, 0.7, -1.1))
        assert np.max(np.abs(dn.n_values())) < 1e-14
        assert np.max(np.abs(dn.tau)) == 0.0

    def test_conformal_closed_form(self, trivial2, h_conf, rng):
        for _ in range(5):
            pt = tuple(rng.uniform(-0.8, 0.8, 4))
            dn = ham.dual_canonical_n(trivial2, h_conf, pt)
            assert np.allclose(dn.n_values(), conf_n_closed(pt), atol=1e-11)

    def test_symmetry_enforced_and_reported(self, trivial2, h_conf):
        pt = (0.3, -0.2, 0.7, -0.4)
        dn = ham.dual_canonical_n(trivial2, h_conf, pt)
        assert np.max(np.abs(dn.tau)) == 0.0
        assert dn.symmetrization_residual < 1e-12
        vals = dn.n_values(pt)
        assert np.allclose(vals, vals.T)

    def test_jet_order_consistency(self, trivial2, h_conf):
        # first-order jet coefficients match pointwise differences
        pt = (0.3, -0.2, 0.7, -0.4)
        dn = ham.dual_canonical_n(trivial2, h_conf, pt)
        co = dn.nconn.coeffs(pt, 1)
        step = 1e-6
        for b in range(2):
            for a in range(2):
                for k in range(4):
                    up = list(pt)
                    up[k] += step
                    dn_up = conf_n_closed(tuple(up))
                    dn_dn = conf_n_closed(pt)
                    fd = (dn_up[a, b] - dn_dn[a, b]) / step
                    assert co[b, a].deriv(k).value == pytest.approx(fd, abs=1e-5)

    def test_curvature_matches_honest_commutator(self, trivial2, h_conf):
        from anholo.nconnection import n_curvature

        pt = (0.3, -0.2, 0.7, -0.4)
        dn = ham.dual_canonical_n(trivial2, h_conf, pt)
        assert np.allclose(dn.curvature, n_curvature(dn.chart, dn.nconn, pt))


class TestDualPack:
    def test_trivial_everything_flat(self, trivial2, h_triv):
        pack = ham.dual_pack(trivial2, h_triv)
        pt = (0.1, 0.2, 0.5, -0.3)
        for conn in (pack.connection, pack.berwald):
            bl = conn.values(pt)
            for grid in (bl.lz, bl.lv, bl.kz, bl.kv):
                assert np.max(np.abs(grid.astype(float))) == 0.0
        F = pack.almost_complex_values(pt)
        expect = np.zeros((4, 4))
        expect[2:, :2] = 4.0 * np.eye(2)
        expect[:2, 2:] = -0.25 * np.eye(2)
        assert np.allclose(F, expect, atol=1e-14)
        rep = pack.compatibility(pt)
        assert all(v < 1e-12 for v in rep.values())

    def test_f_squares_to_minus_identity(self, trivial2, so3, h_conf, h_rigid, rng):
        for spec, H, d in ((trivial2, h_conf, 4), (so3, h_rigid, 6)):
            pack = ham.dual_pack(spec, H)
            pt = tuple(rng.uniform(-0.5, 0.5, d))
            F = pack.almost_complex_values(pt)
            assert np.max(np.abs(F @ F + np.eye(d))) < 1e-12

    def test_rigid_compatibility(self, so3, h_rigid):
        pack = ham.dual_pack(so3, h_rigid)
        rep = pack.compatibility((0.1, -0.2, 0.3, 0.4, 0.7, -1.1))
        assert rep["nonmetricity"] < 1e-9
        assert rep["omega"] < 1e-9
        assert rep["almost_complex"] < 1e-9
        assert rep["f_square"] < 1e-12

    def test_conformal_compatibility(self, trivial2, h_conf):
        pack = ham.dual_pack(trivial2, h_conf)
        rep = pack.compatibility((0.3, -0.2, 0.7, -0.4))
        assert rep["nonmetricity"] < 1e-9
        assert rep["omega"] < 1e-9
        assert rep["almost_complex"] < 1e-9

    def test_conformal_horizontal_block_closed_form(self, trivial2, h_conf):
        pack = ham.dual_pack(trivial2, h_conf)
        pt = (0.3, -0.2, 0.7, -0.4)
        bl = pack.connection.values(pt)
        for e in range(2):
            for b in range(2):
                for a in range(2):
                    want = 0.5 * (
                        (b == 0) * (e == a) + (a == 0) * (e == b) - (e == 0) * (a == b)
                    )
                    assert bl.lz[e, b, a] == pytest.approx(want, abs=1e-11)
                    assert bl.lv[e, b, a] == pytest.approx(-bl.lz[b, e, a], abs=1e-13)
        assert np.max(np.abs(bl.kv)) < 1e-12
        assert np.max(np.abs(bl.kz)) < 1e-12

    def test_conformal_berwald_closed_form(self, trivial2, h_conf):
        pack = ham.dual_pack(trivial2, h_conf)
        pt = (0.3, -0.2, 0.7, -0.4)
        bl = pack.berwald.values(pt)
        for b in range(2):
            for e in range(2):
                for a in range(2):
                    want = 0.5 * (
                        (a == e) * (b == 0) + (b == e) * (a == 0) - (e == 0) * (a == b)
                    )
                    assert bl.lv[b, e, a] == pytest.approx(want, abs=1e-11)
        assert np.max(np.abs(bl.lz)) == 0.0
        assert np.max(np.abs(bl.kz)) == 0.0
        assert np.max(np.abs(bl.kv)) == 0.0

    def test_metric_blocks_are_inverse_pair(self, so3, h_rigid):
        pack = ham.dual_pack(so3, h_rigid)
        pt = (0.1, -0.2, 0.3, 0.4, 0.7, -1.1)
        glow, gup = pack.metric_values(pt)
        assert np.allclose(glow @ gup, np.eye(3), atol=1e-13)
        g = pack.dmetric.g_values(pt)
        h = pack.dmetric.h_values(pt)
        assert np.allclose(g, glow, atol=1e-13)
        assert np.allclose(h, gup, atol=1e-14)

    def test_omega_values_constant_pairing(self, trivial2, h_conf):
        pack = ham.dual_pack(trivial2, h_conf)
        om = pack.omega_values((0.3, -0.2, 0.7, -0.4))
        expect = np.zeros((4, 4))
        expect[:2, 2:] = np.eye(2)
        expect[2:, :2] = -np.eye(2)
        assert np.array_equal(om, expect)


# ---------------------------------------------------------------------------
# fiber homogeneity probe


class TestHomogeneity:
    BOX4 = ((-1, 1), (-1, 1), (0.3, 1.5), (0.3, 1.5))

    def test_quadratic_passes(self, h_triv):
        assert ham.check_homogeneity(h_triv, degree=2.0, box=self.BOX4) < 1e-12

    def test_randers_style_passes(self):
        h = ham.HamiltonianField(
            compile_field("(sqrt(p1^2 + p2^2) + 0.3*p1)^2", PV4), 2
        )
        assert ham.check_homogeneity(h, degree=2.0, box=self.BOX4) < 1e-10

    def test_quartic_degree(self):
        h = ham.HamiltonianField(compile_field("(p1^2 + p2^2)^2", PV4), 2)
        assert ham.check_homogeneity(h, degree=4.0, box=self.BOX4) < 1e-10
        with pytest.raises(HomogeneityError, match="defect"):
            ham.check_homogeneity(h, degree=2.0, box=self.BOX4)

    def test_inhomogeneous_rejected(self):
        h = ham.HamiltonianField(compile_field("exp(p1) + p2^2", PV4), 2)
        with pytest.raises(HomogeneityError):
            ham.check_homogeneity(h, degree=2.0, box=self.BOX4)

    def test_box_required(self, h_triv):
        with pytest.raises(ValueError, match="box"):
            ham.check_homogeneity(h_triv, degree=2.0)
