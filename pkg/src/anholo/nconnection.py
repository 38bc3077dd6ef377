"""Nonlinear connections and adapted frames.

A `Chart` fixes the ambient picture: a total space with `n` base and `m`
fiber coordinates, `h` horizontal frame legs with anchor rows rho (functions
of the base) and horizontal structure functions C. Three kinds appear:

- "prolongation": h = m, rho and C inherited from an anchored structure;
  the horizontal legs are the corrected prolongation legs (fiber brackets
  vanish there).
- "manifold": h = n, rho = id, C = 0; plain coordinate frames.
- "bundle": h = n, rho = id, C = 0 horizontally, but the fiber legs close
  on the structure functions of the underlying anchored frame.

An `NConnection` assigns the vertical correction N[b, a'] (fiber leg b,
horizontal leg a') as a jet field over the total space. The adapted
horizontal leg acts on functions as rho_{a'}^i d_i - N[b, a'] d_{u^b}.

`n_curvature` uses the frame-commutator (Nijenhuis) convention: it is the
vertical part of the bracket of two adapted horizontal legs, which on
charts with structure functions includes a C.N feedback term. `anholonomy`
recomputes every bracket through the generic section-bracket expansion and
is the independent check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .algebroid import AlgebroidSpec, _field_grid
from .jets import Jet, JetDomainError, ScalarField, jet_matrix_inverse, var_jets

__all__ = [
    "Chart",
    "prolongation_chart",
    "manifold_chart",
    "bundle_chart",
    "NConnection",
    "FrameCalc",
    "NFrame",
    "n_frame",
    "n_curvature",
    "AnholonomyReport",
    "anholonomy",
    "NAdaptedStructure",
    "n_adapt_structure",
    "berwald_derivative",
    "n_lift_bundle",
    "frame_differential",
    "frame_d1",
    "frame_d2",
]


@dataclass
class Chart:
    n: int
    m: int
    h: int
    rho: np.ndarray  # (h, n) ScalarField over the base
    c: np.ndarray  # (h, h, h) ScalarField over the base
    kind: str
    vv_c: np.ndarray | None = None  # (m, m, m), fiber-leg brackets (bundle kind)

    def __post_init__(self):
        self.rho = _field_grid(self.rho, (self.h, self.n), self.n, "chart rho")
        self.c = _field_grid(self.c, (self.h, self.h, self.h), self.n, "chart c")
        if self.vv_c is not None:
            self.vv_c = _field_grid(
                self.vv_c, (self.m, self.m, self.m), self.n, "chart vv_c"
            )

    @property
    def dim(self) -> int:
        return self.n + self.m

    def rho_jets(self, vars_jets) -> np.ndarray:
        args = tuple(vars_jets[: self.n])
        dim, order = args[0].dim, args[0].order
        out = np.empty((self.h, self.n), dtype=object)
        for a in range(self.h):
            for i in range(self.n):
                f = self.rho[a, i]
                out[a, i] = (
                    Jet.constant(f.const_value, dim, order) if f.is_constant else f(*args)
                )
        return out

    def c_jets(self, vars_jets) -> np.ndarray:
        args = tuple(vars_jets[: self.n])
        dim, order = args[0].dim, args[0].order
        out = np.empty((self.h, self.h, self.h), dtype=object)
        for idx in np.ndindex(out.shape):
            f = self.c[idx]
            out[idx] = (
                Jet.constant(f.const_value, dim, order) if f.is_constant else f(*args)
            )
        return out


def prolongation_chart(spec: AlgebroidSpec) -> Chart:
    return Chart(spec.n, spec.m, spec.m, spec.rho, spec.c, kind="prolongation")


def manifold_chart(n: int, m: int) -> Chart:
    rho = np.array(
        [
            [ScalarField.constant(1.0 if i == a else 0.0, n) for i in range(n)]
            for a in range(n)
        ],
        dtype=object,
    )
    c = np.full((n, n, n), ScalarField.constant(0.0, n), dtype=object)
    return Chart(n, m, n, rho, c, kind="manifold")


def bundle_chart(spec: AlgebroidSpec) -> Chart:
    n, m = spec.n, spec.m
    rho = np.array(
        [
            [ScalarField.constant(1.0 if i == a else 0.0, n) for i in range(n)]
            for a in range(n)
        ],
        dtype=object,
    )
    c = np.full((n, n, n), ScalarField.constant(0.0, n), dtype=object)
    return Chart(n, m, n, rho, c, kind="bundle", vv_c=spec.c)


@dataclass
class NConnection:
    """Vertical correction coefficients as a jet field.

    `coeffs(point, order)` returns an (m, h) object array of jets:
    entry [b, a'] multiplies the fiber derivative d_{u^b} in the adapted
    horizontal leg a'."""

    chart: Chart
    coeffs: object
    fields: np.ndarray | None = None  # populated by from_fields

    @staticmethod
    def from_fields(chart: Chart, fields) -> "NConnection":
        grid = _field_grid(fields, (chart.m, chart.h), chart.dim, "N coefficients")

        def coeffs(point, order):
            args = var_jets(tuple(point), order)
            out = np.empty((chart.m, chart.h), dtype=object)
            for idx in np.ndindex(out.shape):
                f = grid[idx]
                out[idx] = (
                    Jet.constant(f.const_value, chart.dim, order)
                    if f.is_constant
                    else f(*args)
                )
            return out

        return NConnection(chart, coeffs, fields=grid)

    @staticmethod
    def zero(chart: Chart) -> "NConnection":
        z = np.full(
            (chart.m, chart.h), ScalarField.constant(0.0, chart.dim), dtype=object
        )
        return NConnection.from_fields(chart, z)

    def values(self, point) -> np.ndarray:
        co = self.coeffs(tuple(point), 0)
        out = np.zeros((self.chart.m, self.chart.h))
        for idx in np.ndindex(out.shape):
            out[idx] = co[idx].value
        return out


class FrameCalc:
    """Adapted-frame derivative operators at a point, to a given jet order.

    zd(F, a'): derivative of jet F along the adapted horizontal leg a'.
    vd(F, b): derivative along the fiber leg b.
    """

    def __init__(self, chart: Chart, nconn: NConnection, point, order: int):
        self.chart = chart
        self.point = tuple(point)
        if len(self.point) != chart.dim:
            raise ValueError(
                f"point has {len(self.point)} coordinates, chart has {chart.dim}"
            )
        self.order = order
        self.vars = var_jets(self.point, order)
        self.rho = chart.rho_jets(self.vars)
        self.c = chart.c_jets(self.vars)
        self.N = nconn.coeffs(self.point, order)

    def zd(self, F: Jet, a: int) -> Jet:
        acc = None
        for i in range(self.chart.n):
            t = self.rho[a, i] * F.deriv(i)
            acc = t if acc is None else acc + t
        for b in range(self.chart.m):
            acc = acc - self.N[b, a] * F.deriv(self.chart.n + b)
        return acc

    def vd(self, F: Jet, b: int) -> Jet:
        return F.deriv(self.chart.n + b)


@dataclass
class NFrame:
    """Adapted frame data at a point: how each leg acts on coordinates,
    the intrinsic change of basis against the uncorrected legs, and the
    dual coframe."""

    z_action: np.ndarray  # (h, n+m)
    v_action: np.ndarray  # (m, n+m)
    frame_mat: np.ndarray  # (h+m, h+m)
    coframe_mat: np.ndarray  # (h+m, h+m)
    pairing_residual: float


def n_frame(chart: Chart, nconn: NConnection, point) -> NFrame:
    h, m, n = chart.h, chart.m, chart.n
    vars_ = var_jets(tuple(point), 0)
    rho = chart.rho_jets(vars_)
    N = nconn.values(point)

    z_action = np.zeros((h, n + m))
    for a in range(h):
        for i in range(n):
            z_action[a, i] = rho[a, i].value
        for b in range(m):
            z_action[a, n + b] = -N[b, a]
    v_action = np.zeros((m, n + m))
    v_action[:, n:] = np.eye(m)

    F = np.eye(h + m)
    for a in range(h):
        for b in range(m):
            F[a, h + b] = -N[b, a]
    G = np.eye(h + m)
    for b in range(m):
        for a in range(h):
            G[h + b, a] = N[b, a]
    pairing = G @ F.T
    return NFrame(
        z_action=z_action,
        v_action=v_action,
        frame_mat=F,
        coframe_mat=G,
        pairing_residual=float(np.max(np.abs(pairing - np.eye(h + m)))),
    )


def n_curvature(chart: Chart, nconn: NConnection, point) -> np.ndarray:
    """Vertical part of the bracket of two adapted horizontal legs.

    Omega[a, b', c'] = rho_{c'}(N[a, b']) - rho_{b'}(N[a, c'])
                     + N[e, b'] d_e N[a, c'] - N[e, c'] d_e N[a, b']
                     + C^{e'}_{b'c'} N[a, e']

    (the last term is the feedback of the horizontal structure functions;
    it vanishes on manifold charts)."""
    fc = FrameCalc(chart, nconn, point, 1)
    h, m, n = chart.h, chart.m, chart.n
    out = np.zeros((m, h, h))
    for a in range(m):
        for bp in range(h):
            for cp in range(bp + 1, h):
                acc = None
                for j in range(n):
                    t = fc.rho[cp, j] * fc.N[a, bp].deriv(j)
                    t = t - fc.rho[bp, j] * fc.N[a, cp].deriv(j)
                    acc = t if acc is None else acc + t
                for e in range(m):
                    acc = acc + fc.N[e, bp] * fc.N[a, cp].deriv(n + e)
                    acc = acc - fc.N[e, cp] * fc.N[a, bp].deriv(n + e)
                for ep in range(h):
                    acc = acc + fc.c[ep, bp, cp] * fc.N[a, ep]
                val = acc.value
                out[a, bp, cp] = val
                out[a, cp, bp] = -val
    return out


@dataclass
class AnholonomyReport:
    """Every frame bracket, expanded back over the adapted frame.

    w[A, B, D]: coefficient of leg D in the bracket of legs (A, B), with
    horizontal legs first. Named views: zz_h should match the horizontal
    structure functions, zz_v the N-curvature, zv_v the fiber derivative
    of N, vv_v the fiber-leg brackets (bundle kind only)."""

    w: np.ndarray

    def __init__(self, w, h, m):
        self.w = w
        self._h = h
        self._m = m

    @property
    def zz_h(self):
        return self.w[: self._h, : self._h, : self._h]

    @property
    def zz_v(self):
        return self.w[: self._h, : self._h, self._h :]

    @property
    def zv_v(self):
        return self.w[: self._h, self._h :, self._h :]

    @property
    def zv_h(self):
        return self.w[: self._h, self._h :, : self._h]

    @property
    def vv_v(self):
        return self.w[self._h :, self._h :, self._h :]


def anholonomy(chart: Chart, nconn: NConnection, point) -> AnholonomyReport:
    """Brackets of the adapted frame legs via the generic section-bracket
    expansion (independent of the closed-form N-curvature)."""
    h, m, n = chart.h, chart.m, chart.n
    fc = FrameCalc(chart, nconn, point, 1)
    dim = h + m

    # coefficients of each adapted leg over the uncorrected legs, as jets
    zero = Jet.constant(0.0, chart.dim, 1)
    one = Jet.constant(1.0, chart.dim, 1)
    coeff = np.empty((dim, dim), dtype=object)
    coeff[:, :] = zero
    for a in range(h):
        coeff[a, a] = one
        for b in range(m):
            coeff[a, h + b] = -fc.N[b, a]
    for b in range(m):
        coeff[h + b, h + b] = one

    # anchor-directed derivative along uncorrected leg A of a jet
    def nat_d(F: Jet, A: int) -> Jet:
        if A < h:
            acc = None
            for i in range(n):
                t = fc.rho[A, i] * F.deriv(i)
                acc = t if acc is None else acc + t
            return acc
        return F.deriv(n + (A - h))

    vvc = None
    if chart.vv_c is not None:
        args = tuple(fc.vars[:n])
        vvc = np.zeros((m, m, m))
        for idx in np.ndindex((m, m, m)):
            f = chart.vv_c[idx]
            vvc[idx] = f.const_value if f.is_constant else f(*args).value

    w = np.zeros((dim, dim, dim))
    Fvals = np.zeros((dim, dim))
    for A in range(dim):
        for B in range(dim):
            Fvals[A, B] = coeff[A, B].value
    Finv = np.linalg.inv(Fvals)

    for A in range(dim):
        for B in range(A + 1, dim):
            r = np.zeros(dim)
            for Cc in range(dim):
                acc = 0.0
                for K in range(dim):
                    ck = coeff[A, K]
                    dk = coeff[B, K]
                    if np.any(ck.coeffs):
                        acc += (ck * nat_d(coeff[B, Cc], K)).value
                    if np.any(dk.coeffs):
                        acc -= (dk * nat_d(coeff[A, Cc], K)).value
                # structure feedback of the uncorrected legs
                if Cc < h:
                    for P in range(h):
                        for Q in range(h):
                            acc += (
                                fc.c[Cc, P, Q].value
                                * coeff[A, P].value
                                * coeff[B, Q].value
                            )
                elif vvc is not None:
                    cv = Cc - h
                    for P in range(m):
                        for Q in range(m):
                            acc += (
                                vvc[cv, P, Q]
                                * coeff[A, h + P].value
                                * coeff[B, h + Q].value
                            )
                r[Cc] = acc
            wab = r @ Finv
            w[A, B] = wab
            w[B, A] = -wab
    return AnholonomyReport(w, h, m)


# -- adapted structure transform ----------------------------------------------


@dataclass
class NAdaptedStructure:
    """The structure data rewritten on vielbein-rotated, N-elongated frames,
    with the residuals of the transformed structure equations.

    With trivial inner vielbeins the transform is the identity and the
    residuals reduce to the plain structure equations. The correction
    array q is the derivative coupling of the fiber vielbeins; residuals
    are reported, never forced."""

    rho_hat: np.ndarray  # (m, n)
    c_hat: np.ndarray  # (m, m, m)
    q: np.ndarray  # (m, m, m, m, m, m, n)
    residual_anchor: np.ndarray  # (m, m, n)
    residual_jacobi: np.ndarray  # (m, m, m, m)


def n_adapt_structure(
    spec: AlgebroidSpec, nconn: NConnection, point, e_h=None, e_v=None
) -> NAdaptedStructure:
    n, m = spec.n, spec.m
    point = tuple(point)
    if len(point) != n + m:
        raise ValueError("point must have base+fiber coordinates")
    vars_ = var_jets(point, 1)
    rho = spec.rho_jets(vars_)
    c = spec.c_jets(vars_)
    N = nconn.coeffs(point, 1)

    def grid_jets(fields, shape):
        grid = _field_grid(fields, shape, n + m, "vielbein")
        out = np.empty(shape, dtype=object)
        for idx in np.ndindex(shape):
            f = grid[idx]
            out[idx] = (
                Jet.constant(f.const_value, n + m, 1)
                if f.is_constant
                else f(*vars_)
            )
        return out

    if e_h is None:
        Eh = np.empty((n, n), dtype=object)
        for i in range(n):
            for j in range(n):
                Eh[i, j] = Jet.constant(1.0 if i == j else 0.0, n + m, 1)
    else:
        Eh = grid_jets(e_h, (n, n))
    if e_v is None:
        Ev = np.empty((m, m), dtype=object)
        for a in range(m):
            for b in range(m):
                Ev[a, b] = Jet.constant(1.0 if a == b else 0.0, n + m, 1)
    else:
        Ev = grid_jets(e_v, (m, m))

    Eh_inv = jet_matrix_inverse(Eh)
    Ev_inv = jet_matrix_inverse(Ev)

    # rotated anchor and structure functions
    rho_hat = np.empty((m, n), dtype=object)
    for b in range(m):
        for i in range(n):
            acc = None
            for iu in range(n):
                for bu in range(m):
                    t = Eh_inv[iu, i] * Ev[b, bu] * rho[bu, iu]
                    acc = t if acc is None else acc + t
            rho_hat[b, i] = acc
    c_hat = np.empty((m, m, m), dtype=object)
    for f in range(m):
        for d in range(m):
            for b in range(m):
                acc = None
                for fu in range(m):
                    for du in range(m):
                        for bu in range(m):
                            t = Ev_inv[fu, f] * Ev[d, du] * Ev[b, bu] * c[fu, du, bu]
                            acc = t if acc is None else acc + t
                c_hat[f, d, b] = acc

    # elongated derivative on (x, u) jets
    def ed(F: Jet, j: int) -> Jet:
        acc = F.deriv(j)
        for bb in range(m):
            acc = acc - N[bb, j] * F.deriv(n + bb)
        return acc

    # q[f, bp, ep, fp, b, e, j]: inverse-vielbein sandwich around the
    # elongated derivative of the triple vielbein product
    q = np.zeros((m, m, m, m, m, m, n))
    trip = np.empty((m, m, m, m, m, m), dtype=object)
    for b in range(m):
        for bu in range(m):
            for e in range(m):
                for eu in range(m):
                    for f in range(m):
                        for fu in range(m):
                            trip[b, bu, e, eu, f, fu] = Ev[b, bu] * Ev[e, eu] * Ev_inv[fu, f]
    for f in range(m):
        for bp in range(m):
            for ep in range(m):
                for fp in range(m):
                    for b in range(m):
                        for e in range(m):
                            for j in range(n):
                                acc = 0.0
                                for bu in range(m):
                                    for eu in range(m):
                                        for fu in range(m):
                                            pre = (
                                                Ev_inv[bu, bp].value
                                                * Ev_inv[eu, ep].value
                                                * Ev[fp, fu].value
                                            )
                                            if pre == 0.0:
                                                continue
                                            acc += pre * ed(trip[b, bu, e, eu, f, fu], j).value
                                q[f, bp, ep, fp, b, e, j] = acc

    rho_hat_v = np.array([[rho_hat[a, i].value for i in range(n)] for a in range(m)])
    c_hat_v = np.array(
        [[[c_hat[f, a, b].value for b in range(m)] for a in range(m)] for f in range(m)]
    )

    res1 = np.zeros((m, m, n))
    for a in range(m):
        for b in range(m):
            for i in range(n):
                acc = 0.0
                for j in range(n):
                    acc += rho_hat_v[a, j] * ed(rho_hat[b, i], j).value
                    acc -= rho_hat_v[b, j] * ed(rho_hat[a, i], j).value
                acc -= float(np.dot(rho_hat_v[:, i], c_hat_v[:, a, b]))
                res1[a, b, i] = acc

    res2 = np.zeros((m, m, m, m))
    for f in range(m):
        for a in range(m):
            for b in range(m):
                for e in range(m):
                    acc = 0.0
                    for p, qq, r in ((a, b, e), (b, e, a), (e, a, b)):
                        for j in range(n):
                            acc += rho_hat_v[p, j] * ed(c_hat[f, qq, r], j).value
                        for g in range(m):
                            acc += c_hat_v[f, p, g] * c_hat_v[g, qq, r]
                        for fp in range(m):
                            for bp in range(m):
                                for ep in range(m):
                                    for j in range(n):
                                        acc -= (
                                            c_hat_v[fp, bp, ep]
                                            * rho_hat_v[p, j]
                                            * q[f, bp, ep, fp, qq, r, j]
                                        )
                    res2[f, a, b, e] = acc

    return NAdaptedStructure(
        rho_hat=rho_hat_v,
        c_hat=c_hat_v,
        q=q,
        residual_anchor=res1,
        residual_jacobi=res2,
    )


def berwald_derivative(spec: AlgebroidSpec, nconn: NConnection, X, B, point) -> np.ndarray:
    """Covariant derivative of a fiber section along a direction, on the
    bundle picture: horizontal rules differentiate the coefficients along
    the elongated legs and feed back the fiber derivative of N; fiber rules
    are plain fiber derivatives.

    X = (X_base (n,), X_fiber (m,)) floats; B: m ScalarFields over the
    total space."""
    chart = nconn.chart
    if chart.kind != "bundle":
        raise ValueError("berwald_derivative expects a bundle-kind chart")
    n, m = chart.n, chart.m
    point = tuple(point)
    vars_ = var_jets(point, 1)
    N = nconn.coeffs(point, 1)
    Xh = np.asarray(X[0], dtype=float)
    Xv = np.asarray(X[1], dtype=float)
    Bj = np.empty(m, dtype=object)
    for a in range(m):
        f = B[a]
        Bj[a] = (
            Jet.constant(f.const_value, n + m, 1) if f.is_constant else f(*vars_)
        )

    out = np.zeros(m)
    for a in range(m):
        acc = 0.0
        for i in range(n):
            ei = Bj[a].deriv(i)
            for cc in range(m):
                ei = ei - N[cc, i] * Bj[a].deriv(n + cc)
            term = ei.value
            for b in range(m):
                term += Bj[b].value * N[a, i].deriv(n + b).value
            acc += Xh[i] * term
        for b in range(m):
            acc += Xv[b] * Bj[a].deriv(n + b).value
        out[a] = acc
    return out


def n_lift_bundle(spec: AlgebroidSpec, nconn: NConnection):
    """Push a prolongation-picture N down to the bundle picture through the
    anchor: returns a jet field (point, order) -> (n, m) array with entries
    rho_a^i N[a, b']."""
    chart = nconn.chart
    if chart.kind != "prolongation":
        raise ValueError("n_lift_bundle expects a prolongation-kind chart")
    n, m = spec.n, spec.m

    def coeffs(point, order):
        vars_ = var_jets(tuple(point), order)
        rho = spec.rho_jets(vars_)
        N = nconn.coeffs(tuple(point), order)
        out = np.empty((n, m), dtype=object)
        for i in range(n):
            for bp in range(m):
                acc = None
                for a in range(m):
                    t = rho[a, i] * N[a, bp]
                    acc = t if acc is None else acc + t
                out[i, bp] = acc
        return out

    return coeffs

# ---------------------------------------------------------------------------
# exterior calculus in the adapted frame


def _leg(fc: FrameCalc, F: Jet, A: int) -> Jet:
    return fc.zd(F, A) if A < fc.chart.h else fc.vd(F, A - fc.chart.h)


def frame_differential(chart: Chart, nconn: NConnection, f):
    """Adapted-frame components of the differential of a scalar, as a jet
    field: comp(point, order) -> (h+m,) object array, horizontal first.
    `f` is a ScalarField (or any callable on coordinate jets) over the
    chart's total space."""

    def comp(point, order):
        fc = FrameCalc(chart, nconn, point, order + 1)
        fj = f(*fc.vars)
        if not isinstance(fj, Jet):
            fj = Jet.constant(float(fj), chart.dim, order + 1)
        out = np.empty(chart.h + chart.m, dtype=object)
        for a in range(chart.h):
            out[a] = fc.zd(fj, a)
        for b in range(chart.m):
            out[chart.h + b] = fc.vd(fj, b)
        return out

    return comp


def frame_d1(chart: Chart, nconn: NConnection, comp, point) -> np.ndarray:
    """Exterior derivative of a 1-form given by adapted components.

    comp(point, order) -> (h+m,) jets. The commutator corrections come
    from the honest anholonomy of the adapted frame, so the result obeys
    d(d f) = 0 identically when comp is a frame differential."""
    dim = chart.h + chart.m
    point = tuple(point)
    fc = FrameCalc(chart, nconn, point, 1)
    th = comp(point, 1)
    w = anholonomy(chart, nconn, point).w
    vals = np.array([t.value for t in th])
    out = np.zeros((dim, dim))
    for A in range(dim):
        for B in range(A + 1, dim):
            r = _leg(fc, th[B], A).value - _leg(fc, th[A], B).value
            r -= float(w[A, B] @ vals)
            out[A, B] = r
            out[B, A] = -r
    return out


def frame_d2(chart: Chart, nconn: NConnection, comp, point) -> np.ndarray:
    """Exterior derivative of a 2-form given by adapted components.

    comp(point, order) -> (h+m, h+m) jets, antisymmetric."""
    dim = chart.h + chart.m
    point = tuple(point)
    fc = FrameCalc(chart, nconn, point, 1)
    om = comp(point, 1)
    w = anholonomy(chart, nconn, point).w
    vals = np.array([[e.value for e in row] for row in om])
    out = np.zeros((dim, dim, dim))
    for A in range(dim):
        for B in range(A + 1, dim):
            for C in range(B + 1, dim):
                r = (
                    _leg(fc, om[B, C], A).value
                    - _leg(fc, om[A, C], B).value
                    + _leg(fc, om[A, B], C).value
                )
                r -= float(w[A, B] @ vals[:, C])
                r += float(w[A, C] @ vals[:, B])
                r -= float(w[B, C] @ vals[:, A])
                # fill all six slot orders of the antisymmetric table
                out[A, B, C] = out[B, C, A] = out[C, A, B] = r
                out[A, C, B] = out[C, B, A] = out[B, A, C] = -r
    return out
