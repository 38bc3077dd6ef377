"""Anchored frame structures and their calculus.

An `AlgebroidSpec` declares, over an n-dimensional base chart, a rank-m
frame with an anchor map rho (m rows of base vector-field components) and
antisymmetric structure functions C^f_ab(x). The two compatibility
(structure) equations relating rho and C are never assumed: they are
checked numerically by `structure_residuals`, and everything downstream is
written so that a violation shows up in residual reports instead of being
silently absorbed.

The differential `exterior_d` acts on forms over the base whose slots are
frame indices; it reduces to the coordinate exterior derivative for the
trivial structure (rho = id, C = 0). `prolongation_spec` packages the
induced structure on (base + fiber) whose frame has 2m legs; it is again an
AlgebroidSpec, so the same differential serves the lifted calculus (and,
with momenta in place of fiber velocities, the dual one).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .jets import Jet, ScalarField, var_jets

__all__ = [
    "AlgebroidSpec",
    "StructureResiduals",
    "structure_residuals",
    "AlgebroidForm",
    "exterior_d",
    "contraction",
    "lie_derivative",
    "section_bracket",
    "Lifts",
    "lifts",
    "prolongation_spec",
    "ProlongFrame",
    "prolong_frame",
    "sode_check",
]


def _field_grid(fields, shape, arity, what):
    out = np.empty(shape, dtype=object)
    flat_spec = np.asarray(fields, dtype=object)
    if flat_spec.shape != shape:
        raise ValueError(f"{what} must have shape {shape}, got {flat_spec.shape}")
    for idx in np.ndindex(shape):
        f = flat_spec[idx]
        if isinstance(f, (int, float)):
            f = ScalarField.constant(float(f), arity)
        if not isinstance(f, ScalarField):
            raise TypeError(f"{what}{list(idx)} is not a ScalarField")
        if f.arity != arity:
            raise ValueError(f"{what}{list(idx)} has arity {f.arity}, expected {arity}")
        out[idx] = f
    return out


@dataclass
class AlgebroidSpec:
    """Anchored frame data over an n-dimensional base.

    rho[a][i] is the i-th base component of the a-th frame leg's anchor
    image; c[f][a][b] is the coefficient of leg f in the bracket of legs
    (a, b), antisymmetric in (a, b).
    """

    n: int
    m: int
    rho: np.ndarray  # (m, n) of ScalarField, arity n
    c: np.ndarray  # (m, m, m) of ScalarField, arity n
    name: str = ""
    _rho_const: np.ndarray | None = field(default=None, repr=False)
    _c_const: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.rho = _field_grid(self.rho, (self.m, self.n), self.n, "rho")
        self.c = _field_grid(self.c, (self.m, self.m, self.m), self.n, "c")
        if all(f.is_constant for f in self.rho.flat):
            self._rho_const = np.array(
                [[f.const_value for f in row] for row in self.rho]
            )
        if all(f.is_constant for f in self.c.flat):
            self._c_const = np.array(
                [[[f.const_value for f in row] for row in plane] for plane in self.c]
            )

    @staticmethod
    def trivial(n: int, name: str = "trivial") -> "AlgebroidSpec":
        rho = [
            [ScalarField.constant(1.0 if i == a else 0.0, n) for i in range(n)]
            for a in range(n)
        ]
        c = [
            [[ScalarField.constant(0.0, n) for _ in range(n)] for _ in range(n)]
            for _ in range(n)
        ]
        return AlgebroidSpec(n, n, np.array(rho, dtype=object), np.array(c, dtype=object), name)

    # -- evaluation -------------------------------------------------------

    def rho_values(self, x) -> np.ndarray:
        if self._rho_const is not None:
            return self._rho_const
        x = tuple(float(v) for v in x)
        return np.array([[f.value(x) for f in row] for row in self.rho])

    def c_values(self, x) -> np.ndarray:
        if self._c_const is not None:
            return self._c_const
        x = tuple(float(v) for v in x)
        return np.array(
            [[[f.value(x) for f in row] for row in plane] for plane in self.c]
        )

    def rho_jets(self, vars_jets) -> np.ndarray:
        """Anchor entries as jets; `vars_jets` may live in a larger space,
        only the first n are consumed."""
        args = tuple(vars_jets[: self.n])
        dim, order = args[0].dim, args[0].order
        out = np.empty((self.m, self.n), dtype=object)
        for a in range(self.m):
            for i in range(self.n):
                f = self.rho[a, i]
                out[a, i] = (
                    Jet.constant(f.const_value, dim, order)
                    if f.is_constant
                    else f(*args)
                )
        return out

    def c_jets(self, vars_jets) -> np.ndarray:
        args = tuple(vars_jets[: self.n])
        dim, order = args[0].dim, args[0].order
        out = np.empty((self.m, self.m, self.m), dtype=object)
        for fidx in range(self.m):
            for a in range(self.m):
                for b in range(self.m):
                    f = self.c[fidx, a, b]
                    out[fidx, a, b] = (
                        Jet.constant(f.const_value, dim, order)
                        if f.is_constant
                        else f(*args)
                    )
        return out


@dataclass
class StructureResiduals:
    """Pointwise violation of the two structure equations.

    anchor[a, b, i]: the anchor images of legs (a, b) fail to close onto
    the anchor image of their declared bracket by this much.
    jacobi[a, b, c, d]: cyclic failure of the bracket identity.
    """

    anchor: np.ndarray
    jacobi: np.ndarray
    antisym: float

    @property
    def max_abs(self) -> float:
        return max(
            float(np.max(np.abs(self.anchor))),
            float(np.max(np.abs(self.jacobi))),
            self.antisym,
        )


def structure_residuals(spec: AlgebroidSpec, x) -> StructureResiduals:
    n, m = spec.n, spec.m
    vars_ = var_jets(tuple(x), 1)
    rho = spec.rho_jets(vars_)
    c = spec.c_jets(vars_)
    rho_v = np.array([[rho[a, i].value for i in range(n)] for a in range(m)])
    c_v = np.array(
        [[[c[f, a, b].value for b in range(m)] for a in range(m)] for f in range(m)]
    )

    anchor = np.zeros((m, m, n))
    for a in range(m):
        for b in range(a + 1, m):
            for i in range(n):
                acc = 0.0
                for j in range(n):
                    acc += rho_v[a, j] * rho[b, i].deriv(j).value
                    acc -= rho_v[b, j] * rho[a, i].deriv(j).value
                acc -= float(np.dot(rho_v[:, i], c_v[:, a, b]))
                anchor[a, b, i] = acc
                anchor[b, a, i] = -acc

    jacobi = np.zeros((m, m, m, m))
    dc = np.zeros((m, m, m, n))
    for f in range(m):
        for a in range(m):
            for b in range(m):
                for j in range(n):
                    dc[f, a, b, j] = c[f, a, b].deriv(j).value
    for d in range(m):
        for a in range(m):
            for b in range(m):
                for cc in range(m):
                    acc = 0.0
                    for p, q, r in ((a, b, cc), (b, cc, a), (cc, a, b)):
                        acc += float(np.dot(rho_v[p], dc[d, q, r]))
                        acc += float(np.dot(c_v[d, p, :], c_v[:, q, r]))
                    jacobi[d, a, b, cc] = acc

    antisym = float(np.max(np.abs(c_v + np.swapaxes(c_v, 1, 2))))
    return StructureResiduals(anchor=anchor, jacobi=jacobi, antisym=antisym)


# -- forms and the differential ----------------------------------------------


@dataclass
class AlgebroidForm:
    """A degree-k form over the spec's base: components on frame-leg
    multi-indices, as a jet field `(point, order) -> object array`."""

    spec: AlgebroidSpec
    degree: int
    comp: object  # callable (point, order) -> Jet (deg 0) or (m,)*k array

    @staticmethod
    def from_fields(spec: AlgebroidSpec, degree: int, fields) -> "AlgebroidForm":
        if degree == 0:
            f = fields if isinstance(fields, ScalarField) else ScalarField.constant(float(fields), spec.n)

            def comp0(point, order):
                return f.jet(tuple(point), order)

            return AlgebroidForm(spec, 0, comp0)
        shape = (spec.m,) * degree
        grid = _field_grid(fields, shape, spec.n, "form components")

        def comp(point, order):
            args = var_jets(tuple(point), order)
            out = np.empty(shape, dtype=object)
            for idx in np.ndindex(shape):
                g = grid[idx]
                out[idx] = (
                    Jet.constant(g.const_value, len(args), order)
                    if g.is_constant
                    else g(*args)
                )
            return out

        return AlgebroidForm(spec, degree, comp)

    def at(self, point) -> np.ndarray | float:
        w = self.comp(tuple(point), 0)
        if self.degree == 0:
            return w.value
        out = np.zeros((self.spec.m,) * self.degree)
        for idx in np.ndindex(out.shape):
            out[idx] = w[idx].value
        return out


def exterior_d(form: AlgebroidForm) -> AlgebroidForm:
    """The structure differential: anchor-directed derivatives on each slot
    with alternating signs, plus bracket contractions on slot pairs."""
    spec = form.spec
    k = form.degree
    m, n = spec.m, spec.n

    def comp(point, order):
        vars_ = var_jets(tuple(point), order + 1)
        rho = spec.rho_jets(vars_)
        w = form.comp(point, order + 1)
        if k == 0:
            out = np.empty((m,), dtype=object)
            for a in range(m):
                acc = None
                for i in range(n):
                    t = rho[a, i] * w.deriv(i)
                    acc = t if acc is None else acc + t
                out[a] = acc
            return out
        c = spec.c_jets(vars_)
        shape = (m,) * (k + 1)
        out = np.empty(shape, dtype=object)
        for idx in np.ndindex(shape):
            acc = None
            for r in range(k + 1):
                rest = idx[:r] + idx[r + 1 :]
                sgn = -1.0 if r % 2 else 1.0
                for i in range(n):
                    t = rho[idx[r], i] * w[rest].deriv(i) * sgn
                    acc = t if acc is None else acc + t
            for r in range(k + 1):
                for s in range(r + 1, k + 1):
                    rest = tuple(
                        idx[t] for t in range(k + 1) if t != r and t != s
                    )
                    sgn = -1.0 if (r + s) % 2 else 1.0
                    for e in range(m):
                        t = c[e, idx[r], idx[s]] * w[(e,) + rest] * sgn
                        acc = t if acc is None else acc + t
            out[idx] = acc
        return out

    return AlgebroidForm(spec, k + 1, comp)


def _section_jets(spec: AlgebroidSpec, X, vars_jets) -> np.ndarray:
    args = tuple(vars_jets[: spec.n])
    dim, order = args[0].dim, args[0].order
    out = np.empty(spec.m, dtype=object)
    for a in range(spec.m):
        f = X[a]
        if isinstance(f, (int, float)):
            out[a] = Jet.constant(float(f), dim, order)
        elif f.is_constant:
            out[a] = Jet.constant(f.const_value, dim, order)
        else:
            out[a] = f(*args)
    return out


def contraction(form: AlgebroidForm, X) -> AlgebroidForm:
    """Interior product with a section (tuple of m ScalarFields)."""
    if form.degree == 0:
        raise ValueError("cannot contract a degree-0 form")
    spec = form.spec
    k = form.degree

    def comp(point, order):
        vars_ = var_jets(tuple(point), order)
        xj = _section_jets(spec, X, vars_)
        w = form.comp(point, order)
        if k == 1:
            acc = None
            for cidx in range(spec.m):
                t = xj[cidx] * w[cidx]
                acc = t if acc is None else acc + t
            return acc
        shape = (spec.m,) * (k - 1)
        out = np.empty(shape, dtype=object)
        for idx in np.ndindex(shape):
            acc = None
            for cidx in range(spec.m):
                t = xj[cidx] * w[(cidx,) + idx]
                acc = t if acc is None else acc + t
            out[idx] = acc
        return out

    return AlgebroidForm(spec, k - 1, comp)


def lie_derivative(form: AlgebroidForm, X) -> AlgebroidForm:
    """Cartan formula: contract-then-differentiate plus
    differentiate-then-contract."""
    if form.degree == 0:
        return contraction(exterior_d(form), X)
    a = contraction(exterior_d(form), X)
    b = exterior_d(contraction(form, X))

    def comp(point, order):
        wa = a.comp(point, order)
        wb = b.comp(point, order)
        if form.degree == 0:
            return wa + wb
        out = np.empty(wa.shape, dtype=object)
        for idx in np.ndindex(wa.shape):
            out[idx] = wa[idx] + wb[idx]
        return out

    return AlgebroidForm(form.spec, form.degree, comp)


def section_bracket(spec: AlgebroidSpec, X, Y):
    """Bracket of two sections, as a tuple of ScalarFields over the base."""
    m, n = spec.m, spec.n

    def make(cidx):
        def fn(*args):
            acc = 0.0
            for a in range(m):
                xa = X[a](*args)
                ya = Y[a](*args)
                for i in range(n):
                    r = spec.rho[a, i](*args)
                    acc = acc + xa * r * Y[cidx].partial(i)(*args)
                    acc = acc - ya * r * X[cidx].partial(i)(*args)
                for b in range(m):
                    acc = acc + spec.c[cidx, a, b](*args) * xa * Y[b](*args)
            return acc

        return ScalarField(n, fn, name=f"[X,Y]^{cidx}")

    return tuple(make(cidx) for cidx in range(m))


# -- lifts and the prolongation ----------------------------------------------


@dataclass
class Lifts:
    """Vertical and complete lifts of a section at a point (x, u).

    vertical: fiber components of the vertical lift.
    complete_base / complete_fiber: components of the complete lift as a
    vector field on the total space.
    prolong_z / prolong_v: the complete lift expressed on the prolongation
    frame (horizontal-corrected legs first).
    """

    vertical: np.ndarray
    complete_base: np.ndarray
    complete_fiber: np.ndarray
    prolong_z: np.ndarray
    prolong_v: np.ndarray


def lifts(spec: AlgebroidSpec, s, x, u) -> Lifts:
    n, m = spec.n, spec.m
    x = tuple(float(v) for v in x)
    u = np.asarray(u, dtype=float)
    vars_ = var_jets(x, 1)
    sj = _section_jets(spec, s, vars_)
    rho = spec.rho_jets(vars_)
    c_v = spec.c_values(x)
    s_v = np.array([sj[a].value for a in range(m)])
    rho_v = np.array([[rho[a, i].value for i in range(n)] for a in range(m)])

    complete_base = s_v @ rho_v
    # fiber components: anchor-directed derivative of the section
    # coefficients minus the bracket feedback, contracted with u
    ds = np.zeros((m, m))  # ds[b, a] = rho_a(s^b)
    for b in range(m):
        for a in range(m):
            ds[b, a] = sum(
                rho_v[a, i] * sj[b].deriv(i).value for i in range(n)
            )
    complete_fiber = np.zeros(m)
    for b in range(m):
        complete_fiber[b] = ds[b] @ u - np.einsum("da,d,a->", c_v[b], s_v, u)
    # on the prolongation frame the same object reads: base legs carry s,
    # fiber legs carry rho_b(s^a) u^b corrected by the frame's own C-shift
    prolong_v = np.zeros(m)
    for a in range(m):
        prolong_v[a] = ds[a] @ u - np.einsum("de,d,e->", c_v[a], s_v, u)
    return Lifts(
        vertical=s_v.copy(),
        complete_base=complete_base,
        complete_fiber=complete_fiber,
        prolong_z=s_v.copy(),
        prolong_v=prolong_v,
    )


def prolongation_spec(spec: AlgebroidSpec) -> AlgebroidSpec:
    """The induced structure over (base, fiber) with a 2m-leg frame.

    Base coordinates are (x, u); the first m legs are the corrected
    horizontal ones (anchor rows [rho | 0]), the last m the fiber ones
    (anchor rows [0 | id]); only the horizontal block inherits C. The same
    object serves the dual picture with momenta as the fiber coordinates.
    """
    n, m = spec.n, spec.m
    nn = n + m
    mm = 2 * m

    def wrap(f: ScalarField) -> ScalarField:
        if f.is_constant:
            return ScalarField.constant(f.const_value, nn)
        return ScalarField(nn, lambda *args, _f=f: _f(*args[:n]), name=f.name)

    zero = ScalarField.constant(0.0, nn)
    one = ScalarField.constant(1.0, nn)

    rho = np.empty((mm, nn), dtype=object)
    rho[:, :] = zero
    for a in range(m):
        for i in range(n):
            rho[a, i] = wrap(spec.rho[a, i])
        rho[m + a, n + a] = one

    c = np.empty((mm, mm, mm), dtype=object)
    c[:, :, :] = zero
    for f in range(m):
        for a in range(m):
            for b in range(m):
                c[f, a, b] = wrap(spec.c[f, a, b])

    return AlgebroidSpec(nn, mm, rho, c, name=f"prolong({spec.name})")


@dataclass
class ProlongFrame:
    """The corrected prolongation frame at (x, u): intrinsic change of
    basis against the natural legs, its dual, and anchor images."""

    frame_mat: np.ndarray  # (2m, 2m): rows = corrected legs over natural legs
    coframe_mat: np.ndarray  # (2m, 2m): rows = dual coframe over natural duals
    anchor_images: np.ndarray  # (2m, n+m): vector fields on the total space
    pairing_residual: float


def prolong_frame(spec: AlgebroidSpec, x, u) -> ProlongFrame:
    n, m = spec.n, spec.m
    x = tuple(float(v) for v in x)
    u = np.asarray(u, dtype=float)
    c_v = spec.c_values(x)
    rho_v = spec.rho_values(x)
    K = np.einsum("bae,e->ab", c_v, u)  # K[a, b]: fiber-leg b component of leg a

    F = np.eye(2 * m)
    F[:m, m:] = K
    G = np.eye(2 * m)
    G[m:, :m] = -K.T

    anchor = np.zeros((2 * m, n + m))
    anchor[:m, :n] = rho_v
    anchor[m:, n:] = np.eye(m)

    pairing = G @ F.T
    return ProlongFrame(
        frame_mat=F,
        coframe_mat=G,
        anchor_images=anchor,
        pairing_residual=float(np.max(np.abs(pairing - np.eye(2 * m)))),
    )


def sode_check(spec: AlgebroidSpec, xi, points) -> tuple[bool, float]:
    """A second-order section must have fiber velocities as its horizontal
    components; returns (ok, worst residual) over sample points (x, u)."""
    worst = 0.0
    for x, u in points:
        z, _v = xi(tuple(x), tuple(u))
        r = float(np.max(np.abs(np.asarray(z, dtype=float) - np.asarray(u, dtype=float))))
        worst = max(worst, r)
    return worst < 1e-10, worst
