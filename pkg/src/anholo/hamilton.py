"""Momentum-side structures on an anchored bundle.

The fiber coordinates of the prolongation chart are read as momenta
p_a here.  The plain frame pair (anchor legs, fiber derivatives) gets
the same nonlinear corrections as on the velocity side, the Liouville
one-form and its exterior derivative give the symplectic data, and a
regular Lagrangian is traded for its fiber Legendre transform with an
honest Newton inversion that also works on jet arguments.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .algebroid import AlgebroidSpec
from .geometry import ConnBlocks, DConnection, DMetric, nonmetricity
from .jets import Jet, ScalarField, jet_matrix_inverse, var_jets
from .mechanics import (
    FlowError,
    HomogeneityError,
    LagrangianField,
    RegularityError,
    Trajectory,
    _box_samples,
    _eval_jet,
    _rk4_path,
    _signature,
    hessian,
)
from .nconnection import (
    Chart,
    FrameCalc,
    NConnection,
    NFrame,
    anholonomy,
    frame_d1,
    frame_d2,
    frame_differential,
    n_curvature,
    n_frame,
    prolongation_chart,
)

__all__ = [
    "LegendreError",
    "HamiltonianField",
    "dual_hessian",
    "DualFrame",
    "dual_frames",
    "dual_differential",
    "LiouvilleForms",
    "liouville_symplectic",
    "hamilton_flow",
    "flow_form_residual",
    "poisson_bracket",
    "LegendreMap",
    "legendre",
    "legendre_point",
    "DualNConnection",
    "dual_canonical_n",
    "DualPack",
    "dual_pack",
    "check_homogeneity",
]


class LegendreError(RuntimeError):
    """Newton inversion of the fiber derivative map failed to converge."""


# ---------------------------------------------------------------------------
# domain type


@dataclass
class HamiltonianField:
    """A fiberwise Hamiltonian h(x, p) with an m-dimensional momentum fiber.

    `box` bounds the (x, p) region where the half momentum Hessian is
    expected to stay nondegenerate with a fixed signature; when given,
    it is probed on construction.
    """

    h: ScalarField
    m: int
    box: tuple | None = None
    name: str = ""
    # optional fast path (x, p) -> (dh/dx, dh/dp, h); flows use it when set
    gradient: object = None

    def __post_init__(self):
        if not 0 < self.m <= self.h.arity:
            raise ValueError("fiber dimension out of range for the field arity")
        if self.box is not None:
            self.box = tuple((float(lo), float(hi)) for lo, hi in self.box)
            if len(self.box) != self.h.arity:
                raise ValueError(
                    f"domain box has {len(self.box)} intervals, field has "
                    f"{self.h.arity} slots"
                )
            sig = None
            for pt in _box_samples(self.box):
                s = _signature(dual_hessian(self, pt))
                if sig is None:
                    sig = s
                elif s != sig:
                    raise RegularityError(
                        f"momentum Hessian signature changes over the domain "
                        f"box: {sig} vs {s} at {pt}"
                    )

    @property
    def n(self) -> int:
        return self.h.arity - self.m

    def value(self, point) -> float:
        return self.h.value(tuple(point))


def dual_hessian(H: HamiltonianField, p) -> np.ndarray:
    """Half the momentum-momentum second-derivative block of h at p.

    Raises RegularityError when the block is degenerate, naming the
    offending point.
    """
    p = tuple(float(v) for v in p)
    vars_ = var_jets(p, 2)
    hj = _eval_jet(H.h, vars_)
    n, m = H.n, H.m
    g = np.zeros((m, m))
    for a in range(m):
        da = hj.deriv(n + a)
        for b in range(a, m):
            g[a, b] = g[b, a] = 0.5 * da.deriv(n + b).value
    ev = np.abs(np.linalg.eigvalsh(g))
    if np.min(ev) < 1e-10 * max(1.0, np.max(ev)):
        raise RegularityError(
            f"momentum Hessian degenerate at {p}: smallest |eigenvalue| "
            f"{np.min(ev):.3e}"
        )
    return g


# ---------------------------------------------------------------------------
# frames and the Liouville pair


@dataclass
class DualFrame:
    """Momentum-side adapted frame at a point.

    With a zero connection the legs are the plain pair (anchor legs,
    fiber derivatives); nonzero coefficients tilt the horizontal legs
    the same way as on the velocity side.
    """

    chart: Chart
    nconn: NConnection
    point: tuple
    frame: NFrame

    def differential(self, f):
        """Adapted components of df as a jet field, horizontal first."""
        return frame_differential(self.chart, self.nconn, f)

    def brackets(self):
        return anholonomy(self.chart, self.nconn, self.point)


def dual_frames(spec: AlgebroidSpec, p, nconn: NConnection | None = None) -> DualFrame:
    chart = prolongation_chart(spec)
    if nconn is None:
        nconn = NConnection.zero(chart)
    point = tuple(float(v) for v in p)
    return DualFrame(chart, nconn, point, n_frame(chart, nconn, point))


def dual_differential(spec: AlgebroidSpec, f):
    """Components of df over the plain momentum frame, as a jet field."""
    chart = prolongation_chart(spec)
    return frame_differential(chart, NConnection.zero(chart), f)


def _theta_components(spec: AlgebroidSpec):
    """Liouville one-form: the momentum coordinates over the horizontal
    coframe, nothing on the vertical slots."""
    n, m = spec.n, spec.m

    def comp(point, order):
        vars_ = var_jets(tuple(point), order)
        out = np.empty(2 * m, dtype=object)
        for a in range(m):
            out[a] = vars_[n + a]
            out[m + a] = Jet.constant(0.0, n + m, order)
        return out

    return comp


def _omega_components(spec: AlgebroidSpec):
    """The symplectic two-form: pairing block plus the structure-function
    twist C^e_{ab} p_e on the horizontal-horizontal slots."""
    n, m = spec.n, spec.m

    def comp(point, order):
        vars_ = var_jets(tuple(point), order)
        c = spec.c_jets(vars_)
        zero = Jet.constant(0.0, n + m, order)
        one = Jet.constant(1.0, n + m, order)
        out = np.empty((2 * m, 2 * m), dtype=object)
        out[:, :] = zero
        for a in range(m):
            out[a, m + a] = one
            out[m + a, a] = -one
            for b in range(m):
                acc = zero
                for e in range(m):
                    acc = acc + c[e, a, b] * vars_[n + e]
                out[a, b] = acc
        return out

    return comp


@dataclass
class LiouvilleForms:
    """Liouville one-form and symplectic two-form over the adapted frame
    at a point, with the numerical closure defect of the two-form."""

    theta: np.ndarray  # (2m,)
    omega: np.ndarray  # (2m, 2m)
    closure_residual: float
    theta_comp: object = field(repr=False, default=None)
    omega_comp: object = field(repr=False, default=None)


def liouville_symplectic(spec: AlgebroidSpec, p) -> LiouvilleForms:
    """Evaluate theta = p_a (horizontal coframe)^a and omega = -d theta.

    The two-form picks up the structure-function twist on top of the
    canonical pairing; its exterior derivative is checked at the point.
    """
    chart = prolongation_chart(spec)
    n0 = NConnection.zero(chart)
    point = tuple(float(v) for v in p)
    tc = _theta_components(spec)
    oc = _omega_components(spec)
    theta = np.array([j.value for j in tc(point, 0)])
    omega = -frame_d1(chart, n0, tc, point)
    closure = float(np.max(np.abs(frame_d2(chart, n0, oc, point))))
    return LiouvilleForms(theta, omega, closure, theta_comp=tc, omega_comp=oc)


# ---------------------------------------------------------------------------
# flow and bracket


def _ham_grad(spec: AlgebroidSpec, H: HamiltonianField, pt):
    n, m = spec.n, spec.m
    if H.gradient is not None:
        hx, hp, val = H.gradient(pt[:n], pt[n:])
        return np.asarray(hx, float), np.asarray(hp, float), float(val)
    hj = _eval_jet(H.h, var_jets(pt, 1))
    hx = np.array([hj.deriv(i).value for i in range(n)])
    hp = np.array([hj.deriv(n + a).value for a in range(m)])
    return hx, hp, float(hj.value)


def _ham_rhs(spec: AlgebroidSpec, H: HamiltonianField, y):
    n = spec.n
    x, p = y[:n], y[n:]
    hx, hp, _ = _ham_grad(spec, H, tuple(y))
    rho = spec.rho_values(x)
    c = spec.c_values(x)
    xdot = rho.T @ hp
    pdot = -(np.einsum("eab,e,b->a", c, p, hp) + rho @ hx)
    return np.concatenate([xdot, pdot])


def hamilton_flow(
    spec: AlgebroidSpec,
    H: HamiltonianField,
    x0,
    p0,
    t_span,
    dt: float = 1e-3,
    invariant=None,
    error_estimate: bool = False,
) -> Trajectory:
    """Integrate xdot = rho^T dh/dp, pdot = -(C p dh/dp + rho dh/dx).

    The Hamiltonian itself is recorded along the grid; the trajectory's
    `u` field holds the momenta.
    """
    n = spec.n
    t0, t1 = float(t_span[0]), float(t_span[1])
    if t1 <= t0:
        raise ValueError("empty time span")
    steps = max(1, int(round((t1 - t0) / dt)))
    y0 = np.concatenate([np.asarray(x0, float), np.asarray(p0, float)])
    ys = _rk4_path(lambda y: _ham_rhs(spec, H, y), y0, t0, steps, dt, None)

    step_error = None
    if error_estimate:
        fine = _rk4_path(
            lambda y: _ham_rhs(spec, H, y), y0, t0, 2 * steps, dt / 2, None
        )
        step_error = float(np.max(np.abs(fine[::2] - ys)))

    t = t0 + dt * np.arange(steps + 1)
    energy = np.array([_ham_grad(spec, H, tuple(y))[2] for y in ys])
    inv = None
    if invariant is not None:
        inv = np.array([float(invariant(y[:n], y[n:])) for y in ys])
    return Trajectory(
        t=t, x=ys[:, :n], u=ys[:, n:], energy=energy,
        invariant=inv, step_error=step_error,
    )


def flow_form_residual(spec: AlgebroidSpec, H: HamiltonianField, p) -> float:
    """Defect of (flow vector) contracted into omega against dh.

    Both sides are taken over the adapted coframe of the plain momentum
    frame; the identity is algebraic, so the defect is roundoff-sized.
    """
    n, m = spec.n, spec.m
    point = tuple(float(v) for v in p)
    forms = liouville_symplectic(spec, point)
    hx, hp, _ = _ham_grad(spec, H, point)
    rho = spec.rho_values(point[:n])
    c = spec.c_values(point[:n])
    pdot = -(np.einsum("eab,e,b->a", c, np.array(point[n:]), hp) + rho @ hx)
    xi = np.concatenate([hp, pdot])
    dh = np.concatenate([rho @ hx, hp])
    return float(np.max(np.abs(xi @ forms.omega - dh)))


def _jet1(f, vars_):
    if isinstance(f, ScalarField):
        return _eval_jet(f, vars_)
    res = f(*vars_)
    if not isinstance(res, Jet):
        res = Jet.constant(float(res), vars_[0].dim, vars_[0].order)
    return res


def poisson_bracket(spec: AlgebroidSpec, f, w, p) -> float:
    """Bracket of two observables on the momentum bundle at a point.

    {f, w} = rho_a^i (d_{p_a}f d_{x^i}w - d_{x^i}f d_{p_a}w)
             + p_e C^e_{ab} d_{p_a}f d_{p_b}w
    """
    n, m = spec.n, spec.m
    point = tuple(float(v) for v in p)
    vars_ = var_jets(point, 1)
    fj = _jet1(f, vars_)
    wj = _jet1(w, vars_)
    fx = np.array([fj.deriv(i).value for i in range(n)])
    fp = np.array([fj.deriv(n + a).value for a in range(m)])
    wx = np.array([wj.deriv(i).value for i in range(n)])
    wp = np.array([wj.deriv(n + a).value for a in range(m)])
    rho = spec.rho_values(point[:n])
    c = spec.c_values(point[:n])
    # paired accumulation keeps the swap f <-> w a bitwise negation
    val = fp @ (rho @ wx) - wp @ (rho @ fx)
    for e in range(m):
        pe = point[n + e]
        for a in range(m):
            for b in range(a + 1, m):
                val += pe * c[e, a, b] * (fp[a] * wp[b] - fp[b] * wp[a])
    return float(val)


# ---------------------------------------------------------------------------
# Legendre transform


@dataclass
class LegendreMap:
    """Fiber derivative map of a regular Lagrangian and its inverse.

    `hamiltonian` evaluates p.u* - l(x, u*) where u* solves the
    momentum equation dl/du = p; the inverse runs a damped-free Newton
    iteration (quadratic seed, full Jacobian updates, tolerance 1e-12,
    at most 50 steps).  On jet arguments the converged float solution
    is refined by chord iterations with the frozen point Jacobian, one
    jet order gained per sweep.
    """

    spec: AlgebroidSpec
    lag: LagrangianField
    hamiltonian: HamiltonianField = field(init=False)
    _lu: list = field(init=False, repr=False)
    _warm: object = field(init=False, repr=False, default=None)

    def __post_init__(self):
        n, m = self.lag.n, self.lag.m
        self._lu = [self.lag.l.partial(n + a) for a in range(m)]
        name = f"legendre({self.lag.name})" if self.lag.name else "legendre"
        self.hamiltonian = HamiltonianField(
            ScalarField(n + m, self._ham_eval, name=name),
            m,
            name=name,
            gradient=self._gradient,
        )

    # momentum of a fiber point
    def forward(self, x, u):
        n, m = self.lag.n, self.lag.m
        pt = tuple(float(v) for v in x) + tuple(float(v) for v in u)
        lj = _eval_jet(self.lag.l, var_jets(pt, 1))
        p = np.array([lj.deriv(n + a).value for a in range(m)])
        return tuple(pt[:n]), p

    def inverse(self, x, p):
        x = tuple(float(v) for v in x)
        u, _ = self._solve(x, np.asarray(p, dtype=float))
        return x, u

    def _gradient(self, x, p):
        """Slopes of the transform without differentiating the inverse:
        dh/dp is the solved fiber point, dh/dx = -dl/dx there."""
        x = tuple(float(v) for v in x)
        p = np.asarray(p, dtype=float)
        u, lj = self._solve(x, p)
        hx = -np.array([lj.deriv(i).value for i in range(self.lag.n)])
        return hx, u, float(p @ u - lj.value)

    def _solve(self, x, p):
        # a previously converged fiber point seeds nearby solves (flows
        # call this once per stage); divergence falls back to a cold start
        if self._warm is not None:
            try:
                u, lj = self._newton(x, p, self._warm, 12)
                self._warm = u.copy()
                return u, lj
            except LegendreError:
                pass
        m = self.lag.m
        try:
            u0 = np.linalg.solve(2.0 * hessian(self.lag, x + (0.0,) * m), p)
        except (RegularityError, np.linalg.LinAlgError):
            # no quadratic seed at the fiber origin; start from the raw slope
            u0 = 0.5 * p.copy()
        u, lj = self._newton(x, p, u0, 50)
        self._warm = u.copy()
        return u, lj

    def _newton(self, x, p, u0, maxit):
        """Solve dl/du = p for u; returns the solution with the order-1
        jet of l there (slope checks are an order cheaper than the
        Jacobian evaluations)."""
        n, m = self.lag.n, self.lag.m
        u = np.asarray(u0, dtype=float).copy()
        res = np.inf
        for it in range(maxit):
            pt = x + tuple(u)
            lj = _eval_jet(self.lag.l, var_jets(pt, 1))
            r = np.array([lj.deriv(n + a).value for a in range(m)]) - p
            res = float(np.max(np.abs(r)))
            if res < 1e-12:
                return u, lj
            lj2 = _eval_jet(self.lag.l, var_jets(pt, 2))
            jac = np.zeros((m, m))
            for a in range(m):
                da = lj2.deriv(n + a)
                for b in range(a, m):
                    jac[a, b] = jac[b, a] = da.deriv(n + b).value
            try:
                step = np.linalg.solve(jac, r)
            except np.linalg.LinAlgError as exc:
                raise LegendreError(
                    f"momentum inversion hit a singular Jacobian after "
                    f"{it + 1} iterations: residual {res:.3e} at x = {x}, "
                    f"p = {tuple(p)}"
                ) from exc
            u = u - step
            if not np.all(np.isfinite(u)):
                ran = it + 1
                break
        else:
            ran = maxit
        raise LegendreError(
            f"momentum inversion stalled after {ran} iterations: residual "
            f"{res:.3e} at x = {x}, p = {tuple(p)}"
        )

    def _ham_eval(self, *args):
        n, m = self.lag.n, self.lag.m
        if not any(isinstance(a, Jet) for a in args):
            x = tuple(float(a) for a in args[:n])
            p = np.array(args[n:], dtype=float)
            u, lj = self._solve(x, p)
            return float(p @ u - lj.value)

        dim = order = None
        for a in args:
            if isinstance(a, Jet):
                dim = a.dim
                order = a.order if order is None else min(order, a.order)
        lift = [
            a if isinstance(a, Jet) else Jet.constant(float(a), dim, order)
            for a in args
        ]
        xj, pj = lift[:n], lift[n:]
        xbar = tuple(j.value for j in xj)
        pbar = np.array([j.value for j in pj])
        ustar, _ = self._solve(xbar, pbar)
        j0inv = np.linalg.inv(2.0 * hessian(self.lag, xbar + tuple(ustar)))
        uj = [Jet.constant(float(ustar[a]), dim, order) for a in range(m)]
        for _ in range(order + 2):
            r = []
            for a in range(m):
                ra = self._lu[a](*xj, *uj)
                if not isinstance(ra, Jet):
                    ra = Jet.constant(float(ra), dim, order)
                r.append(ra - pj[a])
            nxt = []
            for a in range(m):
                acc = uj[a]
                for b in range(m):
                    acc = acc - float(j0inv[a, b]) * r[b]
                nxt.append(acc)
            uj = nxt
        h = None
        for a in range(m):
            t = pj[a] * uj[a]
            h = t if h is None else h + t
        return h - self.lag.l(*xj, *uj)


def legendre(spec: AlgebroidSpec, L: LagrangianField) -> LegendreMap:
    if L.m != spec.m:
        raise ValueError("Lagrangian fiber dimension does not match the bundle")
    return LegendreMap(spec, L)


def legendre_point(L: LagrangianField, x, u):
    """The momentum image (x, dl/du) of a single fiber point."""
    n, m = L.n, L.m
    pt = tuple(float(v) for v in x) + tuple(float(v) for v in u)
    lj = _eval_jet(L.l, var_jets(pt, 1))
    return tuple(pt[:n]), np.array([lj.deriv(n + a).value for a in range(m)])


# ---------------------------------------------------------------------------
# canonical momentum-side connection


def _dual_metric_jets(spec: AlgebroidSpec, H: HamiltonianField, point, order: int):
    """Raised metric (half momentum Hessian) and its pointwise-inverse
    lowered companion, both as jets of the requested order."""
    n, m = spec.n, spec.m
    vars_ = var_jets(tuple(point), order + 2)
    hj = _eval_jet(H.h, vars_)
    gup = np.empty((m, m), dtype=object)
    for a in range(m):
        da = hj.deriv(n + a)
        for b in range(a, m):
            gup[a, b] = gup[b, a] = 0.5 * da.deriv(n + b)
    glow = jet_matrix_inverse(gup)
    return hj, gup, glow


def _dual_n_raw(spec: AlgebroidSpec, H: HamiltonianField, point, order: int):
    """Both-indices-low connection coefficients N_{ab} as jets.

    N_{ab} = 1/4 {g_ab, h} - 1/4 (g_ac rho_b^i + g_bc rho_a^i) d2h/dp_c dx^i
    with g_ab the lowered metric; the formula is symmetric in (a, b) up
    to roundoff in the pointwise inversion.
    """
    n, m = spec.n, spec.m
    point = tuple(point)
    hj, gup, glow = _dual_metric_jets(spec, H, point, order + 1)
    vars_ = var_jets(point, order + 3)
    rho = spec.rho_jets(vars_)
    c = spec.c_jets(vars_)

    hx = [hj.deriv(i) for i in range(n)]
    hp = [hj.deriv(n + a) for a in range(m)]
    hpx = [[hp[a].deriv(i) for i in range(n)] for a in range(m)]

    out = np.empty((m, m), dtype=object)
    for a in range(m):
        for b in range(m):
            # algebroid Poisson bracket of the lowered entry with h
            acc = None
            gab = glow[a, b]
            gx = [gab.deriv(i) for i in range(n)]
            gp = [gab.deriv(n + cc) for cc in range(m)]
            for cc in range(m):
                for i in range(n):
                    t = rho[cc, i] * (gp[cc] * hx[i] - gx[i] * hp[cc])
                    acc = t if acc is None else acc + t
            for e in range(m):
                for cc in range(m):
                    for d in range(m):
                        acc = acc + vars_[n + e] * c[e, cc, d] * gp[cc] * hp[d]
            term = 0.25 * acc
            for cc in range(m):
                for i in range(n):
                    t = (glow[a, cc] * rho[b, i] + glow[b, cc] * rho[a, i]) * hpx[cc][i]
                    term = term - 0.25 * t
            out[a, b] = term.truncate(order)
    return out


@dataclass
class DualNConnection:
    """Canonical momentum-side nonlinear connection with its diagnostics.

    `nconn` stores the symmetrized coefficients in the fiber-first
    layout (entry [b, a'] corrects horizontal leg a').  `tau` is the
    antisymmetric part of the stored coefficients at the probe point
    (zero by construction), `symmetrization_residual` the size of the
    raw asymmetry that was averaged away, and `curvature` the honest
    vertical commutator part of the corrected horizontal legs.
    """

    chart: Chart
    nconn: NConnection
    point: tuple
    tau: np.ndarray
    symmetrization_residual: float
    curvature: np.ndarray

    def n_values(self, point=None) -> np.ndarray:
        """Coefficients with both indices low: entry [a, b] = N_ab."""
        pt = self.point if point is None else tuple(point)
        return self.nconn.values(pt).T


def dual_canonical_n(spec: AlgebroidSpec, H: HamiltonianField, p) -> DualNConnection:
    chart = prolongation_chart(spec)
    point = tuple(float(v) for v in p)

    def coeffs(pt, order):
        raw = _dual_n_raw(spec, H, tuple(pt), order)
        m = spec.m
        out = np.empty((m, m), dtype=object)
        for b in range(m):
            for a in range(m):
                out[b, a] = 0.5 * (raw[a, b] + raw[b, a])
        return out

    nconn = NConnection(chart, coeffs)
    raw0 = _dual_n_raw(spec, H, point, 0)
    rawv = np.array([[raw0[a, b].value for b in range(spec.m)] for a in range(spec.m)])
    sym_res = float(np.max(np.abs(rawv - rawv.T)))
    vals = nconn.values(point)
    tau = vals.T - vals
    curv = n_curvature(chart, nconn, point)
    return DualNConnection(chart, nconn, point, tau, sym_res, curv)


# ---------------------------------------------------------------------------
# the full momentum-side package


def _dual_conn_blocks(spec: AlgebroidSpec, H: HamiltonianField, nconn: NConnection):
    """Metric pair connection on the momentum bundle.

    Horizontal legs use the Koszul combination of adapted derivatives of
    the lowered metric; fiber legs use the raised metric's fiber
    derivatives.  Vertical legs carry a raised index, so their
    coefficient matrices are minus transposes of the companion blocks,
    which is exactly what keeps the pairing two-form parallel.
    """
    n, m = spec.n, spec.m
    chart = nconn.chart

    def blocks(point, order):
        point = tuple(point)
        fc = FrameCalc(chart, nconn, point, order + 1)
        _, gup, glow = _dual_metric_jets(spec, H, point, order + 1)

        zgd = [
            [[fc.zd(glow[i, j], d) for j in range(m)] for i in range(m)]
            for d in range(m)
        ]
        vgd = [
            [[gup[i, j].deriv(n + d) for j in range(m)] for i in range(m)]
            for d in range(m)
        ]

        lz = np.empty((m, m, m), dtype=object)
        kv = np.empty((m, m, m), dtype=object)
        for e in range(m):
            for b in range(m):
                for a in range(m):
                    acc = None
                    for cc in range(m):
                        t = gup[e, cc] * (
                            zgd[b][cc][a] + zgd[a][cc][b] - zgd[cc][a][b]
                        )
                        acc = t if acc is None else acc + t
                    lz[e, b, a] = (0.5 * acc).truncate(order)
                    acc = None
                    for f in range(m):
                        t = glow[e, f] * (
                            vgd[b][f][a] + vgd[a][f][b] - vgd[f][b][a]
                        )
                        acc = t if acc is None else acc + t
                    kv[e, b, a] = (0.5 * acc).truncate(order)
        lv = np.empty((m, m, m), dtype=object)
        kz = np.empty((m, m, m), dtype=object)
        for e in range(m):
            for b in range(m):
                for a in range(m):
                    lv[e, b, a] = -lz[b, e, a]
                    kz[e, b, a] = -kv[b, e, a]
        return ConnBlocks(lz=lz, lv=lv, kz=kz, kv=kv)

    return blocks


def _dual_berwald_blocks(spec: AlgebroidSpec, nconn: NConnection):
    """Fiber derivative of the connection coefficients feeds the
    vertical legs; everything else is flat."""
    n, m = spec.n, spec.m
    chart = nconn.chart

    def blocks(point, order):
        point = tuple(point)
        co = nconn.coeffs(point, order + 1)
        zero = Jet.constant(0.0, chart.dim, order)
        lz = np.full((m, m, m), zero, dtype=object)
        kz = np.full((m, m, m), zero, dtype=object)
        kv = np.full((m, m, m), zero, dtype=object)
        lv = np.empty((m, m, m), dtype=object)
        for b in range(m):
            for e in range(m):
                for ap in range(m):
                    lv[b, e, ap] = co[b, ap].deriv(n + e)
        return ConnBlocks(lz=lz, lv=lv, kz=kz, kv=kv)

    return blocks


@dataclass
class DualPack:
    """Momentum-side geometric package: adapted metric pair, almost
    complex pairing map, metric connection, and the fiber-derivative
    transport of the connection coefficients."""

    spec: AlgebroidSpec
    field: HamiltonianField
    chart: Chart
    dualn: DualNConnection
    dmetric: DMetric
    connection: DConnection
    berwald: DConnection

    def metric_values(self, point):
        n, m = self.spec.n, self.spec.m
        gup = dual_hessian(self.field, point)
        return np.linalg.inv(gup), gup

    def almost_complex_values(self, point) -> np.ndarray:
        """Maps horizontal legs to lowered vertical ones and back with a
        sign; squares to -identity up to inversion accuracy."""
        m = self.spec.m
        glow, gup = self.metric_values(point)
        F = np.zeros((2 * m, 2 * m))
        F[m:, :m] = glow
        F[:m, m:] = -gup
        return F

    def omega_values(self, point) -> np.ndarray:
        """The pairing two-form over the adapted legs is constant."""
        m = self.spec.m
        om = np.zeros((2 * m, 2 * m))
        om[:m, m:] = np.eye(m)
        om[m:, :m] = -np.eye(m)
        return om

    def compatibility(self, point) -> dict:
        """Parallelism defects of the metric pair, the pairing two-form,
        and the almost complex map at a point."""
        point = tuple(float(v) for v in point)
        m = self.spec.m
        dim = 2 * m
        nm = nonmetricity(self.connection, self.dmetric, point)
        bf = self.connection.values(point).full(m, m)

        om = self.omega_values(point)
        om_res = 0.0
        for C in range(dim):
            gam = bf[:, :, C]
            r = -gam.T @ om - om @ gam
            om_res = max(om_res, float(np.max(np.abs(r))))

        F = self.almost_complex_values(point)
        f_res = self._f_parallel_residual(point, F, bf)
        fsq = float(np.max(np.abs(F @ F + np.eye(dim))))
        return {
            "nonmetricity": nm.max_abs,
            "omega": om_res,
            "almost_complex": f_res,
            "f_square": fsq,
        }

    def _f_parallel_residual(self, point, F, bf) -> float:
        n, m = self.spec.n, self.spec.m
        dim = 2 * m
        fc = FrameCalc(self.chart, self.dualn.nconn, point, 1)
        _, gup, glow = _dual_metric_jets(self.spec, self.field, point, 1)
        Fj = np.empty((dim, dim), dtype=object)
        zero = Jet.constant(0.0, self.chart.dim, 1)
        Fj[:, :] = zero
        for a in range(m):
            for b in range(m):
                Fj[m + b, a] = glow[b, a]
                Fj[a, m + b] = -gup[a, b]
        worst = 0.0
        for C in range(dim):
            legF = np.zeros((dim, dim))
            for A in range(dim):
                for B in range(dim):
                    if Fj[A, B] is zero:
                        continue
                    j = (
                        fc.zd(Fj[A, B], C)
                        if C < m
                        else fc.vd(Fj[A, B], C - m)
                    )
                    legF[A, B] = j.value
            gam = bf[:, :, C]
            r = legF + gam @ F - F @ gam
            worst = max(worst, float(np.max(np.abs(r))))
        return worst


def dual_pack(spec: AlgebroidSpec, H: HamiltonianField, p=None) -> DualPack:
    """Assemble the canonical momentum-side structures for a regular
    Hamiltonian; `p` sets the probe point for the connection reports
    (the origin section of the chart by default)."""
    chart = prolongation_chart(spec)
    if p is None:
        p = (0.0,) * spec.n + (1.0,) * spec.m
    dualn = dual_canonical_n(spec, H, p)

    def g_comp(point, order):
        _, _, glow = _dual_metric_jets(spec, H, tuple(point), order)
        return glow

    def h_comp(point, order):
        _, gup, _ = _dual_metric_jets(spec, H, tuple(point), order)
        return gup

    dmetric = DMetric(chart, dualn.nconn, g_comp, h_comp)
    conn = DConnection(chart, dualn.nconn, _dual_conn_blocks(spec, H, dualn.nconn))
    ber = DConnection(chart, dualn.nconn, _dual_berwald_blocks(spec, dualn.nconn))
    return DualPack(spec, H, chart, dualn, dmetric, conn, ber)


# ---------------------------------------------------------------------------
# homogeneity probe


def check_homogeneity(
    H: HamiltonianField,
    degree: float = 2.0,
    box=None,
    samples: int = 8,
    tol: float = 1e-10,
) -> float:
    """Probe h(x, s p) = s^degree h(x, p) on a box of (x, p) samples.

    Returns the worst relative defect; raises HomogeneityError above
    `tol`.  Scalings run over s in {0.5, 2, 3}.
    """
    box = box if box is not None else H.box
    if box is None:
        raise ValueError("no domain box to sample")
    n = H.n
    worst = 0.0
    for pt in _box_samples(box, samples):
        base = H.h.value(pt)
        x, p = pt[:n], np.array(pt[n:])
        for s in (0.5, 2.0, 3.0):
            val = H.h.value(x + tuple(s * p))
            worst = max(worst, abs(val - s**degree * base) / max(1.0, abs(base)))
    if worst > tol:
        raise HomogeneityError(
            f"fiber scaling defect {worst:.3e} exceeds {tol:.1e} for "
            f"degree {degree}"
        )
    return worst
