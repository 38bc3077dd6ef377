"""Mechanics on the prolongation of an anchored frame bundle.

A regular fiberwise Lagrangian induces the whole package: the fiber
Hessian metric, the quadratic force coefficients of the second-order
flow, the canonical nonlinear connection obtained by linearizing those
forces in the velocities, the lifted block metric with its compatible
almost complex and symplectic partners, and the two-family metric
connection that keeps all of them parallel.  Norm-type (Finsler) data
and velocity-dependent metric media reduce to the same machinery
through an equivalent Lagrangian.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .algebroid import AlgebroidSpec, _field_grid
from .geometry import ConnBlocks, DConnection, DMetric
from .jets import Jet, JetDomainError, ScalarField, jet_matrix_inverse, var_jets
from .nconnection import Chart, FrameCalc, NConnection, prolongation_chart

__all__ = [
    "RegularityError",
    "HomogeneityError",
    "FlowError",
    "LagrangianField",
    "FinslerField",
    "GLMetricField",
    "Trajectory",
    "PoincareCartan",
    "FinslerPack",
    "GLPack",
    "hessian",
    "semispray",
    "canonical_n",
    "canonical_nconnection",
    "integrate_el",
    "el_residual",
    "el_section",
    "poincare_cartan",
    "pc_flow_identity",
    "sasaki_dmetric",
    "almost_complex",
    "symplectic",
    "normal_dconnection",
    "lagrange_dconnection",
    "torsion_deformation",
    "finsler_pack",
    "gl_pack",
    "gl_dmetric",
]


class RegularityError(ValueError):
    """The fiber Hessian is not cleanly invertible (or flips signature)."""


class HomogeneityError(ValueError):
    """A norm field fails positive 1-homogeneity where it was promised."""


class FlowError(RuntimeError):
    """Trajectory integration produced a non-finite state."""


def _eval_jet(f: ScalarField, vars_) -> Jet:
    if f.is_constant:
        return Jet.constant(f.const_value, vars_[0].dim, vars_[0].order)
    res = f(*vars_)
    if not isinstance(res, Jet):
        res = Jet.constant(float(res), vars_[0].dim, vars_[0].order)
    return res


def _box_samples(box, count: int = 8) -> list[tuple]:
    lo = np.array([b[0] for b in box])
    hi = np.array([b[1] for b in box])
    pts = [tuple(0.5 * (lo + hi))]
    rng = np.random.Generator(np.random.PCG64(0))
    for _ in range(count):
        pts.append(tuple(lo + rng.random(len(box)) * (hi - lo)))
    return pts


# ---------------------------------------------------------------------------
# domain types


@dataclass
class LagrangianField:
    """A fiberwise Lagrangian l(x, u) with an m-dimensional fiber.

    `box` bounds the (x, u) region where regularity is expected; when
    given, the Hessian is probed there on construction and must keep a
    fixed nondegenerate signature.
    """

    l: ScalarField
    m: int
    box: tuple | None = None
    name: str = ""

    def __post_init__(self):
        if not 0 < self.m <= self.l.arity:
            raise ValueError("fiber dimension out of range for the field arity")
        if self.box is not None:
            self.box = tuple((float(lo), float(hi)) for lo, hi in self.box)
            if len(self.box) != self.l.arity:
                raise ValueError(
                    f"domain box has {len(self.box)} intervals, field has "
                    f"{self.l.arity} slots"
                )
            _check_signature(self)

    @property
    def n(self) -> int:
        return self.l.arity - self.m


def _signature(g: np.ndarray) -> tuple[int, int]:
    ev = np.linalg.eigvalsh(g)
    return int(np.sum(ev > 0)), int(np.sum(ev < 0))


def _check_signature(L: "LagrangianField") -> None:
    sig = None
    for p in _box_samples(L.box):
        s = _signature(hessian(L, p))
        if sig is None:
            sig = s
        elif s != sig:
            raise RegularityError(
                f"fiber Hessian signature changes over the domain box: "
                f"{sig} vs {s} at {p}"
            )


@dataclass
class FinslerField:
    """A positive, positively 1-homogeneous norm f(x, u) on the slit fiber.

    Construction samples the domain box: homogeneity f(x, λu) = λ f(x, u)
    is enforced to 1e-10 relative for λ in {0.5, 2, 3}, positivity of f,
    and positive-definiteness of the squared-norm Hessian.
    """

    f: ScalarField
    m: int
    box: tuple
    name: str = ""

    def __post_init__(self):
        self.box = tuple((float(lo), float(hi)) for lo, hi in self.box)
        if len(self.box) != self.f.arity:
            raise ValueError("domain box rank mismatch")
        _check_homogeneity(self)
        lag = self.lagrangian()
        for p in _box_samples(self.box, count=4):
            g = hessian(lag, p)
            ev = np.linalg.eigvalsh(g)
            if np.min(ev) <= 0:
                raise RegularityError(
                    f"squared-norm Hessian not positive-definite at {p} "
                    f"(min eigenvalue {np.min(ev):.3e})"
                )

    @property
    def n(self) -> int:
        return self.f.arity - self.m

    def lagrangian(self) -> LagrangianField:
        f = self.f
        sq = ScalarField(
            f.arity,
            lambda *a: (lambda v: v * v)(f(*a)),
            name=(self.name or "norm") + "^2",
        )
        # box omitted: the positive-definiteness probe above already ran
        return LagrangianField(sq, self.m, name=(self.name or "norm") + "^2")


def _check_homogeneity(F: "FinslerField") -> None:
    n = F.n
    lambdas = (0.5, 2.0, 3.0)
    worst = (0.0, None, None)
    pts = _box_samples(F.box, count=15)  # 16 probes with the center
    for k, p in enumerate(pts):
        lam = lambdas[k % len(lambdas)]
        x, u = p[:n], np.array(p[n:])
        base = F.f.value(p)
        if base <= 0:
            raise HomogeneityError(f"norm not positive at {p}: f = {base:.3e}")
        scaled = F.f.value(tuple(x) + tuple(lam * u))
        err = abs(scaled - lam * base) / max(1.0, abs(lam * base))
        if err > worst[0]:
            worst = (err, lam, p)
    if worst[0] > 1e-10:
        raise HomogeneityError(
            f"homogeneity violated: relative error {worst[0]:.3e} at "
            f"lambda = {worst[1]}, point {worst[2]}"
        )


@dataclass
class GLMetricField:
    """A velocity-dependent fiber metric g_ab(x, u) and its energy.

    The quadratic form eps(x, u) = g_ab(x, u) u^a u^b plays the role of
    a Lagrangian; nondegeneracy and constant signature of g are probed
    on the box when one is given.
    """

    g: np.ndarray  # (m, m) of ScalarField over (x, u)
    m: int
    box: tuple | None = None
    name: str = ""

    def __post_init__(self):
        arity = None
        for row in self.g:
            for f in row:
                if isinstance(f, ScalarField):
                    arity = f.arity
                    break
        if arity is None:
            raise ValueError("metric grid needs at least one ScalarField entry")
        self.g = _field_grid(self.g, (self.m, self.m), arity, "fiber metric")
        if self.box is not None:
            self.box = tuple((float(lo), float(hi)) for lo, hi in self.box)
            sig = None
            for p in _box_samples(self.box, count=6):
                gv = self.values(p)
                if np.max(np.abs(gv - gv.T)) > 1e-12:
                    raise ValueError(f"fiber metric not symmetric at {p}")
                ev = np.linalg.eigvalsh(gv)
                if np.min(np.abs(ev)) < 1e-10 * max(1.0, np.max(np.abs(ev))):
                    raise RegularityError(f"fiber metric degenerate at {p}")
                s = (int(np.sum(ev > 0)), int(np.sum(ev < 0)))
                sig = s if sig is None else sig
                if s != sig:
                    raise RegularityError(
                        f"fiber metric signature changes on the box at {p}"
                    )

    @property
    def n(self) -> int:
        return self.g[0, 0].arity - self.m

    def values(self, p) -> np.ndarray:
        p = tuple(float(v) for v in p)
        return np.array([[f.value(p) for f in row] for row in self.g])

    def energy(self) -> ScalarField:
        """eps(x, u) = g_ab(x, u) u^a u^b as a ScalarField."""
        grid, n, m = self.g, self.n, self.m

        def fn(*args):
            u = args[n:]
            acc = None
            for a in range(m):
                for b in range(m):
                    f = grid[a, b]
                    coef = f.const_value if f.is_constant else f(*args)
                    t = coef * u[a] * u[b]
                    acc = t if acc is None else acc + t
            return acc

        return ScalarField(n + m, fn, name=(self.name or "glmetric") + ".energy")


@dataclass
class Trajectory:
    """A time grid with states and conserved-quantity diagnostics.

    `u` holds the fiber states: velocities for Lagrangian flows,
    momenta for the dual-side flows.
    """

    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    energy: np.ndarray
    invariant: np.ndarray | None = None
    step_error: float | None = None

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.x = np.asarray(self.x, dtype=float)
        self.u = np.asarray(self.u, dtype=float)
        self.energy = np.asarray(self.energy, dtype=float)
        if self.t.ndim != 1 or np.any(np.diff(self.t) <= 0):
            raise ValueError("time grid must be strictly increasing")
        for arr in (self.t, self.x, self.u, self.energy):
            if not np.all(np.isfinite(arr)):
                raise ValueError("trajectory carries non-finite entries")

    @property
    def energy_drift(self) -> float:
        return float(np.max(np.abs(self.energy - self.energy[0])))

    @property
    def invariant_drift(self) -> float:
        if self.invariant is None:
            raise ValueError("no invariant series recorded")
        return float(np.max(np.abs(self.invariant - self.invariant[0])))


# ---------------------------------------------------------------------------
# Hessian / semispray / canonical nonlinear connection


def hessian(L: LagrangianField, p) -> np.ndarray:
    """Half the fiber-fiber second-derivative block of l at p.

    Raises RegularityError when the block is degenerate (relative
    eigenvalue floor 1e-10), naming the offending point.
    """
    p = tuple(float(v) for v in p)
    vars_ = var_jets(p, 2)
    lj = _eval_jet(L.l, vars_)
    n, m = L.n, L.m
    g = np.zeros((m, m))
    for a in range(m):
        da = lj.deriv(n + a)
        for b in range(a, m):
            g[a, b] = g[b, a] = 0.5 * da.deriv(n + b).value
    _require_regular(g, p)
    return g


def _require_regular(g: np.ndarray, p) -> None:
    ev = np.abs(np.linalg.eigvalsh(g))
    if np.min(ev) < 1e-10 * max(1.0, np.max(ev)):
        raise RegularityError(
            f"fiber Hessian degenerate at {tuple(p)}: smallest |eigenvalue| "
            f"{np.min(ev):.3e}"
        )


def _semispray_jets(spec: AlgebroidSpec, L: LagrangianField, point, order: int):
    """Force coefficients G^a as jets of the requested order.

    Solves 4 G = g^{-1} rhs with
    rhs_b = d2l/du^b dx^i rho^i_c u^c + C^e_{bc} u^c dl/du^e - rho_b^i dl/dx^i;
    the bracket-term sign makes the rigid-body flow come out as the
    classical Euler equations (see tests).
    """
    n, m = spec.n, spec.m
    point = tuple(float(v) for v in point)
    vars_ = var_jets(point, order + 2)
    lj = _eval_jet(L.l, vars_)
    rho = spec.rho_jets(vars_)
    c = spec.c_jets(vars_)
    u = vars_[n:]

    lu = [lj.deriv(n + e) for e in range(m)]  # order+1
    lx = [lj.deriv(i) for i in range(n)]
    g = np.empty((m, m), dtype=object)
    for a in range(m):
        for b in range(m):
            g[a, b] = lu[a].deriv(n + b) * 0.5
    try:
        ginv = jet_matrix_inverse(g)
    except JetDomainError as exc:
        raise RegularityError(f"fiber Hessian degenerate at {point}") from exc

    rhs = []
    for b in range(m):
        acc = Jet.constant(0.0, n + m, order)
        for i in range(n):
            flow = None
            for cc in range(m):
                t = rho[cc, i] * u[cc]
                flow = t if flow is None else flow + t
            acc = acc + lu[b].deriv(i) * flow
        for e in range(m):
            for cc in range(m):
                acc = acc + c[e, b, cc] * u[cc] * lu[e]
        for i in range(n):
            acc = acc - rho[b, i] * lx[i]
        rhs.append(acc)

    G = []
    for a in range(m):
        acc = Jet.constant(0.0, n + m, order)
        for b in range(m):
            acc = acc + ginv[a, b] * rhs[b]
        G.append(acc * 0.25)
    return G


def semispray(spec: AlgebroidSpec, L: LagrangianField, p) -> np.ndarray:
    """Quadratic force coefficients G^a of the second-order flow at p."""
    return np.array([x.value for x in _semispray_jets(spec, L, p, 0)])


def canonical_n(spec: AlgebroidSpec, L: LagrangianField, p) -> np.ndarray:
    """Velocity linearization N^a_b = dG^a/du^b of the forces at p."""
    n = spec.n
    G = _semispray_jets(spec, L, p, 1)
    m = spec.m
    out = np.zeros((m, m))
    for a in range(m):
        for b in range(m):
            out[a, b] = G[a].deriv(n + b).value
    return out


def canonical_nconnection(spec: AlgebroidSpec, L: LagrangianField) -> NConnection:
    """The nonlinear connection induced by L, as an evaluable jet field."""
    chart = prolongation_chart(spec)
    n, m = spec.n, spec.m

    def coeffs(point, order):
        G = _semispray_jets(spec, L, point, order + 1)
        out = np.empty((m, m), dtype=object)
        for a in range(m):
            for b in range(m):
                out[a, b] = G[a].deriv(n + b)  # N^a_b: fiber a, leg b
        return out

    return NConnection(chart, coeffs)


# ---------------------------------------------------------------------------
# flow integration


def _semispray_floats(spec: AlgebroidSpec, L: LagrangianField, x, u):
    """(G, energy) at a single state, cheap float path for stepping."""
    n, m = spec.n, spec.m
    p = tuple(x) + tuple(u)
    vars_ = var_jets(p, 2)
    lj = _eval_jet(L.l, vars_)
    rho = spec.rho_values(x)
    c = spec.c_values(x)

    lu1 = [lj.deriv(n + e) for e in range(m)]  # order-1 jets
    phat = np.array([d.value for d in lu1])
    g = np.zeros((m, m))
    lxu = np.zeros((m, n))
    for b in range(m):
        for a in range(m):
            g[b, a] = 0.5 * lu1[b].deriv(n + a).value
        for i in range(n):
            lxu[b, i] = lu1[b].deriv(i).value
    lx = np.array([lj.deriv(i).value for i in range(n)])

    uarr = np.asarray(u, dtype=float)
    rhs = lxu @ (rho.T @ uarr)
    rhs += np.einsum("ebc,c,e->b", c, uarr, phat)
    rhs -= rho @ lx
    try:
        G = 0.25 * np.linalg.solve(g, rhs)
    except np.linalg.LinAlgError as exc:
        raise RegularityError(f"fiber Hessian degenerate at {p}") from exc
    energy = float(phat @ uarr - lj.value)
    return G, energy


def _el_rhs(spec, L, y):
    n, m = spec.n, spec.m
    x, u = y[:n], y[n:]
    G, _ = _semispray_floats(spec, L, x, u)
    rho = spec.rho_values(x)
    return np.concatenate([rho.T @ u, -2.0 * G])


def _rk4_path(rhs, y0, t0, steps, dt, check):
    ys = [np.asarray(y0, dtype=float)]
    y = ys[0]
    for k in range(steps):
        k1 = rhs(y)
        k2 = rhs(y + 0.5 * dt * k1)
        k3 = rhs(y + 0.5 * dt * k2)
        k4 = rhs(y + dt * k3)
        y = y + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise FlowError(f"state became non-finite at t = {t0 + (k + 1) * dt}")
        if check is not None:
            check(k + 1, y)
        ys.append(y)
    return np.array(ys)


def integrate_el(
    spec: AlgebroidSpec,
    L: LagrangianField,
    x0,
    u0,
    t_span,
    dt: float = 1e-3,
    invariant=None,
    check_every: int = 100,
    error_estimate: bool = False,
) -> Trajectory:
    """Integrate the second-order flow xdot = rho u, udot = -2G with RK4.

    Regularity is verified eagerly at the start and every `check_every`
    steps; the energy is recorded on the full grid.  With
    `error_estimate`, the integration is repeated at dt/2 and the
    largest state deviation on the shared grid is reported.
    """
    n, m = spec.n, spec.m
    t0, t1 = float(t_span[0]), float(t_span[1])
    if t1 <= t0:
        raise ValueError("empty time span")
    steps = max(1, int(round((t1 - t0) / dt)))
    hessian(L, tuple(x0) + tuple(u0))  # eager regularity

    def check(k, y):
        if check_every and k % check_every == 0:
            try:
                hessian(L, tuple(y))
            except RegularityError as exc:
                raise RegularityError(
                    f"mid-flow degeneration at t = {t0 + k * dt}: {exc}"
                ) from exc

    y0 = np.concatenate([np.asarray(x0, float), np.asarray(u0, float)])
    ys = _rk4_path(lambda y: _el_rhs(spec, L, y), y0, t0, steps, dt, check)

    step_error = None
    if error_estimate:
        fine = _rk4_path(lambda y: _el_rhs(spec, L, y), y0, t0, 2 * steps, dt / 2, None)
        step_error = float(np.max(np.abs(fine[::2] - ys)))

    t = t0 + dt * np.arange(steps + 1)
    energy = np.array(
        [_semispray_floats(spec, L, y[:n], y[n:])[1] for y in ys]
    )
    inv = None
    if invariant is not None:
        inv = np.array([float(invariant(y[:n], y[n:])) for y in ys])
    return Trajectory(
        t=t, x=ys[:, :n], u=ys[:, n:], energy=energy,
        invariant=inv, step_error=step_error,
    )


def el_residual(spec: AlgebroidSpec, L: LagrangianField, traj: Trajectory) -> float:
    """Worst pointwise defect of the evolution law along a trajectory:
    d/dt(dl/du^a) + C^e_{ab} u^b dl/du^e - rho_a^i dl/dx^i, with the time
    derivative taken by centered differences on the stored grid."""
    n, m = spec.n, spec.m
    K = len(traj.t)
    if K < 3:
        raise ValueError("need at least three grid points")
    phat = np.zeros((K, m))
    lx = np.zeros((K, n))
    for k in range(K):
        p = tuple(traj.x[k]) + tuple(traj.u[k])
        lj = _eval_jet(L.l, var_jets(p, 1))
        for a in range(m):
            phat[k, a] = lj.deriv(n + a).value
        for i in range(n):
            lx[k, i] = lj.deriv(i).value
    worst = 0.0
    for k in range(1, K - 1):
        dpdt = (phat[k + 1] - phat[k - 1]) / (traj.t[k + 1] - traj.t[k - 1])
        c = spec.c_values(traj.x[k])
        rho = spec.rho_values(traj.x[k])
        res = dpdt + np.einsum("eab,b,e->a", c, traj.u[k], phat[k]) - rho @ lx[k]
        worst = max(worst, float(np.max(np.abs(res))))
    return worst


def el_section(spec: AlgebroidSpec, L: LagrangianField):
    """The flow as a section: (x, u) -> (horizontal, vertical) components.
    The horizontal part returns the velocities themselves, which is what
    `algebroid.sode_check` verifies."""

    def xi(x, u):
        G, _ = _semispray_floats(spec, L, x, u)
        return np.asarray(u, dtype=float), -2.0 * G

    return xi


# ---------------------------------------------------------------------------
# variational 1- and 2-sections


@dataclass
class PoincareCartan:
    """Momentum 1-section, its negative differential, and the energy, in
    components over the uncorrected prolongation frame (horizontal legs
    first)."""

    theta: np.ndarray  # (2m,)
    omega: np.ndarray  # (2m, 2m), antisymmetric
    energy: float


def poincare_cartan(spec: AlgebroidSpec, L: LagrangianField, p) -> PoincareCartan:
    n, m = spec.n, spec.m
    p = tuple(float(v) for v in p)
    vars_ = var_jets(p, 2)
    lj = _eval_jet(L.l, vars_)
    rho = spec.rho_values(p[:n])
    c = spec.c_values(p[:n])
    u = np.array(p[n:])

    lu1 = [lj.deriv(n + a) for a in range(m)]
    phat = np.array([d.value for d in lu1])
    g2 = np.zeros((m, m))  # second fiber derivatives (twice the Hessian)
    zp = np.zeros((m, m))  # zp[a,b] = rho_a^i d(phat_b)/dx^i
    for a in range(m):
        for b in range(m):
            g2[a, b] = lu1[a].deriv(n + b).value
        for b in range(m):
            zp[a, b] = sum(rho[a, i] * lu1[b].deriv(i).value for i in range(n))

    zz = np.einsum("e,eab->ab", phat, c) - zp + zp.T
    omega = np.zeros((2 * m, 2 * m))
    omega[:m, :m] = zz
    omega[:m, m:] = g2
    omega[m:, :m] = -g2.T
    theta = np.concatenate([phat, np.zeros(m)])
    energy = float(phat @ u - lj.value)
    return PoincareCartan(theta=theta, omega=omega, energy=energy)


def pc_flow_identity(spec: AlgebroidSpec, L: LagrangianField, p) -> float:
    """Residual of contracting the flow section into the 2-section versus
    the frame differential of the energy; vanishes identically for a
    regular Lagrangian."""
    n, m = spec.n, spec.m
    p = tuple(float(v) for v in p)
    pc = poincare_cartan(spec, L, p)
    u = np.array(p[n:])
    G = semispray(spec, L, p)
    xi = np.concatenate([u, -2.0 * G])

    vars_ = var_jets(p, 2)
    lj = _eval_jet(L.l, vars_)
    lu1 = [lj.deriv(n + a) for a in range(m)]
    ej = None  # energy as an order-1 jet
    for a in range(m):
        t = lu1[a] * vars_[n + a]
        ej = t if ej is None else ej + t
    ej = ej - lj
    rho = spec.rho_values(p[:n])
    de = np.zeros(2 * m)
    for b in range(m):
        de[b] = sum(rho[b, i] * ej.deriv(i).value for i in range(n))
        de[m + b] = ej.deriv(n + b).value
    return float(np.max(np.abs(xi @ pc.omega - de)))


# ---------------------------------------------------------------------------
# lifted metric package


def sasaki_dmetric(spec: AlgebroidSpec, L: LagrangianField) -> DMetric:
    """Block metric with both blocks equal to the fiber Hessian, taken
    over the canonical nonlinear connection."""
    chart = prolongation_chart(spec)
    nconn = canonical_nconnection(spec, L)
    n, m = spec.n, spec.m

    def comp(point, order):
        vars_ = var_jets(tuple(point), order + 2)
        lj = _eval_jet(L.l, vars_)
        out = np.empty((m, m), dtype=object)
        for a in range(m):
            da = lj.deriv(n + a)
            for b in range(m):
                out[a, b] = da.deriv(n + b) * 0.5
        return out

    return DMetric(chart, nconn, comp, comp)


def almost_complex(spec: AlgebroidSpec) -> np.ndarray:
    """The frame swap: horizontal legs to vertical, vertical to minus
    horizontal; squares to minus the identity by construction."""
    m = spec.m
    F = np.zeros((2 * m, 2 * m))
    F[m:, :m] = np.eye(m)
    F[:m, m:] = -np.eye(m)
    return F


def symplectic(spec: AlgebroidSpec, L: LagrangianField, p) -> np.ndarray:
    """The 2-section pairing the metric with the frame swap:
    omega(A, B) = g(F A, B) over the adapted frame."""
    g = hessian(L, p)
    m = spec.m
    om = np.zeros((2 * m, 2 * m))
    om[:m, m:] = g
    om[m:, :m] = -g
    return om


def normal_dconnection(M: DMetric) -> DConnection:
    """Two-family metric connection of a block metric: the horizontal
    family acts identically on both leg types and likewise the vertical
    family.  For a lifted Hessian metric this is exactly the connection
    that keeps the block metric, the frame swap, and the induced
    2-section all parallel; its pure-horizontal and pure-vertical
    torsion components vanish because both families are symmetric."""
    chart = M.chart
    if chart.h != chart.m:
        raise ValueError("two-family connection needs matching block sizes")
    m = chart.m

    def blocks(point, order):
        point = tuple(point)
        fc = FrameCalc(chart, M.nconn, point, order + 1)
        g = M.g_comp(point, order + 1)
        h = M.h_comp(point, order + 1)

        zg = np.empty((m, m, m), dtype=object)  # zg[c,a,b] = z_c(g_ab)
        vh = np.empty((m, m, m), dtype=object)
        for cc in range(m):
            for a in range(m):
                for b in range(m):
                    zg[cc, a, b] = fc.zd(g[a, b], cc)
                    vh[cc, a, b] = fc.vd(h[a, b], cc)
        gt = np.empty((m, m), dtype=object)
        ht = np.empty((m, m), dtype=object)
        for a in range(m):
            for b in range(m):
                gt[a, b] = g[a, b].truncate(order)
                ht[a, b] = h[a, b].truncate(order)
        try:
            ginv = jet_matrix_inverse(gt)
            hinv = jet_matrix_inverse(ht)
        except JetDomainError as exc:
            raise RegularityError(f"metric block degenerate at {point}") from exc

        lz = np.empty((m, m, m), dtype=object)
        kv = np.empty((m, m, m), dtype=object)
        for e in range(m):
            for b in range(m):
                for a in range(m):
                    accl = None
                    acck = None
                    for cc in range(m):
                        tl = ginv[e, cc] * (zg[b, cc, a] + zg[a, cc, b] - zg[cc, a, b])
                        tk = hinv[e, cc] * (vh[b, cc, a] + vh[a, cc, b] - vh[cc, a, b])
                        accl = tl if accl is None else accl + tl
                        acck = tk if acck is None else acck + tk
                    # [target, differentiated, direction], symmetric families
                    lz[e, b, a] = accl * 0.5
                    kv[e, b, a] = acck * 0.5
        return ConnBlocks(lz=lz, lv=lz, kz=kv, kv=kv)

    return DConnection(chart, M.nconn, blocks)


def lagrange_dconnection(spec: AlgebroidSpec, L: LagrangianField) -> DConnection:
    """The two-family metric connection of the lifted Hessian metric."""
    return normal_dconnection(sasaki_dmetric(spec, L))


def torsion_deformation(g: np.ndarray, P: np.ndarray) -> np.ndarray:
    """Block deformation realizing a prescribed pure-horizontal torsion.

    `P[a, r, s]` is the wanted zzz torsion table (antisymmetric in its
    last two slots, laid out like geometry.TorsionBlocks), `g` the metric
    block at the same point.  Returns D[target, differentiated,
    direction] to add to the horizontal family.  The lowered increment is
    antisymmetric in (target, differentiated), so a metric family stays
    metric after the addition."""
    low = np.einsum("af,frs->ars", g, P)
    delta = 0.5 * (
        low - np.einsum("ras->ars", low) - np.einsum("sar->ars", low)
    )
    return np.einsum("ae,ers->ars", np.linalg.inv(g), delta)


# ---------------------------------------------------------------------------
# Finsler and metric-medium reductions


@dataclass
class FinslerPack:
    """Everything the norm induces: the squared-norm Lagrangian, its
    nonlinear connection, the lifted metric, the two-family connection,
    and the linearized-force (Berwald-type) connection whose metric
    defects are the classical nonmetricity components."""

    field: FinslerField
    lag: LagrangianField
    nconn: NConnection
    dmetric: DMetric
    connection: DConnection
    berwald: DConnection
    spec: AlgebroidSpec

    def metric_values(self, p) -> np.ndarray:
        return hessian(self.lag, p)

    def n_values(self, p) -> np.ndarray:
        return canonical_n(self.spec, self.lag, p)

    def berwald_nonmetricity(self, p):
        from .geometry import nonmetricity

        return nonmetricity(self.berwald, self.dmetric, p)


def finsler_pack(spec: AlgebroidSpec, F: FinslerField) -> FinslerPack:
    lag = F.lagrangian()
    nconn = canonical_nconnection(spec, lag)
    dm = sasaki_dmetric(spec, lag)
    conn = normal_dconnection(dm)
    n, m = spec.n, spec.m

    def berwald_blocks(point, order):
        base = conn.blocks(point, order)
        co = nconn.coeffs(tuple(point), order + 1)
        lv = np.empty((m, m, m), dtype=object)
        for a in range(m):
            for b in range(m):
                for cp in range(m):
                    lv[a, b, cp] = co[a, cp].deriv(n + b)
        zero = np.full(
            (m, m, m), Jet.constant(0.0, n + m, order), dtype=object
        )
        return ConnBlocks(lz=base.lz, lv=lv, kz=zero, kv=base.kv)

    berw = DConnection(dm.chart, nconn, berwald_blocks)
    return FinslerPack(
        field=F, lag=lag, nconn=nconn, dmetric=dm,
        connection=conn, berwald=berw, spec=spec,
    )


@dataclass
class GLPack:
    """Energy Lagrangian of a velocity-dependent fiber metric and the
    objects obtained by running it through the Lagrangian machinery."""

    metric: GLMetricField
    energy: ScalarField
    lag: LagrangianField
    nconn: NConnection
    spec: AlgebroidSpec

    def hessian(self, p) -> np.ndarray:
        return hessian(self.lag, p)

    def semispray(self, p) -> np.ndarray:
        return semispray(self.spec, self.lag, p)

    def n_values(self, p) -> np.ndarray:
        return canonical_n(self.spec, self.lag, p)

    def regularity_report(self, points) -> dict:
        out = {"points": [], "min_abs_eig": [], "signature": []}
        for p in points:
            try:
                g = self.hessian(p)
                ev = np.linalg.eigvalsh(g)
                out["points"].append(tuple(p))
                out["min_abs_eig"].append(float(np.min(np.abs(ev))))
                out["signature"].append(_signature(g))
            except RegularityError:
                out["points"].append(tuple(p))
                out["min_abs_eig"].append(0.0)
                out["signature"].append(None)
        return out


def gl_pack(spec: AlgebroidSpec, G: GLMetricField) -> GLPack:
    """Reduce a velocity-dependent fiber metric to its energy Lagrangian:
    the same code path computes the Hessian, forces, and nonlinear
    connection (the reduction is an identity, not a parallel formula)."""
    eps = G.energy()
    lag = LagrangianField(eps, G.m, box=G.box, name=(G.name or "gl") + ".energy")
    nconn = canonical_nconnection(spec, lag)
    return GLPack(metric=G, energy=eps, lag=lag, nconn=nconn, spec=spec)


def gl_dmetric(spec: AlgebroidSpec, G: GLMetricField) -> DMetric:
    """Block metric whose both blocks are the fiber metric itself (not
    the energy Hessian), over the energy-induced nonlinear connection."""
    pack = gl_pack(spec, G)
    chart = prolongation_chart(spec)
    grid = G.g
    m = G.m

    def comp(point, order):
        vars_ = var_jets(tuple(point), order)
        out = np.empty((m, m), dtype=object)
        for a in range(m):
            for b in range(m):
                out[a, b] = _eval_jet(grid[a, b], vars_)
        return out

    return DMetric(chart, pack.nconn, comp, comp)
