"""Distinguished metrics and linear connections on adapted frames.

A `DMetric` is a block metric: a horizontal block g on the adapted
horizontal legs and a vertical block h on the fiber legs, with the mixing
entirely carried by the nonlinear connection. A `DConnection` stores the
four coefficient blocks of a frame-compatible linear connection, all indexed
[target, differentiated, direction], as a jet field so curvature can
differentiate through them.

`canonical_dconnection` builds the unique metric connection with the
standard minimal torsion profile from (g, h, N). `levi_civita` computes the
full Koszul connection of the assembled metric over the anholonomic frame
(route one) and the corrected block-deformation of the canonical connection
(route two); their agreement is a structural test of the whole layer.

Torsion blocks follow the standard component table relative to the adapted
frame's own anholonomy (the frame bracket terms are not counted as torsion).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .algebroid import _field_grid
from .jets import Jet, ScalarField, jet_matrix_inverse, var_jets
from .nconnection import Chart, FrameCalc, NConnection, anholonomy, n_curvature

__all__ = [
    "DMetric",
    "metric_diagnostics",
    "ConnBlocks",
    "DConnection",
    "canonical_dconnection",
    "TorsionBlocks",
    "torsion",
    "CurvatureReport",
    "curvature",
    "NonmetricityReport",
    "nonmetricity",
    "metrize",
    "add_deformation",
    "DeformationReport",
    "deform_connection",
    "obata_family",
    "LeviCivitaReport",
    "levi_civita",
    "distortion_1form",
    "extract_n_from_metric",
]


def _values(arr) -> np.ndarray:
    out = np.zeros(arr.shape)
    for idx in np.ndindex(arr.shape):
        out[idx] = arr[idx].value
    return out


@dataclass
class DMetric:
    """Block metric adapted to an N-connection.

    g_comp/h_comp: jet fields (point, order) -> (h, h) / (m, m) object
    arrays, symmetric in their two indices."""

    chart: Chart
    nconn: NConnection
    g_comp: object
    h_comp: object

    @staticmethod
    def from_fields(chart: Chart, nconn: NConnection, g_fields, h_fields) -> "DMetric":
        g_grid = _field_grid(g_fields, (chart.h, chart.h), chart.dim, "g block")
        h_grid = _field_grid(h_fields, (chart.m, chart.m), chart.dim, "h block")

        def make(grid, shape):
            def comp(point, order):
                args = var_jets(tuple(point), order)
                out = np.empty(shape, dtype=object)
                for idx in np.ndindex(shape):
                    f = grid[idx]
                    out[idx] = (
                        Jet.constant(f.const_value, chart.dim, order)
                        if f.is_constant
                        else f(*args)
                    )
                return out

            return comp

        return DMetric(
            chart,
            nconn,
            make(g_grid, (chart.h, chart.h)),
            make(h_grid, (chart.m, chart.m)),
        )

    def g_values(self, point) -> np.ndarray:
        return _values(self.g_comp(tuple(point), 0))

    def h_values(self, point) -> np.ndarray:
        return _values(self.h_comp(tuple(point), 0))

    def off_diagonal(self, point) -> np.ndarray:
        """The assembled quadratic form on the uncorrected legs: the N
        mixing moves into the corner blocks."""
        h_, m_ = self.chart.h, self.chart.m
        g = self.g_values(point)
        h = self.h_values(point)
        N = self.nconn.values(point)
        out = np.zeros((h_ + m_, h_ + m_))
        out[:h_, :h_] = g + N.T @ h @ N
        out[:h_, h_:] = N.T @ h
        out[h_:, :h_] = h @ N
        out[h_:, h_:] = h
        return out

    def vielbeins(self, point) -> tuple[np.ndarray, np.ndarray]:
        """Block-triangular factor M with  off_diagonal = M^T diag(g, h) M,
        and its inverse."""
        h_, m_ = self.chart.h, self.chart.m
        N = self.nconn.values(point)
        M = np.eye(h_ + m_)
        M[h_:, :h_] = N
        Minv = np.eye(h_ + m_)
        Minv[h_:, :h_] = -N
        return M, Minv


def _check_conditioning(mat: np.ndarray, label: str) -> None:
    c = float(np.linalg.cond(mat))
    if not np.isfinite(c) or c > 1e12:
        raise ValueError(f"{label} is numerically singular (condition {c:.3e})")
    if c > 1e8:
        warnings.warn(
            f"{label} is ill-conditioned (condition {c:.3e})", RuntimeWarning
        )


def metric_diagnostics(M: DMetric, points) -> dict:
    """Conditioning and signature survey over sample points.

    Reports the worst condition number of each block and whether the
    eigenvalue sign pattern stays the same across all points (the block
    signature must not flip on the working domain)."""
    conds_g: list[float] = []
    conds_h: list[float] = []
    sigs_g: set = set()
    sigs_h: set = set()
    for p in points:
        g = M.g_values(p)
        h = M.h_values(p)
        conds_g.append(float(np.linalg.cond(g)))
        conds_h.append(float(np.linalg.cond(h)))
        sigs_g.add(tuple(int(np.sign(x)) for x in np.linalg.eigvalsh(g)))
        sigs_h.add(tuple(int(np.sign(x)) for x in np.linalg.eigvalsh(h)))
    worst = max(conds_g + conds_h)
    return {
        "cond_g_max": max(conds_g),
        "cond_h_max": max(conds_h),
        "signatures_g": sorted(sigs_g),
        "signatures_h": sorted(sigs_h),
        "signature_constant": len(sigs_g) == 1 and len(sigs_h) == 1,
        "ill_conditioned": worst > 1e8,
    }


def extract_n_from_metric(chart: Chart, full_fields):
    """Recover (N, g, h) from a full quadratic form on the uncorrected
    legs: N from the fiber-row corner against the fiber block, g by
    removing the induced mixing. Returns (nconn, dmetric, asym_residual)
    where the residual is the worst mismatch between the two corner blocks
    (an honest compatibility check on the input)."""
    h_, m_ = chart.h, chart.m
    grid = _field_grid(
        full_fields, (h_ + m_, h_ + m_), chart.dim, "full metric"
    )

    def full_jets(point, order):
        args = var_jets(tuple(point), order)
        out = np.empty((h_ + m_, h_ + m_), dtype=object)
        for idx in np.ndindex(out.shape):
            f = grid[idx]
            out[idx] = (
                Jet.constant(f.const_value, chart.dim, order)
                if f.is_constant
                else f(*args)
            )
        return out

    def n_coeffs(point, order):
        G = full_jets(point, order)
        hinv = jet_matrix_inverse(G[h_:, h_:])
        out = np.empty((m_, h_), dtype=object)
        for a in range(m_):
            for bp in range(h_):
                acc = None
                for b in range(m_):
                    t = hinv[a, b] * G[h_ + b, bp]
                    acc = t if acc is None else acc + t
                out[a, bp] = acc
        return out

    nconn = NConnection(chart, n_coeffs)

    def g_comp(point, order):
        G = full_jets(point, order)
        N = n_coeffs(point, order)
        out = np.empty((h_, h_), dtype=object)
        for ap in range(h_):
            for bp in range(h_):
                acc = G[ap, bp]
                for a in range(m_):
                    for b in range(m_):
                        acc = acc - N[a, ap] * G[h_ + a, h_ + b] * N[b, bp]
                out[ap, bp] = acc
        return out

    def h_comp(point, order):
        return full_jets(point, order)[h_:, h_:]

    dm = DMetric(chart, nconn, g_comp, h_comp)

    def asym_residual(point) -> float:
        G = _values(full_jets(tuple(point), 0))
        return float(np.max(np.abs(G - G.T)))

    return nconn, dm, asym_residual


@dataclass
class ConnBlocks:
    """The four coefficient blocks, [target, differentiated, direction]."""

    lz: np.ndarray  # (h, h, h): z-target, z-diff, z-direction
    lv: np.ndarray  # (m, m, h): v-target, v-diff, z-direction
    kz: np.ndarray  # (h, h, m): z-target, z-diff, v-direction
    kv: np.ndarray  # (m, m, m)

    def values(self) -> "ConnBlocks":
        if self.lz.dtype != object:
            return self
        return ConnBlocks(
            _values(self.lz), _values(self.lv), _values(self.kz), _values(self.kv)
        )

    def full(self, h: int, m: int) -> np.ndarray:
        """Assemble into a single (h+m)^3 array over frame legs."""
        b = self.values()
        dim = h + m
        out = np.zeros((dim, dim, dim))
        out[:h, :h, :h] = b.lz
        out[h:, h:, :h] = b.lv
        out[:h, :h, h:] = b.kz
        out[h:, h:, h:] = b.kv
        return out


@dataclass
class DConnection:
    chart: Chart
    nconn: NConnection
    blocks: object  # callable (point, order) -> ConnBlocks of jets

    def values(self, point) -> ConnBlocks:
        return self.blocks(tuple(point), 0).values()


def _metric_jets(M: DMetric, point, order):
    g = M.g_comp(tuple(point), order)
    h = M.h_comp(tuple(point), order)
    return g, h


def canonical_dconnection(M: DMetric) -> DConnection:
    """The metric connection with the standard minimal-torsion profile:
    horizontal blocks from adapted-leg derivatives of g with an N feedback
    on the mixed block, vertical blocks as fiber Christoffel data."""
    chart = M.chart
    h_, m_, n_ = chart.h, chart.m, chart.n

    def blocks(point, order):
        point = tuple(point)
        fc = FrameCalc(chart, M.nconn, point, order + 1)
        g, h = _metric_jets(M, point, order + 1)
        _check_conditioning(_values(g), "horizontal metric block")
        _check_conditioning(_values(h), "fiber metric block")
        ginv = jet_matrix_inverse(g)
        hinv = jet_matrix_inverse(h)
        N = fc.N

        zg = np.empty((h_, h_, h_), dtype=object)  # zg[c', a', b'] = zd(g[a'b'], c')
        for cp in range(h_):
            for ap in range(h_):
                for bp in range(ap, h_):
                    d = fc.zd(g[ap, bp], cp)
                    zg[cp, ap, bp] = d
                    zg[cp, bp, ap] = d
        vg = np.empty((m_, h_, h_), dtype=object)
        for c in range(m_):
            for ap in range(h_):
                for bp in range(ap, h_):
                    d = fc.vd(g[ap, bp], c)
                    vg[c, ap, bp] = d
                    vg[c, bp, ap] = d
        zh = np.empty((h_, m_, m_), dtype=object)
        for cp in range(h_):
            for a in range(m_):
                for b in range(a, m_):
                    d = fc.zd(h[a, b], cp)
                    zh[cp, a, b] = d
                    zh[cp, b, a] = d
        vh = np.empty((m_, m_, m_), dtype=object)
        for c in range(m_):
            for a in range(m_):
                for b in range(a, m_):
                    d = fc.vd(h[a, b], c)
                    vh[c, a, b] = d
                    vh[c, b, a] = d
        vn = np.empty((m_, h_, m_), dtype=object)  # vn[a, c', b] = vd(N[a, c'], b)
        for a in range(m_):
            for cp in range(h_):
                for b in range(m_):
                    vn[a, cp, b] = fc.vd(N[a, cp], b)

        lz = np.empty((h_, h_, h_), dtype=object)
        for ap in range(h_):
            for bp in range(h_):
                for cp in range(h_):
                    acc = None
                    for ep in range(h_):
                        t = ginv[ap, ep] * (
                            zg[cp, bp, ep] + zg[bp, cp, ep] - zg[ep, bp, cp]
                        )
                        acc = t if acc is None else acc + t
                    lz[ap, bp, cp] = acc * 0.5

        lv = np.empty((m_, m_, h_), dtype=object)
        for a in range(m_):
            for b in range(m_):
                for cp in range(h_):
                    acc = vn[a, cp, b]
                    for c in range(m_):
                        t = hinv[a, c] * (
                            zh[cp, b, c]
                            - _sum_nd(vn, h[:, c], b, cp, m_)
                            - _sum_nd(vn, h[:, b], c, cp, m_)
                        )
                        acc = acc + t * 0.5
                    lv[a, b, cp] = acc

        kz = np.empty((h_, h_, m_), dtype=object)
        for ap in range(h_):
            for bp in range(h_):
                for c in range(m_):
                    acc = None
                    for ep in range(h_):
                        t = ginv[ap, ep] * vg[c, ep, bp]
                        acc = t if acc is None else acc + t
                    kz[ap, bp, c] = acc * 0.5

        kv = np.empty((m_, m_, m_), dtype=object)
        for a in range(m_):
            for b in range(m_):
                for c in range(m_):
                    acc = None
                    for d in range(m_):
                        t = hinv[a, d] * (vh[c, b, d] + vh[b, c, d] - vh[d, b, c])
                        acc = t if acc is None else acc + t
                    kv[a, b, c] = acc * 0.5

        return ConnBlocks(lz, lv, kz, kv)

    return DConnection(chart, M.nconn, blocks)


def _sum_nd(vn, hcol, b, cp, m_):
    # sum_d vd(N[d, cp], b) * h[d, c] with hcol = h[:, c]
    acc = None
    for d in range(m_):
        t = vn[d, cp, b] * hcol[d]
        acc = t if acc is None else acc + t
    return acc


@dataclass
class TorsionBlocks:
    """Component table of the torsion relative to the adapted frame.

    zzz[a',b',c']: horizontal antisymmetrization of the horizontal block.
    zzv[a',b',a]: mixed horizontal block (equals kz as components).
    vzz[a,b',c']: the N-curvature.
    vvv[a,b,c]: fiber antisymmetrization of the fiber block.
    vvz[a,b,b']: fiber derivative of N against the mixed block."""

    zzz: np.ndarray
    zzv: np.ndarray
    vzz: np.ndarray
    vvv: np.ndarray
    vvz: np.ndarray

    @property
    def max_abs(self) -> float:
        return max(
            float(np.max(np.abs(b)))
            for b in (self.zzz, self.zzv, self.vzz, self.vvv, self.vvz)
        )

    def full(self, h: int, m: int) -> np.ndarray:
        """Full T[A, B, C] antisymmetric in (B, C)."""
        dim = h + m
        out = np.zeros((dim, dim, dim))
        for ap in range(h):
            out[ap, :h, :h] = self.zzz[ap]
            for bp in range(h):
                for a in range(m):
                    out[ap, bp, h + a] = self.zzv[ap, bp, a]
                    out[ap, h + a, bp] = -self.zzv[ap, bp, a]
        for a in range(m):
            out[h + a, :h, :h] = self.vzz[a]
            out[h + a, h:, h:] = self.vvv[a]
            for b in range(m):
                for bp in range(h):
                    out[h + a, h + b, bp] = self.vvz[a, b, bp]
                    out[h + a, bp, h + b] = -self.vvz[a, b, bp]
        return out


def torsion(conn: DConnection, point) -> TorsionBlocks:
    chart = conn.chart
    h_, m_ = chart.h, chart.m
    b = conn.values(point)
    fc = FrameCalc(chart, conn.nconn, point, 1)
    om = n_curvature(chart, conn.nconn, point)

    zzz = np.zeros((h_, h_, h_))
    for ap in range(h_):
        zzz[ap] = b.lz[ap] - b.lz[ap].T
    zzv = b.kz.copy()
    vvv = np.zeros((m_, m_, m_))
    for a in range(m_):
        vvv[a] = b.kv[a] - b.kv[a].T
    vvz = np.zeros((m_, m_, h_))
    for a in range(m_):
        for bb in range(m_):
            for bp in range(h_):
                vvz[a, bb, bp] = fc.vd(fc.N[a, bp], bb).value - b.lv[a, bb, bp]
    return TorsionBlocks(zzz=zzz, zzv=zzv, vzz=om, vvv=vvv, vvz=vvz)


@dataclass
class CurvatureReport:
    """The six curvature blocks of a d-connection, their Ricci traces, the
    scalar, and the Einstein blocks, bundled with the same connection's
    torsion table and nonmetricity. All arrays are floats at the point.

    rz[a',e',b',c']: horizontal-target, two horizontal directions.
    rv[a,b,b',e']: fiber-target, two horizontal directions.
    pz[a',e',b',a]: horizontal-target, mixed directions.
    pv[c,b,a',a]: fiber-target, mixed directions.
    sz[a',b',b,c]: horizontal-target, two fiber directions.
    sv[a,b,c,d]: fiber-target, two fiber directions."""

    rz: np.ndarray
    rv: np.ndarray
    pz: np.ndarray
    pv: np.ndarray
    sz: np.ndarray
    sv: np.ndarray
    ricci_zz: np.ndarray
    ricci_zv: np.ndarray
    ricci_vz: np.ndarray
    ricci_vv: np.ndarray
    scalar: float
    einstein_zz: np.ndarray
    einstein_zv: np.ndarray
    einstein_vz: np.ndarray
    einstein_vv: np.ndarray
    torsion: "TorsionBlocks"
    nonmetricity: "NonmetricityReport"


def curvature(conn: DConnection, M: DMetric, point) -> CurvatureReport:
    chart = conn.chart
    h_, m_ = chart.h, chart.m
    point = tuple(point)
    jb = conn.blocks(point, 1)
    fc = FrameCalc(chart, conn.nconn, point, 1)
    om = n_curvature(chart, conn.nconn, point)
    b = jb.values()

    def zd_v(F, a):
        return fc.zd(F, a).value

    def vd_v(F, a):
        return fc.vd(F, a).value

    # mixed torsion feeding the P blocks: T[bidx, b', a] = lv[bidx, a, b'] - v_a(N[bidx, b'])
    tmix = np.zeros((m_, h_, m_))
    for bidx in range(m_):
        for bp in range(h_):
            for a in range(m_):
                tmix[bidx, bp, a] = b.lv[bidx, a, bp] - vd_v(fc.N[bidx, bp], a)

    rz = np.zeros((h_, h_, h_, h_))
    for ap in range(h_):
        for ep in range(h_):
            for bp in range(h_):
                for cp in range(bp + 1, h_):
                    acc = zd_v(jb.lz[ap, ep, bp], cp) - zd_v(jb.lz[ap, ep, cp], bp)
                    for dp in range(h_):
                        acc += b.lz[dp, ep, bp] * b.lz[ap, dp, cp]
                        acc -= b.lz[dp, ep, cp] * b.lz[ap, dp, bp]
                    for a in range(m_):
                        acc -= b.kz[ap, ep, a] * om[a, bp, cp]
                    rz[ap, ep, bp, cp] = acc
                    rz[ap, ep, cp, bp] = -acc

    rv = np.zeros((m_, m_, h_, h_))
    for a in range(m_):
        for bb in range(m_):
            for bp in range(h_):
                for ep in range(bp + 1, h_):
                    acc = zd_v(jb.lv[a, bb, bp], ep) - zd_v(jb.lv[a, bb, ep], bp)
                    for c in range(m_):
                        acc += b.lv[c, bb, bp] * b.lv[a, c, ep]
                        acc -= b.lv[c, bb, ep] * b.lv[a, c, bp]
                        acc -= b.kv[a, bb, c] * om[c, bp, ep]
                    rv[a, bb, bp, ep] = acc
                    rv[a, bb, ep, bp] = -acc

    pz = np.zeros((h_, h_, h_, m_))
    for ap in range(h_):
        for ep in range(h_):
            for bp in range(h_):
                for a in range(m_):
                    acc = vd_v(jb.lz[ap, ep, bp], a) - zd_v(jb.kz[ap, ep, a], bp)
                    for dp in range(h_):
                        acc -= b.lz[ap, dp, bp] * b.kz[dp, ep, a]
                        acc += b.lz[dp, ep, bp] * b.kz[ap, dp, a]
                    for c in range(m_):
                        acc += b.lv[c, a, bp] * b.kz[ap, ep, c]
                        acc += b.kz[ap, ep, c] * tmix[c, bp, a]
                    pz[ap, ep, bp, a] = acc

    pv = np.zeros((m_, m_, h_, m_))
    for c in range(m_):
        for bb in range(m_):
            for aprime in range(h_):
                for a in range(m_):
                    acc = vd_v(jb.lv[c, bb, aprime], a) - zd_v(jb.kv[c, bb, a], aprime)
                    for d in range(m_):
                        acc -= b.lv[c, d, aprime] * b.kv[d, bb, a]
                        acc += b.lv[d, bb, aprime] * b.kv[c, d, a]
                        acc += b.lv[d, a, aprime] * b.kv[c, bb, d]
                        acc += b.kv[c, bb, d] * tmix[d, aprime, a]
                    pv[c, bb, aprime, a] = acc

    sz = np.zeros((h_, h_, m_, m_))
    for ap in range(h_):
        for bp in range(h_):
            for bb in range(m_):
                for c in range(bb + 1, m_):
                    acc = vd_v(jb.kz[ap, bp, bb], c) - vd_v(jb.kz[ap, bp, c], bb)
                    for ep in range(h_):
                        acc += b.kz[ep, bp, bb] * b.kz[ap, ep, c]
                        acc -= b.kz[ep, bp, c] * b.kz[ap, ep, bb]
                    sz[ap, bp, bb, c] = acc
                    sz[ap, bp, c, bb] = -acc

    sv = np.zeros((m_, m_, m_, m_))
    for a in range(m_):
        for bb in range(m_):
            for c in range(m_):
                for d in range(c + 1, m_):
                    acc = vd_v(jb.kv[a, bb, c], d) - vd_v(jb.kv[a, bb, d], c)
                    for e in range(m_):
                        acc += b.kv[e, bb, c] * b.kv[a, e, d]
                        acc -= b.kv[e, bb, d] * b.kv[a, e, c]
                    sv[a, bb, c, d] = acc
                    sv[a, bb, d, c] = -acc

    ricci_zz = np.einsum("cabc->ab", rz)
    ricci_zv = -np.einsum("babc->ac", pz)
    ricci_vz = np.einsum("cabc->ab", pv)
    ricci_vv = np.einsum("cabc->ab", sv)

    g = M.g_values(point)
    h = M.h_values(point)
    ginv = np.linalg.inv(g)
    hinv = np.linalg.inv(h)
    scalar = float(np.einsum("ab,ab->", ginv, ricci_zz) + np.einsum("ab,ab->", hinv, ricci_vv))

    return CurvatureReport(
        rz=rz,
        rv=rv,
        pz=pz,
        pv=pv,
        sz=sz,
        sv=sv,
        ricci_zz=ricci_zz,
        ricci_zv=ricci_zv,
        ricci_vz=ricci_vz,
        ricci_vv=ricci_vv,
        scalar=scalar,
        einstein_zz=ricci_zz - 0.5 * g * scalar,
        einstein_zv=ricci_zv.copy(),
        einstein_vz=ricci_vz.copy(),
        einstein_vv=ricci_vv - 0.5 * h * scalar,
        torsion=torsion(conn, point),
        nonmetricity=nonmetricity(conn, M, point),
    )


def _covariant_metric_derivs(conn: DConnection, M: DMetric, point, order):
    """Frame-leg covariant derivatives of both metric blocks, as jets:
    (Dzg[c',a',b'], Dvg[c,a',b'], Dzh[c',a,b], Dvh[c,a,b])."""
    chart = conn.chart
    h_, m_ = chart.h, chart.m
    point = tuple(point)
    fc = FrameCalc(chart, conn.nconn, point, order + 1)
    g, h = _metric_jets(M, point, order + 1)
    jb = conn.blocks(point, order)

    def trunc(x):
        return x.truncate(order)

    dzg = np.empty((h_, h_, h_), dtype=object)
    for cp in range(h_):
        for ap in range(h_):
            for bp in range(h_):
                acc = fc.zd(g[ap, bp], cp)
                for dp in range(h_):
                    acc = acc - jb.lz[dp, ap, cp] * trunc(g[dp, bp])
                    acc = acc - jb.lz[dp, bp, cp] * trunc(g[dp, ap])
                dzg[cp, ap, bp] = acc
    dvg = np.empty((m_, h_, h_), dtype=object)
    for c in range(m_):
        for ap in range(h_):
            for bp in range(h_):
                acc = fc.vd(g[ap, bp], c)
                for dp in range(h_):
                    acc = acc - jb.kz[dp, ap, c] * trunc(g[dp, bp])
                    acc = acc - jb.kz[dp, bp, c] * trunc(g[dp, ap])
                dvg[c, ap, bp] = acc
    dzh = np.empty((h_, m_, m_), dtype=object)
    for cp in range(h_):
        for a in range(m_):
            for bb in range(m_):
                acc = fc.zd(h[a, bb], cp)
                for d in range(m_):
                    acc = acc - jb.lv[d, a, cp] * trunc(h[d, bb])
                    acc = acc - jb.lv[d, bb, cp] * trunc(h[d, a])
                dzh[cp, a, bb] = acc
    dvh = np.empty((m_, m_, m_), dtype=object)
    for c in range(m_):
        for a in range(m_):
            for bb in range(m_):
                acc = fc.vd(h[a, bb], c)
                for d in range(m_):
                    acc = acc - jb.kv[d, a, c] * trunc(h[d, bb])
                    acc = acc - jb.kv[d, bb, c] * trunc(h[d, a])
                dvh[c, a, bb] = acc
    return dzg, dvg, dzh, dvh


@dataclass
class NonmetricityReport:
    """Minus the covariant derivative of each metric block along each leg
    type (so a metric connection reports all zeros)."""

    zg: np.ndarray  # (h, h, h) [direction, a', b']
    vg: np.ndarray  # (m, h, h)
    zh: np.ndarray  # (h, m, m)
    vh: np.ndarray  # (m, m, m)

    @property
    def max_abs(self) -> float:
        return max(
            float(np.max(np.abs(x))) for x in (self.zg, self.vg, self.zh, self.vh)
        )


def nonmetricity(conn: DConnection, M: DMetric, point) -> NonmetricityReport:
    dzg, dvg, dzh, dvh = _covariant_metric_derivs(conn, M, point, 0)
    return NonmetricityReport(
        zg=-_values(dzg), vg=-_values(dvg), zh=-_values(dzh), vh=-_values(dvh)
    )


def metrize(conn: DConnection, M: DMetric) -> DConnection:
    """Minimal metric correction: add half the metric's covariant
    derivative, raised on the target slot, with the derivative taken in the
    direction slot. Idempotent; exact metricity by construction."""
    chart = conn.chart
    h_, m_ = chart.h, chart.m

    def blocks(point, order):
        point = tuple(point)
        jb = conn.blocks(point, order)
        dzg, dvg, dzh, dvh = _covariant_metric_derivs(conn, M, point, order)
        g, h = _metric_jets(M, point, order)
        ginv = jet_matrix_inverse(g)
        hinv = jet_matrix_inverse(h)

        lz = np.empty((h_, h_, h_), dtype=object)
        for ap in range(h_):
            for bp in range(h_):
                for cp in range(h_):
                    acc = jb.lz[ap, bp, cp]
                    for ep in range(h_):
                        acc = acc + 0.5 * ginv[ap, ep] * dzg[cp, ep, bp]
                    lz[ap, bp, cp] = acc
        lv = np.empty((m_, m_, h_), dtype=object)
        for a in range(m_):
            for bb in range(m_):
                for cp in range(h_):
                    acc = jb.lv[a, bb, cp]
                    for e in range(m_):
                        acc = acc + 0.5 * hinv[a, e] * dzh[cp, e, bb]
                    lv[a, bb, cp] = acc
        kz = np.empty((h_, h_, m_), dtype=object)
        for ap in range(h_):
            for bp in range(h_):
                for c in range(m_):
                    acc = jb.kz[ap, bp, c]
                    for ep in range(h_):
                        acc = acc + 0.5 * ginv[ap, ep] * dvg[c, ep, bp]
                    kz[ap, bp, c] = acc
        kv = np.empty((m_, m_, m_), dtype=object)
        for a in range(m_):
            for bb in range(m_):
                for c in range(m_):
                    acc = jb.kv[a, bb, c]
                    for e in range(m_):
                        acc = acc + 0.5 * hinv[a, e] * dvh[c, e, bb]
                    kv[a, bb, c] = acc
        return ConnBlocks(lz, lv, kz, kv)

    return DConnection(chart, conn.nconn, blocks)


def add_deformation(conn: DConnection, zblocks) -> DConnection:
    """Add a block deformation: zblocks(point, order) -> ConnBlocks of jets."""

    def blocks(point, order):
        a = conn.blocks(tuple(point), order)
        z = zblocks(tuple(point), order)
        return ConnBlocks(
            _add_grid(a.lz, z.lz),
            _add_grid(a.lv, z.lv),
            _add_grid(a.kz, z.kz),
            _add_grid(a.kv, z.kv),
        )

    return DConnection(conn.chart, conn.nconn, blocks)


def _add_grid(a, b):
    out = np.empty(a.shape, dtype=object)
    for idx in np.ndindex(a.shape):
        out[idx] = a[idx] + b[idx]
    return out


def _coerce_torsion_target(t_target) -> TorsionBlocks:
    if isinstance(t_target, TorsionBlocks):
        return t_target
    zzz, zzv, vzz, vvv, vvz = (np.asarray(x, dtype=float) for x in t_target)
    return TorsionBlocks(zzz=zzz, zzv=zzv, vzz=vzz, vvv=vvv, vvz=vvz)


def _coerce_q_target(q_target) -> NonmetricityReport:
    if isinstance(q_target, NonmetricityReport):
        return q_target
    zg, vg, zh, vh = (np.asarray(x, dtype=float) for x in q_target)
    return NonmetricityReport(zg=zg, vg=vg, zh=zh, vh=vh)


@dataclass
class DeformationReport:
    """What the target-driven deformation actually achieved.

    The bookkeeping form mixes leg types, but a d-connection only has the
    four like-type blocks, so the raised mixed-type components are dropped;
    their worst magnitude is reported. The achieved torsion/nonmetricity
    are recomputed from the deformed connection and compared blockwise to
    the requested targets."""

    dropped_max: float
    torsion_achieved: TorsionBlocks
    nonmetricity_achieved: NonmetricityReport
    torsion_deviation: float
    nonmetricity_deviation: float


def deform_connection(
    base: DConnection, t_target, q_target, M: DMetric, point
) -> tuple[DConnection, DeformationReport]:
    """Deform `base` toward prescribed torsion and nonmetricity targets.

    The targets (constant over the chart: a TorsionBlocks / four-array
    nonmetricity set, or plain array tuples of the same shapes) are folded
    into the combined bookkeeping form, raised on the target slot with the
    block metric, and the four like-type blocks are added to `base`. The
    formula is a one-shot heuristic, not a fixed-point solve: the report
    carries the recomputed torsion/nonmetricity of the result and their
    deviation from the targets, which is the honest acceptance signal."""
    chart = base.chart
    h_, m_ = chart.h, chart.m
    dim = h_ + m_
    tt = _coerce_torsion_target(t_target)
    qq = _coerce_q_target(q_target)
    T = tt.full(h_, m_)
    Q = np.zeros((dim, dim, dim))  # Q[C, A, B], direction first
    Q[:h_, :h_, :h_] = qq.zg
    Q[h_:, :h_, :h_] = qq.vg
    Q[:h_, h_:, h_:] = qq.zh
    Q[h_:, h_:, h_:] = qq.vh

    dropped = {"max": 0.0}

    def zblocks(pt, order):
        pt = tuple(pt)
        g, h = _metric_jets(M, pt, order)
        ginv = jet_matrix_inverse(g)
        hinv = jet_matrix_inverse(h)

        def met(A, B):
            if A < h_ and B < h_:
                return g[A, B]
            if A >= h_ and B >= h_:
                return h[A - h_, B - h_]
            return None

        def metinv(A, B):
            if A < h_ and B < h_:
                return ginv[A, B]
            if A >= h_ and B >= h_:
                return hinv[A - h_, B - h_]
            return None

        def lower_t(A, B, C):
            # TL[A, B, C] = G_AD T^D_BC over the block metric
            acc = None
            rng = range(h_) if A < h_ else range(h_, dim)
            for D in rng:
                coef = met(A, D)
                if T[D, B, C] != 0.0:
                    t = coef * float(T[D, B, C])
                    acc = t if acc is None else acc + t
            return acc

        zero = Jet.constant(0.0, chart.dim, order)

        def tl(A, B, C):
            val = lower_t(A, B, C)
            return zero if val is None else val

        def zval(F, A, B):
            return (
                tl(A, B, F)
                - tl(B, A, F)
                + 0.5 * tl(F, B, A)
                + float(Q[A, B, F] - Q[B, A, F] + 0.5 * Q[F, A, B])
            )

        # raised increment delta[A, B, E] = Ginv[A, D] Z[E, D, B]
        def delta(A, B, E):
            acc = None
            rng = range(h_) if A < h_ else range(h_, dim)
            for D in rng:
                t = metinv(A, D) * zval(E, D, B)
                acc = t if acc is None else acc + t
            return acc

        lz = np.empty((h_, h_, h_), dtype=object)
        for ap in range(h_):
            for bp in range(h_):
                for cp in range(h_):
                    lz[ap, bp, cp] = delta(ap, bp, cp)
        lv = np.empty((m_, m_, h_), dtype=object)
        for a in range(m_):
            for bb in range(m_):
                for cp in range(h_):
                    lv[a, bb, cp] = delta(h_ + a, h_ + bb, cp)
        kz = np.empty((h_, h_, m_), dtype=object)
        for ap in range(h_):
            for bp in range(h_):
                for c in range(m_):
                    kz[ap, bp, c] = delta(ap, bp, h_ + c)
        kv = np.empty((m_, m_, m_), dtype=object)
        for a in range(m_):
            for bb in range(m_):
                for c in range(m_):
                    kv[a, bb, c] = delta(h_ + a, h_ + bb, h_ + c)

        worst = 0.0
        for A in range(dim):
            for B in range(dim):
                if (A < h_) == (B < h_):
                    continue
                for E in range(dim):
                    worst = max(worst, abs(delta(A, B, E).value))
        dropped["max"] = max(dropped["max"], worst)

        return ConnBlocks(lz, lv, kz, kv)

    deformed = add_deformation(base, zblocks)
    point = tuple(point)
    t_ach = torsion(deformed, point)
    q_ach = nonmetricity(deformed, M, point)
    t_dev = max(
        float(np.max(np.abs(t_ach.zzz - tt.zzz))),
        float(np.max(np.abs(t_ach.zzv - tt.zzv))),
        float(np.max(np.abs(t_ach.vzz - tt.vzz))),
        float(np.max(np.abs(t_ach.vvv - tt.vvv))),
        float(np.max(np.abs(t_ach.vvz - tt.vvz))),
    )
    q_dev = max(
        float(np.max(np.abs(q_ach.zg - qq.zg))),
        float(np.max(np.abs(q_ach.vg - qq.vg))),
        float(np.max(np.abs(q_ach.zh - qq.zh))),
        float(np.max(np.abs(q_ach.vh - qq.vh))),
    )
    report = DeformationReport(
        dropped_max=dropped["max"],
        torsion_achieved=t_ach,
        nonmetricity_achieved=q_ach,
        torsion_deviation=t_dev,
        nonmetricity_deviation=q_dev,
    )
    return deformed, report


def obata_family(
    M: DMetric, y_blocks, point, assignment: str = "all_minus"
) -> tuple[DConnection, float]:
    """Deform the canonical connection by a generator projected with the
    metric (anti)symmetrizers; returns the member and its metricity
    residual at `point`.

    assignment = "all_minus": antisymmetrize (in the metric sense) the
    lowered (target, differentiated) pair on every block; this preserves
    metricity exactly. assignment = "printed": the stated projector
    wiring, which antisymmetrizes the horizontal block on the (target,
    direction) pair instead and symmetrizes the fiber-direction blocks;
    kept behind the flag so the reported residual can arbitrate."""
    if assignment not in ("all_minus", "printed"):
        raise ValueError("assignment must be 'all_minus' or 'printed'")
    chart = M.chart
    h_, m_ = chart.h, chart.m
    conn = canonical_dconnection(M)
    y_lz = _field_grid(y_blocks[0], (h_, h_, h_), chart.dim, "y lz")
    y_lv = _field_grid(y_blocks[1], (m_, m_, h_), chart.dim, "y lv")
    y_kz = _field_grid(y_blocks[2], (h_, h_, m_), chart.dim, "y kz")
    y_kv = _field_grid(y_blocks[3], (m_, m_, m_), chart.dim, "y kv")

    def project(yg, met, metinv, mode):
        # lowered: Y_abc = met_ae Y^e_bc, then one of
        #   anti_td : Z_abc = (Y_abc - Y_bac)/2   (target, differentiated)
        #   sym_td  : Z_abc = (Y_abc + Y_bac)/2
        #   anti_tdir: Z_abc = (Y_acb - Y_cab)/2  (target, direction)
        # raised back on the first slot
        nt = yg.shape[0]
        nd = yg.shape[2]
        low = np.empty(yg.shape, dtype=object)
        for a in range(nt):
            for bb in range(nt):
                for c in range(nd):
                    acc = None
                    for e in range(nt):
                        t = met[a, e] * yg[e, bb, c]
                        acc = t if acc is None else acc + t
                    low[a, bb, c] = acc
        out = np.empty(yg.shape, dtype=object)
        for a in range(nt):
            for bb in range(nt):
                for c in range(nd):
                    if mode == "anti_td":
                        zlow = (low[a, bb, c] - low[bb, a, c]) * 0.5
                    elif mode == "sym_td":
                        zlow = (low[a, bb, c] + low[bb, a, c]) * 0.5
                    else:  # anti_tdir, only sensible when nt == nd
                        zlow = (low[a, c, bb] - low[c, a, bb]) * 0.5
                    out[a, bb, c] = zlow
        raised = np.empty(yg.shape, dtype=object)
        for a in range(nt):
            for bb in range(nt):
                for c in range(nd):
                    acc = None
                    for e in range(nt):
                        t = metinv[a, e] * out[e, bb, c]
                        acc = t if acc is None else acc + t
                    raised[a, bb, c] = acc
        return raised

    if assignment == "all_minus":
        modes = ("anti_td", "anti_td", "anti_td", "anti_td")
    else:
        modes = ("anti_tdir", "anti_td", "sym_td", "sym_td")

    def zblocks(pt, order):
        pt = tuple(pt)
        args = var_jets(pt, order)
        g, h = _metric_jets(M, pt, order)
        ginv = jet_matrix_inverse(g)
        hinv = jet_matrix_inverse(h)

        def grid_jets(grid, shape):
            out = np.empty(shape, dtype=object)
            for idx in np.ndindex(shape):
                f = grid[idx]
                out[idx] = (
                    Jet.constant(f.const_value, chart.dim, order)
                    if f.is_constant
                    else f(*args)
                )
            return out

        ylz = grid_jets(y_lz, (h_, h_, h_))
        ylv = grid_jets(y_lv, (m_, m_, h_))
        ykz = grid_jets(y_kz, (h_, h_, m_))
        ykv = grid_jets(y_kv, (m_, m_, m_))
        return ConnBlocks(
            project(ylz, g, ginv, modes[0]),
            project(ylv, h, hinv, modes[1]),
            project(ykz, g, ginv, modes[2]),
            project(ykv, h, hinv, modes[3]),
        )

    member = add_deformation(conn, zblocks)
    residual = nonmetricity(member, M, point).max_abs
    return member, residual


@dataclass
class LeviCivitaReport:
    """Torsion-free metric connection of the assembled metric, over the
    adapted frame (route one: full Koszul with anholonomy terms), plus the
    corrected block-deformation of the canonical connection (route two).

    gamma[A, B, E]: target, differentiated, direction (raised target).
    """

    gamma: np.ndarray
    lz: np.ndarray
    lv: np.ndarray
    kz: np.ndarray
    kv: np.ndarray
    deformed_lz: np.ndarray
    deformed_lv: np.ndarray
    deformed_kz: np.ndarray
    deformed_kv: np.ndarray
    torsion_residual: float
    metricity_residual: float
    agreement_residual: float


def levi_civita(M: DMetric, point) -> LeviCivitaReport:
    chart = M.chart
    h_, m_ = chart.h, chart.m
    dim = h_ + m_
    point = tuple(point)

    rep = anholonomy(chart, M.nconn, point)
    W = rep.w
    fc = FrameCalc(chart, M.nconn, point, 1)
    g, h = _metric_jets(M, point, 1)

    G = np.zeros((dim, dim))
    G[:h_, :h_] = _values(g)
    G[h_:, h_:] = _values(h)
    Ginv = np.linalg.inv(G)

    # frame derivatives of the block-diagonal metric components
    dG = np.zeros((dim, dim, dim))  # dG[E, A, B] = c_E(G_AB)
    for E in range(dim):
        for A in range(dim):
            for B in range(dim):
                if A < h_ and B < h_:
                    F = g[A, B]
                elif A >= h_ and B >= h_:
                    F = h[A - h_, B - h_]
                else:
                    continue
                dG[E, A, B] = (
                    fc.zd(F, E).value if E < h_ else fc.vd(F, E - h_).value
                )

    low = np.zeros((dim, dim, dim))  # low[A, B, E]
    GW = np.einsum("ak,ebk->aeb", G, W)  # GW[A, E, B] = G_AK W^K_EB
    for A in range(dim):
        for B in range(dim):
            for E in range(dim):
                low[A, B, E] = 0.5 * (
                    dG[B, A, E]
                    + dG[E, B, A]
                    - dG[A, E, B]
                    + GW[A, E, B]
                    + GW[B, A, E]
                    - GW[E, B, A]
                )
    gamma = np.einsum("ak,kbe->abe", Ginv, low)

    # torsion of the Koszul result: [c_E, c_B] = W^D_{EB} c_D, so the frame
    # term in T(c_E, c_B) with target A is W[E, B, A]
    tors = np.zeros((dim, dim, dim))
    for A in range(dim):
        for B in range(dim):
            for E in range(dim):
                tors[A, B, E] = gamma[A, B, E] - gamma[A, E, B] - W[E, B, A]
    torsion_residual = float(np.max(np.abs(tors)))

    met = np.zeros((dim, dim, dim))
    for E in range(dim):
        for A in range(dim):
            for B in range(dim):
                met[E, A, B] = dG[E, A, B] - low[A, B, E] - low[B, A, E]
    metricity_residual = float(np.max(np.abs(met)))

    lz = gamma[:h_, :h_, :h_].copy()
    lv = gamma[h_:, h_:, :h_].copy()
    kz = gamma[:h_, :h_, h_:].copy()
    kv = gamma[h_:, h_:, h_:].copy()

    # route two: canonical blocks plus closed-form corrections
    can = canonical_dconnection(M).values(point)
    gv = G[:h_, :h_]
    ginv_v = np.linalg.inv(gv)
    hv = G[h_:, h_:]
    cvals = np.zeros((h_, h_, h_))
    for idx in np.ndindex((h_, h_, h_)):
        cvals[idx] = fc.c[idx].value
    om = n_curvature(chart, M.nconn, point)
    cl = np.einsum("ak,kbc->abc", gv, cvals)  # cl[a',b',c'] = g_{a'k'} C^{k'}_{b'c'}
    dlz = np.zeros((h_, h_, h_))
    for ap in range(h_):
        for bp in range(h_):
            for cp in range(h_):
                acc = 0.0
                for ep in range(h_):
                    acc += ginv_v[ap, ep] * (
                        cl[ep, cp, bp] + cl[bp, ep, cp] - cl[cp, bp, ep]
                    )
                dlz[ap, bp, cp] = 0.5 * acc
    dkz = np.zeros((h_, h_, m_))
    for ap in range(h_):
        for bp in range(h_):
            for c in range(m_):
                acc = 0.0
                for ep in range(h_):
                    for e in range(m_):
                        acc += ginv_v[ap, ep] * hv[c, e] * om[e, ep, bp]
                dkz[ap, bp, c] = 0.5 * acc
    deformed_lz = can.lz + dlz
    deformed_lv = can.lv.copy()
    deformed_kz = can.kz + dkz
    deformed_kv = can.kv.copy()

    agreement_residual = max(
        float(np.max(np.abs(lz - deformed_lz))),
        float(np.max(np.abs(lv - deformed_lv))),
        float(np.max(np.abs(kz - deformed_kz))),
        float(np.max(np.abs(kv - deformed_kv))),
    )

    return LeviCivitaReport(
        gamma=gamma,
        lz=lz,
        lv=lv,
        kz=kz,
        kv=kv,
        deformed_lz=deformed_lz,
        deformed_lv=deformed_lv,
        deformed_kz=deformed_kz,
        deformed_kv=deformed_kv,
        torsion_residual=torsion_residual,
        metricity_residual=metricity_residual,
        agreement_residual=agreement_residual,
    )


def distortion_1form(conn: DConnection, M: DMetric, point) -> np.ndarray:
    """Combined torsion/nonmetricity bookkeeping form Z[F, A, B]: lowered
    table-torsion and nonmetricity of `conn` folded into a single array.
    The torsion part is antisymmetric in (A, B); the trailing half-Q term
    is symmetric, so the whole form is antisymmetric exactly when the
    connection is metric. Direction-first indexing on the nonmetricity
    entries."""
    chart = conn.chart
    h_, m_ = chart.h, chart.m
    dim = h_ + m_
    point = tuple(point)
    T = torsion(conn, point).full(h_, m_)
    nm = nonmetricity(conn, M, point)
    Q = np.zeros((dim, dim, dim))  # Q[C, A, B]
    Q[:h_, :h_, :h_] = nm.zg
    Q[h_:, :h_, :h_] = nm.vg
    Q[:h_, h_:, h_:] = nm.zh
    Q[h_:, h_:, h_:] = nm.vh

    G = np.zeros((dim, dim))
    G[:h_, :h_] = M.g_values(point)
    G[h_:, h_:] = M.h_values(point)
    TL = np.einsum("ad,dbc->abc", G, T)  # lowered torsion

    Z = np.zeros((dim, dim, dim))
    for F in range(dim):
        for A in range(dim):
            for B in range(dim):
                Z[F, A, B] = (
                    TL[A, B, F]
                    - TL[B, A, F]
                    + 0.5 * TL[F, B, A]
                    + Q[A, B, F]
                    - Q[B, A, F]
                    + 0.5 * Q[F, A, B]
                )
    return Z
