"""Nystrom discretization of the Hecke operator on Bun_0 and its spectral diagnostics.

Domain.  Bun_0 for m = 0 is the torus modulo the half-period lattice and the
sign flip.  The grid covers D = {alpha + beta*tau : 0 <= alpha < 1/2,
0 <= beta < 1/4}, a fundamental domain for that action, with N x N midpoint
cells.  A function on Bun_0 is a function on D; the kernel seen from D is the
sum of the torus kernel over the four half-period translates of q,

    K_bun(p, q) = sum_{lam in {0, 1/2, tau/2, (1+tau)/2}} K(p, q + lam, x),

which is symmetric in (p, q) because K(p + lam, q + lam) = K(p, q).

Singular cells.  K(p, ., x) has 1/|q - q0| singularities at q0 = +-p +- x.
Every cell whose centre lies within 1.5 cell diameters of such a point (any
half-period translate landing near D) is split into quadrants, and the density
is spread over the cell's node and its neighbours by bilinear hat functions.
The 1/|q - q0| part is integrated by a polar rule about q0, exact for it; the
bounded remainder uses the same rule about the nearest point of the quadrant.
Outside that zone the midpoint error of the 1/r part is added back out to a
fixed radius (ring corrections).

Fast path.  G(w) = Z(w - x) - Z(w + x) is elliptic and (log f)'_q =
G(q + p) - G(q - p).  Sums and differences of midpoint nodes lie on the lattice
{m h_a + n h_b tau}, so G is tabulated once on 2N x 4N points per period cell.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse.linalg

from .elliptic import Curve, lattice_coords, lattice_distance, wp_batch, zlog_batch
from .errors import GridMismatchError, InvalidInputError, NoConvergenceError, ParameterError
from .heckegeom import mobius_entries_batch
from .kernel import K_p1_batch, zsum_batch

CODE_VERSION = "ellhecke-0.1.0"
CACHE_MAGIC = b"EHK1"

# half periods in the order used for the lam index: a + 2b for lam = a/2 + b tau/2
_HALF_AB = ((0, 0), (1, 0), (0, 1), (1, 1))

# polar rule sizes per triangle and quadrant: cells within one diameter of the
# singular point, then the rest of the singular zone
DUFFY_NEAR = 6
DUFFY_FAR = 3
# order of the polar rule for the subtracted 1/r part (linear times 1/r is smooth in it)
DUFFY_LEAD = 4

# cells whose centre is within this many diameters of a singular point get the polar rule
SINGULAR_RADIUS = 1.5

# absolute radius out to which the 1/r midpoint error is corrected (see ring_corrections)
RING_RADIUS = 0.15

# Smooth factors inside a singular cell are expanded to fourth order about the
# cell centre when their own pole is at least this many diameters away
# (remainder ~ 16**-5 relative); closer ones are evaluated exactly.
TAYLOR_MIN_DIST = 8.0


def half_periods(tau: complex) -> np.ndarray:
    return np.array([0.5 * a + 0.5 * b * tau for a, b in _HALF_AB], dtype=complex)


# ---------------------------------------------------------------------------
# grid


@dataclass(eq=False)
class QuadGrid:
    """Midpoint grid on D.  Node k sits in cell (ia[k], ib[k]) with k = ia*N + ib."""

    N: int
    tau: complex
    nodes: np.ndarray
    weights: np.ndarray
    ia: np.ndarray
    ib: np.ndarray
    excluded: tuple[int, ...] = ()

    @property
    def h_a(self) -> float:
        return 0.5 / self.N

    @property
    def h_b(self) -> float:
        return 0.25 / self.N

    @property
    def size(self) -> int:
        return self.N * self.N

    @property
    def cell_area(self) -> float:
        return self.h_a * self.h_b * self.tau.imag

    @property
    def diameter(self) -> float:
        u, v = self.h_a, self.h_b * self.tau
        return max(abs(u + v), abs(u - v))

    @property
    def grid_id(self) -> str:
        return f"D{self.N}:tau={self.tau.real!r},{self.tau.imag!r}"

    def corners(self, idx) -> np.ndarray:
        """Counter-clockwise corners of the cells ``idx``, shape (..., 4)."""
        idx = np.asarray(idx)
        base = self.ia[idx] * self.h_a + self.ib[idx] * self.h_b * self.tau
        u, v = self.h_a, self.h_b * self.tau
        return base[..., None] + np.array([0, u, u + v, v], dtype=complex)

    def metadata(self) -> dict:
        return {"N": self.N, "tau": [self.tau.real, self.tau.imag], "grid_id": self.grid_id,
                "domain": "alpha in [0,1/2), beta in [0,1/4)"}


def build_grid(N: int, curve: Curve) -> QuadGrid:
    if not isinstance(N, (int, np.integer)) or isinstance(N, bool) or N < 8:
        raise InvalidInputError(f"grid resolution must be an integer >= 8, got {N!r}")
    N = int(N)
    tau = curve.tau
    ia, ib = np.divmod(np.arange(N * N), N)
    h_a, h_b = 0.5 / N, 0.25 / N
    nodes = (ia + 0.5) * h_a + (ib + 0.5) * h_b * tau
    weights = np.full(N * N, h_a * h_b * tau.imag)
    # 2p in Lattice only at cell corners; the midpoint offset keeps nodes away
    bad = np.flatnonzero(lattice_distance(2 * nodes, curve) < curve.eps_sing)
    return QuadGrid(N, tau, nodes, weights, ia, ib, tuple(int(i) for i in bad))


# ---------------------------------------------------------------------------
# operator containers


@dataclass(eq=False)
class OperatorMatrix:
    H: np.ndarray
    x: complex
    grid_id: str
    symmetrized: bool
    kind: str = "m0"
    selfadjoint_defect: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.H.shape[0]


@dataclass
class SpectralReport:
    eigenvalues: list
    selfadjoint_defect: float
    decay_profile: list
    commutator_defect: dict = field(default_factory=dict)
    p1_match: list | None = None
    method: str = "eigh"


def check_hecke_point(x, curve: Curve) -> complex:
    x = complex(x)
    if not (math.isfinite(x.real) and math.isfinite(x.imag)):
        raise InvalidInputError("Hecke point must be finite")
    d = lattice_distance(2 * x, curve)
    if d < curve.eps_sing:
        raise ParameterError(f"x = {x} is a half period (wp'(x) = 0); the kernel degenerates")
    for t in curve.marked_points[1:]:
        if lattice_distance(x - t, curve) < curve.eps_sing:
            raise ParameterError(f"x = {x} coincides with a marked point")
    return x


# ---------------------------------------------------------------------------
# singular cells


@dataclass
class _SingularCells:
    k: np.ndarray      # row (p node)
    l: np.ndarray      # column (q cell)
    lam: np.ndarray    # index into half_periods of the singular translate
    apex: np.ndarray   # the singular point, in q-coordinates near cell l
    near: np.ndarray   # bool: use the dense Duffy rule


@dataclass
class _Family:
    """Singular points s = sp*p_k + sx*x of one sign pattern, for every row k.

    Modulo the half-period lattice the point sits at a fixed fractional offset
    (fu, fv) inside the cell lattice, so only the anchor cell (bu, bv) depends on
    the row.  (a0, b0) give the half-period translate carrying s to the anchor.
    """

    fu: float
    fv: float
    bu: np.ndarray
    bv: np.ndarray
    a0: np.ndarray
    b0: np.ndarray


def _families(grid: QuadGrid, x: complex) -> list[_Family]:
    out = []
    for sp, sx in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
        s = sp * grid.nodes + sx * x
        al, be = lattice_coords(s, grid.tau)
        al0 = np.mod(al, 0.5)
        be0 = np.mod(be, 0.5)
        u = al0 / grid.h_a
        v = be0 / grid.h_b
        fu = float(u[0] - np.floor(u[0]))
        fv = float(v[0] - np.floor(v[0]))
        out.append(_Family(fu, fv, np.rint(u - fu).astype(np.int64), np.rint(v - fv).astype(np.int64),
                           np.rint(2 * (al0 - al)).astype(np.int64),
                           np.rint(2 * (be0 - be)).astype(np.int64)))
    return out


def _offset_table(grid: QuadGrid, fam: _Family, r_min: float, r_max: float):
    """Cell offsets (da, db) from the anchor cell with centre distance in [r_min, r_max)."""
    tau = grid.tau
    ra = int(math.ceil(r_max / (grid.h_a * tau.imag / abs(tau)))) + 2
    rb = int(math.ceil(r_max / (grid.h_b * tau.imag))) + 2
    da, db = np.meshgrid(np.arange(-ra, ra + 1), np.arange(-rb, rb + 1), indexing="ij")
    da, db = da.ravel(), db.ravel()
    apex = fam.fu * grid.h_a + fam.fv * grid.h_b * tau
    centre = (da + 0.5) * grid.h_a + (db + 0.5) * grid.h_b * tau
    dist = np.abs(centre - apex)
    keep = (dist >= r_min) & (dist < r_max)
    return da[keep], db[keep], dist[keep], apex


def _neighbourhoods(grid: QuadGrid, fam: _Family, da, db, row_mask=None, max_pairs: int = 1 << 22):
    """Yield (rows, cell, lam, apex) for every half-period translate of the family
    whose table neighbourhood meets D.  cell has shape (len(rows), len(da)) with -1
    marking offsets that fall outside D."""
    N = grid.N
    tau = grid.tau
    if len(da) == 0:
        return
    step = max(1, max_pairs // len(da))
    for i in (-1, 0, 1):
        for j in (-1, 0, 1):
            cu = fam.bu + i * N
            cv = fam.bv + 2 * j * N
            hit = (cu + da.max() >= 0) & (cu + da.min() < N) & (cv + db.max() >= 0) & (cv + db.min() < N)
            if row_mask is not None:
                hit &= row_mask
            rows_all = np.flatnonzero(hit)
            for r0 in range(0, len(rows_all), step):
                rows = rows_all[r0:r0 + step]
                ca = cu[rows, None] + da[None, :]
                cb = cv[rows, None] + db[None, :]
                cell = np.where((ca >= 0) & (ca < N) & (cb >= 0) & (cb < N), ca * N + cb, -1)
                lam = (fam.a0[rows] + i) % 2 + 2 * ((fam.b0[rows] + j) % 2)
                apex = (cu[rows] + fam.fu) * grid.h_a + (cv[rows] + fam.fv) * grid.h_b * tau
                yield rows, cell, lam, apex


def _mask(grid: QuadGrid, rows):
    if rows is None:
        return None
    m = np.zeros(grid.size, dtype=bool)
    m[np.asarray(rows)] = True
    return m


def singular_cells(grid: QuadGrid, x: complex, rows=None) -> _SingularCells:
    """All (row, cell, translate) triples whose cell centre lies within
    SINGULAR_RADIUS cell diameters of a singular point of that translate.
    If two singular points claim the same triple the nearer one is kept."""
    radius = SINGULAR_RADIUS * grid.diameter
    out_k, out_l, out_lam, out_apex, out_d = [], [], [], [], []
    for fam in _families(grid, x):
        da, db, dist, _ = _offset_table(grid, fam, 0.0, radius)
        for rr, cell, lam, apex in _neighbourhoods(grid, fam, da, db, _mask(grid, rows)):
            r_idx, c_idx = np.nonzero(cell >= 0)
            out_k.append(rr[r_idx])
            out_l.append(cell[r_idx, c_idx])
            out_lam.append(lam[r_idx])
            out_apex.append(apex[r_idx])
            out_d.append(dist[c_idx])
    if not out_k:
        e = np.zeros(0, dtype=np.int64)
        return _SingularCells(e, e, e, np.zeros(0, complex), np.zeros(0, bool))
    k = np.concatenate(out_k)
    l = np.concatenate(out_l)
    lam = np.concatenate(out_lam)
    apex = np.concatenate(out_apex)
    dist = np.concatenate(out_d)
    key = (k * grid.size + l) * 4 + lam
    order = np.lexsort((dist, key))
    _, first = np.unique(key[order], return_index=True)
    sel = order[first]
    return _SingularCells(k[sel], l[sel], lam[sel], apex[sel], dist[sel] < grid.diameter)


def _inverse_distance_integrals(grid: QuadGrid, apex: complex, da, db):
    """int_cell 1/|q - apex| dA for cells at offsets (da, db) of the anchor cell."""
    u, v = grid.h_a, grid.h_b * grid.tau
    base = da * u + db * v
    corners = base[:, None] + np.array([0, u, u + v, v], dtype=complex)
    # the polar rule about the apex itself is exact for 1/r at any order
    pts, wts = duffy_points(np.full(len(da), complex(apex)), corners, 2)
    out = np.sum(wts / np.abs(pts - apex), axis=1)
    return out


def ring_corrections(grid: QuadGrid, x: complex, rows=None):
    """Yield (rows, cells, lam, c) adding back the midpoint-rule error of the
    leading 1/|q - q0| part of the kernel on cells outside the polar zone.

    Every Z pole in (log f)'_q has residue +-1, so near a singular point
    K = 1/|q - q0| + O(1) and the correction for a cell is
    int_cell 1/|q - q0| - area/|q_c - q0|, which depends only on the position
    of the cell relative to q0.  It is tabulated once per family and applied
    out to RING_RADIUS; beyond that the remaining error is O(h^2)."""
    r_in = SINGULAR_RADIUS * grid.diameter
    r_out = max(RING_RADIUS, 2 * r_in)
    for fam in _families(grid, x):
        da, db, dist, apex = _offset_table(grid, fam, r_in, r_out)
        corr = _inverse_distance_integrals(grid, apex, da, db) - grid.cell_area / dist
        for rr, cell, lam, _ in _neighbourhoods(grid, fam, da, db, _mask(grid, rows)):
            r_idx, c_idx = np.nonzero(cell >= 0)
            yield rr[r_idx], cell[r_idx, c_idx], lam[r_idx], corr[c_idx]


def _gauss01(n: int):
    t, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (t + 1), 0.5 * w


def duffy_points(apex: np.ndarray, corners: np.ndarray, n: int):
    """Points and signed weights of the polar rule on each cell, shape (len, 4*n*n).

    Triangle (q0, a, b) is swept by rays q0 + rho (e - q0) with e on the edge
    ab.  The edge point is e = f + h sinh(u) d, where f is the foot of the
    perpendicular from q0, h its length and d the edge direction.  In (rho, u)
    the Jacobian is rho h^2 cosh(u) and a 1/r singularity at q0 becomes a
    constant, even when q0 sits close to the edge.
    """
    rho, wr = _gauss01(n)
    g, wg = _gauss01(n)
    a = corners
    b = np.roll(corners, -1, axis=-1)
    q0 = apex[:, None]
    v = b - a
    L = np.abs(v)
    d = v / L
    cross = (np.conj(a - q0) * v).imag / L
    h = np.abs(cross)
    ok = h > 0
    hs = np.where(ok, h, 1.0)
    ta = ((np.conj(d) * (a - q0)).real)
    tb = ta + L
    ua = np.arcsinh(ta / hs)
    ub = np.arcsinh(tb / hs)
    U = ua[..., None] + (ub - ua)[..., None] * g  # (len, 4, n)
    foot = a - ta * d
    e = foot[..., None] + (hs * d)[..., None] * np.sinh(U)
    R = rho[:, None]
    pts = q0[..., None, None] + R * (e[:, :, None, :] - q0[..., None, None])
    jac = np.where(ok, h * h, 0.0)[..., None] * np.cosh(U) * ((ub - ua) * np.sign(cross))[..., None]
    wts = jac[:, :, None, :] * (wr * rho)[:, None] * wg
    m = len(apex)
    return pts.reshape(m, -1), wts.reshape(m, -1)


def neighbour_index(grid: QuadGrid, ia, ib):
    """Node index of lattice position (ia, ib), which may lie one step outside D.

    Alpha is periodic; crossing beta = 0 or beta = 1/4 lands on the image
    under p -> -p plus a half period, which reflects alpha."""
    N = grid.N
    ia = np.mod(ia, N)
    out = (ib < 0) | (ib >= N)
    ia = np.where(out, N - 1 - ia, ia)
    ib = np.where(ib < 0, 0, np.where(ib >= N, N - 1, ib))
    return ia * N + ib


def _cell_coords(z, c0, grid: QuadGrid):
    """Coordinates of z in units of the cell edges, relative to corner c0."""
    v = grid.h_b * grid.tau
    rel = z - c0
    fb = rel.imag / v.imag
    return (rel - fb * v).real / grid.h_a, fb


def _duffy_integrate(sc: _SingularCells, grid: QuadGrid, integrand, lead=None,
                     budget: int = 1 << 21):
    """Integrate ``integrand(k, l, lam, q)`` times the bilinear hat functions
    of the nodes around each singular cell.

    Each cell is split into its four quadrants; in a quadrant the density is
    interpolated between the cell's node and its three neighbours on that
    side.  The part lead/|q - apex| is integrated by the polar rule about the
    apex, which is exact for it wherever the apex lies.  The bounded remainder
    uses the polar rule about the point of the quadrant nearest the apex, so
    no node leaves the quadrant.  Returns (cols, vals) of shape (len, 16);
    entries sharing a column are meant to be summed.  k, l, lam are 1-d arrays
    and q has shape (len(k), P)."""
    m = len(sc.k)
    lead = np.ones(m) if lead is None else np.asarray(lead, dtype=float)
    cols = np.zeros((m, 16), dtype=np.int64)
    vals = np.zeros((m, 16))
    u, v = grid.h_a, grid.h_b * grid.tau
    for near, n in ((True, DUFFY_NEAR), (False, DUFFY_FAR)):
        idx_all = np.flatnonzero(sc.near == near)
        step = max(1, budget // (16 * n * n))
        for s0 in range(0, len(idx_all), step):
            idx = idx_all[s0:s0 + step]
            l = sc.l[idx]
            apex = sc.apex[idx]
            c0 = grid.corners(l)[:, 0]
            ia, ib = grid.ia[l], grid.ib[l]
            fa0, fb0 = _cell_coords(apex, c0, grid)
            for qd, (qa, qb) in enumerate(((0, 0), (1, 0), (0, 1), (1, 1))):
                base = c0 + 0.5 * (qa * u + qb * v)
                corners = base[:, None] + 0.5 * np.array([0, u, u + v, v], dtype=complex)
                ca = np.clip(fa0, 0.5 * qa, 0.5 * qa + 0.5)
                cb = np.clip(fb0, 0.5 * qb, 0.5 * qb + 0.5)
                pts, wts = duffy_points(c0 + ca * u + cb * v, corners, n)
                with np.errstate(divide="ignore"):
                    f = integrand(sc.k[idx], l, sc.lam[idx], pts) - lead[idx, None] / np.abs(pts - apex[:, None])
                p2, w2 = duffy_points(apex, corners, DUFFY_LEAD)
                pts = np.concatenate([pts, p2], axis=1)
                f = np.concatenate([f * wts, lead[idx, None] * w2 / np.abs(p2 - apex[:, None])], axis=1)
                fa, fb = _cell_coords(pts, c0[:, None], grid)
                wa = np.abs(fa - 0.5)
                wb = np.abs(fb - 0.5)
                sa, sb = 2 * qa - 1, 2 * qb - 1
                nb = ((0, 0, (1 - wa) * (1 - wb)), (sa, 0, wa * (1 - wb)),
                      (0, sb, (1 - wa) * wb), (sa, sb, wa * wb))
                for j, (da, db, w) in enumerate(nb):
                    cols[idx, 4 * qd + j] = neighbour_index(grid, ia + da, ib + db)
                    vals[idx, 4 * qd + j] = np.sum(f * w, axis=1)
    return cols, vals


# ---------------------------------------------------------------------------
# local expansions inside a cell


def _wp_derivs(a, curve: Curve):
    """wp and its first five derivatives at a."""
    w0, w1 = wp_batch(a, curve)
    w2 = 6 * w0 * w0 - 0.5 * curve.g2
    w3 = 12 * w0 * w1
    w4 = 12 * (w1 * w1 + w0 * w2)
    w5 = 36 * w1 * w2 + 12 * w0 * w3
    return w0, w1, w2, w3, w4, w5


def _taylor(coeffs, d):
    """sum_j c_j d^j / j! by Horner; coeffs broadcast against d."""
    out = coeffs[-1] / math.factorial(len(coeffs) - 1)
    for j in range(len(coeffs) - 2, -1, -1):
        out = out * d + coeffs[j] / math.factorial(j)
    return out


def _z_local(a, d, curve: Curve, exact_mask):
    """Z(a + d) for centres a (m,) and offsets d (m, P).

    Rows in ``exact_mask`` are summed from the theta series, the rest from the
    fourth-order expansion with Z' = -wp + c."""
    out = np.empty(d.shape, dtype=complex)
    ex = np.flatnonzero(exact_mask)
    tl = np.flatnonzero(~exact_mask)
    if len(ex):
        out[ex] = zlog_batch(a[ex, None] + d[ex], curve)
    if len(tl):
        w0, w1, w2, w3, _, _ = _wp_derivs(a[tl], curve)
        z0 = zlog_batch(a[tl], curve)
        c = [z0, curve.wp_shift - w0, -w1, -w2, -w3]
        out[tl] = _taylor([v[:, None] for v in c], d[tl])
    return out


def _wp_local(c, d, curve: Curve, exact_mask):
    """(wp, wp')(c + d), expanded about c except on rows in ``exact_mask``."""
    s = np.empty(d.shape, dtype=complex)
    ds = np.empty(d.shape, dtype=complex)
    ex = np.flatnonzero(exact_mask)
    tl = np.flatnonzero(~exact_mask)
    if len(ex):
        s[ex], ds[ex] = wp_batch(c[ex, None] + d[ex], curve)
    if len(tl):
        w = [v[:, None] for v in _wp_derivs(c[tl], curve)]
        s[tl] = _taylor(w[:5], d[tl])
        ds[tl] = _taylor(w[1:], d[tl])
    return s, ds


# ---------------------------------------------------------------------------
# m = 0 assembly on the torus


def _g_table(grid: QuadGrid, x: complex, curve: Curve) -> np.ndarray:
    """G(m h_a + n h_b tau) for m < 2N, n < 4N, flattened as m*4N + n."""
    N = grid.N
    m, n = np.meshgrid(np.arange(2 * N), np.arange(4 * N), indexing="ij")
    w = (m * grid.h_a + n * grid.h_b * grid.tau).ravel()
    with np.errstate(divide="ignore", invalid="ignore"):
        return zlog_batch(w - x, curve) - zlog_batch(w + x, curve)


def _row_blocks(n: int, block: int):
    for r0 in range(0, n, block):
        yield r0, min(n, r0 + block)


def _midpoint_terms(T, grid: QuadGrid, k, l, lam):
    """w * |G(S + lam) - G(D + lam)| for index arrays (broadcastable)."""
    N = grid.N
    la, lb = np.asarray(_HALF_AB)[lam].T if np.ndim(lam) else _HALF_AB[lam]
    sa = (grid.ia[k] + grid.ia[l] + 1 + N * la) % (2 * N)
    sb = (grid.ib[k] + grid.ib[l] + 1 + 2 * N * lb) % (4 * N)
    ta = (grid.ia[l] - grid.ia[k] + N * la) % (2 * N)
    tb = (grid.ib[l] - grid.ib[k] + 2 * N * lb) % (4 * N)
    v = np.abs(T[sa * 4 * N + sb] - T[ta * 4 * N + tb])
    return np.where(np.isfinite(v), v, 0.0) * grid.cell_area


def symmetrize_inplace(H: np.ndarray, block: int = 1024) -> float:
    """H <- (H + H^T)/2 exactly; returns ||H - H^T||_F / ||H||_F before the change."""
    n = H.shape[0]
    diff2 = 0.0
    norm2 = 0.0
    blocks = list(_row_blocks(n, block))
    for i, (a0, a1) in enumerate(blocks):
        for b0, b1 in blocks[i:]:
            A = H[a0:a1, b0:b1]
            B = H[b0:b1, a0:a1]
            d = A - B.T
            f = 1.0 if a0 == b0 else 2.0
            diff2 += f * float(np.sum(d * d))
            norm2 += float(np.sum(A * A)) + (0.0 if a0 == b0 else float(np.sum(B * B)))
            M = 0.5 * (A + B.T)
            H[a0:a1, b0:b1] = M
            H[b0:b1, a0:a1] = M.T
    return math.sqrt(diff2 / norm2) if norm2 > 0 else 0.0


def _finish(H, x, grid, kind, symmetrize, meta):
    if not np.all(np.isfinite(H)) or np.any(H < 0):
        raise NoConvergenceError(f"{kind} assembly produced non-finite or negative entries")
    if symmetrize:
        defect = symmetrize_inplace(H)
    else:
        defect = selfadjoint_defect(H)
    meta = dict(meta, **grid.metadata(), x=[x.real, x.imag], kind=kind)
    return OperatorMatrix(H, x, grid.grid_id, symmetrize, kind, defect, meta)


def selfadjoint_defect(H: np.ndarray, block: int = 1024) -> float:
    n = H.shape[0]
    diff2 = 0.0
    for r0, r1 in _row_blocks(n, block):
        d = H[r0:r1] - H[:, r0:r1].T
        diff2 += float(np.sum(d * d))
    nrm = float(np.linalg.norm(H))
    return math.sqrt(diff2) / nrm if nrm > 0 else 0.0


def _zsum_cell_integrand(grid: QuadGrid, x: complex, curve: Curve, fast: bool):
    """|(log f)'_q| at points q of cell l, translated by half period lam, row p_k.

    Of the four Z terms only the one whose pole is nearest is singular in the
    cell; with ``fast`` the others use the local expansion."""
    hp = half_periods(grid.tau)
    lim = TAYLOR_MIN_DIST * grid.diameter

    def integrand(k, l, lam, q):
        p = grid.nodes[k]
        qc = grid.nodes[l] + hp[lam]
        d = q - grid.nodes[l][:, None]
        args = (p + qc - x, qc + x - p, qc - x - p, qc + x + p)
        signs = (1, 1, -1, -1)
        dist = np.stack([lattice_distance(a, curve) for a in args], axis=1)
        nearest = np.argmin(dist, axis=1)
        acc = np.zeros(d.shape, dtype=complex)
        with np.errstate(divide="ignore", invalid="ignore"):
            for j, (a, sg) in enumerate(zip(args, signs)):
                exact = (nearest == j) | (dist[:, j] < lim) | (not fast)
                acc += sg * _z_local(a, d, curve, exact)
        return np.abs(acc)

    return integrand


def _apply_ring(H: np.ndarray, grid: QuadGrid, x: complex, rows=None) -> None:
    pos = _row_positions(grid, rows)
    # pairs are distinct within one chunk, so plain fancy-index addition is safe
    for k, l, _, c in ring_corrections(grid, x, rows):
        H[pos[k], l] += c


def _row_positions(grid: QuadGrid, rows):
    if rows is None:
        return np.arange(grid.size)
    pos = np.full(grid.size, -1)
    pos[np.asarray(rows)] = np.arange(len(rows))
    return pos


def m0_rows(x, grid: QuadGrid, curve: Curve, rows=None, fast: bool = True,
            block: int = 512) -> tuple[np.ndarray, int]:
    """Rows of the unsymmetrized m = 0 matrix (all rows if ``rows`` is None)."""
    x = check_hecke_point(x, curve)
    if abs(grid.tau - curve.tau) > 0:
        raise GridMismatchError("grid was built for a different tau")
    n = grid.size
    row_ids = np.arange(n) if rows is None else np.asarray(rows, dtype=np.int64)
    T = _g_table(grid, x, curve)
    H = np.empty((len(row_ids), n))
    cols = np.arange(n)
    for r0, r1 in _row_blocks(len(row_ids), block):
        k = row_ids[r0:r1, None]
        acc = np.zeros((r1 - r0, n))
        for lam in range(4):
            acc += _midpoint_terms(T, grid, k, cols[None, :], lam)
        H[r0:r1] = acc

    sc = singular_cells(grid, x, rows)
    cols, vals = _duffy_integrate(sc, grid, _zsum_cell_integrand(grid, x, curve, fast))
    mid = _midpoint_terms(T, grid, sc.k, sc.l, sc.lam)
    pos = _row_positions(grid, rows)
    np.add.at(H, (pos[sc.k], sc.l), -mid)
    np.add.at(H, (np.repeat(pos[sc.k], 16), cols.ravel()), vals.ravel())
    _apply_ring(H, grid, x, rows)
    return H, int(len(sc.k))


def assemble_m0(x, grid: QuadGrid, curve: Curve, symmetrize: bool = True,
                block: int = 512, fast: bool = True) -> OperatorMatrix:
    """Nystrom matrix H[k, l] ~ int_{cell l} K_bun(p_k, q, x) dA(q)."""
    x = check_hecke_point(x, curve)
    H, nsing = m0_rows(x, grid, curve, None, fast, block)
    return _finish(H, x, grid, "m0", symmetrize, {"singular_cells": nsing})


# ---------------------------------------------------------------------------
# pushforward to the wp-plane


def _klein_maps(curve: Curve):
    """For each half-period lam, (e, c) with wp(q + lam) = e + c/(wp(q) - e); lam = 0 is None."""
    e = [complex(v) for v in wp_batch(half_periods(curve.tau)[1:], curve)[0]]
    maps = [None]
    for i in range(3):
        ei, ej, ek = e[i], e[(i + 1) % 3], e[(i + 2) % 3]
        maps.append((ei, (ei - ej) * (ei - ek)))
    return maps


def _mu(s, km):
    """(mu(s), |mu'(s)|) for one Klein map; identity when km is None."""
    if km is None:
        return s, np.ones(np.shape(s))
    e, c = km
    d = s - e
    return e + c / d, np.abs(c) / np.abs(d) ** 2


@dataclass(eq=False)
class PlaneGrid:
    """Image of a QuadGrid under wp: nodes r_k = wp(p_k), weights |wp'(p_k)|^2 w_k."""

    base: QuadGrid
    nodes: np.ndarray
    dnodes: np.ndarray
    weights: np.ndarray

    @property
    def grid_id(self) -> str:
        return self.base.grid_id


def plane_grid(grid: QuadGrid, curve: Curve) -> PlaneGrid:
    r, dr = wp_batch(grid.nodes, curve)
    return PlaneGrid(grid, r, dr, np.abs(dr) ** 2 * grid.weights)


def _k_tilde_term(r, s, t, km, curve):
    ms, dm = _mu(s, km)
    with np.errstate(divide="ignore", invalid="ignore"):
        v = K_p1_batch(r, ms, t, curve) * dm
    return v


def assemble_p1(x, pgrid: PlaneGrid | QuadGrid, curve: Curve, symmetrize: bool = True,
                block: int = 512, fast: bool = True) -> OperatorMatrix:
    """Half-density Nystrom matrix of the wp-plane kernel, summed over the Klein
    four-group images of s (the r-plane picture of the half-period translates).

    B[k, l] = sqrt(W_k) K~(r_k, s_l) sqrt(W_l), with K~(r, s) =
    sum_lam K_p1(r, mu_lam(s), t) |mu_lam'(s)|; singular cells use
    sqrt(W_k / W_l) * int_{wp(cell)} K~(r_k, s) dA(s).
    """
    x = check_hecke_point(x, curve)
    if isinstance(pgrid, QuadGrid):
        pgrid = plane_grid(pgrid, curve)
    grid = pgrid.base
    n = grid.size
    t = complex(wp_batch(np.array([x]), curve)[0][0])
    maps = _klein_maps(curve)
    sw = np.sqrt(pgrid.weights)
    r = pgrid.nodes
    B = np.empty((n, n))
    images = [_mu(r, km) for km in maps]
    for r0, r1 in _row_blocks(n, block):
        acc = np.zeros((r1 - r0, n))
        for ms, dm in images:
            with np.errstate(divide="ignore", invalid="ignore"):
                v = K_p1_batch(r[r0:r1, None], ms[None, :], t, curve) * dm[None, :]
            acc += np.where(np.isfinite(v), v, 0.0)
        B[r0:r1] = acc * sw[r0:r1, None] * sw[None, :]

    sc = singular_cells(grid, x)

    # Inside singular cells the density is interpolated in the torus chart:
    # the plane density is singular at poles and branch points of wp and is
    # not continuous across the edges of D, while the torus half-density
    # f(wp q) |wp'(q)| is smooth everywhere.
    pole_dist = lattice_distance(grid.nodes, curve)
    near_pole = pole_dist < TAYLOR_MIN_DIST * grid.diameter
    dn = np.abs(pgrid.dnodes)

    def integrand(k, l, lam, q):
        qc = grid.nodes[l]
        s, ds = _wp_local(qc, q - qc[:, None], curve, near_pole[l] | (not fast))
        ads = np.abs(ds)
        jac = ads * dn[l][:, None]
        v = np.zeros(q.shape)
        for j in range(4):
            sel = lam == j
            if np.any(sel):
                v[sel] = _k_tilde_term(r[k[sel]][:, None], s[sel], t, maps[j], curve) * jac[sel]
        return v

    cols, vals = _duffy_integrate(sc, grid, integrand, dn[sc.l] / dn[sc.k])
    vals = vals * (sw[sc.k] / sw[sc.l])[:, None]
    mid = np.zeros(len(sc.k))
    for j in range(4):
        sel = sc.lam == j
        v = _k_tilde_term(r[sc.k[sel]], r[sc.l[sel]], t, maps[j], curve)
        mid[sel] = np.where(np.isfinite(v), v, 0.0) * sw[sc.k[sel]] * sw[sc.l[sel]]
    np.add.at(B, (sc.k, sc.l), -mid)
    np.add.at(B, (np.repeat(sc.k, 16), cols.ravel()), vals.ravel())
    _apply_ring(B, grid, x)
    return _finish(B, x, grid, "p1", symmetrize, {"singular_cells": int(len(sc.k))})


# ---------------------------------------------------------------------------
# spectra and defects

FULL_EIGH_MAX = 4096


def eigenvalues_top(H: np.ndarray, k: int | None = None) -> tuple[np.ndarray, str]:
    """Eigenvalues sorted by decreasing modulus: all of them for moderate sizes,
    the top ``k`` (Lanczos, fixed start vector) above FULL_EIGH_MAX."""
    n = H.shape[0]
    if n <= FULL_EIGH_MAX or k is None or k >= n - 1:
        try:
            ev = scipy.linalg.eigh(H, eigvals_only=True, check_finite=True)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise NoConvergenceError(f"symmetric eigensolver failed: {exc}") from exc
        method = "eigh"
    else:
        v0 = np.ones(n) / math.sqrt(n)
        try:
            ev = scipy.sparse.linalg.eigsh(H, k=k, which="LM", v0=v0, return_eigenvectors=False,
                                           tol=1e-12, ncv=max(4 * k, 40))
        except scipy.sparse.linalg.ArpackError as exc:
            raise NoConvergenceError(f"Lanczos eigensolver failed: {exc}") from exc
        method = "eigsh"
    order = np.lexsort((-ev, -np.abs(ev)))
    ev = ev[order]
    return (ev if k is None else ev[:k]), method


def spectrum(op: OperatorMatrix, k: int | None = None) -> SpectralReport:
    if not op.symmetrized:
        raise InvalidInputError("spectrum requires a symmetrized operator")
    ev, method = eigenvalues_top(op.H, k)
    top = abs(ev[0]) if len(ev) and ev[0] != 0 else 1.0
    return SpectralReport([float(v) for v in ev], float(op.selfadjoint_defect),
                          [float(abs(v) / top) for v in ev], method=method)


def commutator_defect(Hx: OperatorMatrix, Hy: OperatorMatrix) -> float:
    """||Hx Hy - Hy Hx||_F / (||Hx||_F ||Hy||_F)."""
    if Hx.grid_id != Hy.grid_id or Hx.H.shape != Hy.H.shape:
        raise GridMismatchError(f"operators live on different grids: {Hx.grid_id} vs {Hy.grid_id}")
    A, B = Hx.H, Hy.H
    C = A @ B
    C -= B @ A
    return float(np.linalg.norm(C) / (np.linalg.norm(A) * np.linalg.norm(B)))


def p1_match(ev_m0, ev_p1) -> list[float]:
    """Index-wise relative differences |a - b| / |a|."""
    a = np.asarray(ev_m0, dtype=float)
    b = np.asarray(ev_p1, dtype=float)
    n = min(len(a), len(b))
    return [float(v) for v in np.abs(a[:n] - b[:n]) / np.abs(a[:n])]


# ---------------------------------------------------------------------------
# m = 1: twisted action on (grid x P^1)


@dataclass(eq=False)
class SphereGrid:
    """Equal-area grid on P^1 = S^2: M = n_c * n_phi cells in (cos theta, phi).

    y = (u : w) with |u|^2 - |w|^2 = cos theta and arg(u/w) = phi; weights are
    the spherical areas 4 pi / M (total 4 pi)."""

    n_c: int
    n_phi: int

    @property
    def M(self) -> int:
        return self.n_c * self.n_phi

    @property
    def c_nodes(self) -> np.ndarray:
        return -1 + (np.arange(self.n_c) + 0.5) * (2.0 / self.n_c)

    @property
    def phi_nodes(self) -> np.ndarray:
        return (np.arange(self.n_phi) + 0.5) * (2 * np.pi / self.n_phi)

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.M, 4 * np.pi / self.M)

    def pairs(self) -> np.ndarray:
        """Unit representatives (u, w), shape (M, 2), index i_c * n_phi + i_phi."""
        c, ph = np.meshgrid(self.c_nodes, self.phi_nodes, indexing="ij")
        u = np.sqrt((1 + c) / 2) * np.exp(1j * ph)
        w = np.sqrt((1 - c) / 2) + 0j
        return np.stack([u.ravel(), w.ravel()], axis=1)

    def interpolate(self, values: np.ndarray, u, w) -> np.ndarray:
        """Bilinear interpolation of grid values (..., M) at points (u : w).

        ``values`` has shape (B, M) and u, w shape (B, P); periodic in phi,
        clamped in cos theta."""
        nrm = np.abs(u) ** 2 + np.abs(w) ** 2
        c = (np.abs(u) ** 2 - np.abs(w) ** 2) / nrm
        ph = np.mod(np.angle(u) - np.angle(w), 2 * np.pi)
        fc = np.clip((c + 1) * (self.n_c / 2.0) - 0.5, 0, self.n_c - 1)
        fp = ph * (self.n_phi / (2 * np.pi)) - 0.5
        c0 = np.minimum(np.floor(fc).astype(np.int64), self.n_c - 2)
        tc = fc - c0
        p0 = np.floor(fp).astype(np.int64)
        tp = fp - p0
        p0 %= self.n_phi
        p1 = (p0 + 1) % self.n_phi
        V = values.reshape(values.shape[0], self.n_c, self.n_phi)
        b = np.arange(values.shape[0])[:, None]
        return ((1 - tc) * (1 - tp) * V[b, c0, p0] + (1 - tc) * tp * V[b, c0, p1]
                + tc * (1 - tp) * V[b, c0 + 1, p0] + tc * tp * V[b, c0 + 1, p1])


def sphere_grid(M: int) -> SphereGrid:
    n = int(round(math.sqrt(M)))
    if n * n != M or n < 4:
        raise InvalidInputError(f"sphere grid size must be a square >= 16, got {M}")
    return SphereGrid(n, n)


# kernel-weighted mean of (stretch x sphere spacing) above which build_m1 flags
# the sphere grid as too coarse
COARSE_RATIO = 1.0


def _twist_lift(t1: complex, lam: int) -> complex:
    """Top-left entry of diag(exp(-2 pi i b t1), 1).

    A function on the quotient satisfies f(q + lam, z) = f(q, exp(-2 pi i b t1) z)
    for lam = a/2 + b tau/2, so values at the translate are read off at q."""
    _, b = _HALF_AB[lam]
    return np.exp(-2j * np.pi * b * t1)


@dataclass(eq=False)
class M1Operator:
    """Precomputed data for the m = 1 operator on (grid x sphere)."""

    grid: QuadGrid
    sphere: SphereGrid
    x: complex
    t1: complex
    kernel: np.ndarray      # (n, n, 4) weights w * K(p_k, q_l + lam)
    mats: np.ndarray        # (n, n, 4, 2, 2) unit-determinant g matrices
    resolution_ratio: float = 0.0

    @property
    def coarse(self) -> bool:
        """Warning flag: the sphere grid under-resolves the twisted maps."""
        return self.resolution_ratio > COARSE_RATIO

    @property
    def shape(self) -> tuple[int, int]:
        return (self.grid.size, self.sphere.M)


def build_m1(x, grid: QuadGrid, sphere: SphereGrid, t1, curve: Curve) -> M1Operator:
    """Kernel cell integrals and twisted Mobius maps for every (p_k, q_l + lam).

    Singular cells hold the polar-rule integral over the cell and the ring
    corrections are added per lam.  The density is taken constant on each
    cell because the twist matrices are only tabulated at the nodes."""
    x = check_hecke_point(x, curve)
    t1 = complex(t1)
    if curve.m != 1 or abs(curve.marked_points[1] - t1) > 0:
        raise InvalidInputError("apply_m1 needs a curve with exactly one extra marked point t1")
    if lattice_distance(x - t1, curve) < curve.eps_sing:
        raise ParameterError("x coincides with the marked point t1")
    n = grid.size
    hp = half_periods(grid.tau)
    p = grid.nodes[:, None]
    q = grid.nodes[None, :]
    kern = np.empty((n, n, 4))
    mats = np.empty((n, n, 4, 2, 2), dtype=complex)
    for lam in range(4):
        ql = q + hp[lam]
        kern[:, :, lam] = np.abs(zsum_batch(p, ql, x, curve)) * grid.cell_area
        A, B, C, D = mobius_entries_batch(x, p, ql, t1, curve)
        h = _twist_lift(t1, lam)
        A, B = h * A, h * B
        det = A * D - B * C
        s = np.sqrt(det)
        mats[:, :, lam] = np.stack([np.stack([A / s, B / s], -1), np.stack([C / s, D / s], -1)], -2)
    sc = singular_cells(grid, x)

    def integrand(k, l, lam, qq):
        return np.abs(zsum_batch(grid.nodes[k][:, None], qq + hp[lam][:, None], x, curve))

    kern[sc.k, sc.l, sc.lam] = _duffy_integrate(sc, grid, integrand)[1].sum(axis=1)
    for k, l, lam, c in ring_corrections(grid, x):
        np.add.at(kern, (k, l, lam), c)
    # largest singular value squared = local stretch of y -> g y on the sphere
    stretch = np.linalg.svd(mats.reshape(-1, 2, 2), compute_uv=False)[:, 0] ** 2
    w = kern.reshape(-1)
    ratio = float(np.sum(w * stretch) / np.sum(w)) * math.sqrt(4 * np.pi / sphere.M)
    return M1Operator(grid, sphere, x, t1, kern, mats, ratio)


def apply_m1(op: M1Operator, f: np.ndarray) -> np.ndarray:
    """(H f)(p_k, y) = sum_{l, lam} w K(p_k, q_l + lam) f(q_l, g y) |d(g y)/dy|_half.

    f has shape (n, M) (grid node, sphere node).  g = g_{x, p_k, q_l + lam}
    lifted to the line at q_l, y in the spherical metric; the half-density
    factor of a unit-determinant matrix is 1/|g v|^2 for unit v."""
    n, M = op.shape
    f = np.asarray(f, dtype=float).reshape(n, M)
    y = op.sphere.pairs()  # (M, 2)
    out = np.zeros((n, M))
    for k in range(n):
        out[k] = apply_m1_row(op, f, k, y)
    return out


def apply_m1_row(op: M1Operator, f: np.ndarray, k: int, y: np.ndarray) -> np.ndarray:
    """(H f)(p_k, y) at unit pairs y of shape (P, 2)."""
    acc = np.zeros(len(y))
    for lam in range(4):
        G = op.mats[k, :, lam]          # (n, 2, 2)
        gy = np.einsum("lij,mj->lmi", G, y)  # (n, P, 2)
        u, w = gy[..., 0], gy[..., 1]
        nrm2 = np.abs(u) ** 2 + np.abs(w) ** 2
        vals = op.sphere.interpolate(f, u, w)  # (n, P)
        acc += np.einsum("l,lm->m", op.kernel[k, :, lam], vals / nrm2)
    return acc


def m1_inner(op: M1Operator, f: np.ndarray, h: np.ndarray) -> float:
    """L^2 pairing on (grid x sphere) with the product of quadrature weights."""
    w = op.grid.weights[:, None] * op.sphere.weights[None, :]
    return float(np.sum(w * f * h))


def m1_adjoint_defect(op: M1Operator, seed: int = 0) -> float:
    """|<H f, h> - <f, H h>| / (||f|| ||h||) for seeded Gaussian f, h."""
    rng = np.random.default_rng(seed)
    f = rng.standard_normal(op.shape)
    h = rng.standard_normal(op.shape)
    a = m1_inner(op, apply_m1(op, f), h)
    b = m1_inner(op, f, apply_m1(op, h))
    return abs(a - b) / math.sqrt(m1_inner(op, f, f) * m1_inner(op, h, h))


def m1_norm_estimate(op: M1Operator, iters: int = 30, seed: int = 0,
                     rtol: float = 1e-4) -> float:
    """Power iteration for ||H|| (H is self-adjoint up to discretization error).

    Stops early once successive estimates agree to ``rtol``."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(op.shape) + 1.0
    lam = 0.0
    for _ in range(iters):
        v /= math.sqrt(m1_inner(op, v, v))
        Hv = apply_m1(op, v)
        prev, lam = lam, math.sqrt(m1_inner(op, Hv, Hv))
        v = Hv
        if abs(lam - prev) <= rtol * lam:
            break
    return lam


# ---------------------------------------------------------------------------
# EHK1 cache


def write_cache(path, op: OperatorMatrix) -> None:
    H = np.ascontiguousarray(op.H, dtype="<f8")
    meta = dict(op.meta, code_version=CODE_VERSION, symmetrized=op.symmetrized,
                selfadjoint_defect=op.selfadjoint_defect)
    footer = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<I", H.shape[0]))
        fh.write(H.tobytes(order="C"))
        fh.write(footer)


def read_cache(path) -> OperatorMatrix:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CACHE_MAGIC:
        raise InvalidInputError(f"{path}: not an EHK1 cache")
    (n,) = struct.unpack("<I", data[4:8])
    end = 8 + 8 * n * n
    if len(data) < end:
        raise InvalidInputError(f"{path}: truncated matrix payload")
    H = np.frombuffer(data[8:end], dtype="<f8").reshape(n, n).astype(float)
    meta = json.loads(data[end:].decode("utf-8"))
    x = complex(*meta["x"])
    return OperatorMatrix(H, x, meta["grid_id"], bool(meta["symmetrized"]), meta.get("kind", "m0"),
                          float(meta["selfadjoint_defect"]), meta)


def read_cache_meta(path) -> dict | None:
    """Metadata footer only (None if the file is missing or malformed)."""
    try:
        with open(path, "rb") as fh:
            head = fh.read(8)
            if head[:4] != CACHE_MAGIC:
                return None
            (n,) = struct.unpack("<I", head[4:8])
            fh.seek(8 + 8 * n * n)
            return json.loads(fh.read().decode("utf-8"))
    except (OSError, ValueError, struct.error):
        return None
