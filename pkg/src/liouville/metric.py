"""Lengths and distances for the metric exp(u)|dz| of a developing map.

Distances are upper bounds: shortest paths on a 16-neighbor lattice graph
with quadrature edge weights, then shortened by local vertex moves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .exports import write_csv, write_pgm
from .maps import DevelopingMap, MapEvaluationError
from .sphere import spherical_distance_array

QUAD_RTOL = 1e-8
QUAD_MAX_DEPTH = 40
QUAD_MAX_PIECE = 0.5
REFINE_STALL = 1e-10
DEFAULT_NODE_BUDGET = 2_500_000
# king moves and knight moves; each undirected edge is listed once
STENCIL = ((1, 0), (0, 1), (1, 1), (1, -1), (2, 1), (1, 2), (2, -1), (1, -2))
# csgraph drops explicit zeros, and rho underflows to 0 deep in decay sectors
_MIN_WEIGHT = 1e-300
_SEG_CHUNK = 400_000


class QuadratureError(MapEvaluationError):
    pass


class BudgetExceededError(ValueError):
    pass


# --- quadrature --------------------------------------------------------------


def _rho_along(map, starts, dz, s):
    """rho at starts + s * dz, evaluated locally from each start point."""
    return np.exp(map.u_local(starts, dz[:, None] * np.asarray(s, dtype=float)))


def _simpson(map, st, d, f, rtol):
    absd = np.abs(d)
    whole = absd / 6 * (f[:, 0] + 4 * f[:, 1] + f[:, 2])
    scale = np.maximum(whole, 1e-300)
    n = len(st)
    seg = np.arange(n)
    a = np.zeros(n)
    w = np.ones(n)
    fa, fm, fb = f[:, 0], f[:, 1], f[:, 2]
    acc = np.zeros(n)
    depth = 0
    while seg.size:
        g = _rho_along(map, st[seg], d[seg], np.column_stack([a + w / 4, a + 3 * w / 4]))
        if not np.all(np.isfinite(g)):
            raise QuadratureError("conformal factor is not finite on a segment")
        fl, fr = g[:, 0], g[:, 1]
        left = absd[seg] * w / 12 * (fa + 4 * fl + fm)
        right = absd[seg] * w / 12 * (fm + 4 * fr + fb)
        diff = left + right - whole
        ok = np.abs(diff) <= 15 * rtol * scale[seg] * w
        np.add.at(acc, seg[ok], (left + right + diff / 15)[ok])
        bad = ~ok
        if not bad.any():
            break
        depth += 1
        if depth > QUAD_MAX_DEPTH:
            k = seg[bad][0]
            raise QuadratureError(f"quadrature did not converge on the segment from "
                                  f"{st[k]} to {st[k] + d[k]}")
        sb, ab, wb = seg[bad], a[bad], w[bad] / 2
        seg = np.concatenate([sb, sb])
        a = np.concatenate([ab, ab + wb])
        w = np.concatenate([wb, wb])
        fa, fm, fb = (np.concatenate([fa[bad], fm[bad]]),
                      np.concatenate([fl[bad], fr[bad]]),
                      np.concatenate([fm[bad], fb[bad]]))
        whole = np.concatenate([left[bad], right[bad]])
    return acc


def segment_lengths(map: DevelopingMap, z1, z2, rtol: float = QUAD_RTOL,
                    rho_start=None) -> np.ndarray:
    """Vectorized adaptive Simpson of rho along straight segments z1 -> z2.

    Intervals are halved until successive estimates agree to ``rtol`` times
    the segment's share; more than ``QUAD_MAX_DEPTH`` halvings raises
    :class:`QuadratureError`.  ``rho_start`` optionally supplies rho at z1; all
    other samples are taken along the segment from z1, so that maps defined by
    integration see one consistent continuation per segment.  Segments longer
    than ``QUAD_MAX_PIECE`` are summed over equal pieces treated the same way.
    """
    z1 = np.asarray(z1, dtype=complex).ravel()
    z2 = np.broadcast_to(np.asarray(z2, dtype=complex).ravel(), z1.shape)
    dz = z2 - z1
    npieces = np.maximum(np.ceil(np.abs(dz) / QUAD_MAX_PIECE), 1).astype(int)
    if npieces.max() > 1:
        # long segments are cut into pieces, each continued from its own start,
        # so integration noise stays below the quadrature tolerance
        owner = np.repeat(np.arange(len(z1)), npieces)
        k = np.arange(owner.size) - np.repeat(np.cumsum(npieces) - npieces, npieces)
        frac = dz[owner] / npieces[owner]
        a, b = z1[owner] + k * frac, z1[owner] + (k + 1) * frac
        b[k == npieces[owner] - 1] = z2[owner][k == npieces[owner] - 1]
        rs = None
        if rho_start is not None:
            rs = np.full(owner.size, np.nan)
            first = k == 0
            rs[first] = np.asarray(rho_start, dtype=float).ravel()[owner[first]]
            rs[~first] = _rho_along(map, a[~first], np.zeros(int((~first).sum()), complex),
                                    np.zeros(1))[:, 0]
        pieces = segment_lengths(map, a, b, rtol, rs)
        return np.array([math.fsum(p) for p in np.split(pieces, np.cumsum(npieces)[:-1])])
    out = np.zeros(len(z1))
    live = np.flatnonzero(dz != 0)
    for lo in range(0, live.size, _SEG_CHUNK):
        idx = live[lo:lo + _SEG_CHUNK]
        st, d = z1[idx], dz[idx]
        if rho_start is None:
            f = _rho_along(map, st, d, np.array([0.0, 0.5, 1.0]))
        else:
            fa = np.asarray(rho_start, dtype=float).ravel()[idx]
            f = np.column_stack([fa, _rho_along(map, st, d, np.array([0.5, 1.0]))])
        if not np.all(np.isfinite(f)):
            raise QuadratureError("conformal factor is not finite on a segment")
        out[idx] = _simpson(map, st, d, f, rtol)
    return out


def segment_length(map: DevelopingMap, z1: complex, z2: complex) -> float:
    """Spherical length of the image of the straight segment [z1, z2]."""
    return float(segment_lengths(map, np.array([complex(z1)]), np.array([complex(z2)]))[0])


@dataclass
class PathPolyline:
    vertices: np.ndarray
    length: float
    segment_lengths: np.ndarray = field(repr=False, default=None)

    @classmethod
    def build(cls, map: DevelopingMap, vertices) -> "PathPolyline":
        v = np.asarray(vertices, dtype=complex).ravel()
        if v.size < 2:
            raise ValueError("a path needs at least two vertices")
        if not np.all(np.isfinite(v)):
            raise ValueError("path vertices must be finite")
        L = segment_lengths(map, v[:-1], v[1:])
        return cls(v, math.fsum(L), L)

    def to_csv(self, path, comments=()):
        cum = np.concatenate([[0.0], np.cumsum(self.segment_lengths)])
        rows = [(z.real, z.imag, c) for z, c in zip(self.vertices, cum)]
        return write_csv(path, ["x", "y", "s"], rows, comments)


def polyline_length(map: DevelopingMap, path) -> float:
    v = path.vertices if isinstance(path, PathPolyline) else path
    return PathPolyline.build(map, v).length


# --- lattice graphs ----------------------------------------------------------


@dataclass(frozen=True)
class GridWindow:
    """Lattice of nodes center + h (j - jc) + i h (i - ic); nodes are row-major from ymin."""

    center: complex
    rx: float
    ry: float
    h: float
    budget: int = DEFAULT_NODE_BUDGET

    def __post_init__(self):
        object.__setattr__(self, "center", complex(self.center))
        if not (self.h > 0 and self.rx > 0 and self.ry > 0):
            raise ValueError("window half-widths and spacing must be positive")
        if self.size > self.budget:
            raise BudgetExceededError(f"window has {self.size} nodes, budget {self.budget}")

    @classmethod
    def square(cls, R: float, h: float, center: complex = 0j, **kw) -> "GridWindow":
        return cls(center, R, R, h, **kw)

    @property
    def nx(self) -> int:
        return int(round(2 * self.rx / self.h)) + 1

    @property
    def ny(self) -> int:
        return int(round(2 * self.ry / self.h)) + 1

    @property
    def shape(self) -> tuple[int, int]:
        return self.ny, self.nx

    @property
    def size(self) -> int:
        return self.nx * self.ny

    @property
    def xs(self) -> np.ndarray:
        return self.center.real + self.h * (np.arange(self.nx) - (self.nx - 1) / 2)

    @property
    def ys(self) -> np.ndarray:
        return self.center.imag + self.h * (np.arange(self.ny) - (self.ny - 1) / 2)

    def points(self) -> np.ndarray:
        return (self.xs[None, :] + 1j * self.ys[:, None]).ravel()

    def node_point(self, index: int) -> complex:
        i, j = divmod(int(index), self.nx)
        return complex(self.xs[j], self.ys[i])

    def contains(self, z: complex, slack: float = 1e-12) -> bool:
        w = complex(z) - self.center
        return abs(w.real) <= self.rx + slack and abs(w.imag) <= self.ry + slack

    def nearest_node(self, z: complex) -> int:
        if not self.contains(z, self.h / 2):
            raise ValueError(f"point {z} lies outside the window")
        j = int(np.clip(np.rint((complex(z).real - self.xs[0]) / self.h), 0, self.nx - 1))
        i = int(np.clip(np.rint((complex(z).imag - self.ys[0]) / self.h), 0, self.ny - 1))
        return i * self.nx + j

    def boundary_seeds(self) -> list[int]:
        """Corners and edge midpoints."""
        ny, nx = self.shape
        cells = [(0, 0), (0, nx - 1), (ny - 1, 0), (ny - 1, nx - 1),
                 (0, nx // 2), (ny - 1, nx // 2), (ny // 2, 0), (ny // 2, nx - 1)]
        return list(dict.fromkeys(i * nx + j for i, j in cells))


class LatticeGraph:
    """Undirected 16-neighbor graph of a window with quadrature edge weights.

    Weights are computed for all edges at construction, one stencil direction
    at a time, each along the segment from its lower-index endpoint.
    """

    def __init__(self, map: DevelopingMap, window: GridWindow):
        self.map = map
        self.window = window
        ny, nx = window.shape
        pts = window.points()
        rho_nodes = np.exp(map.log_rho(pts))
        rows, cols, wts = [], [], []
        idx = np.arange(window.size).reshape(ny, nx)
        for dx, dy in STENCIL:
            i0, i1 = max(0, -dy), ny - max(0, dy)
            j0, j1 = max(0, -dx), nx - max(0, dx)
            if i1 <= i0 or j1 <= j0:
                continue
            a = idx[i0:i1, j0:j1].ravel()
            b = idx[i0 + dy:i1 + dy, j0 + dx:j1 + dx].ravel()
            w = segment_lengths(map, pts[a], pts[b], rho_start=rho_nodes[a])
            rows.append(a)
            cols.append(b)
            wts.append(np.maximum(w, _MIN_WEIGHT))
        self.rows = np.concatenate(rows)
        self.cols = np.concatenate(cols)
        self.weights = np.concatenate(wts)
        n = window.size
        upper = csr_matrix((self.weights, (self.rows, self.cols)), shape=(n, n))
        self.matrix = (upper + upper.T).tocsr()

    def distance_field(self, source: int) -> "DistanceField":
        d, pred = dijkstra(self.matrix, directed=True, indices=int(source),
                           return_predecessors=True)
        return DistanceField(self.window, int(source), d, pred, self)


@dataclass
class DistanceField:
    window: GridWindow
    source: int
    d: np.ndarray
    predecessor: np.ndarray
    graph: LatticeGraph = field(repr=False, default=None)

    def node_path(self, target: int) -> list[int]:
        if not np.isfinite(self.d[target]):
            raise ValueError("target is unreachable")
        path = [int(target)]
        while path[-1] != self.source:
            path.append(int(self.predecessor[path[-1]]))
        return path[::-1]

    def path_points(self, target: int) -> np.ndarray:
        pts = self.window.points()
        return pts[self.node_path(target)]

    def grid(self) -> np.ndarray:
        return self.d.reshape(self.window.shape)

    def to_csv(self, path, comments=()):
        pts = self.window.points()
        rows = ((z.real, z.imag, v) for z, v in zip(pts, self.d))
        return write_csv(path, ["x", "y", "d"], rows, comments)

    def to_pgm(self, path, comments=()):
        # flip so that the top row is the largest y
        return write_pgm(path, self.grid()[::-1], comments)


def distance_field(map: DevelopingMap, window: GridWindow, source: complex,
                   graph: LatticeGraph | None = None) -> DistanceField:
    if not window.contains(source):
        raise ValueError("source must lie inside the window")
    graph = LatticeGraph(map, window) if graph is None else graph
    return graph.distance_field(window.nearest_node(source))


# --- path refinement ---------------------------------------------------------


def _perturbations(p, v, n, tau):
    t = n - p
    norm = np.abs(t)
    t = np.where(norm > 0, t / np.where(norm > 0, norm, 1), 1.0)
    q = 1j * t
    m = 0.5 * (p + n)
    return np.column_stack([m, v + 0.5 * (m - v), v + tau * q, v - tau * q,
                            v + tau * t, v - tau * t])


def refine_path(map: DevelopingMap, path, iterations: int = 20) -> PathPolyline:
    """Shorten a polyline with fixed endpoints by local vertex moves.

    Each sweep tries dropping vertices, then moves even- and odd-numbered
    interior vertices toward neighbor midpoints and along local directions.
    A batch is kept only if the total length does not increase, so the length
    is non-increasing after every step.
    """
    cur = path if isinstance(path, PathPolyline) else PathPolyline.build(map, path)
    if iterations <= 0:
        return cur
    v = cur.vertices.copy()
    L = cur.segment_lengths.copy()
    total = cur.length
    tau = None

    def commit(v_new, L_new):
        nonlocal v, L, total
        t_new = math.fsum(L_new)
        if t_new <= total:
            v, L, total = v_new, L_new, t_new
            return True
        return False

    for _ in range(iterations):
        improved = False
        before = total
        # vertex removal on non-adjacent interior vertices
        for parity in (1, 2):
            k = np.arange(parity, len(v) - 1, 2)
            if k.size == 0:
                continue
            short = segment_lengths(map, v[k - 1], v[k + 1])
            drop = short <= L[k - 1] + L[k]
            if drop.any():
                keep = np.ones(len(v), bool)
                keep[k[drop]] = False
                L_new = L.copy()
                L_new[k[drop] - 1] = short[drop]
                L_new = np.delete(L_new, k[drop])
                if commit(v[keep], L_new):
                    improved = True
                    tau = None
        if len(v) <= 2:
            break
        if tau is None or len(tau) != len(v):
            tau = np.zeros(len(v))
            tau[1:-1] = 0.25 * (np.abs(v[1:-1] - v[:-2]) + np.abs(v[2:] - v[1:-1])) / 2
        for parity in (1, 2):
            k = np.arange(parity, len(v) - 1, 2)
            if k.size == 0:
                continue
            cand = _perturbations(v[k - 1], v[k], v[k + 1], tau[k])
            nc = cand.shape[1]
            first = segment_lengths(map, np.repeat(v[k - 1], nc), cand.ravel()).reshape(-1, nc)
            second = segment_lengths(map, cand.ravel(), np.repeat(v[k + 1], nc)).reshape(-1, nc)
            local = first + second
            best = np.argmin(local, axis=1)
            rows = np.arange(k.size)
            better = local[rows, best] < L[k - 1] + L[k]
            tau[k[~better]] *= 0.5
            if better.any():
                kk, bb = k[better], best[better]
                v_new = v.copy()
                v_new[kk] = cand[rows[better], bb]
                L_new = L.copy()
                L_new[kk - 1] = first[rows[better], bb]
                L_new[kk] = second[rows[better], bb]
                if commit(v_new, L_new):
                    improved = True
        if not improved and np.all(tau[1:-1] < 1e-9):
            break
        # gains far below the quadrature tolerance are not worth another sweep
        if before - total <= REFINE_STALL * total:
            break
    return PathPolyline(v, total, L)


# --- distances and diameters -------------------------------------------------


def geodesic_path(map: DevelopingMap, window: GridWindow, p: complex, q: complex,
                  iterations: int = 30, graph: LatticeGraph | None = None) -> PathPolyline:
    """Refined lattice shortest path from p to q (both inside the window)."""
    p, q = complex(p), complex(q)
    if not (window.contains(p) and window.contains(q)):
        raise ValueError("p and q must lie inside the window")
    if p == q:
        return PathPolyline(np.array([p, q]), 0.0, np.zeros(1))
    field_ = distance_field(map, window, p, graph)
    nodes = list(field_.path_points(window.nearest_node(q)))
    verts = [p] + [z for z in nodes if z != p and z != q] + [q]
    return refine_path(map, verts, iterations)


def point_distance(map: DevelopingMap, window: GridWindow, p: complex, q: complex,
                   iterations: int = 30, graph: LatticeGraph | None = None) -> float:
    return geodesic_path(map, window, p, q, iterations, graph).length


@dataclass
class DiameterResult:
    value: float
    pair: tuple
    lattice_value: float
    path: PathPolyline = field(repr=False)
    window: GridWindow = None
    image_distance: float = 0.0
    nested_value: float | None = None


def diameter_estimate(map: DevelopingMap, window: GridWindow, sweeps: int = 3,
                      refine_iterations: int = 30, candidates: int = 3,
                      graph: LatticeGraph | None = None) -> DiameterResult:
    """Farthest-point sweeps from boundary seeds, then refinement of the best pairs.

    The value is the refined length of the best candidate pair, an upper bound
    for the distance between that pair.
    """
    if sweeps < 2:
        raise ValueError("need at least two sweeps")
    graph = LatticeGraph(map, window) if graph is None else graph
    pairs = {}
    for seed in window.boundary_seeds():
        cur = seed
        for _ in range(sweeps):
            fld = graph.distance_field(cur)
            d = np.where(np.isfinite(fld.d), fld.d, -np.inf)
            far = int(np.argmax(d))
            key = (min(cur, far), max(cur, far))
            if key not in pairs or pairs[key][0] < d[far]:
                pairs[key] = (float(d[far]), fld)
            if far == cur:
                break
            cur = far
    ranked = sorted(pairs.items(), key=lambda kv: -kv[1][0])[:candidates]
    best = None
    for (a, b), (dval, fld) in ranked:
        target = b if fld.source == a else a
        pts = fld.path_points(target)
        path = refine_path(map, pts, refine_iterations)
        if best is None or path.length > best.value:
            pa, pb = complex(pts[0]), complex(pts[-1])
            img = float(spherical_distance_array(map.values(np.array([pa])),
                                                 map.values(np.array([pb])))[0])
            best = DiameterResult(path.length, (pa, pb), dval, path, window, img)
    return best


def nested_diameters(map: DevelopingMap, radii: Sequence[float], h: float,
                     center: complex = 0j, **kw) -> list[DiameterResult]:
    """Estimates over growing square windows.

    A pair examined inside a smaller window stays admissible in every larger
    one, so ``nested_value`` carries the best refined length forward.
    """
    out, best = [], -math.inf
    for R in sorted(radii):
        r = diameter_estimate(map, GridWindow.square(R, h, center), **kw)
        best = max(best, r.value)
        r.nested_value = best
        out.append(r)
    return out


@dataclass
class GrowthReport:
    anchors: np.ndarray
    distances: np.ndarray
    running_max: np.ndarray
    slope: float
    lattice_distances: np.ndarray


def crossing_growth_experiment(map: DevelopingMap, anchors: Sequence[complex],
                               window: GridWindow, refine_iterations: int = 20) -> GrowthReport:
    """d(x_0, x_k) for k = 1..K with a least-squares slope against k.

    Distances come from one lattice field rooted at x_0 followed by path
    refinement; ``running_max`` is the monotone envelope of the sequence.
    """
    anchors = np.asarray(anchors, dtype=complex).ravel()
    if anchors.size < 3:
        raise ValueError("need at least three anchor points")
    for a in anchors:
        if not window.contains(a):
            raise ValueError(f"anchor {a} lies outside the window")
    graph = LatticeGraph(map, window)
    fld = graph.distance_field(window.nearest_node(anchors[0]))
    dist, lat = [], []
    for a in anchors[1:]:
        node = window.nearest_node(a)
        lat.append(float(fld.d[node]))
        nodes = list(fld.path_points(node))
        verts = [anchors[0]] + [z for z in nodes if z != anchors[0] and z != a] + [a]
        dist.append(refine_path(map, verts, refine_iterations).length)
    dist = np.array(dist)
    k = np.arange(1, len(dist) + 1)
    slope = float(np.polyfit(k, dist, 1)[0])
    return GrowthReport(anchors, dist, np.maximum.accumulate(dist), slope, np.array(lat))
