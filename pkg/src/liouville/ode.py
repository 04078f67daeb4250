"""The linear equation w'' + A w = 0 in the complex plane.

Solutions are continued along straight segments with a vectorized embedded
Runge-Kutta pair (Dormand-Prince 8(5,3)).  A solution frame holds the values
(f1, f1', f2, f2') of a basis scaled to unit max modulus, plus a real
log-scale ``kappa``; the true values are ``exp(kappa) * scaled``.  Since A is
entire, continuation is independent of the path.  Short hops from a known
frame to many nearby points use one Taylor expansion per frame instead, with
a fallback to the Runge-Kutta pair wherever the series is not trustworthy.
"""

from __future__ import annotations

import cmath
import math
import threading
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from scipy.integrate._ivp import dop853_coefficients as _dop

from .maps import LOG2, DevelopingMap, MapEvaluationError
from .sphere import MobiusTransform, chordal_distance_array

# --- coefficients ------------------------------------------------------------


@dataclass(frozen=True)
class Polynomial:
    """A(z) = sum c_k z^k, coefficients in ascending powers."""

    coefficients: tuple

    def __post_init__(self):
        c = [complex(x) for x in self.coefficients]
        while len(c) > 1 and c[-1] == 0:
            c.pop()
        if not c:
            c = [0j]
        object.__setattr__(self, "coefficients", tuple(c))

    @property
    def degree(self) -> int:
        return len(self.coefficients) - 1 if any(self.coefficients) else -1

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        out = np.full(z.shape, self.coefficients[-1], dtype=complex)
        for c in reversed(self.coefficients[:-1]):
            out = out * z + c
        return out

    def derivative(self) -> "Polynomial":
        c = self.coefficients
        return Polynomial([k * c[k] for k in range(1, len(c))] or [0])

    def roots(self) -> np.ndarray:
        if self.degree < 1:
            return np.array([], dtype=complex)
        return np.roots(self.coefficients[::-1])

    def to_json(self):
        return [[c.real, c.imag] for c in self.coefficients]

    def taylor(self, c) -> np.ndarray:
        """Coefficients of A(c + t) in powers of t, shape (degree + 1, len(c))."""
        c = np.asarray(c, dtype=complex).ravel()
        b = np.tile(np.array(self.coefficients, dtype=complex)[:, None], (1, len(c)))
        d = len(self.coefficients) - 1
        for i in range(d):
            for j in range(d - 1, i - 1, -1):
                b[j] += c * b[j + 1]
        return b


@dataclass(frozen=True)
class MathieuPotential:
    """A(z) = cos(2 pi z / period) + lam; the default period 4 pi gives cos(z/2)."""

    lam: complex
    period: float = 4 * math.pi

    def __post_init__(self):
        object.__setattr__(self, "lam", complex(self.lam))
        if not self.period > 0:
            raise ValueError("period must be positive")

    def __call__(self, z):
        return np.cos((2 * math.pi / self.period) * np.asarray(z, dtype=complex)) + self.lam

    def derivative(self):
        k = 2 * math.pi / self.period
        return lambda z: -k * np.sin(k * np.asarray(z, dtype=complex))

    def roots(self) -> np.ndarray:
        return np.array([], dtype=complex)

    def taylor(self, c) -> np.ndarray:
        """Coefficients of A(c + t) in powers of t, truncated where they fall below 1e-20."""
        c = np.asarray(c, dtype=complex).ravel()
        k = 2 * math.pi / self.period
        x = k * c
        bound = np.exp(np.abs(x.imag)).max(initial=1.0)
        rows, fact, j = [], 1.0, 0
        while True:
            phase = (np.cos(x), -np.sin(x), -np.cos(x), np.sin(x))[j % 4]
            rows.append(k ** j / fact * phase)
            j += 1
            fact *= j
            if k ** j / fact * bound < 1e-20 * (1 + abs(self.lam)):
                break
        rows[0] = rows[0] + self.lam
        return np.array(rows)


Coefficient = Union[Polynomial, MathieuPotential]

CANONICAL_FRAME = (1.0, 0.0, 0.0, 1.0)


def wronskian(frame) -> complex:
    """W = f1' f2 - f1 f2' for a frame (f1, f1', f2, f2')."""
    f1, d1, f2, d2 = frame
    return d1 * f2 - f1 * d2


@dataclass(frozen=True)
class LinearOdeProblem:
    """w'' + A w = 0 with a basis given by its frame at the basepoint ``z0``.

    The frame is rescaled at construction so that its Wronskian is 1.  Scaling
    both solutions by the same factor leaves the ratio f1/f2 unchanged.
    """

    A: Coefficient
    z0: complex = 0j
    frame: tuple = CANONICAL_FRAME
    rtol: float = 1e-10

    def __post_init__(self):
        frame = CANONICAL_FRAME if self.frame is None else self.frame
        fr = np.array([complex(x) for x in frame])
        if fr.shape != (4,):
            raise ValueError("frame needs four complex values (f1, f1', f2, f2')")
        W = wronskian(fr)
        if abs(W) < 1e-14:
            raise ValueError("frame solutions are linearly dependent")
        fr = fr / cmath.sqrt(W)
        object.__setattr__(self, "frame", tuple(complex(x) for x in fr))
        object.__setattr__(self, "z0", complex(self.z0))
        if not 0 < self.rtol < 1e-3:
            raise ValueError("rtol must lie in (0, 1e-3)")

    def with_frame(self, frame) -> "LinearOdeProblem":
        return LinearOdeProblem(self.A, self.z0, tuple(frame), self.rtol)


class IntegrationError(MapEvaluationError):
    def __init__(self, message: str, location: complex | None = None):
        super().__init__(message)
        self.location = location


@dataclass
class SolutionFrame:
    """Basis values at ``z``; true values are ``exp(kappa) * scaled``."""

    z: complex
    scaled: np.ndarray
    kappa: float

    @property
    def values(self) -> np.ndarray:
        return np.exp(self.kappa) * self.scaled

    f1 = property(lambda self: self.values[0])
    df1 = property(lambda self: self.values[1])
    f2 = property(lambda self: self.values[2])
    df2 = property(lambda self: self.values[3])

    @property
    def ratio(self) -> complex:
        f1, _, f2, _ = self.scaled
        return complex(np.inf) if f2 == 0 else complex(f1 / f2)

    @property
    def log_rho(self) -> float:
        f1, _, f2, _ = self.scaled
        return LOG2 - 2 * self.kappa - math.log(abs(f1) ** 2 + abs(f2) ** 2)

    def wronskian_drift(self) -> float:
        """|W - 1| relative to the size of the products forming W."""
        f1, d1, f2, d2 = self.scaled
        target = math.exp(-2 * self.kappa) if self.kappa < 350 else 0.0
        scale = abs(d1 * f2) + abs(f1 * d2)
        return abs(wronskian(self.scaled) - target) / scale


# --- integrator --------------------------------------------------------------

_A = _dop.A[:_dop.N_STAGES, :_dop.N_STAGES]
_B = _dop.B
_C = _dop.C[:_dop.N_STAGES]
_E3 = _dop.E3
_E5 = _dop.E5
_ORDER = 8
_CHUNK = 40_000
_MAX_ITER = 2_000_000
_MIN_STEP = 1e-13
# local error per step is held at this fraction of the requested relative
# tolerance so that the accumulated Wronskian drift over long oscillatory
# paths stays below the tolerance itself
_LOCAL_SAFETY = 0.01


def _rhs(A, z, y, dz):
    a = A(z)
    out = np.empty_like(y)
    out[:, 0] = dz * y[:, 1]
    out[:, 1] = -dz * a * y[:, 0]
    out[:, 2] = dz * y[:, 3]
    out[:, 3] = -dz * a * y[:, 2]
    return out


def _renormalize(y, kappa):
    m = np.abs(y).max(axis=1)
    bad = (m > 2.0) | (m < 0.5)
    if np.any(bad):
        m = np.where(bad, m, 1.0)
        y /= m[:, None]
        kappa += np.log(m)


def _propagate_chunk(A, y, kappa, za, zb, rtol):
    n = len(za)
    dz = zb - za
    s = np.zeros(n)
    length = np.abs(dz)
    a0 = np.abs(A(za))
    h = np.minimum(1.0, 1.0 / np.maximum(length * (1.0 + np.sqrt(a0)), 1e-300))
    h = np.where(length == 0, 1.0, h)
    active = np.flatnonzero(length > 0)
    f = np.empty_like(y)
    if active.size:
        f[active] = _rhs(A, za[active], y[active], dz[active])
    K = np.empty((_dop.N_STAGES + 1, n, 4), dtype=complex)
    it = 0
    while active.size:
        it += 1
        if it > _MAX_ITER:
            raise IntegrationError("too many integration steps", complex(zb[active[0]]))
        ya, sa, dza, zaa = y[active], s[active], dz[active], za[active]
        ha = np.minimum(h[active], 1.0 - sa)
        Ka = K[:, : active.size]
        Ka[0] = f[active]
        for st in range(1, _dop.N_STAGES):
            dy = np.tensordot(_A[st, :st], Ka[:st], axes=(0, 0)) * ha[:, None]
            Ka[st] = _rhs(A, zaa + (sa + _C[st] * ha) * dza, ya + dy, dza)
        y_new = ya + ha[:, None] * np.tensordot(_B, Ka[:_dop.N_STAGES], axes=(0, 0))
        Ka[-1] = _rhs(A, zaa + (sa + ha) * dza, y_new, dza)
        scale = rtol * np.maximum(np.abs(ya).max(axis=1), np.abs(y_new).max(axis=1))
        e5 = np.tensordot(_E5, Ka, axes=(0, 0)) / scale[:, None]
        e3 = np.tensordot(_E3, Ka, axes=(0, 0)) / scale[:, None]
        n5 = (np.abs(e5) ** 2).sum(axis=1)
        n3 = (np.abs(e3) ** 2).sum(axis=1)
        denom = n5 + 0.01 * n3
        with np.errstate(invalid="ignore", divide="ignore"):
            err = np.where(denom > 0, ha * n5 / np.sqrt(denom * 4), 0.0)
        ok = np.isfinite(err) & (err <= 1.0) & np.all(np.isfinite(y_new), axis=1)
        with np.errstate(divide="ignore"):
            factor = np.where(err > 0, 0.9 * err ** (-1.0 / _ORDER), 10.0)
        factor = np.clip(np.nan_to_num(factor, nan=0.2), 0.2, 10.0)
        factor = np.where(ok, factor, np.minimum(factor, 1.0))
        h[active] = ha * factor
        acc = active[ok]
        if acc.size:
            end = ha[ok] >= 1.0 - sa[ok]
            s[acc] = np.where(end, 1.0, sa[ok] + ha[ok])
            ynew = y_new[ok]
            fnew = Ka[-1][ok]
            m = np.abs(ynew).max(axis=1)
            bad = (m > 2.0) | (m < 0.5)
            m = np.where(bad, m, 1.0)
            y[acc] = ynew / m[:, None]
            f[acc] = fnew / m[:, None]
            kappa[acc] += np.log(m)
        rej = active[~ok]
        if rej.size and np.any(h[rej] < _MIN_STEP):
            i = rej[np.argmax(h[rej] < _MIN_STEP)]
            raise IntegrationError(
                "step size underflow", complex(za[i] + s[i] * dz[i]))
        active = active[s[active] < 1.0]
    return y, kappa


def propagate(A, y, kappa, za, zb, rtol=1e-10):
    """Continue frames ``y`` (shape (n, 4)) at ``za`` to ``zb`` along straight lines."""
    y = np.array(y, dtype=complex, ndmin=2)
    kappa = np.array(kappa, dtype=float, ndmin=1).copy()
    za = np.broadcast_to(np.asarray(za, dtype=complex), kappa.shape).copy()
    zb = np.broadcast_to(np.asarray(zb, dtype=complex), kappa.shape).copy()
    _renormalize(y, kappa)
    for lo in range(0, len(kappa), _CHUNK):
        sl = slice(lo, lo + _CHUNK)
        y[sl], kappa[sl] = _propagate_chunk(A, y[sl], kappa[sl], za[sl], zb[sl],
                                            rtol * _LOCAL_SAFETY)
    return y, kappa


_TAYLOR_MAX_TERMS = 120
_EPS = np.finfo(float).eps


def taylor_propagate(A, y, kappa, za, offsets, rtol=1e-10):
    """Frames at ``za[i] + offsets[i, j]`` from one Taylor expansion per row.

    The basis coefficients follow from (k+2)(k+1) w_{k+2} = -sum_j a_j w_{k-j}.
    Returns ``(y, kappa, ok)`` with shapes (m, n, 4), (m, n), (m,); rows whose
    series does not converge within the term budget, or whose evaluation may
    lose more than the local tolerance to cancellation, have ``ok`` False and
    undefined values.
    """
    y = np.asarray(y, dtype=complex)
    offsets = np.asarray(offsets, dtype=complex)
    m, n_off = offsets.shape
    a = A.taylor(za)
    r = np.abs(offsets).max(axis=1)
    W = np.zeros((_TAYLOR_MAX_TERMS, m, 2), dtype=complex)
    W[0], W[1] = y[:, [0, 2]], y[:, [1, 3]]
    ssum, dsum = np.abs(W[0]).max(axis=1), np.zeros(m)
    rk = np.ones(m)
    converged = np.zeros(m, bool)
    quiet = np.zeros(m, int)
    K = _TAYLOR_MAX_TERMS
    # overflowing rows turn non-finite and are reported through ``ok``
    with np.errstate(all="ignore"):
        for k in range(1, _TAYLOR_MAX_TERMS):
            if k >= 2:
                q = k - 2
                j = min(q, len(a) - 1)
                W[k] = -np.einsum("jm,jmi->mi", a[: j + 1], W[q::-1][: j + 1]) / (k * (k - 1))
            rk = rk * r
            term = np.abs(W[k]).max(axis=1) * rk
            ssum += term
            dsum += k * term / np.maximum(r, 1e-300)
            quiet = np.where(term <= 1e-18 * ssum, quiet + 1, 0)
            converged |= quiet >= 3
            if converged.all():
                K = k + 1
                break
        W = W[:K]
        t = offsets[:, :, None]
        v = np.broadcast_to(W[-1][:, None, :], (m, n_off, 2)).copy()
        dv = (K - 1) * v
        for k in range(K - 2, -1, -1):
            v = v * t + W[k][:, None, :]
            if k >= 1:
                dv = dv * t + k * W[k][:, None, :]
        out = np.empty((m, n_off, 4), dtype=complex)
        out[..., 0], out[..., 2] = v[..., 0], v[..., 1]
        out[..., 1], out[..., 3] = dv[..., 0], dv[..., 1]
        loss = 4 * K * _EPS * (ssum + dsum) / np.abs(out).max(axis=2).min(axis=1)
        ok = (converged & np.isfinite(loss) & (loss <= rtol * _LOCAL_SAFETY)
              & np.all(np.isfinite(out), axis=(1, 2)))
        out = out.reshape(m * n_off, 4)
        kap = np.repeat(np.asarray(kappa, dtype=float), n_off)
        _renormalize(out, kap)
    return out.reshape(m, n_off, 4), kap.reshape(m, n_off), ok


def propagate_local(A, y, kappa, za, offsets, rtol=1e-10):
    """Frames at ``za[i] + offsets[i, j]``: Taylor expansion where it resolves, else Runge-Kutta."""
    y = np.asarray(y, dtype=complex)
    offsets = np.asarray(offsets, dtype=complex)
    m, n_off = offsets.shape
    if hasattr(A, "taylor") and m:
        yo, ko, ok = taylor_propagate(A, y, kappa, za, offsets, rtol)
    else:
        yo = np.empty((m, n_off, 4), dtype=complex)
        ko = np.empty((m, n_off))
        ok = np.zeros(m, bool)
    bad = np.flatnonzero(~ok)
    if bad.size:
        zs = np.repeat(za[bad], n_off)
        yb, kb = propagate(A, np.repeat(y[bad], n_off, axis=0), np.repeat(kappa[bad], n_off),
                           zs, zs + offsets[bad].reshape(-1), rtol)
        yo[bad] = yb.reshape(bad.size, n_off, 4)
        ko[bad] = kb.reshape(bad.size, n_off)
    return yo.reshape(m * n_off, 4), ko.reshape(m * n_off)


def integrate_along(problem: LinearOdeProblem, path: Sequence[complex],
                    rtol: float | None = None) -> SolutionFrame:
    """Continue the problem's basis from ``z0`` along a polyline."""
    pts = [complex(p) for p in path]
    if len(pts) < 1 or abs(pts[0] - problem.z0) > 1e-12 * (1 + abs(problem.z0)):
        raise ValueError("path must start at the basepoint z0")
    rtol = problem.rtol if rtol is None else rtol
    y = np.array([problem.frame], dtype=complex)
    kappa = np.zeros(1)
    for a, b in zip(pts[:-1], pts[1:]):
        y, kappa = propagate(problem.A, y, kappa, a, b, rtol)
    return SolutionFrame(pts[-1], y[0].copy(), float(kappa[0]))


def frames_from_basepoint(problem: LinearOdeProblem, points) -> tuple[np.ndarray, np.ndarray]:
    """Frames at many points, each reached by a straight segment from ``z0``."""
    pts = np.asarray(points, dtype=complex).ravel()
    y = np.tile(np.array(problem.frame, dtype=complex), (len(pts), 1))
    return propagate(problem.A, y, np.zeros(len(pts)), problem.z0, pts, problem.rtol)


# --- ratio developing maps ---------------------------------------------------


def _log_rho_from(y, kappa):
    return LOG2 - 2 * kappa - np.log(np.abs(y[:, 0]) ** 2 + np.abs(y[:, 2]) ** 2)


def _ratio_from(y):
    f1, f2 = y[:, 0], y[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        out = f1 / f2
    return np.where(f2 == 0, complex(np.inf, 0), out)


_POINT_MEMO_LIMIT = 1_000_000


class _AnchorStore:
    """Memoized frames on the lattice z0 + spacing * (m + i n).

    Anchors are filled ring by ring (in the max norm), each continued from its
    predecessor on the previous ring along nearly the same ray from z0.  Along
    such paths the solutions grow monotonically in the decay sectors, so no
    precision is lost to cancellation of large intermediate values.  Entries
    never change once stored.  Frames at other points are continued from the
    nearest anchor and memoized.
    """

    def __init__(self, problem: LinearOdeProblem, spacing: float):
        self.problem = problem
        self.spacing = spacing
        frame = np.array(problem.frame, dtype=complex)
        self._frames: dict[tuple[int, int], tuple[np.ndarray, float]] = {(0, 0): (frame, 0.0)}
        self._points: dict[complex, tuple[np.ndarray, float]] = {}
        self._lock = threading.RLock()

    def point(self, m, n):
        return self.problem.z0 + self.spacing * (np.asarray(m) + 1j * np.asarray(n))

    def nearest(self, z):
        w = (np.asarray(z, dtype=complex) - self.problem.z0) / self.spacing
        return np.rint(w.real).astype(np.int64), np.rint(w.imag).astype(np.int64)

    def _march(self, sources, targets):
        ys = np.array([self._frames[k][0] for k in sources])
        ks = np.array([self._frames[k][1] for k in sources])
        za = self.point(*np.array(sources).T)
        zb = self.point(*np.array(targets).T)
        y, kap = propagate(self.problem.A, ys, ks, za, zb, self.problem.rtol)
        for i, key in enumerate(targets):
            self._frames[key] = (y[i].copy(), float(kap[i]))

    @staticmethod
    def predecessor(key):
        """The neighbor one square ring closer to the basepoint, on the same ray."""
        m, n = key
        k = max(abs(m), abs(n))
        return int(np.rint(m * (k - 1) / k)), int(np.rint(n * (k - 1) / k))

    def ensure(self, ms, ns):
        with self._lock:
            missing = set()
            frontier = set(zip(ms.tolist(), ns.tolist()))
            while frontier:
                frontier = {key for key in frontier
                            if key not in self._frames and key not in missing}
                missing |= frontier
                frontier = {self.predecessor(key) for key in frontier}
            rings = {}
            for key in missing:
                rings.setdefault(max(abs(key[0]), abs(key[1])), []).append(key)
            for k in sorted(rings):
                targets = sorted(rings[k])
                self._march([self.predecessor(t) for t in targets], targets)

    def _from_anchors(self, z):
        m, n = self.nearest(z)
        self.ensure(m, n)
        ys = np.empty((len(z), 4), dtype=complex)
        ks = np.empty(len(z))
        with self._lock:
            for i, key in enumerate(zip(m.tolist(), n.tolist())):
                ys[i], ks[i] = self._frames[key]
        za = self.point(m, n)
        return propagate_local(self.problem.A, ys, ks, za, (z - za)[:, None], self.problem.rtol)

    def frames(self, z):
        """Frames at arbitrary points, memoized per point."""
        z = np.asarray(z, dtype=complex).ravel()
        ys = np.empty((len(z), 4), dtype=complex)
        ks = np.empty(len(z))
        with self._lock:
            hits = [self._points.get(v) for v in z.tolist()]
        miss = [i for i, hit in enumerate(hits) if hit is None]
        for i, hit in enumerate(hits):
            if hit is not None:
                ys[i], ks[i] = hit
        if miss:
            y, k = self._from_anchors(z[miss])
            ys[miss], ks[miss] = y, k
            with self._lock:
                if len(self._points) + len(miss) > _POINT_MEMO_LIMIT:
                    self._points.clear()
                for j, i in enumerate(miss):
                    self._points[complex(z[i])] = (y[j].copy(), float(k[j]))
        return ys, ks


class OdeRatio(DevelopingMap):
    """f = f1 / f2 for a unit-Wronskian basis of w'' + A w = 0.

    With W = f1' f2 - f1 f2' = 1 the derivative is f' = 1 / f2^2, so the
    conformal factor is 2 / (|f1|^2 + |f2|^2), finite at the poles of f.
    """

    kind = "ode_ratio"

    def __init__(self, problem: LinearOdeProblem, anchor_spacing: float = 0.5):
        self.problem = problem
        self.anchor_spacing = anchor_spacing
        self._store = _AnchorStore(problem, anchor_spacing)

    @property
    def A(self):
        return self.problem.A

    def frames(self, z):
        z = np.asarray(z, dtype=complex)
        y, k = self._store.frames(z.ravel())
        return y, k

    def frame(self, z) -> SolutionFrame:
        y, k = self.frames(np.array([complex(z)]))
        return SolutionFrame(complex(z), y[0], float(k[0]))

    def values(self, z):
        z = np.asarray(z, dtype=complex)
        y, _ = self.frames(z)
        return _ratio_from(y).reshape(z.shape)

    def log_rho(self, z):
        z = np.asarray(z, dtype=complex)
        y, k = self.frames(z)
        return _log_rho_from(y, k).reshape(z.shape)

    def _local(self, centers, offsets):
        c = np.asarray(centers, dtype=complex).ravel()
        o = np.asarray(offsets, dtype=complex)
        if o.ndim == 1:
            o = np.broadcast_to(o, (len(c), len(o)))
        yc, kc = self.frames(c)
        y, k = propagate_local(self.problem.A, yc, kc, c, o, self.problem.rtol)
        return y, k, (len(c), o.shape[1])

    def u_local(self, centers, offsets):
        y, k, shape = self._local(centers, offsets)
        return _log_rho_from(y, k).reshape(shape)

    def values_local(self, centers, offsets):
        y, _, shape = self._local(centers, offsets)
        return _ratio_from(y).reshape(shape)

    def rotated(self, R: MobiusTransform):
        f1, d1, f2, d2 = self.problem.frame
        frame = (R.a * f1 + R.b * f2, R.a * d1 + R.b * d2,
                 R.c * f1 + R.d * f2, R.c * d1 + R.d * d2)
        return type(self)(self.problem.with_frame(frame), self.anchor_spacing)

    def to_description(self):
        p = self.problem
        d = {"kind": self.kind, "z0": [p.z0.real, p.z0.imag],
             "frame": [[c.real, c.imag] for c in p.frame], "rtol": p.rtol}
        if isinstance(p.A, Polynomial):
            d["A"] = p.A.to_json()
        return d

    def __repr__(self):
        return f"{type(self).__name__}(A={self.problem.A}, z0={self.problem.z0})"


class MathieuRatio(OdeRatio):
    """Ratio of two solutions of w'' + (cos(2 pi z / P) + lam) w = 0."""

    kind = "mathieu"

    def __init__(self, problem: LinearOdeProblem, anchor_spacing: float = 0.5):
        if not isinstance(problem.A, MathieuPotential):
            raise ValueError("MathieuRatio needs a Mathieu potential")
        super().__init__(problem, anchor_spacing)

    @classmethod
    def from_lambda(cls, lam: complex, period: float = 4 * math.pi, **kw) -> "MathieuRatio":
        return cls(LinearOdeProblem(MathieuPotential(lam, period), **kw))

    @property
    def lam(self) -> complex:
        return self.problem.A.lam

    def to_description(self):
        d = super().to_description()
        d["lambda"] = [self.lam.real, self.lam.imag]
        d["period"] = self.problem.A.period
        return d


def ode_ratio_map(problem: LinearOdeProblem) -> OdeRatio:
    if isinstance(problem.A, MathieuPotential):
        return MathieuRatio(problem)
    return OdeRatio(problem)


# --- Liouville transformation and WKB ----------------------------------------

_GL_X, _GL_W = np.polynomial.legendre.leggauss(10)
_GL_X = 0.5 * (_GL_X + 1.0)
_GL_W = 0.5 * _GL_W


def _check_path_avoids_zeros(A: Coefficient, pts: np.ndarray, radius=1e-6):
    roots = A.roots() if hasattr(A, "roots") else np.array([])
    for a, b in zip(pts[:-1], pts[1:]):
        d = b - a
        for r in roots:
            t = 0.0 if d == 0 else min(max(((r - a) * np.conj(d)).real / abs(d) ** 2, 0.0), 1.0)
            if abs(a + t * d - r) < radius:
                raise ValueError(f"path passes within {radius} of the zero {r} of A")


def _continued_quarter_root(A, samples: np.ndarray) -> np.ndarray:
    av = A(samples)
    q = av ** 0.25
    # choose i^k q_j nearest the previous choice; the principal roots of
    # neighbouring samples differ by a near-multiple of a quarter turn
    steps = np.rint(-np.angle(q[1:] / q[:-1]) / (math.pi / 2)).astype(np.int64)
    k = np.concatenate([[0], np.cumsum(steps)])
    return q * (1j ** (k % 4))


@dataclass
class WkbFrame:
    z: complex
    Z: complex
    u1: complex
    u2: complex
    du1: complex
    du2: complex
    sqrt_A: complex
    quarter_A: complex

    @property
    def wronskian(self) -> complex:
        return self.u1 * self.du2 - self.du1 * self.u2


def _liouville(A: Coefficient, z: complex, zref: complex, path=None, tol=1e-12):
    pts = np.array([zref] + ([] if path is None else list(path)) + [z], dtype=complex)
    keep = np.concatenate([[True], np.abs(np.diff(pts)) > 0])
    pts = pts[keep] if len(pts[keep]) > 1 else np.array([zref, z], dtype=complex)
    _check_path_avoids_zeros(A, pts)
    if abs(complex(A(np.array([zref]))[0])) == 0:
        raise ValueError("reference point is a zero of A")
    n_sub = 8
    prev = None
    for _ in range(14):
        seq, wts = [], []
        for a, b in zip(pts[:-1], pts[1:]):
            edges = a + (b - a) * np.linspace(0.0, 1.0, n_sub + 1)
            for lo, hi in zip(edges[:-1], edges[1:]):
                seq.append([lo])
                seq.append(lo + (hi - lo) * _GL_X)
                wts.append(np.concatenate([[0.0], _GL_W * (hi - lo)]))
        seq.append([pts[-1]])
        wts.append([0.0])
        samples = np.concatenate(seq)
        weights = np.concatenate(wts)
        q = _continued_quarter_root(A, samples)
        Z = complex(np.sum(weights * q * q))
        if prev is not None and abs(Z - prev[0]) <= tol * (1 + abs(Z)) \
                and abs(q[-1] - prev[1]) <= 1e-8 * abs(q[-1]):
            return Z, complex(q[-1])
        prev = (Z, complex(q[-1]))
        n_sub *= 2
    raise MapEvaluationError("Liouville integral did not converge")


def liouville_Z(A: Coefficient, z: complex, zref: complex, path=None) -> complex:
    """Z(z) = integral from zref to z of A^(1/2), branch continued along the path.

    ``path`` lists intermediate vertices; the default is the straight segment.
    The branch at ``zref`` is the principal one and Z(zref) = 0.
    """
    return _liouville(A, complex(z), complex(zref), path)[0]


def wkb_frame(A: Coefficient, z: complex, zref: complex, path=None) -> WkbFrame:
    """Approximate solutions A^(-1/4) exp(-iZ) and A^(-1/4) exp(+iZ) at ``z``."""
    z = complex(z)
    Z, q = _liouville(A, z, complex(zref), path)
    s = q * q
    a = complex(A(np.array([z]))[0])
    da = complex(A.derivative()(np.array([z]))[0])
    u1 = cmath.exp(-1j * Z) / q
    u2 = cmath.exp(1j * Z) / q
    log_d = -da / (4 * a)
    return WkbFrame(z, Z, u1, u2, (log_d - 1j * s) * u1, (log_d + 1j * s) * u2, s, q)


def reduced_equation_coupling(A: Coefficient, z: complex) -> complex:
    """F0 = A''/(4 A^2) - 5 A'^2 / (16 A^3), the perturbation in W'' + (1 - F0) W = 0."""
    z = np.array([complex(z)])
    a = complex(A(z)[0])
    d1 = A.derivative()
    da = complex(d1(z)[0])
    dda = complex(d1.derivative()(z)[0]) if isinstance(d1, Polynomial) else \
        complex((d1(z + 1e-5) - d1(z - 1e-5))[0] / 2e-5)
    return dda / (4 * a * a) - 5 * da * da / (16 * a ** 3)


def reduced_equation_residual(A: Coefficient, z: complex, zref: complex, h: float = 1e-4) -> dict:
    """Residual of u1 = A^(-1/4) exp(-iZ) in the original equation, by finite differences.

    Returns the numeric relative residual |u1'' + A u1| / |A u1| (which equals
    |F0| for the reduced equation), the predicted |F0|, and |Z|.
    """
    z = complex(z)
    u = [wkb_frame(A, z + k * h, zref).u1 for k in (-1, 0, 1)]
    d2 = (u[0] - 2 * u[1] + u[2]) / (h * h)
    a = complex(A(np.array([z]))[0])
    numeric = abs(d2 + a * u[1]) / abs(a * u[1])
    return {"numeric": numeric, "predicted": abs(reduced_equation_coupling(A, z)),
            "abs_Z": abs(liouville_Z(A, z, zref))}


def wkb_fit_error(problem: LinearOdeProblem, z_test: complex, z_fit: Sequence[complex],
                  zref: complex | None = None, solution: int = 0) -> float:
    """Relative error at ``z_test`` of c u1 + d u2 fitted to a true solution at two points.

    The true solution is f1 (``solution=0``) or f2 of the problem's basis,
    integrated from the basepoint.  The error is normalized by |c u1| + |d u2|.
    """
    za, zb = (complex(p) for p in z_fit)
    zref = za if zref is None else complex(zref)
    pts = np.array([za, zb, complex(z_test)])
    y, kap = frames_from_basepoint(problem, pts)
    w = np.exp(kap) * y[:, 2 * solution]
    frames = [wkb_frame(problem.A, p, zref) for p in pts]
    M = np.array([[frames[0].u1, frames[0].u2], [frames[1].u1, frames[1].u2]])
    c, d = np.linalg.solve(M, w[:2])
    ft = frames[2]
    approx = c * ft.u1 + d * ft.u2
    return float(abs(w[2] - approx) / (abs(c * ft.u1) + abs(d * ft.u2)))


def wkb_error_table(problem: LinearOdeProblem, radii: Sequence[float], theta: float = 0.0,
                    eta: float = 0.05) -> list[tuple[float, float]]:
    """WKB-versus-integration errors along the ray arg z = theta.

    For each radius r the fit uses r(1 + eta) and a point a quarter local
    wavelength further out; the error is measured at r.
    """
    direction = cmath.exp(1j * theta)
    rows = []
    for r in radii:
        za = r * (1 + eta) * direction
        k = abs(cmath.sqrt(complex(problem.A(np.array([za]))[0])))
        zb = za + direction * (math.pi / 2) / max(k, 1e-12)
        rows.append((float(r), wkb_fit_error(problem, r * direction, (za, zb))))
    return rows


# --- sectorial asymptotics ---------------------------------------------------


def decay_directions(A: Polynomial) -> np.ndarray:
    """Bisectors of the d+2 sectors where every solution ratio has u -> -infinity."""
    d = A.degree
    if d < 1:
        raise ValueError("need a non-constant polynomial")
    lead = A.coefficients[-1]
    k = np.arange(d + 2)
    return (math.pi + 2 * math.pi * k - cmath.phase(lead)) / (d + 2)


def stokes_rays(A: Polynomial) -> np.ndarray:
    """Directions where both WKB solutions oscillate, separating the decay sectors."""
    d = A.degree
    lead = A.coefficients[-1]
    k = np.arange(d + 2)
    return (2 * math.pi * k - cmath.phase(lead)) / (d + 2)


@dataclass
class SectorFit:
    c: float
    radii: list
    residuals: list
    slope: float
    center: float
    half_width: float
    exponent: float


class NonDecayingSectorError(ValueError):
    pass


def poly_sector_fit(map: OdeRatio, radii: Sequence[float], sector=None,
                    n_theta: int = 41) -> SectorFit:
    """Fit u(r e^{i theta}) / r^((d+2)/2) against -c cos((d+2)(theta - center)/2).

    ``sector`` is (center, half_width); by default the first decay bisector with
    a half-width of pi/(2(d+2)), well inside the sector.  Residuals are max |u/r^e + c cos| / c.
    """
    A = map.problem.A
    if not isinstance(A, Polynomial) or A.degree < 1:
        raise ValueError("sector fit needs a polynomial coefficient of degree >= 1")
    d = A.degree
    e = (d + 2) / 2
    if sector is None:
        center, half = float(decay_directions(A)[0]), 0.5 * math.pi / (d + 2)
    else:
        center, half = (float(x) for x in sector)
    theta = center + np.linspace(-half, half, n_theta)
    radii = [float(r) for r in radii]
    g = np.cos(e * (theta - center))
    profiles = []
    for r in radii:
        u = map.log_rho(r * np.exp(1j * theta))
        profiles.append(u / r ** e)
    if not np.all(np.asarray(profiles)[:, n_theta // 2] < 0):
        raise NonDecayingSectorError("u does not decay along the sector bisector")
    residuals = []
    for prof in profiles:
        c_r = float(-np.dot(prof, g) / np.dot(g, g))
        residuals.append(float(np.max(np.abs(prof + c_r * g)) / c_r))
    mid = np.array([p[n_theta // 2] for p in profiles]) * np.array(radii) ** e
    if np.any(mid >= 0):
        raise NonDecayingSectorError("u is not negative on the bisector")
    slope = float(np.polyfit(np.log(radii), np.log(-mid), 1)[0])
    c_final = float(-np.dot(profiles[-1], g) / np.dot(g, g))
    return SectorFit(c=c_final, radii=radii, residuals=residuals,
                     slope=slope, center=center, half_width=half, exponent=e)


# --- Mathieu exploration -----------------------------------------------------


def _fundamental(values: np.ndarray) -> np.ndarray:
    f1, d1, f2, d2 = values
    return np.array([[f1, f2], [d1, d2]])


def mathieu_monodromy(lam: complex, period: float = 4 * math.pi, potential=None,
                      rtol: float = 1e-11) -> np.ndarray:
    """M with (f1, f2)(z + P) = (f1, f2)(z) M for the canonical frame at 0.

    ``potential`` replaces cos(2 pi z / P) + lam, e.g. by a constant polynomial.
    """
    if not period > 0:
        raise ValueError("period must be positive")
    A = MathieuPotential(lam, period) if potential is None else potential
    problem = LinearOdeProblem(A, 0j, CANONICAL_FRAME, rtol)
    end = integrate_along(problem, [0j, complex(period)])
    phi0 = _fundamental(np.array(problem.frame))
    phiP = _fundamental(end.values)
    return np.linalg.solve(phi0, phiP)


def determinant_error(M: np.ndarray) -> float:
    """|det M - 1| relative to |M00 M11| + |M01 M10|, the rounding floor of det."""
    return float(abs(np.linalg.det(M) - 1) / (abs(M[0, 0] * M[1, 1]) + abs(M[0, 1] * M[1, 0])))


def monodromy_trace(lam: complex, period: float = 4 * math.pi, rtol: float = 1e-12) -> complex:
    return complex(np.trace(mathieu_monodromy(lam, period, rtol=rtol)))


def cauchy_riemann_residual(fun, lam: complex, eps: float = 1e-4) -> float:
    """|d/dy - i d/dx| of ``fun`` at ``lam`` by central differences, relative."""
    lam = complex(lam)
    dx = (fun(lam + eps) - fun(lam - eps)) / (2 * eps)
    dy = (fun(lam + 1j * eps) - fun(lam - 1j * eps)) / (2 * eps)
    return abs(dy - 1j * dx) / max(1.0, abs(dx))


def periodicity_score(lam: complex, probes, shift: float = 2 * math.pi,
                      period: float = 4 * math.pi, rtol: float = 1e-10) -> float:
    """max over probes of chordal(F(z + shift), F(z)) for F = f1/f2."""
    probes = np.asarray(probes, dtype=complex).ravel()
    problem = LinearOdeProblem(MathieuPotential(lam, period), 0j, CANONICAL_FRAME, rtol)
    pts = np.concatenate([probes, probes + shift])
    y, _ = frames_from_basepoint(problem, pts)
    F = _ratio_from(y)
    n = len(probes)
    return float(np.max(chordal_distance_array(F[n:], F[:n])))


@dataclass
class LambdaSearch:
    lambdas: np.ndarray
    scores: np.ndarray
    traces: np.ndarray
    candidates: list = field(default_factory=list)


def mathieu_lambda_search(lambdas, probes, shift: float = 2 * math.pi,
                          period: float = 4 * math.pi) -> LambdaSearch:
    """Score a 1-D or 2-D grid of lambda values and return its local minimizers.

    Candidates are (lambda, score) pairs sorted by score; an empty list is a
    valid result.
    """
    lam = np.asarray(lambdas, dtype=complex)
    flat = lam.ravel()
    scores = np.array([periodicity_score(l, probes, shift, period) for l in flat])
    traces = np.array([monodromy_trace(l, period, rtol=1e-10) for l in flat])
    S = scores.reshape(lam.shape)
    cands = []
    if lam.ndim == 1:
        for i in range(len(flat)):
            nb = [S[j] for j in (i - 1, i + 1) if 0 <= j < len(flat)]
            if nb and all(S[i] < v for v in nb):
                cands.append((complex(flat[i]), float(S[i])))
    else:
        ny, nx = S.shape
        for i in range(ny):
            for j in range(nx):
                nb = [S[a, b] for a in (i - 1, i, i + 1) for b in (j - 1, j, j + 1)
                      if (a, b) != (i, j) and 0 <= a < ny and 0 <= b < nx]
                if nb and all(S[i, j] < v for v in nb):
                    cands.append((complex(lam[i, j]), float(S[i, j])))
    cands.sort(key=lambda c: c[1])
    return LambdaSearch(lam, S, traces.reshape(lam.shape), cands)


def fixed_step_propagate(A, frame, za: complex, zb: complex, n_steps: int) -> np.ndarray:
    """The 8th-order member of the pair with ``n_steps`` equal steps, no error control.

    Used to measure the observed convergence order.
    """
    y = np.array(frame, dtype=complex, ndmin=2)
    dz = np.array([complex(zb) - complex(za)])
    za = complex(za)
    h = 1.0 / n_steps
    K = np.empty((_dop.N_STAGES, 1, 4), dtype=complex)
    for k in range(n_steps):
        s = k * h
        K[0] = _rhs(A, np.array([za + s * dz[0]]), y, dz)
        for st in range(1, _dop.N_STAGES):
            dy = np.tensordot(_A[st, :st], K[:st], axes=(0, 0)) * h
            K[st] = _rhs(A, np.array([za + (s + _C[st] * h) * dz[0]]), y + dy, dz)
        y = y + h * np.tensordot(_B, K, axes=(0, 0))
    return y[0]
