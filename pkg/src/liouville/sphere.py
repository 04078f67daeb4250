"""Geometry of the Riemann sphere with its curvature +1 metric.

Points of the extended plane are Python complex numbers, with the point at
infinity represented by the module-level singleton :data:`INF`.  All distance
formulas have an explicit branch for :data:`INF` (obtained by the substitution
z -> 1/z) so infinity never travels through floating point arithmetic.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from typing import Union

import numpy as np


class _Infinity:
    """The point at infinity of the Riemann sphere."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "INF"

    def __reduce__(self):
        return (_Infinity, ())


INF = _Infinity()

SpherePoint = Union[complex, _Infinity]

DEGENERACY_THRESHOLD = 1e-14
ROTATION_TOLERANCE = 1e-10


def as_point(value) -> SpherePoint:
    """Coerce numbers (and the string ``"inf"``) to a :data:`SpherePoint`."""
    if value is INF:
        return INF
    if isinstance(value, str):
        if value.strip().lower() in ("inf", "infinity", "∞"):
            return INF
        raise ValueError(f"not a sphere point: {value!r}")
    z = complex(value)
    if cmath.isinf(z):
        return INF
    if cmath.isnan(z):
        raise ValueError("NaN is not a point of the sphere")
    return z


def is_infinite(p: SpherePoint) -> bool:
    return p is INF


def to_unit_vector(p: SpherePoint) -> np.ndarray:
    """Inverse stereographic image of ``p`` on the unit sphere in R^3.

    0 goes to the south pole (0, 0, -1) and infinity to the north pole.
    """
    if p is INF:
        return np.array([0.0, 0.0, 1.0])
    z = complex(p)
    r2 = z.real * z.real + z.imag * z.imag
    if r2 <= 1.0:
        s = 1.0 + r2
        return np.array([2 * z.real / s, 2 * z.imag / s, (r2 - 1.0) / s])
    w = 1.0 / z
    q2 = w.real * w.real + w.imag * w.imag
    s = 1.0 + q2
    return np.array([2 * w.real / s, -2 * w.imag / s, (1.0 - q2) / s])


def from_unit_vector(v) -> SpherePoint:
    x, y, zc = (float(c) for c in v)
    n = math.sqrt(x * x + y * y + zc * zc)
    x, y, zc = x / n, y / n, zc / n
    if zc <= 0.0:
        return complex(x, y) / (1.0 - zc)
    if x == 0.0 and y == 0.0:
        return INF
    return (1.0 + zc) / complex(x, -y)


def unit_vectors(values: np.ndarray) -> np.ndarray:
    """Vectorized :func:`to_unit_vector` for arrays of complex values.

    Non-finite entries of ``values`` stand for the point at infinity; this
    encoding is confined to array internals.
    """
    z = np.asarray(values, dtype=complex)
    out = np.empty(z.shape + (3,))
    inf = ~np.isfinite(z)
    zz = np.where(inf, 0.0, z)
    r2 = zz.real ** 2 + zz.imag ** 2
    small = r2 <= 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(small, 0.0, 1.0 / np.where(small, 1.0, zz))
    q2 = w.real ** 2 + w.imag ** 2
    s1 = 1.0 + r2
    s2 = 1.0 + q2
    out[..., 0] = np.where(small, 2 * zz.real / s1, 2 * w.real / s2)
    out[..., 1] = np.where(small, 2 * zz.imag / s1, -2 * w.imag / s2)
    out[..., 2] = np.where(small, (r2 - 1.0) / s1, (1.0 - q2) / s2)
    out[inf] = (0.0, 0.0, 1.0)
    return out


def _angle_between(u: np.ndarray, v: np.ndarray) -> float:
    return math.atan2(float(np.linalg.norm(np.cross(u, v))), float(np.dot(u, v)))


def chordal_distance(p: SpherePoint, q: SpherePoint) -> float:
    """Chordal distance 2|z-w| / sqrt((1+|z|^2)(1+|w|^2)), with values in [0, 2]."""
    p, q = as_point(p), as_point(q)
    if p is INF and q is INF:
        return 0.0
    if p is INF:
        p, q = q, p
    if q is INF:
        return 2.0 / math.sqrt(1.0 + abs(p) ** 2)
    if abs(p) > 1.0 and abs(q) > 1.0:
        # symmetric under z -> 1/z; keeps |z|, |w| bounded
        p, q = 1.0 / p, 1.0 / q
    return 2.0 * abs(p - q) / math.sqrt((1.0 + abs(p) ** 2) * (1.0 + abs(q) ** 2))


def spherical_distance(p: SpherePoint, q: SpherePoint) -> float:
    """Great-circle distance on the unit sphere, equal to 2 arcsin(chordal / 2)."""
    return _angle_between(to_unit_vector(as_point(p)), to_unit_vector(as_point(q)))


def chordal_distance_array(z: np.ndarray, w: np.ndarray) -> np.ndarray:
    u, v = unit_vectors(z), unit_vectors(w)
    return np.linalg.norm(u - v, axis=-1)


def spherical_distance_array(z: np.ndarray, w: np.ndarray) -> np.ndarray:
    u, v = unit_vectors(z), unit_vectors(w)
    return np.arctan2(np.linalg.norm(np.cross(u, v), axis=-1), np.sum(u * v, axis=-1))


class DegenerateTransformError(ValueError):
    pass


@dataclass(frozen=True)
class MobiusTransform:
    """z -> (a z + b) / (c z + d), stored with determinant 1."""

    a: complex
    b: complex
    c: complex
    d: complex

    def __post_init__(self):
        a, b, c, d = (complex(x) for x in (self.a, self.b, self.c, self.d))
        det = a * d - b * c
        if abs(det) < DEGENERACY_THRESHOLD:
            raise DegenerateTransformError(f"degenerate Möbius transform, ad - bc = {det}")
        # already-normalized input is left untouched so descriptions round-trip exactly
        s = 1.0 if abs(det - 1) < 1e-14 else cmath.sqrt(det)
        # fixed sign convention so that equal maps compare close coefficient-wise
        a, b, c, d = a / s, b / s, c / s, d / s
        lead = next(x for x in (a, b, c, d) if abs(x) > 1e-300)
        if lead.real < 0 or (lead.real == 0 and lead.imag < 0):
            a, b, c, d = -a, -b, -c, -d
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "d", d)

    @classmethod
    def identity(cls) -> "MobiusTransform":
        return cls(1, 0, 0, 1)

    @classmethod
    def from_matrix(cls, m) -> "MobiusTransform":
        m = np.asarray(m, dtype=complex)
        return cls(m[0, 0], m[0, 1], m[1, 0], m[1, 1])

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.a, self.b], [self.c, self.d]])

    def __call__(self, p: SpherePoint) -> SpherePoint:
        return mobius_apply(self, p)

    def __matmul__(self, other: "MobiusTransform") -> "MobiusTransform":
        return mobius_compose(self, other)

    def is_rotation(self, tol: float = ROTATION_TOLERANCE) -> bool:
        return (abs(self.d - self.a.conjugate()) < tol
                and abs(self.c + self.b.conjugate()) < tol)

    def is_close(self, other: "MobiusTransform", tol: float = 1e-10) -> bool:
        diff = np.abs(self.matrix - other.matrix).max()
        return diff < tol or np.abs(self.matrix + other.matrix).max() < tol

    def to_json(self):
        return [[x.real, x.imag] for x in (self.a, self.b, self.c, self.d)]


def mobius_apply(T: MobiusTransform, p: SpherePoint) -> SpherePoint:
    p = as_point(p)
    if p is INF:
        return INF if T.c == 0 else T.a / T.c
    num = T.a * p + T.b
    den = T.c * p + T.d
    if den == 0:
        return INF
    return num / den


def mobius_compose(T1: MobiusTransform, T2: MobiusTransform) -> MobiusTransform:
    """The transform z -> T1(T2(z))."""
    return MobiusTransform.from_matrix(T1.matrix @ T2.matrix)


def mobius_inverse(T: MobiusTransform) -> MobiusTransform:
    return MobiusTransform(T.d, -T.b, -T.c, T.a)


def rotation(alpha: complex, beta: complex) -> MobiusTransform:
    """The sphere rotation (alpha z + beta) / (-conj(beta) z + conj(alpha))."""
    alpha, beta = complex(alpha), complex(beta)
    n = math.hypot(abs(alpha), abs(beta))
    alpha, beta = alpha / n, beta / n
    return MobiusTransform(alpha, beta, -beta.conjugate(), alpha.conjugate())


def _rotation_to_zero(p: SpherePoint) -> MobiusTransform:
    if p is INF:
        return rotation(0, 1)  # z -> -1/z
    return rotation(1, -complex(p))  # z -> (z - p) / (conj(p) z + 1)


def rotation_sending(p: SpherePoint, q: SpherePoint) -> MobiusTransform:
    """A rigid rotation of the sphere taking ``p`` to ``q``."""
    p, q = as_point(p), as_point(q)
    if p == q or (p is INF and q is INF):
        return MobiusTransform.identity()
    return mobius_compose(mobius_inverse(_rotation_to_zero(q)), _rotation_to_zero(p))


def _rotation_about_real_axis(theta: float) -> MobiusTransform:
    # fixes +1 and -1
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return MobiusTransform(c, 1j * s, 1j * s, c)


@dataclass(frozen=True)
class GeodesicArc:
    """Shorter great-circle arc between two distinct, non-antipodal points."""

    start: SpherePoint
    end: SpherePoint

    def __post_init__(self):
        object.__setattr__(self, "start", as_point(self.start))
        object.__setattr__(self, "end", as_point(self.end))
        t = self.length
        if t < 1e-12:
            raise ValueError("arc endpoints coincide")
        if t > math.pi - 1e-12:
            raise ValueError("arc endpoints are antipodal")

    @property
    def length(self) -> float:
        return spherical_distance(self.start, self.end)

    @classmethod
    def canonical(cls, t: float) -> "GeodesicArc":
        """The arc {exp(i phi) : |phi| <= t/2}."""
        return cls(cmath.exp(-0.5j * t), cmath.exp(0.5j * t))

    def canonical_frame(self) -> MobiusTransform:
        """Rotation taking this arc onto the canonical arc of the same length."""
        u, v = to_unit_vector(self.start), to_unit_vector(self.end)
        mid = from_unit_vector(u + v)
        r1 = rotation_sending(mid, 1.0)
        e = to_unit_vector(r1(self.start))
        psi = math.atan2(e[2], e[1])
        best, best_err = None, math.inf
        for theta in (math.pi - psi, psi - math.pi):
            r = mobius_compose(_rotation_about_real_axis(theta), r1)
            img = to_unit_vector(r(self.start))
            err = abs(img[2]) + max(img[1], 0.0)
            if err < best_err:
                best, best_err = r, err
        return best


def _canonical_arc_distance(xyz: np.ndarray, t: float) -> np.ndarray:
    """Distance from unit vectors to {(cos phi, sin phi, 0) : |phi| <= t/2}."""
    x, y, zc = xyz[..., 0], xyz[..., 1], xyz[..., 2]
    phi = np.arctan2(y, x)
    planar = np.hypot(x, y)
    inside = np.arctan2(np.abs(zc), planar)
    ends = []
    for sgn in (1.0, -1.0):
        ex, ey = math.cos(t / 2), sgn * math.sin(t / 2)
        cross = np.sqrt((zc * ey) ** 2 + (zc * ex) ** 2 + (x * ey - y * ex) ** 2)
        ends.append(np.arctan2(cross, x * ex + y * ey))
    return np.where(np.abs(phi) <= t / 2, inside, np.minimum(ends[0], ends[1]))


def dist_to_arc(p: SpherePoint, K: GeodesicArc) -> float:
    """Spherical distance from ``p`` to the nearest point of the arc ``K``."""
    frame = K.canonical_frame()
    v = to_unit_vector(frame(as_point(p)))
    return float(_canonical_arc_distance(v, K.length))


def fibonacci_sphere(n: int) -> np.ndarray:
    """Quasi-uniform deterministic sample of ``n`` unit vectors."""
    k = np.arange(n) + 0.5
    zc = 1.0 - 2.0 * k / n
    r = np.sqrt(np.clip(1.0 - zc * zc, 0.0, None))
    phi = k * math.pi * (3.0 - math.sqrt(5.0))
    return np.stack([r * np.cos(phi), r * np.sin(phi), zc], axis=-1)


def arc_sup_distance_check(t: float, n: int = 100_000) -> tuple[float, float]:
    """Numeric sup of dist(., K_t) over a Fibonacci sample, and the exact value pi - t/2."""
    if not 0.0 < t < math.pi:
        raise ValueError("arc length must lie in (0, pi)")
    if n < 100:
        raise ValueError("need at least 100 sample points")
    d = _canonical_arc_distance(fibonacci_sphere(n), t)
    return float(d.max()), math.pi - t / 2
