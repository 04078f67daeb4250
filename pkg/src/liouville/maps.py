"""Developing maps and the conformal factor of the pulled-back spherical metric.

A developing map f induces the metric 2|f'| / (1 + |f|^2) |dz|, whose logarithm
u solves the Liouville equation.  Every map here evaluates u in log space so
that values far below -1000 are representable.
"""

from __future__ import annotations

import cmath
import math
from abc import ABC, abstractmethod

import numpy as np

from .sphere import INF, MobiusTransform, SpherePoint, as_point, mobius_compose

LOG2 = math.log(2.0)


class MapEvaluationError(RuntimeError):
    """A developing map could not be evaluated to the requested accuracy."""


class SchwarzianStepError(MapEvaluationError):
    pass


def _as_array(z) -> np.ndarray:
    return np.asarray(z, dtype=complex)


def _abs2(z):
    return z.real * z.real + z.imag * z.imag


class DevelopingMap(ABC):
    """Base class for meromorphic local homeomorphisms f of the plane.

    Array methods return complex arrays in which non-finite entries stand for
    poles of f.  The scalar helpers below convert those to :data:`INF`.
    """

    kind: str = ""

    @abstractmethod
    def values(self, z) -> np.ndarray:
        """f at an array of points."""

    @abstractmethod
    def log_rho(self, z) -> np.ndarray:
        """u = log(2|f'| / (1 + |f|^2)) at an array of points."""

    @abstractmethod
    def rotated(self, R: MobiusTransform) -> "DevelopingMap":
        """The map R o f."""

    @abstractmethod
    def to_description(self) -> dict:
        """JSON-ready description accepted by :func:`map_from_description`."""

    def rho(self, z) -> np.ndarray:
        return np.exp(self.log_rho(z))

    def u_local(self, centers, offsets) -> np.ndarray:
        """u at ``centers[i] + offsets[i, j]``.

        Maps defined by integration override this to propagate from each center,
        which keeps finite-difference stencils internally consistent.
        """
        c = _as_array(centers)
        o = _as_array(offsets)
        return self.log_rho(c[:, None] + o)

    def values_local(self, centers, offsets) -> np.ndarray:
        c = _as_array(centers)
        o = _as_array(offsets)
        return self.values(c[:, None] + o)

    def __eq__(self, other):
        return type(self) is type(other) and self.to_description() == other.to_description()

    def __hash__(self):
        return hash(repr(self.to_description()))


def _mobius_json(T: MobiusTransform):
    return T.to_json()


class Mobius(DevelopingMap):
    kind = "mobius"

    def __init__(self, T: MobiusTransform):
        self.T = T

    def values(self, z):
        z = _as_array(z)
        T = self.T
        num = T.a * z + T.b
        den = T.c * z + T.d
        with np.errstate(divide="ignore", invalid="ignore"):
            out = num / den
        return np.where(den == 0, complex(np.inf, 0), out)

    def log_rho(self, z):
        z = _as_array(z)
        T = self.T
        # f' = 1 / (cz + d)^2 for a determinant-one transform
        return LOG2 - np.log(_abs2(T.a * z + T.b) + _abs2(T.c * z + T.d))

    def rotated(self, R):
        return Mobius(mobius_compose(R, self.T))

    def to_description(self):
        return {"kind": self.kind, "coefficients": _mobius_json(self.T)}

    def __repr__(self):
        return f"Mobius({self.T})"


class ExpFamily(DevelopingMap):
    """f(z) = L(exp(a z + b)) with L linear-fractional and a != 0."""

    kind = "exp_family"

    def __init__(self, L: MobiusTransform, a: complex, b: complex = 0.0):
        a = complex(a)
        if a == 0:
            raise ValueError("exponential family requires a != 0")
        self.L, self.a, self.b = L, a, complex(b)

    def _exponent(self, z):
        return self.a * _as_array(z) + self.b

    def values(self, z):
        s = self._exponent(z)
        L = self.L
        pos = s.real >= 0
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            e = np.exp(np.where(pos, -s, s))
            num = np.where(pos, L.a + L.b * e, L.a * e + L.b)
            den = np.where(pos, L.c + L.d * e, L.c * e + L.d)
            out = num / den
        return np.where(den == 0, complex(np.inf, 0), out)

    def log_rho(self, z):
        s = self._exponent(z)
        x, y = s.real, s.imag
        ax = np.abs(x)
        L = self.L
        decay = np.exp(-ax)
        # |p + q e^{-|s|}|^2 expanded so that rotations give y-independent sums
        phase = np.exp(np.where(x >= 0, 1j * y, -1j * y))
        pos = x >= 0
        p1, q1 = np.where(pos, L.a, L.b), np.where(pos, L.b, L.a)
        p2, q2 = np.where(pos, L.c, L.d), np.where(pos, L.d, L.c)
        P = (_abs2(p1) + _abs2(p2) + (_abs2(q1) + _abs2(q2)) * decay * decay
             + 2 * decay * (p1 * np.conj(q1) * phase + p2 * np.conj(q2) * phase).real)
        return math.log(2 * abs(self.a)) - ax - np.log(P)

    def rotated(self, R):
        return ExpFamily(mobius_compose(R, self.L), self.a, self.b)

    def to_description(self):
        return {"kind": self.kind, "L": _mobius_json(self.L),
                "a": [self.a.real, self.a.imag], "b": [self.b.real, self.b.imag]}

    def __repr__(self):
        return f"ExpFamily(L={self.L}, a={self.a}, b={self.b})"


class ShiftedExp(DevelopingMap):
    """f(z) = exp(z) + t."""

    kind = "shifted_exp"

    def __init__(self, t: complex = 0.0):
        self.t = complex(t)

    def values(self, z):
        z = _as_array(z)
        with np.errstate(over="ignore", invalid="ignore"):
            out = np.exp(z) + self.t
        return np.where(np.isfinite(out), out, complex(np.inf, 0))

    def log_rho(self, z):
        z = _as_array(z)
        x = z.real
        pos = x > 0
        with np.errstate(over="ignore"):
            zz = np.where(pos, -z, z)
            e = np.exp(zz)
            neg_branch = LOG2 + x - np.log1p(_abs2(e + self.t))
            pos_branch = LOG2 - x - np.log(np.exp(-2 * np.abs(x)) + _abs2(1 + self.t * e))
        return np.where(pos, pos_branch, neg_branch)

    def rotated(self, R):
        shift = MobiusTransform(1, self.t, 0, 1)
        return ExpFamily(mobius_compose(R, shift), 1.0, 0.0)

    def to_description(self):
        return {"kind": self.kind, "t": [self.t.real, self.t.imag]}

    def __repr__(self):
        return f"ShiftedExp(t={self.t})"


def _to_point(v: complex) -> SpherePoint:
    return INF if not cmath.isfinite(v) else complex(v)


def eval_f(map: DevelopingMap, z: complex) -> SpherePoint:
    return _to_point(complex(map.values(np.array([complex(z)]))[0]))


def u_field(map: DevelopingMap, z: complex) -> float:
    u = float(map.log_rho(np.array([complex(z)]))[0])
    if not math.isfinite(u):
        raise MapEvaluationError(f"u is not finite at z={z}")
    return u


def conformal_factor(map: DevelopingMap, z: complex) -> float:
    """The density 2|f'| / (1 + |f|^2) of the metric at ``z``."""
    return math.exp(u_field(map, z))


def rotate_map(map: DevelopingMap, R: MobiusTransform) -> DevelopingMap:
    if not R.is_rotation():
        raise ValueError("rotate_map needs a rigid rotation of the sphere")
    return map.rotated(R)


_SCHWARZ_OFFSETS = np.arange(-2, 3)


def _schwarzian_from_samples(g: np.ndarray, h: float) -> complex:
    gm2, gm1, g0, g1, g2 = g
    d1 = (g1 - gm1) / (2 * h)
    d2 = (g1 - 2 * g0 + gm1) / (h * h)
    d3 = (g2 - 2 * g1 + 2 * gm1 - gm2) / (2 * h ** 3)
    return d3 / d1 - 1.5 * (d2 / d1) ** 2


def _schwarzian_raw(map: DevelopingMap, z: complex, h: float) -> complex:
    g = map.values_local(np.array([z]), (_SCHWARZ_OFFSETS * h)[None, :])[0]
    if not np.all(np.isfinite(g)) or abs(g[2]) > 1.0:
        # S(f) = S(1/f); the reciprocal is pole-free near z when |f(z)| > 1
        with np.errstate(divide="ignore", invalid="ignore"):
            g = np.where(np.isfinite(g), 1.0 / g, 0.0)
    if not np.all(np.isfinite(g)):
        raise MapEvaluationError(f"stencil around z={z} touches a pole")
    return complex(_schwarzian_from_samples(g, h))


def numeric_schwarzian(map: DevelopingMap, z: complex, h: float = 3e-3) -> complex:
    """Central-difference estimate of (f''/f')' - (f''/f')^2 / 2.

    Steps h and 2h each carry an O(h^2) error; their Richardson combination
    is returned.
    """
    if h <= 0:
        raise ValueError("step must be positive")
    z = complex(z)
    s_h = _schwarzian_raw(map, z, h)
    s_2h = _schwarzian_raw(map, z, 2 * h)
    if not (cmath.isfinite(s_h) and cmath.isfinite(s_2h)) or abs(s_h - s_2h) > 0.1 * (1 + abs(s_h)):
        raise SchwarzianStepError(
            f"Richardson disagreement at z={z}, h={h}: {s_h} vs {s_2h}")
    return (4 * s_h - s_2h) / 3


def schwarzian_order(map: DevelopingMap, z: complex, h: float) -> float:
    """Observed convergence order of :func:`numeric_schwarzian` from three steps."""
    s = [_schwarzian_raw(map, complex(z), h / 2 ** k) for k in range(3)]
    return math.log2(abs(s[0] - s[1]) / abs(s[1] - s[2]))


# --- JSON descriptions -------------------------------------------------------

class MapDescriptionError(ValueError):
    pass


def parse_complex(v) -> complex:
    if isinstance(v, (int, float)):
        return complex(v)
    if isinstance(v, (list, tuple)) and len(v) == 2:
        return complex(float(v[0]), float(v[1]))
    raise MapDescriptionError(f"expected a complex number as [re, im], got {v!r}")


def parse_point(v) -> SpherePoint:
    if isinstance(v, str):
        return as_point(v)
    return parse_complex(v)


def complex_json(z):
    if z is INF or (isinstance(z, complex) and not cmath.isfinite(z)):
        return "inf"
    z = complex(z)
    return [z.real, z.imag]


def _parse_mobius(v) -> MobiusTransform:
    if v in (None, "identity"):
        return MobiusTransform.identity()
    if isinstance(v, dict):
        v = [v[k] for k in "abcd"]
    if len(v) == 2 and all(isinstance(r, (list, tuple)) and len(r) == 2 for r in v) \
            and all(isinstance(x, (list, tuple)) for r in v for x in r):
        v = [v[0][0], v[0][1], v[1][0], v[1][1]]
    if len(v) != 4:
        raise MapDescriptionError("Möbius transform needs four coefficients")
    return MobiusTransform(*(parse_complex(x) for x in v))


def map_from_description(desc: dict) -> DevelopingMap:
    """Build a map from its JSON description (complex numbers as [re, im])."""
    from .ode import LinearOdeProblem, MathieuPotential, MathieuRatio, OdeRatio, Polynomial

    if not isinstance(desc, dict) or "kind" not in desc:
        raise MapDescriptionError("map description must be an object with a 'kind'")
    kind = desc["kind"]
    try:
        if kind == "mobius":
            return Mobius(_parse_mobius(desc.get("coefficients")))
        if kind == "exp_family":
            return ExpFamily(_parse_mobius(desc.get("L")), parse_complex(desc.get("a", 1.0)),
                             parse_complex(desc.get("b", 0.0)))
        if kind == "shifted_exp":
            return ShiftedExp(parse_complex(desc.get("t", 0.0)))
        frame = desc.get("frame")
        frame = None if frame is None else [parse_complex(x) for x in frame]
        z0 = parse_complex(desc.get("z0", 0.0))
        rtol = float(desc.get("rtol", 1e-10))
        if kind == "ode_ratio":
            A = Polynomial([parse_complex(c) for c in desc["A"]])
            return OdeRatio(LinearOdeProblem(A, z0=z0, frame=frame, rtol=rtol))
        if kind == "mathieu":
            lam = parse_complex(desc.get("lambda", 0.0))
            period = float(desc.get("period", 4 * math.pi))
            return MathieuRatio(LinearOdeProblem(MathieuPotential(lam, period), z0=z0,
                                                 frame=frame, rtol=rtol))
    except MapDescriptionError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise MapDescriptionError(f"invalid {kind!r} map description: {exc}") from exc
    raise MapDescriptionError(f"unknown map kind {kind!r}")
