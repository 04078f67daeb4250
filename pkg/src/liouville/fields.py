"""Finite-difference diagnostics of u: the Liouville residual, Hessians,
concavity and superlevel-set convexity, and quasiconcavity witnesses."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exports import write_csv, write_pgm
from .maps import DevelopingMap, MapEvaluationError
from .metric import GridWindow

NSD_TOL = 1e-8
WITNESS_TOL = 1e-12

_LAPLACE = np.array([0, 1, -1, 1j, -1j])
_HESS = np.array([0, 1, -1, 1j, -1j, 1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j])


def _points(z) -> np.ndarray:
    return np.atleast_1d(np.asarray(z, dtype=complex)).ravel()


def liouville_residual(map: DevelopingMap, z, h: float = 1e-3):
    """Five-point Laplacian of u plus exp(2u); a float for scalar z."""
    if not h > 0:
        raise ValueError("step must be positive")
    pts = _points(z)
    u = map.u_local(pts, _LAPLACE * h)
    if not np.all(np.isfinite(u)):
        raise MapEvaluationError("u is not finite on a residual stencil")
    lap = (u[:, 1] + u[:, 2] + u[:, 3] + u[:, 4] - 4 * u[:, 0]) / (h * h)
    res = lap + np.exp(2 * u[:, 0])
    return float(res[0]) if np.ndim(z) == 0 else res


@dataclass
class ResidualSummary:
    steps: list
    max_residuals: list
    orders: list

    @property
    def order(self) -> float:
        return float(np.mean(self.orders))


def residual_convergence(map: DevelopingMap, z, steps: Sequence[float] = (1e-2, 5e-3, 2.5e-3)
                         ) -> ResidualSummary:
    """max |residual| over the points for each step, and the observed orders between steps."""
    pts = _points(z)
    steps = [float(h) for h in steps]
    mx = [float(np.max(np.abs(liouville_residual(map, pts, h)))) for h in steps]
    orders = [math.log(mx[i] / mx[i + 1]) / math.log(steps[i] / steps[i + 1])
              for i in range(len(steps) - 1)]
    return ResidualSummary(steps, mx, orders)


@dataclass
class HessianSample:
    z: complex
    H: np.ndarray
    eigenvalues: np.ndarray
    u: float

    @property
    def trace_defect(self) -> float:
        """trace(H) + exp(2u), which vanishes for solutions of the Liouville equation."""
        return float(np.trace(self.H) + math.exp(2 * self.u))


def hessians(map: DevelopingMap, z, h: float = 1e-3):
    """Central-difference Hessians at many points: (u, H with shape (n, 2, 2))."""
    if not h > 0:
        raise ValueError("step must be positive")
    pts = _points(z)
    u = map.u_local(pts, _HESS * h)
    if not np.all(np.isfinite(u)):
        raise MapEvaluationError("u is not finite on a Hessian stencil")
    u0 = u[:, 0]
    uxx = (u[:, 1] - 2 * u0 + u[:, 2]) / (h * h)
    uyy = (u[:, 3] - 2 * u0 + u[:, 4]) / (h * h)
    # mean of the two diagonal cross-differences
    uxy = (u[:, 5] - u[:, 6] - u[:, 7] + u[:, 8]) / (4 * h * h)
    H = np.empty((len(pts), 2, 2))
    H[:, 0, 0], H[:, 1, 1] = uxx, uyy
    H[:, 0, 1] = H[:, 1, 0] = uxy
    return u0, H


def hessian_u(map: DevelopingMap, z: complex, h: float = 1e-3,
              check_tol: float | None = 1e-3) -> HessianSample:
    """Hessian of u at z; raises if trace(H) + exp(2u) exceeds ``check_tol``."""
    u0, H = hessians(map, np.array([complex(z)]), h)
    s = HessianSample(complex(z), H[0], np.linalg.eigvalsh(H[0]), float(u0[0]))
    if check_tol is not None and abs(s.trace_defect) > check_tol * max(1.0, np.abs(H[0]).max()):
        raise MapEvaluationError(
            f"Hessian trace check failed at z={z}: defect {s.trace_defect:.3g}")
    return s


def choose_step(map: DevelopingMap, z, candidates=(1e-2, 5e-3, 2e-3, 1e-3, 5e-4, 2e-4)) -> float:
    """The step with the smallest max |trace(H) + exp(2u)| over the sample points."""
    pts = _points(z)
    best, best_h = math.inf, None
    for h in candidates:
        u0, H = hessians(map, pts, h)
        err = float(np.max(np.abs(H[:, 0, 0] + H[:, 1, 1] + np.exp(2 * u0))))
        if err < best:
            best, best_h = err, float(h)
    return best_h


# --- concavity and convexity -------------------------------------------------


@dataclass
class ConcavityScan:
    window: GridWindow
    u: np.ndarray
    lam_min: np.ndarray
    lam_max: np.ndarray
    h: float

    @property
    def nsd(self) -> np.ndarray:
        return self.lam_max <= NSD_TOL

    @property
    def fraction_nsd(self) -> float:
        return float(np.mean(self.nsd))

    @property
    def worst_eigenvalue(self) -> float:
        return float(self.lam_max.max())

    @property
    def worst_location(self) -> complex:
        return complex(self.window.points()[int(np.argmax(self.lam_max))])

    def to_csv(self, path, comments=()):
        pts = self.window.points()
        rows = ((z.real, z.imag, a, b, c) for z, a, b, c in
                zip(pts, self.u, self.lam_min, self.lam_max))
        return write_csv(path, ["x", "y", "u", "lambda_min", "lambda_max"], rows, comments)

    def to_pgm(self, path, comments=()):
        return write_pgm(path, self.u.reshape(self.window.shape)[::-1], comments)


def concavity_scan(map: DevelopingMap, window: GridWindow, h: float | None = None) -> ConcavityScan:
    """Hessian eigenvalues of u at every window node; NSD means lambda_max <= 1e-8."""
    pts = window.points()
    if h is None:
        h = choose_step(map, pts[:: max(1, len(pts) // 64)])
    u0, H = hessians(map, pts, h)
    ev = np.linalg.eigvalsh(H)
    return ConcavityScan(window, u0, ev[:, 0], ev[:, 1], h)


@dataclass
class ConvexityResult:
    level: float
    passed: bool
    pairs_tested: int
    witness: tuple | None = None
    witness_values: tuple | None = None


def superlevel_convexity_check(map: DevelopingMap, c: float, window: GridWindow,
                               samples: int = 2000, seed: int = 0) -> ConvexityResult:
    """Test midpoints of random node pairs in {u >= c}; a witness has u(mid) < c."""
    pts = window.points()
    u = map.log_rho(pts)
    inside = np.flatnonzero(u >= c)
    if inside.size < 2:
        raise ValueError(f"level {c} does not meet the window in two nodes")
    rng = np.random.default_rng(seed)
    i = rng.choice(inside, samples)
    j = rng.choice(inside, samples)
    keep = i != j
    i, j = i[keep], j[keep]
    mid = 0.5 * (pts[i] + pts[j])
    um = map.log_rho(mid)
    bad = np.flatnonzero(um < c - WITNESS_TOL)
    if bad.size == 0:
        return ConvexityResult(float(c), True, int(i.size))
    k = bad[np.argmin(um[bad])]
    return ConvexityResult(float(c), False, int(i.size),
                           (complex(pts[i[k]]), complex(pts[j[k]]), complex(mid[k])),
                           (float(u[i[k]]), float(u[j[k]]), float(um[k])))


# --- quasiconcavity witnesses ------------------------------------------------


@dataclass
class WitnessReport:
    a1: complex
    a2: complex
    u1: float
    u2: float
    u_mid: float
    r: float
    omega: complex
    threshold: float
    trace: list = field(default_factory=list, repr=False)

    @property
    def gap(self) -> float:
        return min(self.u1, self.u2) - self.u_mid

    @property
    def success(self) -> bool:
        return self.gap > self.threshold

    def to_json(self):
        return {"a1": [self.a1.real, self.a1.imag], "a2": [self.a2.real, self.a2.imag],
                "u1": self.u1, "u2": self.u2, "u_mid": self.u_mid, "gap": self.gap,
                "r": self.r, "omega": [self.omega.real, self.omega.imag],
                "M": self.threshold, "success": self.success,
                "trace": [{"r": r, "omega": [w.real, w.imag], "gap": g} for r, w, g in self.trace]}


def _sector_rotations(map: DevelopingMap) -> tuple[int, np.ndarray]:
    from .ode import OdeRatio, Polynomial, decay_directions

    A = getattr(getattr(map, "problem", None), "A", None)
    if isinstance(map, OdeRatio) and isinstance(A, Polynomial) and A.degree >= 1:
        return A.degree, np.exp(1j * decay_directions(A))
    # without a polynomial coefficient the pair straddles a vertical line
    return 0, np.array([1.0 + 0j, -1.0 + 0j])


def witness_candidates(map: DevelopingMap, r: float, delta: float):
    d, omegas = _sector_rotations(map)
    ang = math.pi / (d + 2) - delta
    a1 = omegas * r * np.exp(1j * ang)
    a2 = omegas * r * np.exp(-1j * ang)
    return omegas, a1, a2


def quasiconcavity_witness(map: DevelopingMap, M: float, r_schedule: Sequence[float] | None = None,
                           delta: float = 0.1) -> WitnessReport:
    """Search pairs a_{1,2} = omega r exp(+-i(pi/(d+2) - delta)) with
    min(u(a1), u(a2)) - u((a1 + a2)/2) > M.

    omega runs over all d+2 decay-sector bisectors of A.  Returns the first
    success along the schedule, otherwise the best pair seen.
    """
    if not M > 0:
        raise ValueError("M must be positive")
    if not 0 < delta < math.pi / 2:
        raise ValueError("delta must lie in (0, pi/2)")
    rs = np.arange(1.0, 101.0) if r_schedule is None else np.asarray(r_schedule, dtype=float)
    trace, best = [], None
    for r in rs:
        omegas, a1, a2 = witness_candidates(map, float(r), delta)
        try:
            u = map.log_rho(np.concatenate([a1, a2, 0.5 * (a1 + a2)])).reshape(3, -1)
        except MapEvaluationError:
            continue
        gaps = np.minimum(u[0], u[1]) - u[2]
        for k in range(len(omegas)):
            trace.append((float(r), complex(omegas[k]), float(gaps[k])))
        k = int(np.nanargmax(gaps))
        rep = WitnessReport(complex(a1[k]), complex(a2[k]), float(u[0, k]), float(u[1, k]),
                            float(u[2, k]), float(r), complex(omegas[k]), float(M))
        if best is None or rep.gap > best.gap:
            best = rep
        if rep.success:
            best = rep
            break
    if best is None:
        raise MapEvaluationError("every witness evaluation failed")
    best.trace = trace
    return best


def witness_gap(map: DevelopingMap, r: float, omega: complex, delta: float = 0.1) -> float:
    """The gap for one sector rotation at one radius."""
    ang = math.pi / (2 + _sector_rotations(map)[0]) - delta
    a1 = omega * r * np.exp(1j * ang)
    a2 = omega * r * np.exp(-1j * ang)
    u = map.log_rho(np.array([a1, a2, 0.5 * (a1 + a2)]))
    return float(min(u[0], u[1]) - u[2])
