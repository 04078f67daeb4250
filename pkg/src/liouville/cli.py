"""Command-line front end.

    liouville <command> --config <file.json> [--out <dir>] [--seed <u64>]

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .exports import canonical_json, config_digest, write_csv
from .maps import (DevelopingMap, MapDescriptionError, MapEvaluationError, complex_json,
                   map_from_description, parse_complex)
from .metric import (BudgetExceededError, GridWindow, LatticeGraph, crossing_growth_experiment,
                     diameter_estimate, geodesic_path)

SCHEMA = 1
COMMANDS = ("eval", "residual", "distance", "diameter", "concavity", "witness", "wkb",
            "mathieu", "growth")


class ConfigError(ValueError):
    pass


def _pair(z) -> list:
    z = complex(z)
    return [z.real, z.imag]


def _window(cfg: dict, default_h: float = 0.1) -> GridWindow:
    w = cfg.get("window")
    if not isinstance(w, dict):
        raise ConfigError("config needs a 'window' object")
    R = w.get("R")
    rx = float(w.get("rx", R if R is not None else 0))
    ry = float(w.get("ry", R if R is not None else 0))
    return GridWindow(parse_complex(w.get("center", [0, 0])), rx, ry, float(w.get("h", default_h)),
                      int(w.get("budget", 2_500_000)))


def _points(cfg: dict, rng) -> np.ndarray:
    if "points" in cfg:
        return np.array([parse_complex(p) for p in cfg["points"]], dtype=complex)
    if "sample" in cfg:
        s = cfg["sample"]
        n = int(s.get("n", 200))
        x0, x1, y0, y1 = (float(v) for v in s.get("box", [-2, 2, -2, 2]))
        return rng.uniform(x0, x1, n) + 1j * rng.uniform(y0, y1, n)
    if "window" in cfg:
        return _window(cfg).points()
    raise ConfigError("config needs 'points', 'sample', or 'window'")


class Run:
    """Resolved config, output directory and digest of one invocation."""

    def __init__(self, command: str, config: dict, out: Path):
        self.command = command
        self.config = config
        self.out = out
        self.digest = config_digest(config)
        self.files: list[str] = []

    @property
    def comments(self):
        return [f"config-digest: {self.digest}"]

    def csv(self, name, header, rows):
        write_csv(self.out / name, header, rows, self.comments)
        self.files.append(name)

    def json(self, name, payload: dict):
        payload = dict(payload, config_digest=self.digest, command=self.command)
        (self.out / name).write_text(canonical_json(payload) + "\n", encoding="utf-8")
        self.files.append(name)

    def path(self, name) -> Path:
        self.files.append(name)
        return self.out / name


# --- commands ----------------------------------------------------------------


def cmd_eval(run: Run, fmap: DevelopingMap, rng):
    z = _points(run.config, rng)
    f = fmap.values(z)
    u = fmap.log_rho(z)
    rows = []
    for zi, fi, ui in zip(z, f, u):
        fr = ("inf", "inf") if not np.isfinite(fi) else (fi.real, fi.imag)
        rows.append((zi.real, zi.imag, *fr, math.exp(ui), ui))
    run.csv("eval.csv", ["x", "y", "f_re", "f_im", "rho", "u"], rows)


def cmd_residual(run: Run, fmap, rng):
    from .fields import liouville_residual, residual_convergence

    cfg = run.config
    h = float(cfg.get("h", 1e-3))
    steps = [float(s) for s in cfg.get("steps", [1e-2, 5e-3, 2.5e-3])]
    if h <= 0 or any(s <= 0 for s in steps):
        raise ConfigError("steps must be positive")
    z = _points(cfg, rng)
    res = liouville_residual(fmap, z, h)
    conv = residual_convergence(fmap, z, steps)
    run.csv("residual.csv", ["x", "y", "residual"], zip(z.real, z.imag, res))
    run.json("residual.json", {"h": h, "max_residual": float(np.max(np.abs(res))),
                               "points": int(len(z)), "steps": steps,
                               "max_residuals": conv.max_residuals, "orders": conv.orders,
                               "order": conv.order})


def cmd_distance(run: Run, fmap, rng):
    from .sphere import spherical_distance_array

    cfg = run.config
    w = _window(cfg)
    p, q = parse_complex(cfg["p"]), parse_complex(cfg["q"])
    graph = LatticeGraph(fmap, w)
    fld = graph.distance_field(w.nearest_node(p))
    path = geodesic_path(fmap, w, p, q, int(cfg.get("iterations", 30)), graph)
    img = spherical_distance_array(fmap.values(np.array([p])), fmap.values(np.array([q])))[0]
    path.to_csv(run.path("path.csv"), run.comments)
    fld.to_pgm(run.path("distance_field.pgm"), run.comments)
    run.json("distance.json", {"p": _pair(p), "q": _pair(q), "distance": path.length,
                               "lattice_distance": float(fld.d[w.nearest_node(q)]),
                               "image_distance": float(img), "vertices": int(len(path.vertices))})


def cmd_diameter(run: Run, fmap, rng):
    cfg = run.config
    sweeps = int(cfg.get("sweeps", 3))
    iters = int(cfg.get("refine_iterations", 30))
    if "radii" in cfg:
        h = float(cfg.get("window", {}).get("h", cfg.get("h", 0.05)))
        center = parse_complex(cfg.get("window", {}).get("center", [0, 0]))
        windows = [GridWindow.square(float(R), h, center) for R in cfg["radii"]]
    else:
        windows = [_window(cfg)]
    rows, best = [], None
    for w in windows:
        graph = LatticeGraph(fmap, w)
        r = diameter_estimate(fmap, w, sweeps=sweeps, refine_iterations=iters, graph=graph)
        nested = r.value if best is None else max(best, r.value)
        best = nested
        rows.append({"R": max(w.rx, w.ry), "h": w.h, "value": r.value, "nested_value": nested,
                     "lattice_value": r.lattice_value, "pair": [_pair(r.pair[0]), _pair(r.pair[1])],
                     "image_distance": r.image_distance})
    graph.distance_field(w.nearest_node(r.pair[0])).to_pgm(run.path("diameter_field.pgm"),
                                                           run.comments)
    r.path.to_csv(run.path("witness_path.csv"), run.comments)
    run.json("diameter.json", {"value": best, "windows": rows})


def cmd_concavity(run: Run, fmap, rng):
    from .fields import NSD_TOL, concavity_scan

    cfg = run.config
    scan = concavity_scan(fmap, _window(cfg), cfg.get("h"))
    scan.to_csv(run.path("concavity.csv"), run.comments)
    scan.to_pgm(run.path("u.pgm"), run.comments)
    run.json("concavity.json", {"fraction_nsd": scan.fraction_nsd, "h": scan.h,
                                "nsd_tolerance": NSD_TOL,
                                "worst_eigenvalue": scan.worst_eigenvalue,
                                "worst_location": _pair(scan.worst_location)})


def cmd_witness(run: Run, fmap, rng):
    from .fields import quasiconcavity_witness

    cfg = run.config
    if "M" not in cfg:
        raise ConfigError("witness needs a threshold 'M'")
    rs = cfg.get("r_schedule")
    if isinstance(rs, dict):
        rs = np.arange(float(rs.get("start", 1)), float(rs.get("stop", 100)) + 1e-9,
                       float(rs.get("step", 1)))
    rep = quasiconcavity_witness(fmap, float(cfg["M"]), rs, float(cfg.get("delta", 0.1)))
    run.json("witness.json", rep.to_json())


def cmd_wkb(run: Run, fmap, rng):
    from .ode import OdeRatio, Polynomial, wkb_error_table

    cfg = run.config
    if not (isinstance(fmap, OdeRatio) and isinstance(fmap.problem.A, Polynomial)):
        raise ConfigError("wkb needs an ode_ratio map with a polynomial coefficient")
    radii = [float(r) for r in cfg.get("radii", [20, 40, 80, 100])]
    table = wkb_error_table(fmap.problem, radii, float(cfg.get("theta", 0.0)),
                            float(cfg.get("eta", 0.05)))
    run.csv("wkb.csv", ["r", "relative_error"], table)


def _lambda_grid(cfg):
    g = cfg.get("lambdas")
    if isinstance(g, list):
        return np.array([parse_complex(v) for v in g], dtype=complex)
    if isinstance(g, dict):
        re = np.linspace(*[float(v) for v in g["re"][:2]], int(g["re"][2]))
        im = np.linspace(*[float(v) for v in g.get("im", [0, 0, 1])[:2]],
                         int(g.get("im", [0, 0, 1])[2]))
        grid = re[None, :] + 1j * im[:, None]
        return grid.ravel() if grid.shape[0] == 1 else grid
    raise ConfigError("mathieu needs 'lambdas' as a list or a {re, im} grid")


def cmd_mathieu(run: Run, fmap, rng):
    from .ode import mathieu_lambda_search, mathieu_monodromy, determinant_error

    cfg = run.config
    lam = _lambda_grid(cfg)
    probes = [parse_complex(p) for p in cfg.get("probes", [[0.5, 0.3], [1.1, -0.4], [2.0, 0.1]])]
    period = float(cfg.get("period", 4 * math.pi))
    shift = float(cfg.get("shift", 2 * math.pi))
    res = mathieu_lambda_search(lam, probes, shift, period)
    flat = zip(res.lambdas.ravel(), res.scores.ravel(), res.traces.ravel())
    run.csv("mathieu.csv", ["lambda_re", "lambda_im", "score", "trace_re", "trace_im"],
            ((l.real, l.imag, s, t.real, t.imag) for l, s, t in flat))
    cands = []
    for l, s in res.candidates:
        M = mathieu_monodromy(l, period)
        cands.append({"lambda": _pair(l), "score": s, "trace": _pair(np.trace(M)),
                      "det_error": determinant_error(M)})
    run.json("mathieu.json", {"candidates": cands, "period": period, "shift": shift,
                              "probes": [_pair(p) for p in probes]})


def cmd_growth(run: Run, fmap, rng):
    cfg = run.config
    a = cfg.get("anchors")
    if isinstance(a, dict):
        start, step = parse_complex(a.get("start", [0, 0])), parse_complex(a["step"])
        anchors = start + step * np.arange(int(a.get("count", 8)))
    elif isinstance(a, list):
        anchors = np.array([parse_complex(v) for v in a])
    else:
        raise ConfigError("growth needs 'anchors'")
    rep = crossing_growth_experiment(fmap, anchors, _window(cfg), int(cfg.get("refine_iterations", 20)))
    rows = [(k + 1, z.real, z.imag, d, m, l) for k, (z, d, m, l) in
            enumerate(zip(rep.anchors[1:], rep.distances, rep.running_max, rep.lattice_distances))]
    run.csv("growth.csv", ["k", "x", "y", "d", "running_max", "lattice_d"], rows)
    run.json("growth.json", {"slope": rep.slope, "distances": rep.distances.tolist(),
                             "running_max": rep.running_max.tolist()})


HANDLERS = {name: globals()[f"cmd_{name}"] for name in COMMANDS}


def load_config(path: str) -> dict:
    try:
        cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    if cfg.get("schema") != SCHEMA:
        raise ConfigError(f"config schema must be {SCHEMA}")
    if "map" not in cfg:
        raise ConfigError("config needs a 'map' description")
    return cfg


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="liouville",
                                 description="Experiments on developing maps and their metrics.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="JSON experiment config")
    ap.add_argument("--out", default="out", help="output directory (default: out)")
    ap.add_argument("--seed", type=int, default=None, help="random seed (default: config or 0)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2 ** 64:
                raise ConfigError("seed must be an unsigned 64-bit integer")
            cfg["seed"] = args.seed
        cfg.setdefault("seed", 0)
        fmap = map_from_description(cfg["map"])
        cfg["map"] = fmap.to_description()
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        run = Run(args.command, cfg, out)
        (out / "config.resolved.json").write_text(canonical_json(cfg) + "\n", encoding="utf-8")
        HANDLERS[args.command](run, fmap, np.random.default_rng(int(cfg["seed"])))
    except (ConfigError, MapDescriptionError, BudgetExceededError, KeyError, TypeError) as exc:
        print(f"liouville: config error: {exc}", file=sys.stderr)
        return 2
    except MapEvaluationError as exc:
        print(f"liouville: runtime error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"liouville: config error: {exc}", file=sys.stderr)
        return 2
    for name in run.files:
        print(out / name)
    return 0


if __name__ == "__main__":
    sys.exit(main())
