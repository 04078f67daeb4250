"""CSV and 16-bit PGM writers shared by the scans and distance fields."""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_digest(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence], comments: Sequence[str] = ()):
    """UTF-8 CSV with optional leading ``# ...`` comment lines and full float precision."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def write_pgm(path, image: np.ndarray, comments: Sequence[str] = ()) -> tuple[float, float]:
    """Binary 16-bit PGM of a 2-D array, first row on top.

    Finite values are mapped affinely onto 0..65535 and the map is recorded in
    a header comment; non-finite entries are written as 0.  Returns (lo, hi).
    """
    img = np.asarray(image, dtype=float)
    if img.ndim != 2:
        raise ValueError("image must be two-dimensional")
    finite = np.isfinite(img)
    lo = float(img[finite].min()) if finite.any() else 0.0
    hi = float(img[finite].max()) if finite.any() else 1.0
    span = hi - lo if hi > lo else 1.0
    g = np.zeros(img.shape, dtype=">u2")
    g[finite] = np.rint((img[finite] - lo) / span * 65535).astype(np.uint16)
    header = ["P5"]
    header += [f"# {c}" for c in comments]
    header.append(f"# value = {lo!r} + {span!r} * g / 65535; g = 0 also marks non-finite")
    header.append(f"{img.shape[1]} {img.shape[0]}")
    header.append("65535")
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(g.tobytes())
    return lo, hi


def read_pgm(path) -> tuple[np.ndarray, list[str]]:
    """Read back a file written by :func:`write_pgm`: (raw 16-bit image, comments)."""
    data = Path(path).read_bytes()
    comments, tokens, pos = [], [], 0
    while len(tokens) < 4:
        end = data.index(b"\n", pos)
        line = data[pos:end].decode("ascii")
        pos = end + 1
        if line.startswith("#"):
            comments.append(line[1:].strip())
        else:
            tokens += line.split()
    if tokens[0] != "P5" or tokens[3] != "65535":
        raise ValueError("not a 16-bit binary PGM")
    w, h = int(tokens[1]), int(tokens[2])
    img = np.frombuffer(data[pos:pos + 2 * w * h], dtype=">u2").reshape(h, w)
    return img.astype(np.uint16), comments
