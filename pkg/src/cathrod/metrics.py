"""Curve comparison metrics and centerline CSV interchange."""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

UNIT_SCALE = {"m": 1.0, "mm": 1e-3}
START_TOLERANCE = 1e-6


class CurveFormatError(ValueError):
    pass


class ProjectionWarning(UserWarning):
    pass


@dataclass
class Centerline2D:
    points: np.ndarray  # (n, 2)
    label: str = ""
    notes: list = field(default_factory=list)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim != 2 or self.points.shape[1] != 2:
            raise CurveFormatError(f"expected (n, 2) samples, got shape {self.points.shape}")
        if len(self.points) < 2:
            raise CurveFormatError("a centerline needs at least 2 samples")
        if not np.all(np.isfinite(self.points)):
            raise CurveFormatError("non-finite coordinate")

    @property
    def tip(self) -> np.ndarray:
        return self.points[-1]


@dataclass(frozen=True)
class ErrorReport:
    tip_error_fraction: float
    area_error: float
    rod_length: float

    def as_dict(self) -> dict:
        return {"tip_error_fraction": self.tip_error_fraction, "area_error": self.area_error,
                "rod_length": self.rod_length}


def _as_points(curve) -> np.ndarray:
    return curve.points if isinstance(curve, Centerline2D) else np.asarray(curve, dtype=float)


def tip_error(a, b, length: float) -> float:
    """Tip separation as a fraction of ``length``."""
    if not length > 0:
        raise ValueError("length must be positive")
    pa, pb = _as_points(a), _as_points(b)
    return float(np.linalg.norm(pa[-1] - pb[-1]) / length)


def _cross2(u, v):
    return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]


def _crossing_abscissae(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """x of every crossing or contact between two edges ``p[i] -> q[i]``."""
    d = q - p
    out = []
    lo, hi = -1e-12, 1.0 + 1e-12
    for i in range(len(p) - 1):
        r, s = d[i], d[i + 1:]
        denom = _cross2(r, s)
        ok = denom != 0.0
        w = p[i + 1:] - p[i]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = _cross2(w, s) / denom
            u = _cross2(w, r) / denom
        hit = ok & (t >= lo) & (t <= hi) & (u >= lo) & (u <= hi)
        out.append(p[i, 0] + t[hit] * r[0])
    return np.concatenate(out) if out else np.empty(0)


def enclosed_area(a, b) -> float:
    """Area between two curves that share a start point.

    The closed polygon ``a`` forward then ``b`` reversed is cut into vertical
    slabs at every vertex and edge crossing. Inside a slab no edges cross, so
    the region between neighbouring edges is a trapezoid weighted by the
    absolute winding number. Crossing curves, touching points and retraced
    segments need no special cases, and identical curves give exactly zero.
    """
    pa, pb = _as_points(a), _as_points(b)
    if np.linalg.norm(pa[0] - pb[0]) > START_TOLERANCE:
        raise CurveFormatError(
            f"curves must share their start point (gap {np.linalg.norm(pa[0] - pb[0]):.3g} m)")
    poly = np.vstack([pa, pb[::-1]])
    p, q = poly, np.roll(poly, -1, axis=0)
    xs = np.unique(np.concatenate([poly[:, 0], _crossing_abscissae(p, q)]))
    slanted = p[:, 0] != q[:, 0]
    p, q = p[slanted], q[slanted]
    if len(p) == 0 or len(xs) < 2:
        return 0.0
    sense = np.sign(q[:, 0] - p[:, 0])
    # interpolate from the left end so a retraced edge rounds identically both ways
    lo = np.where((sense > 0)[:, None], p, q)
    hi = np.where((sense > 0)[:, None], q, p)
    left, right = lo[:, 0], hi[:, 0]
    slope = (hi[:, 1] - lo[:, 1]) / (right - left)
    total = 0.0
    for xl, xr in zip(xs[:-1], xs[1:]):
        active = (left <= xl) & (right >= xr)
        if np.count_nonzero(active) < 2:
            continue
        yl = lo[active, 1] + slope[active] * (xl - left[active])
        yr = lo[active, 1] + slope[active] * (xr - left[active])
        order = np.argsort(0.5 * (yl + yr), kind="stable")
        yl, yr, sg = yl[order], yr[order], sense[active][order]
        # winding number just above each edge, counted from the top
        winding = np.abs(np.cumsum(sg[::-1])[::-1][1:])
        gaps = 0.5 * ((yl[1:] - yl[:-1]) + (yr[1:] - yr[:-1]))
        total += (xr - xl) * float(np.dot(winding, gaps))
    return abs(total)


def area_error(a, b, length: float) -> float:
    """Area between the curves divided by ``length`` (metres)."""
    if not length > 0:
        raise ValueError("length must be positive")
    return float(enclosed_area(a, b) / length)


def compare(a, b, length: float) -> ErrorReport:
    return ErrorReport(tip_error(a, b, length), area_error(a, b, length), float(length))


# --- CSV ------------------------------------------------------------------

def write_centerline(curve, path, units: str = "m") -> None:
    """Write ``index,x_m,y_m[,z_m]`` with coordinates in metres.

    ``curve`` may be a ``Centerline2D`` or an ``(n, 2|3)`` array.
    """
    pts = _as_points(curve)
    if pts.ndim != 2 or pts.shape[1] not in (2, 3):
        raise CurveFormatError("expected (n, 2) or (n, 3) coordinates")
    header = ["index", "x_m", "y_m"] + (["z_m"] if pts.shape[1] == 3 else [])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i, row in enumerate(pts):
            w.writerow([i] + [repr(float(v)) for v in row])


def parse_centerline(text: str, units: str = "m", label: str = "",
                     source: str = "<string>") -> Centerline2D:
    if units not in UNIT_SCALE:
        raise CurveFormatError(f"unknown units {units!r}; expected one of {list(UNIT_SCALE)}")
    rows = list(csv.reader(io.StringIO(text)))
    rows = [(n, r) for n, r in enumerate(rows, start=1) if r and any(c.strip() for c in r)]
    if not rows:
        raise CurveFormatError(f"{source}: empty file")
    header = [c.strip() for c in rows[0][1]]
    if header[:3] != ["index", "x_m", "y_m"] or len(header) not in (3, 4) or \
            (len(header) == 4 and header[3] != "z_m"):
        raise CurveFormatError(f"{source}:{rows[0][0]}: expected header index,x_m,y_m[,z_m]")
    data = rows[1:]
    if not data:
        raise CurveFormatError(f"{source}: no samples")
    width = len(header)
    index, coords = [], []
    for lineno, row in data:
        if len(row) != width:
            raise CurveFormatError(f"{source}:{lineno}: expected {width} fields, got {len(row)}")
        try:
            idx = int(row[0])
            vals = [float(c) for c in row[1:]]
        except ValueError as exc:
            raise CurveFormatError(f"{source}:{lineno}: {exc}") from None
        if not all(np.isfinite(vals)):
            raise CurveFormatError(f"{source}:{lineno}: non-finite coordinate")
        index.append(idx)
        coords.append(vals)
    if np.any(np.diff(index) <= 0):
        bad = int(np.argmax(np.diff(index) <= 0)) + 1
        raise CurveFormatError(f"{source}:{data[bad][0]}: index not strictly increasing")
    pts = np.asarray(coords) * UNIT_SCALE[units]
    notes = []
    if width == 4:
        msg = f"{source}: 3D samples projected onto the x-y plane (z dropped)"
        warnings.warn(msg, ProjectionWarning, stacklevel=3)
        notes.append(msg)
    return Centerline2D(pts[:, :2], label=label, notes=notes)


def read_centerline(path, units: str = "m") -> Centerline2D:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise CurveFormatError(f"cannot read {path}: {exc.strerror}") from None
    return parse_centerline(text, units=units, label=path.stem, source=str(path))
