"""
Datasets, the trigonometric simulation study, and CSV interchange.

Dataset files are UTF-8 CSV with header ``x,t,channel,value,noise_variance``
and ``channel`` in ``{Y, F}``.  Optional metadata (description, seed,
generator settings) lives in a JSON sidecar next to the CSV, named
``<stem>.meta.json``.  Field exports are long-format CSV with header
``x,t,channel,mean,variance``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DatasetParseError, DatasetValidationError, InvalidInputError
from .gp import NoiseModel, Observations

__all__ = [
    "Dataset",
    "GridSpec",
    "FieldGrid",
    "DATASET_COLUMNS",
    "FIELD_COLUMNS",
    "NOISELESS_VARIANCE",
    "DEFAULT_REGION",
    "true_y",
    "true_f",
    "random_points",
    "generate_simulation",
    "save_dataset",
    "load_dataset",
    "export_field",
    "load_field",
    "sidecar_path",
]

DATASET_COLUMNS = ("x", "t", "channel", "value", "noise_variance")
FIELD_COLUMNS = ("x", "t", "channel", "mean", "variance")
NOISELESS_VARIANCE = 1e-12
DEFAULT_REGION = ((0.0, 2.0 * math.pi), (0.0, 2.0 * math.pi))
CHANNELS = ("Y", "F")


def true_y(x, t):
    """Noiseless protein field of the simulation study."""
    return np.cos(x) + np.sin(t)


def true_f(x, t):
    """Forcing that ``true_y`` induces when ``D = alpha = beta = 1``."""
    return np.sin(t) + np.cos(t) + 2.0 * np.cos(x)


@dataclass(eq=False)
class Dataset:
    x: np.ndarray
    t: np.ndarray
    channel: np.ndarray
    value: np.ndarray
    noise_variance: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float).reshape(-1)
        self.t = np.asarray(self.t, dtype=float).reshape(-1)
        self.channel = np.asarray(self.channel, dtype="<U1").reshape(-1)
        self.value = np.asarray(self.value, dtype=float).reshape(-1)
        self.noise_variance = np.asarray(self.noise_variance, dtype=float).reshape(-1)
        self.validate()

    def validate(self):
        n = len(self.x)
        if n == 0:
            raise DatasetValidationError("dataset has no rows")
        if any(len(a) != n for a in (self.t, self.channel, self.value, self.noise_variance)):
            raise DatasetValidationError("dataset columns have different lengths")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.t))):
            raise DatasetValidationError("coordinates must be finite")
        if not np.all(np.isfinite(self.value)):
            raise DatasetValidationError("values must be finite")
        if not np.all(np.isin(self.channel, CHANNELS)):
            raise DatasetValidationError("channel must be 'Y' or 'F'")
        bad = np.flatnonzero(~(self.noise_variance > 0) | ~np.isfinite(self.noise_variance))
        if len(bad):
            raise DatasetValidationError(f"noise_variance must be > 0 (row {bad[0] + 1})")

    def __len__(self):
        return len(self.x)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            np.array_equal(self.x, other.x)
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.channel, other.channel)
            and np.array_equal(self.value, other.value)
            and np.array_equal(self.noise_variance, other.noise_variance)
            and self.metadata == other.metadata
        )

    def select(self, channel):
        mask = self.channel == channel
        return Dataset(
            self.x[mask], self.t[mask], self.channel[mask], self.value[mask], self.noise_variance[mask], dict(self.metadata)
        )

    def to_gp(self) -> tuple[Observations, NoiseModel]:
        """Stack rows Y-first (stable within each channel) for the GP."""
        order = np.concatenate([np.flatnonzero(self.channel == "Y"), np.flatnonzero(self.channel == "F")])
        pts = np.column_stack([self.x, self.t])
        ymask = self.channel == "Y"
        fmask = ~ymask
        obs = Observations(pts[ymask], pts[fmask], self.value[order])
        return obs, NoiseModel(self.noise_variance[order])


@dataclass(frozen=True)
class GridSpec:
    """Rectangular grid ``x0:x1:nx,t0:t1:nt`` with endpoints included."""

    x0: float
    x1: float
    nx: int
    t0: float
    t1: float
    nt: int

    def __post_init__(self):
        if self.nx < 1 or self.nt < 1:
            raise InvalidInputError("grid needs at least one point per axis")
        if (self.nx > 1 and not self.x1 > self.x0) or (self.nt > 1 and not self.t1 > self.t0):
            raise InvalidInputError("grid axes must be increasing")

    @classmethod
    def parse(cls, text: str) -> "GridSpec":
        try:
            xs, ts = text.split(",")
            x0, x1, nx = xs.split(":")
            t0, t1, nt = ts.split(":")
            return cls(float(x0), float(x1), int(nx), float(t0), float(t1), int(nt))
        except ValueError:
            raise InvalidInputError(f"grid spec must look like 'x0:x1:nx,t0:t1:nt', got {text!r}") from None

    def __str__(self):
        return f"{self.x0!r}:{self.x1!r}:{self.nx},{self.t0!r}:{self.t1!r}:{self.nt}"

    @property
    def x_axis(self):
        return np.linspace(self.x0, self.x1, self.nx)

    @property
    def t_axis(self):
        return np.linspace(self.t0, self.t1, self.nt)

    def points(self) -> np.ndarray:
        """Grid points, x-major (matching ``(nx, nt)`` reshapes)."""
        xx, tt = np.meshgrid(self.x_axis, self.t_axis, indexing="ij")
        return np.column_stack([xx.ravel(), tt.ravel()])


def random_points(n: int, region=DEFAULT_REGION, rng=None) -> np.ndarray:
    rng = np.random.default_rng(rng)
    (x0, x1), (t0, t1) = region
    return np.column_stack([rng.uniform(x0, x1, n), rng.uniform(t0, t1, n)])


def generate_simulation(points=None, sigma0: float = 0.1, seed: int = 0, n_points: int = 60, region=DEFAULT_REGION) -> Dataset:
    """Noisy samples of the trigonometric test fields.

    Each location yields one Y row and one F row; all Y rows come first.

    Parameters
    ----------
    points : array_like of shape (n, 2), GridSpec, or None
        Observation locations.  ``None`` draws ``n_points`` uniformly over
        ``region`` from the same seeded generator as the noise.
    sigma0 : float
        Noise standard deviation; 0 gives noiseless values with a tiny
        positive recorded variance.
    seed : int
    """
    if not sigma0 >= 0:
        raise InvalidInputError("sigma0 must be >= 0")
    rng = np.random.default_rng(seed)
    if points is None:
        if n_points < 1:
            raise InvalidInputError("n_points must be >= 1")
        pts = random_points(n_points, region, rng)
        point_spec = {"random": n_points, "region": [list(map(float, r)) for r in region]}
    elif isinstance(points, GridSpec):
        pts = points.points()
        point_spec = {"grid": str(points)}
    else:
        pts = np.asarray(points, dtype=float).reshape(-1, 2) if np.size(points) else np.zeros((0, 2))
        point_spec = {"explicit": len(pts)}
    if len(pts) == 0:
        raise InvalidInputError("no observation points")
    x = np.concatenate([pts[:, 0], pts[:, 0]])
    t = np.concatenate([pts[:, 1], pts[:, 1]])
    clean = np.concatenate([true_y(pts[:, 0], pts[:, 1]), true_f(pts[:, 0], pts[:, 1])])
    value = clean + sigma0 * rng.standard_normal(len(clean)) if sigma0 > 0 else clean
    var = max(sigma0**2, NOISELESS_VARIANCE)
    channel = np.array(["Y"] * len(pts) + ["F"] * len(pts))
    meta = {
        "description": "trigonometric simulation: y = cos x + sin t, f = sin t + cos t + 2 cos x",
        "seed": int(seed),
        "sigma0": float(sigma0),
        "points": point_spec,
        "generator": "pdegp.data.generate_simulation",
    }
    return Dataset(x, t, channel, value, np.full(len(x), var), meta)


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


def save_dataset(ds: Dataset, path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DATASET_COLUMNS)
        for row in zip(ds.x, ds.t, ds.channel, ds.value, ds.noise_variance):
            w.writerow([repr(float(row[0])), repr(float(row[1])), row[2], repr(float(row[3])), repr(float(row[4]))])
    side = sidecar_path(path)
    if ds.metadata:
        side.write_text(json.dumps(ds.metadata, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    elif side.exists():
        side.unlink()
    return path


def _float(text, line, column):
    try:
        return float(text)
    except ValueError:
        raise DatasetParseError(f"cannot parse {text!r} as a number", line, column) from None


def load_dataset(path, default_noise_variance: float | None = None) -> Dataset:
    """Read a dataset CSV (and its sidecar, if present).

    Parameters
    ----------
    default_noise_variance : float, optional
        Homoscedastic variance applied to every row when the file has no
        ``noise_variance`` column.  Without it such files are rejected.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DatasetParseError("empty file: missing header", 1)
    header = [h.strip() for h in rows[0]]
    missing = [c for c in DATASET_COLUMNS[:4] if c not in header]
    if missing:
        raise DatasetParseError(f"header lacks required columns {missing}", 1)
    has_noise = "noise_variance" in header
    if not has_noise and default_noise_variance is None:
        raise DatasetValidationError(
            "no noise_variance column; supply a homoscedastic default "
            "(default_noise_variance=... / --noise-variance VALUE)"
        )
    if not has_noise and not default_noise_variance > 0:
        raise DatasetValidationError("default noise variance must be > 0")
    idx = {c: header.index(c) for c in DATASET_COLUMNS if c in header}
    cols = {c: [] for c in DATASET_COLUMNS}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise DatasetParseError(f"expected {len(header)} fields, found {len(row)}", lineno)
        ch = row[idx["channel"]].strip()
        if ch not in CHANNELS:
            raise DatasetParseError(f"channel must be 'Y' or 'F', got {ch!r}", lineno, "channel")
        cols["channel"].append(ch)
        for c in ("x", "t", "value"):
            v = _float(row[idx[c]], lineno, c)
            if not math.isfinite(v):
                raise DatasetValidationError(f"line {lineno}: {c} must be finite")
            cols[c].append(v)
        if has_noise:
            nv = _float(row[idx["noise_variance"]], lineno, "noise_variance")
            if not nv > 0 or not math.isfinite(nv):
                raise DatasetValidationError(f"line {lineno}: noise_variance must be > 0, got {nv!r}")
        else:
            nv = float(default_noise_variance)
        cols["noise_variance"].append(nv)
    side = sidecar_path(path)
    meta = json.loads(side.read_text(encoding="utf-8")) if side.exists() else {}
    return Dataset(cols["x"], cols["t"], cols["channel"], cols["value"], cols["noise_variance"], meta)


@dataclass
class FieldGrid:
    """Posterior mean and variance per channel on an ``x`` by ``t`` grid.

    ``channels`` maps ``'Y'``/``'F'`` to ``(mean, variance)`` arrays of shape
    ``(len(x), len(t))``.
    """

    x: np.ndarray
    t: np.ndarray
    channels: dict

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.t = np.asarray(self.t, dtype=float)
        for axis, name in ((self.x, "x"), (self.t, "t")):
            if axis.ndim != 1 or len(axis) == 0 or np.any(np.diff(axis) <= 0):
                raise InvalidInputError(f"{name} axis must be non-empty and strictly increasing")
        shape = (len(self.x), len(self.t))
        chans = {}
        for ch, (mean, var) in self.channels.items():
            if ch not in CHANNELS:
                raise InvalidInputError(f"unknown channel {ch!r}")
            mean = np.asarray(mean, dtype=float)
            var = np.asarray(var, dtype=float)
            if mean.shape != shape or var.shape != shape:
                raise InvalidInputError(f"channel {ch} arrays must have shape {shape}")
            if np.any(var < 0):
                raise InvalidInputError("field variances must be >= 0")
            chans[ch] = (mean, var)
        self.channels = chans

    @classmethod
    def from_prediction(cls, grid: GridSpec, pred_by_channel: dict):
        shape = (grid.nx, grid.nt)
        chans = {ch: (p.mean.reshape(shape), p.variance.reshape(shape)) for ch, p in pred_by_channel.items()}
        return cls(grid.x_axis, grid.t_axis, chans)


def export_field(field_grid: FieldGrid, path) -> Path:
    path = Path(path)
    rows = []
    for ch, (mean, var) in field_grid.channels.items():
        for i, x in enumerate(field_grid.x):
            for j, t in enumerate(field_grid.t):
                rows.append((ch, float(x), float(t), float(mean[i, j]), float(var[i, j])))
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FIELD_COLUMNS)
        for ch, x, t, m, v in rows:
            w.writerow([repr(x), repr(t), ch, repr(m), repr(v)])
    return path


def load_field(path) -> FieldGrid:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(h.strip() for h in rows[0]) != FIELD_COLUMNS:
        raise DatasetParseError(f"field header must be {','.join(FIELD_COLUMNS)}", 1)
    recs = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(FIELD_COLUMNS):
            raise DatasetParseError(f"expected {len(FIELD_COLUMNS)} fields, found {len(row)}", lineno)
        ch = row[2].strip()
        if ch not in CHANNELS:
            raise DatasetParseError(f"channel must be 'Y' or 'F', got {ch!r}", lineno, "channel")
        recs.append(
            (ch, _float(row[0], lineno, "x"), _float(row[1], lineno, "t"), _float(row[3], lineno, "mean"), _float(row[4], lineno, "variance"))
        )
    if not recs:
        raise DatasetParseError("field file has no rows", 2)
    xs = np.unique([r[1] for r in recs])
    ts = np.unique([r[2] for r in recs])
    chans = {}
    for ch in sorted({r[0] for r in recs}):
        mean = np.full((len(xs), len(ts)), np.nan)
        var = np.full_like(mean, np.nan)
        for c, x, t, m, v in recs:
            if c == ch:
                i, j = np.searchsorted(xs, x), np.searchsorted(ts, t)
                mean[i, j], var[i, j] = m, v
        if np.any(np.isnan(mean)):
            raise DatasetParseError(f"channel {ch} does not cover the full grid")
        chans[ch] = (mean, var)
    return FieldGrid(xs, ts, chans)
