"""Datasets: segmentation, min-max scaling, folds, stratified subsampling, CSV I/O, synthetic domains."""

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, CoverageError, DataError, ParseError

log = logging.getLogger(__name__)


@dataclass
class TimeSeries:
    values: np.ndarray
    sample_rate: float = 1.0
    label: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        if self.values.size < 1:
            raise DataError("time series must hold at least one value")
        if not np.all(np.isfinite(self.values)):
            raise DataError("time series values must be finite")


@dataclass
class TrainingSet:
    X: np.ndarray
    y: np.ndarray
    normalization: tuple = None  # (mins, maxs) per feature

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=int).reshape(-1)
        if self.X.ndim != 2:
            self.X = self.X.reshape(len(self.y), -1)
        if self.X.shape[0] != self.y.shape[0]:
            raise DataError(f"{self.X.shape[0]} samples but {self.y.shape[0]} labels")

    def __len__(self):
        return self.X.shape[0]

    @property
    def dim(self):
        return self.X.shape[1]

    def subset(self, idx):
        return TrainingSet(self.X[idx], self.y[idx], self.normalization)


@dataclass
class DomainPair:
    source: TrainingSet
    target_train: TrainingSet
    target_test: TrainingSet
    n_classes: int

    def __post_init__(self):
        dims = {self.source.dim, self.target_train.dim, self.target_test.dim}
        if len(dims) != 1:
            raise DataError(f"domains disagree on feature dimension: {sorted(dims)}")


def segment(series, L):
    """Non-overlapping windows of length ``L``; the trailing remainder is dropped."""
    L = int(L)
    if L < 1:
        raise ConfigError("segment length must be >= 1")
    n = series.values.size // L
    if n == 0:
        log.warning("series of length %d shorter than segment length %d", series.values.size, L)
    return [series.values[i * L:(i + 1) * L].copy() for i in range(n)]


def segment_all(series_list, L):
    X, y = [], []
    for s in series_list:
        segs = segment(s, L)
        X += segs
        y += [s.label] * len(segs)
    return TrainingSet(np.array(X).reshape(len(X), int(L)), np.array(y, dtype=int))


def minmax_params(X):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError("cannot normalise an empty set")
    return X.min(axis=0), X.max(axis=0)


def apply_normalization(ts, params):
    """Scale with stored (min, max); constant features map to 0 and nothing is clipped."""
    if len(ts) == 0:
        raise DataError("cannot normalise an empty set")
    lo, hi = (np.asarray(p, dtype=float) for p in params)
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    Xn = np.where(span > 0, (ts.X - lo) / safe, 0.0)
    return TrainingSet(Xn, ts.y.copy(), (lo, hi))


def minmax_normalize(ts):
    return apply_normalization(ts, minmax_params(ts.X))


def dumps_norm_params(params):
    lo, hi = params
    return json.dumps({"min": np.asarray(lo).tolist(), "max": np.asarray(hi).tolist()}) + "\n"


def loads_norm_params(text):
    try:
        d = json.loads(text)
        return np.asarray(d["min"], dtype=float), np.asarray(d["max"], dtype=float)
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed normalisation file: {exc}") from exc


def kfold_split(n, k, seed=0):
    n, k = int(n), int(k)
    if k < 2:
        raise ConfigError("need at least two folds")
    if n < k:
        raise DataError(f"{n} samples cannot fill {k} folds")
    perm = np.random.default_rng(seed).permutation(n)
    folds = np.array_split(perm, k)
    everything = np.arange(n)
    return [(np.setdiff1d(everything, f), np.sort(f)) for f in folds]


def subsample_labeled(ts, fraction, seed=0, n_classes=None):
    """Stratified sample of ceil(fraction * n_c) rows per class, in original order."""
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"fraction must lie in (0, 1], got {fraction}")
    if n_classes is None:
        n_classes = int(ts.y.max()) + 1 if len(ts) else 0
    rng = np.random.default_rng(seed)
    keep = []
    empty = []
    for c in range(n_classes):
        idx = np.flatnonzero(ts.y == c)
        if idx.size == 0:
            empty.append(c)
            continue
        m = math.ceil(fraction * idx.size)
        keep.append(rng.choice(idx, size=m, replace=False))
    if empty:
        raise CoverageError(f"classes {empty} have no samples to subsample", empty)
    return ts.subset(np.sort(np.concatenate(keep)))


# -- CSV ---------------------------------------------------------------------


def _parse_label(raw, class_map, lineno):
    raw = raw.strip()
    if class_map is not None:
        if raw in class_map:
            return int(class_map[raw])
        try:
            as_int = int(raw)
        except ValueError:
            raise DataError(f"line {lineno}: unknown label {raw!r}") from None
        if as_int not in set(class_map.values()):
            raise DataError(f"line {lineno}: unknown label {raw!r}")
        return as_int
    try:
        return int(raw)
    except ValueError:
        raise DataError(f"line {lineno}: unknown label {raw!r} (no class map given)") from None


def load_timeseries_csv(path, class_map=None, sample_rate=1.0):
    """Read ``label,v0,v1,...`` rows; each row becomes one TimeSeries.

    Trailing empty cells are allowed so series of different lengths can
    share a file.
    """
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return out
        if not header or header[0].strip() != "label":
            raise ParseError("line 1: header must start with 'label'")
        for row in reader:
            lineno = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            label = _parse_label(row[0], class_map, lineno)
            cells = row[1:]
            while cells and not cells[-1].strip():
                cells.pop()
            try:
                values = [float(c) for c in cells]
            except ValueError as exc:
                raise ParseError(f"line {lineno}: {exc}") from None
            if not values:
                raise ParseError(f"line {lineno}: no values")
            try:
                out.append(TimeSeries(values, sample_rate, label))
            except DataError as exc:
                raise ParseError(f"line {lineno}: {exc}") from None
    return out


def load_samples_csv(path, class_map=None, segment_length=None):
    """Load a TrainingSet from CSV: pre-segmented rows, or long series cut into windows."""
    series = load_timeseries_csv(path, class_map)
    if segment_length:
        return segment_all(series, segment_length)
    if not series:
        return TrainingSet(np.zeros((0, 0)), np.zeros(0, dtype=int))
    lengths = {s.values.size for s in series}
    if len(lengths) != 1:
        raise ParseError(f"{path}: pre-segmented rows must share one length, got {sorted(lengths)}")
    return TrainingSet(np.vstack([s.values for s in series]), np.array([s.label for s in series]))


def samples_csv_text(ts):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["label"] + [f"v{i}" for i in range(ts.dim)])
    for x, label in zip(ts.X, ts.y):
        w.writerow([int(label)] + [repr(float(v)) for v in x])
    return buf.getvalue()


def load_class_map(path):
    with open(path, encoding="utf-8") as fh:
        try:
            m = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: malformed class map ({exc.msg})") from exc
    if not isinstance(m, dict) or not all(isinstance(v, int) for v in m.values()):
        raise DataError(f"{path}: class map must be an object of name -> integer label")
    return m


# -- synthetic domains -------------------------------------------------------


@dataclass
class SynthSpec:
    C: int = 4
    d: int = 32
    n_source: int = 200
    n_target: int = 40
    n_target_test: int = 200
    shift: float = 0.5
    noise: float = 0.1

    def __post_init__(self):
        if self.C < 2 or self.d < 2:
            raise ConfigError("synthetic spec needs C >= 2 and d >= 2")
        if min(self.n_source, self.n_target, self.n_target_test) < 1:
            raise ConfigError("sample counts must be positive")
        if self.noise < 0:
            raise ConfigError("noise must be non-negative")


def _class_waveforms(spec, n, shift, rng):
    """Windowed multi-harmonic sinusoids; class c has its own base frequency and harmonic mix.

    ``shift`` scales the amplitude by (1 + shift) and moves every frequency
    by ``0.6 * shift`` cycles per window.
    """
    t = np.arange(spec.d) / spec.d
    window = np.hanning(spec.d + 2)[1:-1]
    X, y = [], []
    for c in range(spec.C):
        f0 = 1.5 + 1.25 * c + 0.6 * shift
        mix = np.array([1.0, 0.5 * ((c % 2) + 0.5), 0.3 * (c % 3)])
        phase = rng.uniform(-0.4, 0.4, size=(n, 1))
        sig = sum(m * np.sin(2 * np.pi * (h + 1) * f0 * t + (h + 1) * phase)
                  for h, m in enumerate(mix))
        sig = (1.0 + shift) * window * sig
        X.append(sig + spec.noise * rng.standard_normal((n, spec.d)))
        y.append(np.full(n, c))
    return np.vstack(X), np.concatenate(y)


def synth_domains(spec, seed=0):
    """Balanced source/target domains for desk-scale experiments (unnormalised)."""
    if isinstance(spec, dict):
        spec = SynthSpec(**spec)
    rng = np.random.default_rng(seed)
    Xs, ys = _class_waveforms(spec, spec.n_source, 0.0, rng)
    Xt, yt = _class_waveforms(spec, spec.n_target, spec.shift, rng)
    Xe, ye = _class_waveforms(spec, spec.n_target_test, spec.shift, rng)
    return DomainPair(TrainingSet(Xs, ys), TrainingSet(Xt, yt), TrainingSet(Xe, ye), spec.C)


def normalize_pair(pair):
    """Source scaled on itself; target train scaled on itself, its params reused on target test."""
    src = minmax_normalize(pair.source)
    tgt = minmax_normalize(pair.target_train)
    test = apply_normalization(pair.target_test, tgt.normalization)
    return replace(pair, source=src, target_train=tgt, target_test=test)
