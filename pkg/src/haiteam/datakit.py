"""Multi-label datasets: LIBSVM I/O, synthetic generators and splitting."""
from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np

SNAPSHOT_TAG = "haiteam-dataset v1"


class LibsvmParseError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class EmptyDatasetError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class MultiLabelDataset:
    """Dense contexts ``X`` (n, d) with a label set per row over ``n_labels`` actions.

    Rows with an empty label set are kept but flagged via ``empty_mask``.
    """

    X: np.ndarray
    labels: tuple[frozenset[int], ...]
    n_labels: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 2:
            raise ValueError("X must be a 2-D array")
        object.__setattr__(self, "X", X)
        if X.shape[0] == 0:
            raise EmptyDatasetError("dataset has no instances")
        if len(self.labels) != X.shape[0]:
            raise ValueError(f"{len(self.labels)} label sets for {X.shape[0]} instances")
        labels = tuple(frozenset(int(a) for a in y) for y in self.labels)
        object.__setattr__(self, "labels", labels)
        for i, y in enumerate(labels):
            if any(a < 0 or a >= self.n_labels for a in y):
                raise ValueError(f"instance {i}: label outside [0, {self.n_labels})")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def Y(self) -> np.ndarray:
        """Boolean indicator matrix (n, n_labels); ``Y[i, a]`` is the reward of action ``a``."""
        Y = np.zeros((self.n, self.n_labels), dtype=bool)
        for i, y in enumerate(self.labels):
            Y[i, list(y)] = True
        return Y

    @property
    def empty_mask(self) -> np.ndarray:
        return np.array([len(y) == 0 for y in self.labels])

    def subset(self, idx) -> "MultiLabelDataset":
        idx = np.asarray(idx, dtype=int)
        meta = dict(self.meta)
        for k, v in self.meta.items():
            if isinstance(v, np.ndarray) and v.shape[:1] == (self.n,):
                meta[k] = v[idx]
        return MultiLabelDataset(self.X[idx], tuple(self.labels[i] for i in idx), self.n_labels, meta)

    def with_features(self, X: np.ndarray) -> "MultiLabelDataset":
        return MultiLabelDataset(X, self.labels, self.n_labels, dict(self.meta))

    def equals(self, other: "MultiLabelDataset") -> bool:
        return (
            self.n_labels == other.n_labels
            and self.X.shape == other.X.shape
            and bool(np.array_equal(self.X, other.X))
            and self.labels == other.labels
        )


# --------------------------------------------------------------------------
# LIBSVM multilabel format


def _parse_header(line: str) -> dict | None:
    body = line.lstrip("#").strip()
    if body.startswith(SNAPSHOT_TAG):
        return json.loads(body[len(SNAPSHOT_TAG):])
    return None


def parse_libsvm_multilabel(
    stream: TextIO | Iterable[str], n_features: int | None = None, n_labels: int | None = None
) -> MultiLabelDataset:
    """Read ``L1,L2 i1:v1 i2:v2 ...`` lines (1-based feature indices).

    Lines starting with ``#`` are comments, except a snapshot header written by
    :func:`write_libsvm_multilabel`, which fixes ``d`` and ``l``. A first line
    of three integers (``n d l``, as in extreme-classification dumps) is also
    accepted as a header.
    """
    labels: list[frozenset[int]] = []
    rows: list[dict[int, float]] = []
    meta: dict = {}
    max_index = 0
    for lineno, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            header = _parse_header(line)
            if header:
                meta.update(header)
                n_features = n_features or header.get("d")
                n_labels = n_labels or header.get("l")
            continue
        tokens = line.split()
        if lineno == 1 and len(tokens) == 3 and all(t.isdigit() for t in tokens):
            _, d_decl, l_decl = (int(t) for t in tokens)
            n_features = n_features or d_decl
            n_labels = n_labels or l_decl
            continue
        if ":" in tokens[0]:
            label_tok, feats = "", tokens
        else:
            label_tok, feats = tokens[0], tokens[1:]
        try:
            y = frozenset(int(t) for t in label_tok.split(",") if t != "")
        except ValueError:
            raise LibsvmParseError(lineno, f"bad label list {label_tok!r}") from None
        if any(a < 0 for a in y):
            raise LibsvmParseError(lineno, "negative label")
        row: dict[int, float] = {}
        for tok in feats:
            idx, sep, val = tok.partition(":")
            if not sep:
                raise LibsvmParseError(lineno, f"expected index:value, got {tok!r}")
            try:
                j = int(idx)
                v = float(val)
            except ValueError:
                raise LibsvmParseError(lineno, f"malformed feature {tok!r}") from None
            if j < 1:
                raise LibsvmParseError(lineno, f"feature index {j} must be >= 1")
            if not math.isfinite(v):
                raise LibsvmParseError(lineno, f"non-finite feature value {tok!r}")
            row[j] = v
            max_index = max(max_index, j)
        labels.append(y)
        rows.append(row)
    if not rows:
        raise EmptyDatasetError("no instances in input")
    d = max(max_index, n_features or 0, 1)
    l_seen = max((max(y) + 1 for y in labels if y), default=1)
    l = max(l_seen, n_labels or 0)
    X = np.zeros((len(rows), d))
    for i, row in enumerate(rows):
        for j, v in row.items():
            X[i, j - 1] = v
    meta.pop("d", None)
    meta.pop("l", None)
    return MultiLabelDataset(X, tuple(labels), l, meta)


def read_libsvm_multilabel(path, **kw) -> MultiLabelDataset:
    with open(path) as f:
        return parse_libsvm_multilabel(f, **kw)


def serialize_libsvm_multilabel(ds: MultiLabelDataset, seed: int | None = None) -> str:
    buf = io.StringIO()
    write_libsvm_multilabel(ds, buf, seed=seed)
    return buf.getvalue()


def write_libsvm_multilabel(ds: MultiLabelDataset, out: TextIO, seed: int | None = None) -> None:
    """Write ``ds`` with a snapshot header ``{n, d, l, seed}``; values use ``repr`` so they round-trip."""
    if seed is None:
        seed = ds.meta.get("seed")
    header = {"n": ds.n, "d": ds.d, "l": ds.n_labels, "seed": seed}
    out.write(f"# {SNAPSHOT_TAG} {json.dumps(header, sort_keys=True)}\n")
    for x, y in zip(ds.X, ds.labels):
        parts = [",".join(str(a) for a in sorted(y))]
        feats = [f"{j + 1}:{float(v)!r}" for j, v in enumerate(x) if v != 0.0]
        # an all-zero row still needs a token, or an unlabeled row would become a blank line
        parts += feats or ["1:0.0"]
        out.write(" ".join(parts).strip() + "\n")


def save_libsvm_multilabel(ds: MultiLabelDataset, path, seed: int | None = None) -> None:
    with open(path, "w") as f:
        write_libsvm_multilabel(ds, f, seed=seed)


# --------------------------------------------------------------------------
# generators


def make_synthetic_multilabel(
    n: int,
    d: int,
    l: int,
    label_noise: float = 0.0,
    seed: int | None = 0,
    separation: float = 2.0,
) -> MultiLabelDataset:
    """Gaussian mixture with one cluster per label.

    Cluster centres are drawn from ``N(0, separation^2 I)`` and points are
    centre plus unit Gaussian noise, so nearby centres produce regions where no
    classifier does well. With probability ``label_noise`` a second label,
    uniform over the other labels, joins the cluster label.
    """
    if n < 1 or d < 1 or l < 1:
        raise ValueError("n, d and l must all be >= 1")
    if not 0.0 <= label_noise <= 1.0:
        raise ValueError("label_noise must be in [0, 1]")
    rng = np.random.default_rng(seed)
    centres = rng.normal(0.0, separation, size=(l, d))
    cluster = rng.integers(0, l, size=n)
    X = centres[cluster] + rng.normal(size=(n, d))
    extra = rng.random(n) < label_noise if l > 1 else np.zeros(n, dtype=bool)
    shift = rng.integers(1, max(l, 2), size=n)
    labels = []
    for c, e, s in zip(cluster, extra, shift):
        labels.append(frozenset({int(c), int((c + s) % l)}) if e else frozenset({int(c)}))
    return MultiLabelDataset(X, tuple(labels), l, {"seed": seed, "cluster": cluster})


def compliance_rule(X: np.ndarray) -> np.ndarray:
    """Nonlinear treat(1)/don't-treat(0) rule that labels :func:`make_compliance_2d`.

    The boundary is the V-shaped curve ``x2 = 0.5 * |x1|``. Compliers lie above
    it on the right (``x1 > 0``) and below it on the left, so the two halves
    pull a single hyperplane in opposite directions.
    """
    X = np.atleast_2d(X)
    x1, x2 = X[:, 0], X[:, 1]
    above = x2 > 0.5 * np.abs(x1)
    return np.where(x1 > 0, above, ~above).astype(int)


def make_compliance_2d(n: int, seed: int | None = 0, expert_share: float = 0.5) -> MultiLabelDataset:
    """Two-dimensional compliers/non-compliers instance with a binary action space.

    Each half is separable by its own hyperplane, but the two hyperplanes
    put compliers on opposite sides, so no single hyperplane fits both. A
    margin of 0.15 keeps every point off the boundary. ``meta["region"]`` is 1
    on the left (expert) region.
    """
    if n < 4:
        raise ValueError("need at least 4 instances")
    rng = np.random.default_rng(seed)
    X = np.empty((n, 2))
    region = (rng.random(n) < expert_share).astype(int)
    region[:2] = (0, 1)
    filled = np.zeros(n, dtype=bool)
    margin = 0.15
    while not filled.all():
        todo = np.flatnonzero(~filled)
        m = todo.size
        x1 = np.where(region[todo] == 1, rng.uniform(-3.0, -0.5, m), rng.uniform(0.5, 3.0, m))
        x2 = rng.uniform(-2.5, 2.5, m)
        gap = np.abs(x2 - 0.5 * np.abs(x1))
        ok = gap > margin
        X[todo[ok], 0] = x1[ok]
        X[todo[ok], 1] = x2[ok]
        filled[todo[ok]] = True
    treat = compliance_rule(X)
    labels = tuple(frozenset({int(a)}) for a in treat)
    return MultiLabelDataset(X, labels, 2, {"seed": seed, "region": region})


# --------------------------------------------------------------------------
# splitting and preprocessing


@dataclass(frozen=True)
class SplitSpec:
    test_fraction: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError(f"test fraction must be in (0, 1), got {self.test_fraction}")


def split(ds: MultiLabelDataset, spec: SplitSpec) -> tuple[MultiLabelDataset, MultiLabelDataset]:
    """Seeded train/test partition with ``round(fraction * n)`` test rows."""
    perm = np.random.default_rng(spec.seed).permutation(ds.n)
    n_test = int(round(spec.test_fraction * ds.n))
    test_idx = np.sort(perm[:n_test])
    train_idx = np.sort(perm[n_test:])
    return ds.subset(train_idx), ds.subset(test_idx)


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, ds: MultiLabelDataset) -> "Standardizer":
        scale = ds.X.std(axis=0)
        scale[scale == 0] = 1.0
        return cls(ds.X.mean(axis=0), scale)

    def apply(self, ds: MultiLabelDataset) -> MultiLabelDataset:
        return ds.with_features((ds.X - self.mean) / self.scale)


def standardize(train: MultiLabelDataset, test: MultiLabelDataset):
    """z-score both splits with statistics from ``train`` only."""
    st = Standardizer.fit(train)
    return st.apply(train), st.apply(test)


def best_hyperplane_accuracy(X: np.ndarray, y: np.ndarray, n_angles: int = 720) -> float:
    """Exhaustive sweep over 2-D hyperplanes (angle grid, every distinct offset).

    Used as an oracle for how well a linear policy can possibly do.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y).astype(bool)
    n = len(y)
    best = 0.0
    for theta in np.linspace(0.0, 2 * np.pi, n_angles, endpoint=False):
        proj = X @ np.array([np.cos(theta), np.sin(theta)])
        order = np.argsort(proj, kind="stable")
        ys = y[order]
        # predict positive for the top n-k projections
        pos_above = np.concatenate(([0], np.cumsum(ys[::-1])))[::-1]  # positives in suffix starting at k
        neg_below = np.concatenate(([0], np.cumsum(~ys)))  # negatives in prefix of length k
        correct = pos_above + neg_below
        best = max(best, correct.max() / n)
    return float(best)
