"""Downstream evaluation: multinomial logit on latent features, balanced CV,
per-class metrics, audits of generated samples and replay frames.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import data as data_mod
from . import linalg, models
from .errors import SingleClass, TooFewSamples

log = logging.getLogger(__name__)

DEFAULT_L2_GRID = (1e-3, 1e-2, 1e-1)


# ---------------------------------------------------------------- logit


@dataclass
class LogitModel:
    weights: np.ndarray  # (n_classes, n_features + 1); last column is the bias
    l2_penalty: float = 0.0
    converged: bool = True
    iterations: int = 0
    # feature standardisation applied before the linear map (None: identity)
    shift: np.ndarray | None = None
    scale: np.ndarray | None = None

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    def transform(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.shift is not None:
            x = x - self.shift
        if self.scale is not None:
            x = x / self.scale
        return x

    def decision_function(self, x) -> np.ndarray:
        return self.transform(x) @ self.weights[:, :-1].T + self.weights[:, -1]

    def predict_proba(self, x) -> np.ndarray:
        s = self.decision_function(x)
        s = s - s.max(axis=1, keepdims=True)
        p = np.exp(s)
        return p / p.sum(axis=1, keepdims=True)

    def predict(self, x) -> np.ndarray:
        # argmax returns the first maximum: ties go to the lowest class index
        return np.argmax(self.decision_function(x), axis=1)


def _augment(x: np.ndarray) -> np.ndarray:
    return np.hstack([x, np.ones((x.shape[0], 1))])


def _objective(w, xa, onehot, l2):
    s = xa @ w.T
    s = s - s.max(axis=1, keepdims=True)
    logz = np.log(np.sum(np.exp(s), axis=1))
    n = xa.shape[0]
    loss = -np.sum(onehot * (s - logz[:, None])) / n + 0.5 * l2 * np.sum(w[:, :-1] ** 2)
    p = np.exp(s - logz[:, None])
    grad = (p - onehot).T @ xa / n
    grad[:, :-1] += l2 * w[:, :-1]
    return loss, grad


def logit_gradient(model: LogitModel, features, labels) -> np.ndarray:
    """Gradient of the regularised mean cross-entropy at ``model.weights``."""
    xa = _augment(model.transform(features))
    onehot = np.eye(model.n_classes)[np.asarray(labels)]
    return _objective(model.weights, xa, onehot, model.l2_penalty)[1]


def _fit_fixed(x, y, n_classes, l2, tol=1e-6, max_iter=10_000, standardize=True) -> LogitModel:
    """Accelerated full-batch gradient descent with adaptive restart."""
    shift = scale = None
    if standardize:
        shift = x.mean(axis=0)
        scale = x.std(axis=0)
        scale[scale == 0.0] = 1.0
        x = (x - shift) / scale
    xa = _augment(x)
    onehot = np.eye(n_classes)[y]
    n = xa.shape[0]
    # curvature bound for the softmax cross-entropy plus the ridge term
    lip = 0.5 * float(np.linalg.norm(xa, 2)) ** 2 / n + l2
    step = 1.0 / lip
    w = np.zeros((n_classes, xa.shape[1]))
    w_prev = w.copy()
    y_pt = w.copy()
    t = 1.0
    f_prev = math.inf
    for it in range(1, max_iter + 1):
        f_y, g_y = _objective(y_pt, xa, onehot, l2)
        w_new = y_pt - step * g_y
        f_new, g_new = _objective(w_new, xa, onehot, l2)
        if np.linalg.norm(g_new) < tol:
            return LogitModel(w_new, l2, True, it, shift, scale)
        if f_new > f_prev:
            # restart momentum
            t = 1.0
            y_pt = w.copy()
            f_prev = math.inf
            continue
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        w_prev, w = w, w_new
        y_pt = w + ((t - 1.0) / t_next) * (w - w_prev)
        t = t_next
        f_prev = f_new
    log.warning("logit did not reach gradient norm %.1g in %d iterations", tol, max_iter)
    return LogitModel(w, l2, False, max_iter, shift, scale)


def stratified_folds(labels, n_folds: int, seed: int) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    folds = [[] for _ in range(n_folds)]
    offset = 0
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        for j, i in enumerate(idx):
            folds[(j + offset) % n_folds].append(int(i))
        offset += len(idx)
    return [np.array(sorted(f), dtype=np.int64) for f in folds]


def fit_logit(
    features,
    labels,
    l2_grid: Sequence[float] = DEFAULT_L2_GRID,
    cv_folds: int = 5,
    seed: int = 0,
    n_classes: int | None = None,
    tol: float = 1e-6,
    max_iter: int = 10_000,
    standardize: bool = True,
) -> LogitModel:
    """L2-regularised multinomial logit; the penalty is picked by inner CV on macro-F1.

    Features are z-scored on the fitting rows so the penalty grid does not
    depend on the feature scale. Ties in CV score go to the larger penalty.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if len(np.unique(y)) < 2:
        raise SingleClass("need at least two classes to fit a classifier")
    n_classes = int(n_classes or y.max() + 1)
    grid = sorted(float(v) for v in l2_grid)
    best_l2 = grid[0]
    if len(grid) > 1 and cv_folds > 1:
        folds = stratified_folds(y, cv_folds, seed)
        best_score = -math.inf
        for l2 in grid:
            scores = []
            for k, test in enumerate(folds):
                train = np.concatenate([f for j, f in enumerate(folds) if j != k])
                if len(test) == 0 or len(np.unique(y[train])) < 2:
                    continue
                m = _fit_fixed(x[train], y[train], n_classes, l2, tol, max_iter, standardize)
                scores.append(evaluate(m, x[test], y[test]).macro["f1"])
            score = float(np.mean(scores)) if scores else -math.inf
            if score >= best_score:
                best_score, best_l2 = score, l2
    return _fit_fixed(x, y, n_classes, best_l2, tol, max_iter, standardize)


# ---------------------------------------------------------------- metrics


@dataclass
class MetricsReport:
    class_names: list[str]
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    confusion: np.ndarray  # rows: true class, cols: predicted
    folds: list[dict] = field(default_factory=list)

    @property
    def macro(self) -> dict[str, float]:
        return {
            "precision": float(np.mean(self.precision)),
            "recall": float(np.mean(self.recall)),
            "f1": float(np.mean(self.f1)),
        }

    @property
    def accuracy(self) -> float:
        total = self.confusion.sum()
        return float(np.trace(self.confusion) / total) if total else 0.0

    def to_dict(self) -> dict:
        return {
            "classes": {
                name: {
                    "precision": float(self.precision[i]),
                    "recall": float(self.recall[i]),
                    "f1": float(self.f1[i]),
                    "support": int(self.support[i]),
                }
                for i, name in enumerate(self.class_names)
            },
            "avg": self.macro,
            "accuracy": self.accuracy,
            "confusion": self.confusion.astype(int).tolist(),
            "folds": self.folds,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        """Per-class P/R/F1 rows followed by an ``avg`` row."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class", "P", "R", "F1"])
        for i, name in enumerate(self.class_names):
            w.writerow([name, f"{self.precision[i]:.6f}", f"{self.recall[i]:.6f}", f"{self.f1[i]:.6f}"])
        m = self.macro
        w.writerow(["avg", f"{m['precision']:.6f}", f"{m['recall']:.6f}", f"{m['f1']:.6f}"])
        return buf.getvalue()


def metrics_from_confusion(confusion: np.ndarray, class_names: Sequence[str]) -> MetricsReport:
    confusion = np.asarray(confusion)
    tp = np.diag(confusion).astype(np.float64)
    pred = confusion.sum(axis=0).astype(np.float64)
    true = confusion.sum(axis=1).astype(np.float64)
    precision = np.divide(tp, pred, out=np.zeros_like(tp), where=pred > 0)
    recall = np.divide(tp, true, out=np.zeros_like(tp), where=true > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    return MetricsReport(list(class_names), precision, recall, f1, true.astype(np.int64), confusion)


def evaluate(model: LogitModel, features, labels, class_names: Sequence[str] | None = None) -> MetricsReport:
    y = np.asarray(labels, dtype=np.int64)
    c = model.n_classes
    names = list(class_names) if class_names is not None else [str(i) for i in range(c)]
    pred = model.predict(features)
    confusion = np.zeros((c, c), dtype=np.int64)
    np.add.at(confusion, (y, pred), 1)
    return metrics_from_confusion(confusion, names)


def average_reports(reports: Sequence[MetricsReport]) -> MetricsReport:
    """Fold-averaged per-class metrics with the pooled confusion matrix."""
    avg = MetricsReport(
        reports[0].class_names,
        np.mean([r.precision for r in reports], axis=0),
        np.mean([r.recall for r in reports], axis=0),
        np.mean([r.f1 for r in reports], axis=0),
        np.sum([r.support for r in reports], axis=0),
        np.sum([r.confusion for r in reports], axis=0),
    )
    return avg


# ---------------------------------------------------------------- CV


def balanced_cv(labels, n_folds: int, per_class_test: int, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Folds whose test sets hold exactly ``per_class_test`` items of every class.

    Items never drawn into a test fold (the imbalanced surplus) always train.
    """
    y = np.asarray(labels, dtype=np.int64)
    classes = np.unique(y)
    min_count = min(int(np.sum(y == c)) for c in classes)
    if min_count < n_folds * per_class_test:
        reduced = min_count // n_folds
        if reduced == 0:
            raise TooFewSamples(f"smallest class has {min_count} items, fewer than {n_folds} folds")
        log.warning("reducing per-class test size from %d to %d", per_class_test, reduced)
        per_class_test = reduced
    rng = np.random.default_rng(seed)
    tests = [[] for _ in range(n_folds)]
    for c in classes:
        idx = rng.permutation(np.flatnonzero(y == c))[: n_folds * per_class_test]
        for f in range(n_folds):
            tests[f].extend(idx[f * per_class_test : (f + 1) * per_class_test].tolist())
    everything = np.arange(len(y))
    out = []
    for t in tests:
        test = np.array(sorted(t), dtype=np.int64)
        out.append((np.setdiff1d(everything, test), test))
    return out


def cross_validate(
    features,
    labels,
    folds,
    class_names: Sequence[str],
    l2_grid: Sequence[float] = DEFAULT_L2_GRID,
    seed: int = 0,
) -> MetricsReport:
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    reports, penalties = [], []
    for k, (train, test) in enumerate(folds):
        clf = fit_logit(x[train], y[train], l2_grid, seed=seed + k, n_classes=len(class_names))
        reports.append(evaluate(clf, x[test], y[test], class_names))
        penalties.append(clf.l2_penalty)
    report = average_reports(reports)
    report.folds = [
        {"fold": k, "test": test.tolist(), "macro_f1": r.macro["f1"], "l2": l2}
        for k, ((_, test), r, l2) in enumerate(zip(folds, reports, penalties))
    ]
    return report


# ---------------------------------------------------------------- latent features


def latent_features(model, dataset) -> np.ndarray:
    """Posterior means ``mu(x)`` as classification features."""
    model = getattr(model, "model", model)
    x = getattr(dataset, "features", dataset)
    return models.latent_means(model, x)


def wilson_interval(k: int, n: int, z: float = 1.959963984540054) -> tuple[float, float]:
    if n == 0:
        return (0.0, 1.0)
    p = k / n
    denom = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    lo = 0.0 if k == 0 else max(0.0, centre - half)
    hi = 1.0 if k == n else min(1.0, centre + half)
    return (lo, hi)


def audit_generated_balance(
    generator,
    n_samples: int,
    reference_classifier: LogitModel,
    seed: int | None = None,
    latents=None,
    class_names: Sequence[str] | None = None,
) -> dict:
    """Generate samples, label them with the reference classifier and report
    class percentages with 95% Wilson intervals."""
    model = getattr(generator, "model", generator)
    if latents is None:
        latents = np.random.default_rng(seed).standard_normal((n_samples, model.latent_dim))
    latents = np.asarray(latents, dtype=np.float64)
    samples = models.generate(model, latents=latents)
    audit = audit_samples(samples, reference_classifier, class_names)
    audit["latent_sha256"] = hashlib.sha256(np.ascontiguousarray(latents).tobytes()).hexdigest()
    return audit


def audit_samples(samples, reference_classifier: LogitModel, class_names: Sequence[str] | None = None) -> dict:
    pred = reference_classifier.predict(samples)
    c = reference_classifier.n_classes
    names = list(class_names) if class_names is not None else [str(i) for i in range(c)]
    counts = np.bincount(pred, minlength=c)
    n = len(pred)
    return {
        "n_samples": n,
        "classes": {
            names[i]: {
                "count": int(counts[i]),
                "percent": 100.0 * counts[i] / n,
                "ci95": [100.0 * v for v in wilson_interval(int(counts[i]), n)],
            }
            for i in range(c)
        },
    }


# ---------------------------------------------------------------- replay


@dataclass
class ReplayFrame:
    window: tuple[float, float]
    points: list[dict]  # trial_id, x, y, label
    region_grid: list[list[int]]  # grid_size x grid_size, row 0 at y_min
    bbox: tuple[float, float, float, float]  # x_min, x_max, y_min, y_max
    class_occupancy: dict[str, float]
    class_names: list[str]

    def to_dict(self) -> dict:
        return {
            "window": list(self.window),
            "points": self.points,
            "region_grid": self.region_grid,
            "bbox": list(self.bbox),
            "class_occupancy": self.class_occupancy,
            "class_names": self.class_names,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReplayFrame":
        return cls(
            tuple(d["window"]),
            d["points"],
            d["region_grid"],
            tuple(d["bbox"]),
            d["class_occupancy"],
            d["class_names"],
        )


@dataclass
class ReplayFit:
    """The train-window projection and classifier shared by all frames."""

    pca: linalg.PCAModel
    classifier: LogitModel
    bbox: tuple[float, float, float, float]
    region_grid: list[list[int]]
    standardizer: data_mod.Standardizer


def fit_replay(
    model,
    trials,
    train_window=data_mod.TRAIN_WINDOW,
    grid_size: int = 200,
    standardizer: data_mod.Standardizer | None = None,
    l2_grid: Sequence[float] = DEFAULT_L2_GRID,
    seed: int = 0,
) -> ReplayFit:
    model = getattr(model, "model", model)
    train = data_mod.window_features(trials, train_window, standardizer)
    mu = models.latent_means(model, train.features)
    pca = linalg.pca_fit(mu, 2)
    pts = pca.transform(mu)
    clf = fit_logit(pts, train.labels, l2_grid, seed=seed, n_classes=len(data_mod.ODORS))
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    pad = 0.1 * (hi - lo)
    bbox = (float(lo[0] - pad[0]), float(hi[0] + pad[0]), float(lo[1] - pad[1]), float(hi[1] + pad[1]))
    xs = np.linspace(bbox[0], bbox[1], grid_size)
    ys = np.linspace(bbox[2], bbox[3], grid_size)
    gx, gy = np.meshgrid(xs, ys)
    grid = clf.predict(np.column_stack([gx.ravel(), gy.ravel()])).reshape(grid_size, grid_size)
    return ReplayFit(pca, clf, bbox, grid.tolist(), train.standardizer)


def replay_frame(fit: ReplayFit, model, trials, window, focus: str | None = None) -> ReplayFrame:
    model = getattr(model, "model", model)
    chosen = [t for t in trials if focus is None or t.odor == focus]
    ds = data_mod.window_features(chosen, window, fit.standardizer)
    pts = fit.pca.transform(models.latent_means(model, ds.features))
    pred = fit.classifier.predict(pts)
    names = list(data_mod.ODORS)
    occupancy = np.bincount(pred, minlength=len(names)) / len(pred)
    points = [
        {"trial_id": t.trial_id, "x": float(p[0]), "y": float(p[1]), "label": t.odor}
        for t, p in zip(chosen, pts)
    ]
    return ReplayFrame(
        tuple(data_mod.parse_window(window)),
        points,
        fit.region_grid,
        fit.bbox,
        {n: float(o) for n, o in zip(names, occupancy)},
        names,
    )


def replay_export(
    checkpoint,
    trials,
    train_window=data_mod.TRAIN_WINDOW,
    test_windows=None,
    grid_size: int = 200,
    standardizer: data_mod.Standardizer | None = None,
    focus: str | None = "B",
    l2_grid: Sequence[float] = DEFAULT_L2_GRID,
    seed: int = 0,
) -> list[ReplayFrame]:
    """Project every window's latent means through the train-window PCA and
    classify them with the train-window 2-D logit."""
    if test_windows is None:
        test_windows = data_mod.replay_windows()
    fit = fit_replay(checkpoint, trials, train_window, grid_size, standardizer, l2_grid, seed)
    return [replay_frame(fit, checkpoint, trials, w, focus) for w in test_windows]


def frames_to_jsonl(frames: Sequence[ReplayFrame]) -> str:
    return "".join(json.dumps(f.to_dict(), sort_keys=True) + "\n" for f in frames)


def frames_from_jsonl(text: str) -> list[ReplayFrame]:
    return [ReplayFrame.from_dict(json.loads(line)) for line in text.splitlines() if line.strip()]


_PALETTE = ["#e41a1c", "#377eb8", "#4daf4a", "#984ea3", "#ff7f00", "#a65628", "#f781bf"]
_REGION_PALETTE = ["#f8c9c9", "#c6dbef", "#c7e9c0", "#dadaeb", "#fdd0a2", "#e7cfb4", "#fbd4e8"]


def frame_to_svg(frame: ReplayFrame, size: int = 400) -> str:
    """Region raster under the trial points, coloured by true odor."""
    grid = np.asarray(frame.region_grid)
    g = grid.shape[0]
    cell = size / g
    x0, x1, y0, y1 = frame.bbox
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size + 20}" '
        f'viewBox="0 0 {size} {size + 20}">'
    ]
    for r in range(g):
        row = grid[r]
        y = size - (r + 1) * cell
        start = 0
        for c in range(1, g + 1):
            if c == g or row[c] != row[start]:
                colour = _REGION_PALETTE[int(row[start]) % len(_REGION_PALETTE)]
                parts.append(
                    f'<rect x="{start * cell:.2f}" y="{y:.2f}" width="{(c - start) * cell:.2f}" '
                    f'height="{cell:.2f}" fill="{colour}"/>'
                )
                start = c
    names = frame.class_names
    for p in frame.points:
        px = (p["x"] - x0) / (x1 - x0) * size
        py = size - (p["y"] - y0) / (y1 - y0) * size
        colour = _PALETTE[names.index(p["label"]) % len(_PALETTE)]
        parts.append(f'<circle cx="{px:.2f}" cy="{py:.2f}" r="3" fill="{colour}" stroke="black" stroke-width="0.5"/>')
    parts.append(
        f'<text x="4" y="{size + 15}" font-family="sans-serif" font-size="12">'
        f"window [{frame.window[0]:.2f}, {frame.window[1]:.2f}] s</text>"
    )
    parts.append("</svg>\n")
    return "\n".join(parts)


def write_text(path, text: str) -> Path:
    path = Path(path)
    path.write_text(text)
    return path
