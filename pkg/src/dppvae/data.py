"""Datasets: MNIST IDX files, imbalanced subsets, Gaussian blobs and a
synthetic odor-sequence spike-train generator.

The spike generator stands in for the hippocampal recordings: five odors
(A-E) with the trial counts of the real sessions, Poisson spiking at a
baseline rate, odor-tuned neuron subsets firing at an elevated rate in the
0.15-0.4 s response window, and an optional "replay" that blends another
odor's firing template into a later window.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    BadMagic,
    DataError,
    DimensionMismatch,
    InsufficientSamples,
    InvalidConfig,
    TruncatedFile,
    UnknownWindow,
)
from .seeding import substream

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
_IDX_DTYPES = {0x08: ">u1", 0x09: ">i1", 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}
_IDX_CODES = {np.dtype(v).newbyteorder("="): k for k, v in _IDX_DTYPES.items()}

ODORS = ("A", "B", "C", "D", "E")
PAPER_TRIAL_COUNTS = (58, 41, 37, 32, 26)
TRAIN_WINDOW = (0.15, 0.4)
TRIAL_SPAN = (-2.0, 2.15)
TRIALS_SCHEMA = "dppvae-trials/1"


@dataclass
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    def apply(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.scale

    @classmethod
    def fit(cls, x) -> "Standardizer":
        x = np.asarray(x, dtype=np.float64)
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        return cls(mean, np.where(std > 0, std, 1.0))

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["scale"], dtype=np.float64))


@dataclass
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    class_names: dict[int, str] = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    standardizer: Standardizer | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or len(self.features) != len(self.labels):
            raise DimensionMismatch(
                f"features {self.features.shape} and labels {self.labels.shape} disagree"
            )
        if len(self.labels) == 0:
            raise InsufficientSamples("dataset is empty")
        if not np.all(np.isfinite(self.features)):
            raise DataError("features must be finite")
        if not self.class_names:
            self.class_names = {int(c): str(c) for c in np.unique(self.labels)}

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def n_classes(self) -> int:
        return max(max(self.class_names) + 1, int(self.labels.max()) + 1)

    def class_counts(self) -> dict[int, int]:
        return {c: int(np.sum(self.labels == c)) for c in range(self.n_classes)}

    def subset(self, idx, **provenance) -> "LabeledDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledDataset(
            self.features[idx],
            self.labels[idx],
            dict(self.class_names),
            {**self.provenance, **provenance},
            self.standardizer,
        )

    def manifest(self) -> dict:
        counts = self.class_counts()
        n = len(self)
        return {
            **self.provenance,
            "n": n,
            "class_counts": {self.class_names.get(c, str(c)): k for c, k in counts.items()},
            "class_percentages": {self.class_names.get(c, str(c)): 100.0 * k / n for c, k in counts.items()},
            "standardization": self.standardizer.to_dict() if self.standardizer else None,
        }


# ---------------------------------------------------------------- IDX


def _read_idx(path, expected_magic: int) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise TruncatedFile(f"{path}: missing IDX header")
    zero, dtype_code, ndim = struct.unpack(">HBB", raw[:4])
    magic = struct.unpack(">I", raw[:4])[0]
    if zero != 0 or dtype_code not in _IDX_DTYPES:
        raise BadMagic(f"{path}: bad IDX magic 0x{magic:08x}")
    if expected_magic is not None and magic != expected_magic:
        raise BadMagic(f"{path}: expected magic 0x{expected_magic:08x}, got 0x{magic:08x}")
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise TruncatedFile(f"{path}: truncated dimension header")
    dims = struct.unpack(f">{ndim}I", raw[4:header_end])
    dtype = np.dtype(_IDX_DTYPES[dtype_code])
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    body = raw[header_end:]
    if len(body) < expected:
        raise TruncatedFile(f"{path}: expected {expected} data bytes, found {len(body)}")
    return np.frombuffer(body[:expected], dtype=dtype).reshape(dims)


def read_idx(path) -> np.ndarray:
    """Read any IDX file (uint8 or float tensors) into a native-endian array."""
    arr = _read_idx(path, None)
    return arr.astype(arr.dtype.newbyteorder("="))


def write_idx(path, array) -> Path:
    """Write a tensor as IDX (big-endian, shape header)."""
    array = np.asarray(array)
    code = _IDX_CODES.get(array.dtype.newbyteorder("="))
    if code is None:
        raise ValueError(f"dtype {array.dtype} has no IDX encoding")
    header = struct.pack(">HBB", 0, code, array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    path = Path(path)
    path.write_bytes(header + array.astype(_IDX_DTYPES[code]).tobytes())
    return path


def load_idx(images_path, labels_path, binarize: bool = False, threshold: float = 0.5) -> LabeledDataset:
    """Load an MNIST-style image/label pair; pixels scaled to [0, 1]."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.ndim != 3 or labels.ndim != 1:
        raise DimensionMismatch(f"unexpected IDX ranks: images {images.shape}, labels {labels.shape}")
    if images.shape[0] != labels.shape[0]:
        raise DimensionMismatch(f"{images.shape[0]} images but {labels.shape[0]} labels")
    x = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    if binarize:
        x = (x >= threshold).astype(np.float64)
    return LabeledDataset(
        x,
        labels.astype(np.int64),
        provenance={"source": "idx", "images": str(images_path), "labels": str(labels_path), "binarized": binarize},
    )


def select_classes(ds: LabeledDataset, classes: Sequence[int]) -> LabeledDataset:
    """Keep the given classes and relabel them 0..len(classes)-1."""
    keep = np.isin(ds.labels, classes)
    mapping = {c: i for i, c in enumerate(classes)}
    labels = np.array([mapping[int(c)] for c in ds.labels[keep]], dtype=np.int64)
    return LabeledDataset(
        ds.features[keep],
        labels,
        {i: ds.class_names.get(c, str(c)) for c, i in mapping.items()},
        {**ds.provenance, "classes": list(classes)},
    )


# ---------------------------------------------------------------- imbalance


@dataclass
class ImbalanceSpec:
    total: int
    ratios: dict[int, float]
    minor_class: int = 1

    def __post_init__(self):
        self.ratios = {int(k): float(v) for k, v in self.ratios.items()}
        if self.total <= 0 or not self.ratios or any(w <= 0 for w in self.ratios.values()):
            raise InvalidConfig(f"invalid imbalance spec {self}")
        if self.minor_class not in self.ratios:
            raise InvalidConfig("minor_class must appear in ratios")

    def counts(self) -> dict[int, int]:
        """Realised per-class counts, summing to ``total``."""
        classes = sorted(self.ratios)
        wsum = sum(self.ratios.values())
        if len(classes) == 2:
            major = next(c for c in classes if c != self.minor_class)
            n_major = int(round(self.total * self.ratios[major] / wsum))
            n_minor = max(1, self.total - n_major)
            n_major = self.total - n_minor
            return {major: n_major, self.minor_class: n_minor}
        # largest-remainder apportionment, at least one per class
        exact = {c: self.total * self.ratios[c] / wsum for c in classes}
        counts = {c: max(1, int(math.floor(v))) for c, v in exact.items()}
        by_remainder = sorted(classes, key=lambda c: (-(exact[c] - math.floor(exact[c])), c))
        i = 0
        while sum(counts.values()) < self.total:
            counts[by_remainder[i % len(classes)]] += 1
            i += 1
        while sum(counts.values()) > self.total:
            c = max((c for c in classes if counts[c] > 1), key=lambda c: (counts[c], -c))
            counts[c] -= 1
        return counts


def subsample_imbalanced(ds: LabeledDataset, spec: ImbalanceSpec, seed: int) -> LabeledDataset:
    rng = np.random.default_rng(seed)
    counts = spec.counts()
    picked = []
    for c in sorted(counts):
        pool = np.flatnonzero(ds.labels == c)
        if len(pool) < counts[c]:
            raise InsufficientSamples(f"class {c}: need {counts[c]}, have {len(pool)}")
        picked.append(np.sort(rng.choice(pool, size=counts[c], replace=False)))
    idx = np.concatenate(picked)
    idx = idx[rng.permutation(len(idx))]
    out = ds.subset(idx, imbalance={"total": spec.total, "ratios": spec.ratios, "seed": seed})
    return out


# ---------------------------------------------------------------- blobs


def make_blobs(
    n_per_class: Sequence[int],
    dim: int,
    centers,
    noise_std: float,
    seed: int,
) -> LabeledDataset:
    centers = np.asarray(centers, dtype=np.float64)
    if centers.shape != (len(n_per_class), dim):
        raise DimensionMismatch(f"centers shape {centers.shape} != ({len(n_per_class)}, {dim})")
    if len({tuple(c) for c in centers}) != len(centers):
        raise InvalidConfig("blob centers must be distinct")
    rng = np.random.default_rng(seed)
    feats, labels = [], []
    for c, n in enumerate(n_per_class):
        feats.append(centers[c] + noise_std * rng.standard_normal((n, dim)))
        labels.append(np.full(n, c))
    return LabeledDataset(
        np.concatenate(feats),
        np.concatenate(labels),
        provenance={"source": "blobs", "seed": seed, "noise_std": noise_std, "dim": dim},
    )


# ---------------------------------------------------------------- spikes


Window = tuple[float, float]


def window_key(w: Window) -> str:
    return f"{w[0]:.2f}:{w[1]:.2f}"


def parse_window(key) -> Window:
    if isinstance(key, str):
        a, b = key.split(":")
        return (round(float(a), 2), round(float(b), 2))
    return (round(float(key[0]), 2), round(float(key[1]), 2))


def replay_windows() -> list[Window]:
    """Seventeen 0.25 s frames starting at -2 s; the last snaps to [1.9, 2.15]."""
    wins = [(round(-2.0 + 0.25 * i, 2), round(-1.75 + 0.25 * i, 2)) for i in range(16)]
    wins.append((1.9, 2.15))
    return wins


@dataclass
class ReplayInjection:
    source: str = "B"
    target: str = "C"
    window: Window = (0.6, 0.9)
    weight: float = 0.8


@dataclass
class SpikeSimConfig:
    n_neurons: int = 50
    trial_counts: tuple[int, ...] = PAPER_TRIAL_COUNTS
    baseline_rate: float = 2.0
    tuned_rate: float = 10.0
    tuning_fraction: float = 0.2
    replay_injection: ReplayInjection | None = None
    extra_windows: tuple[Window, ...] = ()
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.replay_injection, dict):
            inj = dict(self.replay_injection)
            inj["window"] = tuple(inj.get("window", (0.6, 0.9)))
            self.replay_injection = ReplayInjection(**inj)
        self.trial_counts = tuple(int(c) for c in self.trial_counts)
        self.extra_windows = tuple(parse_window(w) for w in self.extra_windows)
        if self.n_neurons < 1 or len(self.trial_counts) != len(ODORS) or min(self.trial_counts) < 0:
            raise InvalidConfig("need n_neurons >= 1 and five non-negative trial counts")
        if self.baseline_rate < 0 or self.tuned_rate < 0:
            raise InvalidConfig("rates must be non-negative")
        if not 0.0 < self.tuning_fraction <= 1.0:
            raise InvalidConfig("tuning_fraction must lie in (0, 1]")
        inj = self.replay_injection
        if inj is not None:
            if not 0.0 <= inj.weight <= 1.0:
                raise InvalidConfig("replay blend weight must lie in [0, 1]")
            if inj.source not in ODORS or inj.target not in ODORS:
                raise InvalidConfig("replay odors must be among A-E")
            if not (TRIAL_SPAN[0] <= inj.window[0] < inj.window[1] <= TRIAL_SPAN[1]):
                raise InvalidConfig("replay window must lie inside the trial span")

    def windows(self) -> list[Window]:
        wins = replay_windows() + [TRAIN_WINDOW]
        if self.replay_injection is not None:
            wins.append(parse_window(self.replay_injection.window))
        wins.extend(self.extra_windows)
        out = []
        for w in wins:
            if w not in out:
                out.append(w)
        return out


@dataclass
class TrialRecord:
    trial_id: int
    odor: str
    all_window_counts: dict[str, list[int]]

    def counts(self, window) -> np.ndarray:
        key = window if isinstance(window, str) else window_key(window)
        try:
            return np.asarray(self.all_window_counts[key], dtype=np.int64)
        except KeyError:
            raise UnknownWindow(f"trial {self.trial_id} has no window {key}") from None

    @property
    def label(self) -> int:
        return ODORS.index(self.odor)


def tuned_subsets(config: SpikeSimConfig) -> dict[str, np.ndarray]:
    """Boolean masks of the neurons tuned to each odor (overlaps allowed)."""
    rng = substream(config.seed, "tuning")
    k = max(1, int(round(config.tuning_fraction * config.n_neurons)))
    masks = {}
    for odor in ODORS:
        m = np.zeros(config.n_neurons, dtype=bool)
        m[rng.choice(config.n_neurons, size=k, replace=False)] = True
        masks[odor] = m
    return masks


def _rate_segments(config: SpikeSimConfig, odor: str, masks) -> list[tuple[float, float, np.ndarray]]:
    """Piecewise-constant rate vectors over the trial span for one odor."""
    base = np.full(config.n_neurons, config.baseline_rate)
    template = {o: np.where(masks[o], config.tuned_rate, config.baseline_rate) for o in ODORS}
    rate_at = [(TRAIN_WINDOW, template[odor])]
    inj = config.replay_injection
    if inj is not None and inj.source == odor:
        blended = (1.0 - inj.weight) * base + inj.weight * template[inj.target]
        rate_at.append((tuple(inj.window), blended))
    cuts = sorted({TRIAL_SPAN[0], TRIAL_SPAN[1], *(t for (w, _) in rate_at for t in w)})
    segments = []
    for a, b in zip(cuts[:-1], cuts[1:]):
        rate = base
        for (lo, hi), r in rate_at:
            if lo <= a and b <= hi:
                rate = r
        segments.append((a, b, rate))
    return segments


def simulate_trials(config: SpikeSimConfig) -> list[TrialRecord]:
    """Poisson spike trains per trial, binned into every analysis window.

    Spikes are drawn as an inhomogeneous Poisson process with piecewise
    constant rates, so counts in overlapping windows are mutually consistent.
    """
    rng = substream(config.seed, "spikes")
    masks = tuned_subsets(config)
    windows = config.windows()
    segments = {o: _rate_segments(config, o, masks) for o in ODORS}
    labels = np.concatenate([np.full(c, i) for i, c in enumerate(config.trial_counts)])
    order = substream(config.seed, "trial-order").permutation(len(labels))
    trials = []
    for tid, label in enumerate(labels[order]):
        odor = ODORS[int(label)]
        times, neuron = [], []
        for a, b, rate in segments[odor]:
            n = rng.poisson(rate * (b - a))
            total = int(n.sum())
            times.append(rng.uniform(a, b, size=total))
            neuron.append(np.repeat(np.arange(config.n_neurons), n))
        times = np.concatenate(times)
        neuron = np.concatenate(neuron)
        counts = {}
        for w in windows:
            inside = (times >= w[0]) & (times < w[1])
            counts[window_key(w)] = np.bincount(neuron[inside], minlength=config.n_neurons).tolist()
        trials.append(TrialRecord(tid, odor, counts))
    return trials


def window_features(
    trials: Sequence[TrialRecord],
    window,
    standardizer: Standardizer | None = None,
    fit_indices=None,
) -> LabeledDataset:
    """Per-neuron counts in ``window``, standardised per neuron.

    Without a ``standardizer`` one is fitted on ``fit_indices`` (default: all
    trials) and attached to the result for reuse on other windows.
    """
    counts = np.stack([t.counts(window) for t in trials]).astype(np.float64)
    if standardizer is None:
        fit = counts if fit_indices is None else counts[np.asarray(fit_indices)]
        standardizer = Standardizer.fit(fit)
    return LabeledDataset(
        standardizer.apply(counts),
        np.array([t.label for t in trials]),
        dict(enumerate(ODORS)),
        {"source": "spikes", "window": list(parse_window(window))},
        standardizer,
    )


def trial_ids(trials: Iterable[TrialRecord]) -> list[int]:
    return [t.trial_id for t in trials]


def save_trials_jsonl(trials: Sequence[TrialRecord], path) -> Path:
    """One JSON object per line: ``{"schema", "trial_id", "odor", "windows"}``."""
    path = Path(path)
    with open(path, "w") as fh:
        for t in trials:
            rec = {"schema": TRIALS_SCHEMA, "trial_id": t.trial_id, "odor": t.odor, "windows": t.all_window_counts}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return path


def load_trials_jsonl(path) -> list[TrialRecord]:
    trials = []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec.get("schema") != TRIALS_SCHEMA:
                raise InvalidConfig(f"unsupported trial schema {rec.get('schema')!r}")
            trials.append(TrialRecord(int(rec["trial_id"]), rec["odor"], rec["windows"]))
    return trials


def sim_config_dict(config: SpikeSimConfig) -> dict:
    return asdict(config)
