"""Command-line entry point: ``dppvae {train,classify,generate,replay,selftest}``.

Every command reads one JSON config, validates it completely (unknown keys are
rejected) before doing any work, and writes all outputs into a fresh run
directory ``<out>/<command>-seed<seed>-<hash>``. The run manifest is written
last and atomically.

Exit codes: 0 success, 1 selftest failure, 2 config error, 3 data error,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__, data, evaluation, experiments, models, selftest
from .errors import ConfigError, DataError, NumericError
from .seeding import substream

log = logging.getLogger("dppvae")

MANIFEST_NAME = "manifest.json"
EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


# ---------------------------------------------------------------- config schema


@dataclasses.dataclass
class IdxSection:
    images: str = ""
    labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    classes: tuple[int, ...] = (0, 1)
    binarize: bool = True
    ratio: float = 10.0
    n_train: int = 5000
    n_test_per_class: int = 500


@dataclasses.dataclass
class SpikeSection:
    n_neurons: int = 50
    trial_counts: tuple[int, ...] = data.PAPER_TRIAL_COUNTS
    baseline_rate: float = 2.0
    tuned_rate: float = 10.0
    tuning_fraction: float = 0.2
    replay_injection: dict | None = None
    train_window: tuple[float, float] = data.TRAIN_WINDOW


@dataclasses.dataclass
class DataSection:
    source: str = "blobs"  # blobs | spikes | idx
    blobs: experiments.BlobConfig = dataclasses.field(default_factory=experiments.BlobConfig)
    spikes: SpikeSection = dataclasses.field(default_factory=SpikeSection)
    idx: IdxSection = dataclasses.field(default_factory=IdxSection)


@dataclasses.dataclass
class ModelSection:
    latent_dim: int = 20
    hidden: tuple[int, ...] = (256, 128)
    prior: str = "dpp"
    likelihood: str = ""  # empty: gaussian for blobs/spikes, bernoulli for idx
    alpha: float = 1000.0
    rho: float = 1.0
    sigma: float = 1.0


@dataclasses.dataclass
class TrainingSection:
    epochs: int = 10
    batch_size: int = 100
    learning_rate: float = 1e-3
    mc_samples: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclasses.dataclass
class ClassifySection:
    checkpoint: str = ""
    mode: str = ""  # cv | split; empty picks cv for spikes, split otherwise
    n_folds: int = 6
    per_class_test: int = 4
    l2_grid: tuple[float, ...] = evaluation.DEFAULT_L2_GRID


@dataclasses.dataclass
class GenerateSection:
    checkpoint: str = ""
    n_samples: int = 5000


@dataclasses.dataclass
class ReplaySection:
    checkpoint: str = ""
    windows: list | None = None
    grid_size: int = 200
    focus: str = "B"
    svg: bool = False


@dataclasses.dataclass
class ExperimentConfig:
    seed: int = 0
    out: str = "runs"
    data: DataSection = dataclasses.field(default_factory=DataSection)
    model: ModelSection = dataclasses.field(default_factory=ModelSection)
    training: TrainingSection = dataclasses.field(default_factory=TrainingSection)
    classify: ClassifySection = dataclasses.field(default_factory=ClassifySection)
    generate: GenerateSection = dataclasses.field(default_factory=GenerateSection)
    replay: ReplaySection = dataclasses.field(default_factory=ReplaySection)


def _coerce(value, annotation: str, path: str):
    """Check a JSON value against the field annotation string."""
    ann = annotation.replace(" ", "")
    if ann.endswith("|None"):
        if value is None:
            return None
        ann = ann[: -len("|None")]
    if ann == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if ann == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if ann == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if ann == "str":
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if ann.startswith("tuple["):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
        inner = ann[len("tuple[") : -1].split(",")
        if len(inner) == 2 and inner[1] == "...":
            return tuple(_coerce(v, inner[0], f"{path}[{i}]") for i, v in enumerate(value))
        if len(value) != len(inner):
            raise ConfigError(f"{path}: expected {len(inner)} entries, got {len(value)}")
        return tuple(_coerce(v, t, f"{path}[{i}]") for i, (v, t) in enumerate(zip(value, inner)))
    if ann == "list":
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
        return value
    if ann == "dict":
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected an object, got {value!r}")
        return value
    raise ConfigError(f"{path}: unsupported field type {annotation}")


def _build(cls, raw: Any, path: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{path or 'config'}: expected an object, got {raw!r}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - set(fields))
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for name, value in raw.items():
        f = fields[name]
        sub = f"{path}.{name}" if path else name
        ann = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
        target = _SECTIONS.get(ann.split(".")[-1])
        kwargs[name] = _build(target, value, sub) if target else _coerce(value, ann, sub)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


_SECTIONS = {
    c.__name__: c
    for c in (
        IdxSection,
        SpikeSection,
        DataSection,
        ModelSection,
        TrainingSection,
        ClassifySection,
        GenerateSection,
        ReplaySection,
        experiments.BlobConfig,
    )
}


def _to_jsonable(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    if isinstance(obj, dict):
        return {k: _to_jsonable(v) for k, v in obj.items()}
    return obj


def _apply_override(raw: dict, item: str) -> None:
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not KEY=VALUE")
    key, text = item.split("=", 1)
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        value = text
    node = raw
    parts = key.split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {key!r}: {p} is not a section")
    node[parts[-1]] = value


def validate_config(cfg: ExperimentConfig) -> None:
    if cfg.data.source not in ("blobs", "spikes", "idx"):
        raise ConfigError(f"data.source must be blobs, spikes or idx, got {cfg.data.source!r}")
    if cfg.model.prior not in ("normal", "dpp"):
        raise ConfigError(f"model.prior must be normal or dpp, got {cfg.model.prior!r}")
    if cfg.model.likelihood not in ("", "gaussian", "bernoulli"):
        raise ConfigError(f"model.likelihood must be gaussian or bernoulli, got {cfg.model.likelihood!r}")
    if cfg.model.latent_dim < 1 or any(h < 1 for h in cfg.model.hidden):
        raise ConfigError("model sizes must be positive")
    if min(cfg.model.alpha, cfg.model.rho, cfg.model.sigma) <= 0:
        raise ConfigError("kernel parameters must be positive")
    t = cfg.training
    if t.epochs < 0 or t.batch_size < 1 or t.mc_samples < 1 or t.learning_rate <= 0:
        raise ConfigError("training: epochs >= 0, batch_size >= 1, mc_samples >= 1, learning_rate > 0")
    if cfg.classify.mode not in ("", "cv", "split"):
        raise ConfigError(f"classify.mode must be cv or split, got {cfg.classify.mode!r}")
    if cfg.generate.n_samples < 1 or cfg.replay.grid_size < 2:
        raise ConfigError("generate.n_samples >= 1 and replay.grid_size >= 2 required")
    if cfg.replay.focus and cfg.replay.focus not in data.ODORS:
        raise ConfigError(f"replay.focus must be one of {data.ODORS}")
    if cfg.replay.windows is not None:
        for w in cfg.replay.windows:
            try:
                lo, hi = data.parse_window(w)
            except (TypeError, ValueError, IndexError) as exc:
                raise ConfigError(f"replay.windows: bad window {w!r}") from exc
            if not (data.TRIAL_SPAN[0] <= lo < hi <= data.TRIAL_SPAN[1]):
                raise ConfigError(f"replay.windows: {w!r} outside the trial span")
    # constructing the domain configs runs their own checks
    _sim_config(cfg)
    if cfg.data.source == "blobs" and cfg.data.blobs.ratio <= 0:
        raise ConfigError("data.blobs.ratio must be positive")


def load_config(path: str | None, overrides=(), seed: int | None = None, out: str | None = None) -> ExperimentConfig:
    raw: dict = {}
    if path:
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file {path} not found") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    for item in overrides:
        _apply_override(raw, item)
    if seed is not None:
        raw["seed"] = seed
    if out is not None:
        raw["out"] = out
    cfg = _build(ExperimentConfig, raw, "")
    validate_config(cfg)
    return cfg


def config_hash(obj) -> str:
    text = json.dumps(_to_jsonable(obj), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


# ---------------------------------------------------------------- run directories


class Run:
    """A run directory collecting artifacts and phase timings."""

    def __init__(self, command: str, cfg: ExperimentConfig, overrides, hash_obj=None):
        self.command = command
        self.cfg = cfg
        self.overrides = list(overrides)
        self.hash = config_hash(hash_obj if hash_obj is not None else cfg)
        self.dir = Path(cfg.out) / f"{command}-seed{cfg.seed}-{self.hash[:12]}"
        self.dir.mkdir(parents=True, exist_ok=True)
        self.artifacts: list[str] = []
        self.timings: dict[str, float] = {}
        self.inputs: dict[str, str] = {}
        self.extra: dict = {}

    def path(self, name: str) -> Path:
        return self.dir / name

    def write_text(self, name: str, text: str) -> Path:
        p = self.path(name)
        _atomic_write(p, text.encode())
        self.artifacts.append(name)
        return p

    def add(self, name: str) -> None:
        self.artifacts.append(name)

    def timed(self, phase: str):
        run = self

        class _Timer:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                run.timings[phase] = time.perf_counter() - self.t0

        return _Timer()

    def finish(self) -> Path:
        files = []
        for name in self.artifacts:
            digest = hashlib.sha256(self.path(name).read_bytes()).hexdigest()
            files.append({"path": name, "sha256": digest})
        inputs_hash = hashlib.sha256()
        inputs_hash.update(self.hash.encode())
        for key in sorted(self.inputs):
            inputs_hash.update(f"{key}:{self.inputs[key]}".encode())
        manifest = {
            "command": self.command,
            "version": __version__,
            "seed": self.cfg.seed,
            "config": _to_jsonable(self.cfg),
            "config_hash": self.hash,
            "overrides": self.overrides,
            "inputs": self.inputs,
            "inputs_hash": inputs_hash.hexdigest(),
            "timings": self.timings,
            "artifacts": files,
            **self.extra,
        }
        p = self.path(MANIFEST_NAME)
        _atomic_write(p, (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode())
        return p


def _atomic_write(path: Path, payload: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def _file_sha(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------- data plumbing


def _sim_config(cfg: ExperimentConfig, extra_windows=()) -> data.SpikeSimConfig:
    s = cfg.data.spikes
    try:
        return data.SpikeSimConfig(
            n_neurons=s.n_neurons,
            trial_counts=s.trial_counts,
            baseline_rate=s.baseline_rate,
            tuned_rate=s.tuned_rate,
            tuning_fraction=s.tuning_fraction,
            replay_injection=s.replay_injection,
            extra_windows=tuple(extra_windows),
            seed=cfg.seed,
        )
    except TypeError as exc:
        raise ConfigError(f"data.spikes.replay_injection: {exc}") from exc


def _replay_windows(cfg: ExperimentConfig) -> list:
    if cfg.replay.windows is None:
        return data.replay_windows()
    return [data.parse_window(w) for w in cfg.replay.windows]


def _likelihood(cfg: ExperimentConfig) -> str:
    if cfg.model.likelihood:
        return cfg.model.likelihood
    return "bernoulli" if cfg.data.source == "idx" else "gaussian"


@dataclasses.dataclass
class Datasets:
    train: data.LabeledDataset
    test: data.LabeledDataset | None = None
    reference: data.LabeledDataset | None = None
    trials: list | None = None


def load_datasets(cfg: ExperimentConfig) -> Datasets:
    src = cfg.data.source
    if src == "blobs":
        train, test, reference = experiments.blob_splits(cfg.data.blobs, cfg.seed)
        return Datasets(train, test, reference)
    if src == "spikes":
        trials = data.simulate_trials(_sim_config(cfg, _replay_windows(cfg)))
        train = data.window_features(trials, cfg.data.spikes.train_window)
        return Datasets(train, trials=trials)
    ic = cfg.data.idx
    for p in (ic.images, ic.labels, ic.test_images, ic.test_labels):
        if not p or not Path(p).exists():
            raise DataError(f"IDX file {p!r} not found")
    full = data.select_classes(data.load_idx(ic.images, ic.labels, binarize=ic.binarize), ic.classes)
    spec = data.ImbalanceSpec(ic.n_train, {0: ic.ratio, 1: 1.0}, minor_class=1)
    train = data.subsample_imbalanced(full, spec, int(substream(cfg.seed, "data").integers(2**31 - 1)))
    test_full = data.select_classes(data.load_idx(ic.test_images, ic.test_labels, binarize=ic.binarize), ic.classes)
    n = ic.n_test_per_class
    test = data.subsample_imbalanced(test_full, data.ImbalanceSpec(2 * n, {0: 1.0, 1: 1.0}), cfg.seed)
    return Datasets(train, test, test)


def _train_hash_obj(cfg: ExperimentConfig) -> dict:
    return {"seed": cfg.seed, "data": cfg.data, "model": cfg.model, "training": cfg.training}


def default_checkpoint(cfg: ExperimentConfig) -> Path:
    h = config_hash(_train_hash_obj(cfg))
    return Path(cfg.out) / f"train-seed{cfg.seed}-{h[:12]}" / "checkpoint.npz"


def _resolve_checkpoint(cfg: ExperimentConfig, explicit: str) -> Path:
    path = Path(explicit) if explicit else default_checkpoint(cfg)
    if path.is_dir():
        path = path / "checkpoint.npz"
    if not path.exists():
        raise DataError(f"checkpoint {path} not found (run `dppvae train` with the same config first)")
    return path


# ---------------------------------------------------------------- commands


def _loss_csv(history: np.ndarray) -> str:
    lines = ["step,recon,kld,total"]
    lines += [f"{i},{r!r},{k!r},{t!r}" for i, (r, k, t) in enumerate(history.tolist())]
    return "\n".join(lines) + "\n"


def cmd_train(cfg: ExperimentConfig, overrides=()) -> Path:
    run = Run("train", cfg, overrides, _train_hash_obj(cfg))
    with run.timed("data"):
        ds = load_datasets(cfg)
    m = cfg.model
    model_cfg = experiments.ModelConfig(m.latent_dim, m.hidden, m.prior, m.alpha, m.rho, m.sigma)
    model = model_cfg.build(ds.train.features.shape[1], _likelihood(cfg), cfg.seed)
    t = cfg.training
    train_cfg = models.TrainConfig(
        t.epochs, t.batch_size, t.learning_rate, cfg.seed, t.mc_samples, models.AdamConfig(t.beta1, t.beta2, t.eps)
    )
    with run.timed("train"):
        ckpt = models.train(model, ds.train, train_cfg)
    ckpt.meta["data"] = ds.train.manifest()
    if ds.train.standardizer is not None:
        ckpt.meta["standardizer"] = ds.train.standardizer.to_dict()
    models.save_checkpoint(ckpt, run.path("checkpoint.npz"))
    run.add("checkpoint.npz")
    run.write_text("loss.csv", _loss_csv(ckpt.history))
    run.extra["steps"] = int(ckpt.history.shape[0])
    return run.finish()


def _report_table(report: evaluation.MetricsReport) -> str:
    rows = [f"{'class':>6} {'precision':>9} {'recall':>7} {'f1':>7} {'support':>7}"]
    for i, name in enumerate(report.class_names):
        rows.append(
            f"{name:>6} {report.precision[i]:9.3f} {report.recall[i]:7.3f} {report.f1[i]:7.3f} {int(report.support[i]):7d}"
        )
    mac = report.macro
    rows.append(f"{'avg':>6} {mac['precision']:9.3f} {mac['recall']:7.3f} {mac['f1']:7.3f}")
    return "\n".join(rows)


def cmd_classify(cfg: ExperimentConfig, overrides=()) -> Path:
    ckpt_path = _resolve_checkpoint(cfg, cfg.classify.checkpoint)
    run = Run("classify", cfg, overrides)
    run.inputs["checkpoint"] = _file_sha(ckpt_path)
    ckpt = models.load_checkpoint(ckpt_path)
    with run.timed("data"):
        ds = load_datasets(cfg)
    mode = cfg.classify.mode or ("cv" if cfg.data.source == "spikes" else "split")
    c = cfg.classify
    with run.timed("classify"):
        feats = evaluation.latent_features(ckpt, ds.train)
        if mode == "cv":
            names = [ds.train.class_names[i] for i in sorted(ds.train.class_names)]
            folds = evaluation.balanced_cv(ds.train.labels, c.n_folds, c.per_class_test, cfg.seed)
            report = evaluation.cross_validate(feats, ds.train.labels, folds, names, c.l2_grid, cfg.seed)
        else:
            if ds.test is None:
                raise ConfigError("classify.mode=split needs a data source with a test set (blobs or idx)")
            names = [str(ds.test.class_names.get(i, i)) for i in range(ds.test.n_classes)]
            clf = evaluation.fit_logit(feats, ds.train.labels, c.l2_grid, seed=cfg.seed, n_classes=ds.test.n_classes)
            report = evaluation.evaluate(clf, evaluation.latent_features(ckpt, ds.test), ds.test.labels, names)
    run.write_text("metrics.json", report.to_json())
    run.write_text("metrics.csv", report.to_csv())
    timing = {"train_seconds": ckpt.meta.get("train_seconds"), "classify_seconds": run.timings["classify"]}
    run.write_text("timing.json", json.dumps(timing, indent=2, sort_keys=True) + "\n")
    print(_report_table(report))
    return run.finish()


def cmd_generate(cfg: ExperimentConfig, overrides=()) -> Path:
    if cfg.data.source == "spikes":
        raise ConfigError("generate needs a blobs or idx data source (the audit uses a balanced reference set)")
    ckpt_path = _resolve_checkpoint(cfg, cfg.generate.checkpoint)
    run = Run("generate", cfg, overrides)
    run.inputs["checkpoint"] = _file_sha(ckpt_path)
    ckpt = models.load_checkpoint(ckpt_path)
    with run.timed("data"):
        ds = load_datasets(cfg)
    n = cfg.generate.n_samples
    # generation substream depends only on the seed, so VAE and DPP-VAE runs
    # sharing a seed decode the same latent vectors
    latents = substream(cfg.seed, "generation").standard_normal((n, ckpt.model.latent_dim))
    with run.timed("reference"):
        ref = evaluation.fit_logit(ds.reference.features, ds.reference.labels, seed=cfg.seed, n_classes=ds.reference.n_classes)
    with run.timed("generate"):
        samples = models.generate(ckpt.model, latents=latents)
        names = [str(ds.reference.class_names.get(i, i)) for i in range(ds.reference.n_classes)]
        audit = evaluation.audit_samples(samples, ref, names)
    data.write_idx(run.path("samples.idx"), samples)
    run.add("samples.idx")
    latent_sha = hashlib.sha256(np.ascontiguousarray(latents).tobytes()).hexdigest()
    audit["latent_sha256"] = latent_sha
    run.write_text("audit.json", json.dumps(audit, indent=2, sort_keys=True) + "\n")
    run.extra["latent_sha256"] = latent_sha
    for name, c in audit["classes"].items():
        print(f"{name}: {c['percent']:.2f}% (95% CI {c['ci95'][0]:.2f}-{c['ci95'][1]:.2f})")
    return run.finish()


def cmd_replay(cfg: ExperimentConfig, overrides=()) -> Path:
    if cfg.data.source != "spikes":
        raise ConfigError("replay needs data.source = spikes")
    ckpt_path = _resolve_checkpoint(cfg, cfg.replay.checkpoint)
    run = Run("replay", cfg, overrides)
    run.inputs["checkpoint"] = _file_sha(ckpt_path)
    ckpt = models.load_checkpoint(ckpt_path)
    with run.timed("data"):
        ds = load_datasets(cfg)
    windows = _replay_windows(cfg)
    with run.timed("replay"):
        frames = evaluation.replay_export(
            ckpt,
            ds.trials,
            train_window=cfg.data.spikes.train_window,
            test_windows=windows,
            grid_size=cfg.replay.grid_size,
            standardizer=ds.train.standardizer,
            focus=cfg.replay.focus or None,
            seed=cfg.seed,
        )
    run.write_text("frames.jsonl", evaluation.frames_to_jsonl(frames))
    summary = ["window," + ",".join(data.ODORS)]
    for f in frames:
        summary.append(data.window_key(f.window) + "," + ",".join(f"{f.class_occupancy[o]:.4f}" for o in data.ODORS))
    run.write_text("occupancy.csv", "\n".join(summary) + "\n")
    if cfg.replay.svg:
        for i, f in enumerate(frames):
            run.write_text(f"frame_{i:02d}.svg", evaluation.frame_to_svg(f))
    print("\n".join(summary))
    return run.finish()


def cmd_selftest(perturbation: float = 0.0) -> int:
    results = selftest.run_all(perturbation)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


COMMANDS = {"train": cmd_train, "classify": cmd_classify, "generate": cmd_generate, "replay": cmd_replay}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dppvae", description="VAE with a k-DPP latent prior")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in (*COMMANDS, "selftest"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="global seed (overrides the config)")
        p.add_argument("--out", help="output root directory (overrides the config)")
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE", help="set a config field; repeatable")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "selftest":
            # test hook: scale the lambdas fed to the ESP recursion
            p.add_argument("--perturb-lambda", type=float, default=0.0, help=argparse.SUPPRESS)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "selftest":
        return cmd_selftest(args.perturb_lambda)
    try:
        cfg = load_config(args.config, args.override, args.seed, args.out)
        manifest = COMMANDS[args.command](cfg, args.override)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"wrote {manifest}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
