"""End-to-end experiment pipelines shared by the CLI, the scripts and the acceptance tests.

Three pipelines, each a pure function of its config and seed:

* imbalance: two-class blobs at a given major:minor ratio; reports the
  generated minor-class percentage and the minor-class recall of a logit on
  latent means, measured on a balanced test set.
* decoding: simulated odor trials, VAE trained on the 0.15-0.4 s window,
  balanced cross-validated logit on latent means.
* replay: same training, then the latent trajectory of odor-B trials through
  every test window.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import binomtest

from . import data, dpp, evaluation, models
from .seeding import substream


@dataclass
class ModelConfig:
    latent_dim: int = 20
    hidden: tuple[int, ...] = (256, 128)
    prior: str = "dpp"
    alpha: float = 1000.0
    rho: float = 1.0
    sigma: float = 1.0

    def kernel(self) -> dpp.KernelParams:
        return dpp.KernelParams.isotropic(self.alpha, self.rho, self.sigma, self.latent_dim)

    def build(self, data_dim: int, likelihood: str, seed: int) -> models.VAEModel:
        return models.build_vae(
            data_dim,
            self.latent_dim,
            hidden=tuple(self.hidden),
            likelihood=likelihood,
            prior=self.prior,
            kernel=self.kernel(),
            rng=substream(seed, "init"),
        )


# ---------------------------------------------------------------- imbalance


@dataclass
class BlobConfig:
    dim: int = 50
    center_scale: float = 1.0
    noise_std: float = 1.0
    n_train: int = 5000
    ratio: float = 10.0  # major:minor
    n_test_per_class: int = 500
    n_reference_per_class: int = 500
    n_generated: int = 5000


@dataclass
class ImbalanceResult:
    ratio: float
    seed: int
    prior: str
    minor_generated_pct: float
    minor_recall: float
    audit: dict
    report: evaluation.MetricsReport
    history: np.ndarray = field(repr=False)

    def summary(self) -> dict:
        return {
            "ratio": self.ratio,
            "seed": self.seed,
            "prior": self.prior,
            "minor_generated_pct": self.minor_generated_pct,
            "minor_recall": self.minor_recall,
        }


def blob_splits(cfg: BlobConfig, seed: int):
    """Imbalanced train set, balanced test set and balanced reference set.

    Centers and draws come from the ``data`` substream, so they are shared by
    every model trained with the same seed.
    """
    rng = substream(seed, "data")
    centers = cfg.center_scale * rng.standard_normal((2, cfg.dim))
    spec = data.ImbalanceSpec(cfg.n_train, {0: cfg.ratio, 1: 1.0}, minor_class=1)
    counts = spec.counts()
    draw_seeds = rng.integers(0, 2**31 - 1, size=3)
    pool = data.make_blobs([counts[0], counts[1]], cfg.dim, centers, cfg.noise_std, int(draw_seeds[0]))
    train = data.subsample_imbalanced(pool, spec, int(draw_seeds[0]))
    n_t, n_r = cfg.n_test_per_class, cfg.n_reference_per_class
    test = data.make_blobs([n_t, n_t], cfg.dim, centers, cfg.noise_std, int(draw_seeds[1]))
    reference = data.make_blobs([n_r, n_r], cfg.dim, centers, cfg.noise_std, int(draw_seeds[2]))
    return train, test, reference


def run_imbalance(
    blob: BlobConfig,
    model_cfg: ModelConfig,
    train_cfg: models.TrainConfig,
    seed: int,
) -> ImbalanceResult:
    train, test, reference = blob_splits(blob, seed)
    model = model_cfg.build(blob.dim, "gaussian", seed)
    ckpt = models.train(model, train, train_cfg)

    clf = evaluation.fit_logit(evaluation.latent_features(ckpt, train), train.labels, seed=seed, n_classes=2)
    report = evaluation.evaluate(clf, evaluation.latent_features(ckpt, test), test.labels, ["major", "minor"])

    ref_clf = evaluation.fit_logit(reference.features, reference.labels, seed=seed, n_classes=2)
    gen_rng = substream(seed, "generation")
    latents = gen_rng.standard_normal((blob.n_generated, model_cfg.latent_dim))
    audit = evaluation.audit_generated_balance(ckpt, blob.n_generated, ref_clf, seed, latents, ["major", "minor"])
    return ImbalanceResult(
        ratio=blob.ratio,
        seed=seed,
        prior=model_cfg.prior,
        minor_generated_pct=float(audit["classes"]["minor"]["percent"]),
        minor_recall=float(report.recall[1]),
        audit=audit,
        report=report,
        history=ckpt.history,
    )


def sign_test(a, b) -> dict:
    """One-sided sign test that paired values ``a`` exceed ``b``; ties dropped."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    wins = int(np.sum(a > b))
    losses = int(np.sum(a < b))
    n = wins + losses
    p = binomtest(wins, n, 0.5, alternative="greater").pvalue if n else 1.0
    return {"wins": wins, "losses": losses, "ties": int(len(a) - n), "p_value": float(p)}


# ---------------------------------------------------------------- spikes


@dataclass
class DecodingConfig:
    n_folds: int = 6
    per_class_test: int = 4
    l2_grid: tuple[float, ...] = evaluation.DEFAULT_L2_GRID


def train_on_trials(
    trials,
    model_cfg: ModelConfig,
    train_cfg: models.TrainConfig,
    seed: int,
    train_window=data.TRAIN_WINDOW,
):
    ds = data.window_features(trials, train_window)
    model = model_cfg.build(ds.features.shape[1], "gaussian", seed)
    return models.train(model, ds, train_cfg), ds


def run_decoding(
    sim: data.SpikeSimConfig,
    model_cfg: ModelConfig,
    train_cfg: models.TrainConfig,
    seed: int,
    decoding: DecodingConfig = DecodingConfig(),
) -> evaluation.MetricsReport:
    trials = data.simulate_trials(sim)
    ckpt, ds = train_on_trials(trials, model_cfg, train_cfg, seed)
    folds = evaluation.balanced_cv(ds.labels, decoding.n_folds, decoding.per_class_test, seed)
    return evaluation.cross_validate(
        evaluation.latent_features(ckpt, ds), ds.labels, folds, list(data.ODORS), decoding.l2_grid, seed
    )


def run_replay(
    sim: data.SpikeSimConfig,
    model_cfg: ModelConfig,
    train_cfg: models.TrainConfig,
    seed: int,
    test_windows=None,
    grid_size: int = 200,
    focus: str = "B",
) -> list[evaluation.ReplayFrame]:
    trials = data.simulate_trials(sim)
    ckpt, ds = train_on_trials(trials, model_cfg, train_cfg, seed)
    return evaluation.replay_export(
        ckpt, trials, test_windows=test_windows, grid_size=grid_size, standardizer=ds.standardizer,
        focus=focus, seed=seed,
    )


def config_dict(obj) -> dict:
    d = asdict(obj)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}
