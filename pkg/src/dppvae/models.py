"""VAE and DPP-VAE on dense ReLU networks.

The two models share everything except the KL term: the standard VAE uses the
closed-form KL to N(0, I); the DPP-VAE replaces the prior log-density with the
k-DPP log-density of the whole latent batch, estimated with the single
reparameterized sample.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import dpp
from .errors import ConfigError, DataError, DomainError, NonFiniteLoss, ShapeMismatch
from .seeding import substream

log = logging.getLogger(__name__)

LOG_VAR_MIN, LOG_VAR_MAX = -10.0, 10.0
LOG_2PI = math.log(2.0 * math.pi)
CHECKPOINT_VERSION = "dppvae-checkpoint/1"


class MLP:
    """Dense network with ReLU on hidden layers and a linear output."""

    def __init__(self, sizes: Sequence[int], rng: np.random.Generator | None = None):
        self.sizes = [int(s) for s in sizes]
        self.weights: list[ad.Node] = []
        self.biases: list[ad.Node] = []
        for i, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            if rng is None:
                w = np.zeros((fan_in, fan_out))
            else:
                limit = math.sqrt(6.0 / (fan_in + fan_out))
                w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
            self.weights.append(ad.param(w, name=f"W{i}"))
            self.biases.append(ad.param(np.zeros((1, fan_out)), name=f"b{i}"))

    @property
    def params(self) -> list[ad.Node]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def __call__(self, x) -> ad.Node:
        h = ad.const(x)
        if h.shape[1] != self.sizes[0]:
            raise ShapeMismatch(f"network expects {self.sizes[0]} inputs, got {h.shape[1]}")
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = ad.add(ad.matmul(h, w), b)
            if i < last:
                h = ad.relu(h)
        return h


@dataclass
class EncoderOutput:
    mu: ad.Node
    log_var: ad.Node


@dataclass
class VAEModel:
    encoder: MLP
    decoder: MLP
    latent_dim: int
    likelihood: str = "gaussian"  # or "bernoulli"
    prior: str = "normal"  # or "dpp"
    kernel: dpp.KernelParams | None = None

    def __post_init__(self):
        if self.likelihood not in ("gaussian", "bernoulli"):
            raise ConfigError(f"unknown likelihood {self.likelihood!r}")
        if self.prior not in ("normal", "dpp"):
            raise ConfigError(f"unknown prior {self.prior!r}")
        if self.prior == "dpp" and self.kernel is None:
            self.kernel = dpp.KernelParams.isotropic(1000.0, 1.0, 1.0, self.latent_dim)
        if self.encoder.sizes[-1] != 2 * self.latent_dim or self.decoder.sizes[0] != self.latent_dim:
            raise ShapeMismatch("encoder/decoder sizes inconsistent with latent_dim")
        if self.encoder.sizes[0] != self.decoder.sizes[-1]:
            raise ShapeMismatch("encoder input and decoder output dims differ")

    @property
    def data_dim(self) -> int:
        return self.encoder.sizes[0]

    @property
    def params(self) -> list[ad.Node]:
        return self.encoder.params + self.decoder.params

    def spec(self) -> dict:
        return {
            "encoder_sizes": self.encoder.sizes,
            "decoder_sizes": self.decoder.sizes,
            "latent_dim": self.latent_dim,
            "likelihood": self.likelihood,
            "prior": self.prior,
            "kernel": self.kernel.to_dict() if self.kernel else None,
        }


def build_vae(
    data_dim: int,
    latent_dim: int = 20,
    hidden: Sequence[int] = (256, 128),
    likelihood: str = "gaussian",
    prior: str = "normal",
    kernel: dpp.KernelParams | None = None,
    rng: np.random.Generator | None = None,
) -> VAEModel:
    """Encoder ``[data -> hidden... -> 2P]`` and mirrored decoder ``[P -> reversed hidden -> data]``.

    ``rng=None`` gives all-zero weights.
    """
    hidden = list(hidden)
    encoder = MLP([data_dim, *hidden, 2 * latent_dim], rng)
    decoder = MLP([latent_dim, *reversed(hidden), data_dim], rng)
    return VAEModel(encoder, decoder, latent_dim, likelihood, prior, kernel)


# ---------------------------------------------------------------- forward pieces


def encode(model: VAEModel, x) -> EncoderOutput:
    h = model.encoder(x)
    p = model.latent_dim
    mu = ad.slice_cols(h, 0, p)
    log_var = ad.clip(ad.slice_cols(h, p, 2 * p), LOG_VAR_MIN, LOG_VAR_MAX)
    return EncoderOutput(mu, log_var)


def reparameterize(out: EncoderOutput, rng: np.random.Generator | None = None, eps=None) -> ad.Node:
    """``z = mu + exp(log_var / 2) * eps`` with ``eps ~ N(0, I)``."""
    if eps is None:
        eps = rng.standard_normal(out.mu.shape)
    return ad.add(out.mu, ad.mul(ad.exp(ad.mul(out.log_var, 0.5)), eps))


def decode(model: VAEModel, z) -> ad.Node:
    """Decoder output: logits for Bernoulli, means for Gaussian."""
    return model.decoder(z)


def reconstruction_loss(x, x_hat, likelihood: str) -> ad.Node:
    """Negative log-likelihood summed over the batch.

    Bernoulli takes logits and returns the summed binary cross-entropy.
    Gaussian (identity covariance) returns ``0.5 * sum (x - x_hat)^2``; the
    ``0.5 * D * log(2 pi)`` constant per row is dropped.
    """
    x = np.asarray(x.value if isinstance(x, ad.Node) else x, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ShapeMismatch(f"target {x.shape} vs reconstruction {x_hat.shape}")
    if likelihood == "bernoulli":
        if np.any((x < 0) | (x > 1)):
            raise DomainError("Bernoulli targets must lie in [0, 1]")
        return ad.sum(ad.sub(ad.softplus(x_hat), ad.mul(x_hat, x)))
    if likelihood == "gaussian":
        return ad.mul(ad.sum(ad.square(ad.sub(x_hat, x))), 0.5)
    raise ConfigError(f"unknown likelihood {likelihood!r}")


def standard_kld(out: EncoderOutput) -> ad.Node:
    """KL(q(z|x) || N(0, I)) summed over batch and latent dims."""
    inner = ad.sub(ad.sub(ad.add(1.0, out.log_var), ad.square(out.mu)), ad.exp(out.log_var))
    return ad.mul(ad.sum(inner), -0.5)


def gaussian_neg_entropy(out: EncoderOutput) -> ad.Node:
    """``E_q[log q(z|x)]`` summed over the batch."""
    b, p = out.mu.shape
    const = -0.5 * b * p * (1.0 + LOG_2PI)
    return ad.add(ad.mul(ad.sum(out.log_var), -0.5), const)


def dpp_kld(out: EncoderOutput, z, params: dpp.KernelParams, log_normalizer: float) -> ad.Node:
    """``E_q[log q] - log p_DPP(z)`` with the prior term from the sample ``z``."""
    return ad.sub(gaussian_neg_entropy(out), dpp.dpp_log_prior(z, params, log_normalizer))


def kld_term(model: VAEModel, out: EncoderOutput, z) -> ad.Node:
    if model.prior == "normal":
        return standard_kld(out)
    k = z.shape[0]
    return dpp_kld(out, z, model.kernel, dpp.log_normalizer(model.kernel, k))


def batch_loss(model: VAEModel, x, rng: np.random.Generator | None = None, eps=None):
    """Return ``(total, recon, kld)`` nodes for one batch and one MC sample."""
    out = encode(model, x)
    z = reparameterize(out, rng, eps)
    recon = reconstruction_loss(x, decode(model, z), model.likelihood)
    kld = kld_term(model, out, z)
    return ad.add(recon, kld), recon, kld


# ---------------------------------------------------------------- optimiser


@dataclass
class AdamConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class Adam:
    def __init__(self, params: Sequence[ad.Node], lr: float = 1e-3, config: AdamConfig = AdamConfig()):
        self.params = list(params)
        self.lr = lr
        self.cfg = config
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.cfg.beta1, self.cfg.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.value -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.cfg.eps)


# ---------------------------------------------------------------- training


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 100
    learning_rate: float = 1e-3
    seed: int = 0
    mc_samples: int = 1
    optimizer: AdamConfig = field(default_factory=AdamConfig)

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.mc_samples < 1 or self.learning_rate <= 0:
            raise ConfigError(f"invalid training config {self}")


@dataclass
class Checkpoint:
    model: VAEModel
    history: np.ndarray  # (steps, 3): recon, kld, total
    config: dict = field(default_factory=dict)
    rng_state: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


def train(model: VAEModel, dataset, config: TrainConfig) -> Checkpoint:
    """Minimise reconstruction + KL with Adam over seeded shuffled mini-batches.

    A final batch smaller than ``batch_size`` is kept; for the DPP prior its
    normaliser is computed for that cardinality.
    """
    x = np.asarray(getattr(dataset, "features", dataset), dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise DataError("training data must be a non-empty matrix")
    if x.shape[1] != model.data_dim:
        raise ShapeMismatch(f"model expects {model.data_dim} features, data has {x.shape[1]}")
    n = x.shape[0]
    rng = substream(config.seed, "training")
    opt = Adam(model.params, config.learning_rate, config.optimizer)
    steps_per_epoch = math.ceil(n / config.batch_size)
    history = np.zeros((config.epochs * steps_per_epoch, 3))
    start = time.perf_counter()
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for b in range(steps_per_epoch):
            xb = x[order[b * config.batch_size : (b + 1) * config.batch_size]]
            ad.zero_grad(model.params)
            with ad.Tape():
                parts = [batch_loss(model, xb, rng) for _ in range(config.mc_samples)]
                scale = 1.0 / config.mc_samples
                total = ad.mul(ad.add_n([p[0] for p in parts]), scale)
            recon = scale * math.fsum(float(p[1].value) for p in parts)
            kld = scale * math.fsum(float(p[2].value) for p in parts)
            if not np.isfinite(float(total.value)):
                raise NonFiniteLoss(
                    f"non-finite loss at epoch {epoch}, batch {b} (step {step}): "
                    f"recon={recon!r}, kld={kld!r}"
                )
            ad.backward(total)
            opt.step()
            history[step] = (recon, kld, float(total.value))
            step += 1
    ad.zero_grad(model.params)
    elapsed = time.perf_counter() - start
    log.info("trained %s-prior VAE: %d steps in %.2fs", model.prior, step, elapsed)
    return Checkpoint(
        model=model,
        history=history,
        config=asdict(config),
        rng_state=rng.bit_generator.state,
        meta={"train_seconds": elapsed, "n_train": n},
    )


def generate(model: VAEModel, n: int = 0, rng: np.random.Generator | None = None, latents=None) -> np.ndarray:
    """Decode ``z ~ N(0, I)``; Bernoulli models return probabilities."""
    if latents is None:
        latents = rng.standard_normal((n, model.latent_dim))
    out = decode(model, np.asarray(latents, dtype=np.float64)).value
    if model.likelihood == "bernoulli":
        out = ad.sigmoid(out).value
    return out


def latent_means(model: VAEModel, x) -> np.ndarray:
    return encode(model, np.asarray(x, dtype=np.float64)).mu.value


# ---------------------------------------------------------------- serialisation


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    """Write an ``.npz`` container: weight arrays plus a JSON header with
    version tag, model spec, shapes and config echo."""
    path = Path(path)
    arrays = {}
    for prefix, net in (("enc", ckpt.model.encoder), ("dec", ckpt.model.decoder)):
        for i, (w, b) in enumerate(zip(net.weights, net.biases)):
            arrays[f"{prefix}_W{i}"] = w.value
            arrays[f"{prefix}_b{i}"] = b.value
    arrays["history"] = ckpt.history
    header = {
        "version": CHECKPOINT_VERSION,
        "model": ckpt.model.spec(),
        "shapes": {k: list(v.shape) for k, v in arrays.items()},
        "config": ckpt.config,
        "rng_state": ckpt.rng_state,
        "meta": ckpt.meta,
    }
    arrays["__header__"] = np.array(json.dumps(header, sort_keys=True))
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path) -> Checkpoint:
    with np.load(Path(path), allow_pickle=False) as data:
        header = json.loads(str(data["__header__"]))
        if header.get("version") != CHECKPOINT_VERSION:
            raise DataError(f"unsupported checkpoint version {header.get('version')!r}")
        spec = header["model"]
        kernel = dpp.KernelParams(**spec["kernel"]) if spec["kernel"] else None
        enc = MLP(spec["encoder_sizes"])
        dec = MLP(spec["decoder_sizes"])
        for prefix, net in (("enc", enc), ("dec", dec)):
            for i in range(len(net.weights)):
                for node, key in ((net.weights[i], f"{prefix}_W{i}"), (net.biases[i], f"{prefix}_b{i}")):
                    arr = data[key]
                    if list(arr.shape) != header["shapes"][key]:
                        raise ShapeMismatch(f"{key}: stored shape {arr.shape} disagrees with header")
                    node.value = np.array(arr, dtype=np.float64)
        model = VAEModel(enc, dec, spec["latent_dim"], spec["likelihood"], spec["prior"], kernel)
        history = np.array(data["history"])
    return Checkpoint(model, history, header["config"], header["rng_state"], header["meta"])
