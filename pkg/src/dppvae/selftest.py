"""Oracle checks for the numerical core, runnable without any data.

Each check compares a fast code path with an independent slow one and returns
a :class:`CheckResult` carrying the measured error and its tolerance.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import dpp, models


@dataclass
class CheckResult:
    name: str
    observed: float
    tolerance: float
    passed: bool
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: observed {self.observed:.3e} (tolerance {self.tolerance:.1e}){self.detail}"


def _result(name, observed, tol, detail="") -> CheckResult:
    return CheckResult(name, float(observed), tol, bool(observed < tol), detail)


# ---------------------------------------------------------------- ESP


def esp_bruteforce(lambdas, k: int) -> float:
    """Sum of products over all k-subsets, by explicit enumeration."""
    return math.fsum(math.prod(c) for c in itertools.combinations([float(v) for v in lambdas], k))


def random_lambda_vectors(n_vectors: int, rng: np.random.Generator, max_len: int = 12, lo=1e-6, hi=1e3):
    """Log-uniform vectors of random length in [1, max_len]."""
    out = []
    for _ in range(n_vectors):
        m = int(rng.integers(1, max_len + 1))
        out.append(np.exp(rng.uniform(math.log(lo), math.log(hi), size=m)))
    return out


def check_esp(n_vectors: int = 100, seed: int = 0, tol: float = 1e-10, perturbation: float = 0.0) -> CheckResult:
    """Log-space recursion vs subset enumeration for every k.

    ``perturbation`` scales the values fed to the recursion (not the oracle);
    it exists so the harness itself can be shown to fail.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for lam in random_lambda_vectors(n_vectors, rng):
        table = dpp.esp(np.log(lam * (1.0 + perturbation)), len(lam))
        for k in range(len(lam) + 1):
            ref = esp_bruteforce(lam, k)
            got = float(np.exp(table.log_values[k]))
            worst = max(worst, abs(got - ref) / abs(ref))
    return _result("esp_vs_enumeration", worst, tol, f" over {n_vectors} vectors")


# ---------------------------------------------------------------- gradients


def _op_cases(rng: np.random.Generator) -> list[tuple[str, Callable, np.ndarray, float]]:
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((3, 4))
    m = rng.standard_normal((4, 2))
    row = rng.standard_normal((1, 4))
    pos = rng.uniform(0.5, 2.0, (3, 4))
    away = np.where(np.abs(a) < 0.1, a + 0.3, a)  # keep relu/clip away from kinks
    spd_root = rng.standard_normal((4, 4))
    spd = spd_root @ spd_root.T + 4.0 * np.eye(4)
    w = rng.standard_normal((3, 4))

    def weighted(f):
        return lambda x: ad.sum(ad.mul(f(x), w))

    elementwise = 1e-6
    return [
        ("add", weighted(lambda x: ad.add(x, b)), a, elementwise),
        ("sub", weighted(lambda x: ad.sub(b, x)), a, elementwise),
        ("mul", weighted(lambda x: ad.mul(x, x)), a, elementwise),
        ("negate", weighted(ad.negate), a, elementwise),
        ("exp", weighted(ad.exp), a, elementwise),
        ("log", weighted(ad.log), pos, elementwise),
        ("square", weighted(ad.square), a, elementwise),
        ("relu", weighted(ad.relu), away, elementwise),
        ("sigmoid", weighted(ad.sigmoid), a, elementwise),
        ("softplus", weighted(ad.softplus), a, elementwise),
        ("clip", weighted(lambda x: ad.clip(x, -0.05, 0.05)), away, elementwise),
        ("sum_axis", lambda x: ad.sum(ad.mul(ad.sum(x, axis=0), w[0])), a, elementwise),
        ("mean", lambda x: ad.mul(ad.mean(ad.square(x)), 3.0), a, elementwise),
        ("matmul", lambda x: ad.sum(ad.mul(ad.matmul(x, m), rng_fixed(3, 2))), a, elementwise),
        ("transpose", lambda x: ad.sum(ad.mul(ad.transpose(x), w.T)), a, elementwise),
        ("broadcast_row", lambda x: ad.sum(ad.mul(ad.broadcast_row(x, 3), w)), row, elementwise),
        ("slice_rows", lambda x: ad.sum(ad.square(ad.slice_rows(x, 1, 3))), a, elementwise),
        ("slice_cols", lambda x: ad.sum(ad.square(ad.slice_cols(x, 1, 3))), a, elementwise),
        ("concat_rows", lambda x: ad.sum(ad.mul(ad.concat_rows([x, ad.square(x)]), np.vstack([w, w]))), a, elementwise),
        ("pairwise_sq_dists", lambda x: ad.sum(ad.mul(ad.pairwise_sq_dists(x), rng_fixed(3, 3))), a, elementwise),
        ("logdet_spd", lambda x: ad.logdet_spd(x), spd, 1e-5),
    ]


def rng_fixed(r: int, c: int) -> np.ndarray:
    """A fixed weighting matrix so scalar reductions see every entry differently."""
    return np.arange(1, r * c + 1, dtype=np.float64).reshape(r, c) / (r * c)


def check_op_gradients(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    return [_result(f"grad_{name}", ad.grad_check(f, x), tol) for name, f, x, tol in _op_cases(rng)]


def check_end_to_end_gradient(
    batch: int = 6, latent: int = 3, data_dim: int = 5, seed: int = 0, tol: float = 1e-4
) -> list[CheckResult]:
    """Finite differences of the full batch loss for both priors."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((batch, data_dim))
    eps = rng.standard_normal((batch, latent))
    out = []
    for prior in ("normal", "dpp"):
        kernel = dpp.KernelParams.isotropic(1000.0, 1.0, 1.0, latent)
        model = models.build_vae(data_dim, latent, hidden=(7,), prior=prior, kernel=kernel, rng=np.random.default_rng(seed))
        err = ad.grad_check_params(lambda: models.batch_loss(model, x, eps=eps)[0], model.params)
        out.append(_result(f"grad_batch_loss_{prior}", err, tol, f" (B={batch}, P={latent})"))
    return out


# ---------------------------------------------------------------- spectrum


NYSTROM_CONFIGS = ((1.0, 1.0, 1.0), (1000.0, 1.0, 1.0), (1.0, 2.0, 0.5))


def check_nystrom(top: int = 10, n_nodes: int = 400, tol: float = 0.01) -> list[CheckResult]:
    out = []
    for alpha, rho, sigma in NYSTROM_CONFIGS:
        params = dpp.KernelParams(alpha, (rho,), (sigma,))
        analytic = dpp.continuous_spectrum(params, top).eigenvalues
        numeric = dpp.nystrom_eigenvalues(params, n_nodes)[:top]
        err = float(np.max(np.abs(analytic - numeric) / numeric))
        out.append(_result(f"nystrom_alpha={alpha:g}_rho={rho:g}_sigma={sigma:g}", err, tol))
    return out


def lattice_spectrum(params: dpp.KernelParams, m: int, extent: int) -> np.ndarray:
    """Top ``m`` log-eigenvalues by scoring every multi-index in ``[1, extent]^D``."""
    vals = [dpp.log_eigenvalue(params, n) for n in itertools.product(range(1, extent + 1), repeat=params.dim)]
    return np.sort(np.array(vals))[::-1][:m]


def check_heap_vs_lattice(m: int = 50, extent: int = 60, tol: float = 1e-12) -> CheckResult:
    params = dpp.KernelParams(2.0, (1.0, 0.7), (0.3, 1.5))
    heap = dpp.continuous_spectrum(params, m).log_eigenvalues
    err = float(np.max(np.abs(heap - lattice_spectrum(params, m, extent))))
    return _result("heap_vs_lattice_D=2", err, tol)


# ---------------------------------------------------------------- bounds


SANDWICH_CONFIGS = (
    dpp.KernelParams(1.0, (1.0, 1.0), (0.01, 0.01)),
    dpp.KernelParams.isotropic(1000.0, 1.0, 1.0, 20),
)
SANDWICH_KS = (3, 10, 100)
SANDWICH_TOL = 1e-12  # log-space slack for rounding in the tail estimate


def sandwich_sweep(params: dpp.KernelParams, k: int, multipliers=(1, 2, 5, 10)) -> dict:
    """Bounds at ``M = c*k`` for each multiplier, plus the ``M = 10k`` truncation."""
    spectrum = dpp.continuous_spectrum(params, 10 * k)
    bounds = [dpp.normalizer_bounds(spectrum, k, c * k) for c in multipliers]
    reference = float(dpp.esp(spectrum.log_eigenvalues, k).log_values[k])
    return {"bounds": bounds, "reference": reference}


def sandwich_violation(sweep: dict, tol: float = SANDWICH_TOL) -> float:
    """Largest violation of ``lower <= ref <= upper`` and of bound monotonicity."""
    ref = sweep["reference"]
    lows = [b.log_lower for b in sweep["bounds"]]
    ups = [b.log_upper for b in sweep["bounds"]]
    worst = 0.0
    for lo, up in zip(lows, ups):
        worst = max(worst, lo - ref, ref - up)
    for a, b in zip(lows, lows[1:]):
        worst = max(worst, a - b)
    for a, b in zip(ups, ups[1:]):
        worst = max(worst, b - a)
    return max(0.0, worst - tol)


def check_sandwich() -> list[CheckResult]:
    out = []
    for i, params in enumerate(SANDWICH_CONFIGS):
        for k in SANDWICH_KS:
            v = sandwich_violation(sandwich_sweep(params, k))
            out.append(CheckResult(f"bound_sandwich_cfg{i}_k={k}", v, 0.0, v == 0.0, " (log-space violation)"))
    return out


def run_all(perturbation: float = 0.0) -> list[CheckResult]:
    results = [check_esp(perturbation=perturbation)]
    results += check_op_gradients()
    results += check_end_to_end_gradient()
    results += check_nystrom()
    results.append(check_heap_vs_lattice())
    results += check_sandwich()
    return results
