"""Continuous k-DPP machinery for a Gaussian quality/similarity kernel.

The kernel is ``L(x, y) = q(x) k(x, y) q(y)`` with

    q(x)    = sqrt(alpha) * prod_d (pi rho_d)^(-1/2) exp(-x_d^2 / (2 rho_d))
    k(x, y) = prod_d exp(-(x_d - y_d)^2 / (2 sigma_d))

Its integral operator on R^D has a closed-form spectrum indexed by
multi-indices ``n`` in N^D (1-based). With ``gamma = sigma / rho`` and
``beta = (1 + 2 / gamma)^(1/4)`` each dimension contributes

    (pi rho)^(-1/2) * ((beta^2 + 1)/2 + 1/(2 gamma))^(-1/2) * r^(n - 1),
    r = 1 / (gamma (beta^2 + 1) + 1)

and the eigenvalue is ``alpha`` times the product over dimensions. The
``(pi rho)^(-1/2)`` factor comes from the normalisation of ``q`` above; the
trace of the operator equals ``integral q(x)^2 dx = alpha prod_d (pi rho_d)^(-1/2)``.

Everything involving elementary symmetric polynomials is done in log space.
"""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterator, Sequence

import numpy as np

from . import autodiff as ad
from .errors import InvalidParams, NegativeTail

log = logging.getLogger(__name__)

LOG_PI = math.log(math.pi)


@dataclass(frozen=True)
class KernelParams:
    alpha: float
    rho: tuple[float, ...]
    sigma: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "rho", tuple(float(r) for r in self.rho))
        object.__setattr__(self, "sigma", tuple(float(s) for s in self.sigma))
        vals = (self.alpha, *self.rho, *self.sigma)
        if len(self.rho) != len(self.sigma) or not self.rho:
            raise InvalidParams("rho and sigma must be non-empty and of equal length")
        if not all(math.isfinite(v) and v > 0 for v in vals):
            raise InvalidParams(f"kernel parameters must be positive and finite: {self}")

    @property
    def dim(self) -> int:
        return len(self.rho)

    @classmethod
    def isotropic(cls, alpha: float, rho: float, sigma: float, dim: int) -> "KernelParams":
        return cls(float(alpha), (float(rho),) * dim, (float(sigma),) * dim)

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "rho": list(self.rho), "sigma": list(self.sigma)}


# ---------------------------------------------------------------- kernel


def log_quality(x, params: KernelParams) -> float:
    x = np.asarray(x, dtype=np.float64)
    rho = np.asarray(params.rho)
    return float(
        0.5 * math.log(params.alpha)
        - 0.5 * np.sum(LOG_PI + np.log(rho))
        - np.sum(x * x / (2.0 * rho))
    )


def quality(x, params: KernelParams) -> float:
    return math.exp(log_quality(x, params))


def similarity(x, y, params: KernelParams) -> float:
    d = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    return float(np.exp(-np.sum(d * d / (2.0 * np.asarray(params.sigma)))))


def _log_quality_and_similarity(z, params: KernelParams) -> tuple[ad.Node, ad.Node]:
    """Column of ``log q(z_n)`` (B x 1) and the unit-diagonal similarity matrix K (B x B)."""
    z = ad.const(z)
    b, d = z.shape
    if d != params.dim:
        raise InvalidParams(f"latent dim {d} does not match kernel dim {params.dim}")
    rho = np.asarray(params.rho)[None, :]
    inv_sqrt_sigma = 1.0 / np.sqrt(np.asarray(params.sigma))[None, :]
    log_q0 = 0.5 * math.log(params.alpha) - 0.5 * float(np.sum(LOG_PI + np.log(rho)))
    log_q = ad.sub(log_q0, ad.sum(ad.mul(ad.square(z), 1.0 / (2.0 * rho)), axis=1, keepdims=True))
    sq = ad.pairwise_sq_dists(ad.mul(z, inv_sqrt_sigma))
    return log_q, ad.exp(ad.mul(sq, -0.5))


def build_kernel_matrix(z, params: KernelParams) -> ad.Node:
    """B x B kernel matrix ``L_nm = q(z_n) k(z_n, z_m) q(z_m)`` as an autodiff node."""
    log_q, sim = _log_quality_and_similarity(z, params)
    return ad.mul(ad.exp(ad.add(log_q, ad.transpose(log_q))), sim)


# ---------------------------------------------------------------- spectrum


@dataclass(frozen=True)
class Spectrum:
    log_eigenvalues: np.ndarray
    multi_indices: np.ndarray  # (m, D), 1-based
    beta: np.ndarray
    gamma: np.ndarray
    operator_trace: float

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.exp(self.log_eigenvalues)

    @property
    def m(self) -> int:
        return len(self.log_eigenvalues)

    def partial_sum(self, m: int | None = None) -> float:
        return math.fsum(self.eigenvalues[: self.m if m is None else m])

    def tail(self, m: int | None = None) -> float:
        return self.operator_trace - self.partial_sum(m)


def _per_dim(params: KernelParams):
    rho = np.asarray(params.rho)
    sigma = np.asarray(params.sigma)
    gamma = sigma / rho
    beta = (1.0 + 2.0 / gamma) ** 0.25
    b2 = beta**2
    log_head = -0.5 * (LOG_PI + np.log(rho)) - 0.5 * np.log((b2 + 1.0) / 2.0 + 1.0 / (2.0 * gamma))
    log_ratio = -np.log(gamma * (b2 + 1.0) + 1.0)
    return beta, gamma, log_head, log_ratio


def operator_trace(params: KernelParams) -> float:
    """Sum of all eigenvalues, as a product of per-dimension geometric series."""
    _, _, log_head, log_ratio = _per_dim(params)
    per_dim = log_head - np.log1p(-np.exp(log_ratio))
    return math.exp(math.log(params.alpha) + math.fsum(per_dim))


def log_eigenvalue(params: KernelParams, index: Sequence[int]) -> float:
    _, _, log_head, log_ratio = _per_dim(params)
    return _log_eig(math.log(params.alpha), log_head.tolist(), log_ratio.tolist(), index)


def _log_eig(log_alpha: float, log_head: list, log_ratio: list, index: Sequence[int]) -> float:
    terms = [log_alpha]
    terms += [h + (n - 1) * lr for h, lr, n in zip(log_head, log_ratio, index)]
    # fsum is exactly rounded, so permuted multi-indices give bit-identical ties
    return math.fsum(terms)


def iter_eigenvalues(params: KernelParams) -> Iterator[tuple[float, tuple[int, ...]]]:
    """Yield ``(log lambda_n, n)`` in decreasing order of ``lambda_n``.

    Best-first search over the multi-index lattice: the frontier is a heap
    keyed on ``(-log lambda, n)``, seeded with ``(1, ..., 1)``; popping ``n``
    pushes the D successors that increment one coordinate. Equal eigenvalues
    come out in lexicographic order of ``n``.
    """
    dim = params.dim
    _, _, log_head, log_ratio = _per_dim(params)
    log_head, log_ratio = log_head.tolist(), log_ratio.tolist()
    log_alpha = math.log(params.alpha)
    start = (1,) * dim
    heap = [(-_log_eig(log_alpha, log_head, log_ratio, start), start)]
    seen = {start}
    while heap:
        neg_log, n = heapq.heappop(heap)
        yield -neg_log, n
        for d in range(dim):
            succ = n[:d] + (n[d] + 1,) + n[d + 1 :]
            if succ not in seen:
                seen.add(succ)
                heapq.heappush(heap, (-_log_eig(log_alpha, log_head, log_ratio, succ), succ))


def _make_spectrum(params: KernelParams, items) -> Spectrum:
    beta, gamma, _, _ = _per_dim(params)
    return Spectrum(
        log_eigenvalues=np.array([v for v, _ in items], dtype=np.float64),
        multi_indices=np.array([n for _, n in items], dtype=np.int64).reshape(len(items), params.dim),
        beta=beta,
        gamma=gamma,
        operator_trace=operator_trace(params),
    )


def continuous_spectrum(params: KernelParams, m: int) -> Spectrum:
    """The ``m`` largest eigenvalues of the kernel's integral operator."""
    if m < 1:
        raise InvalidParams("m must be >= 1")
    it = iter_eigenvalues(params)
    return _make_spectrum(params, [next(it) for _ in range(m)])


def truncated_spectrum(params: KernelParams, rel_tail: float = 1e-3, max_terms: int = 10_000) -> Spectrum:
    """Enumerate eigenvalues until ``tail < rel_tail * trace`` or ``max_terms`` is hit."""
    trace = operator_trace(params)
    items = []
    partial = 0.0
    for item in iter_eigenvalues(params):
        items.append(item)
        partial += math.exp(item[0])
        if len(items) >= max_terms or trace - partial < rel_tail * trace:
            break
    spec = _make_spectrum(params, items)
    log.info("spectrum truncated at M=%d, tail=%.4g (%.3g of trace)", spec.m, spec.tail(), spec.tail() / trace)
    return spec


# ---------------------------------------------------------------- ESP


@dataclass(frozen=True)
class ESPTable:
    log_values: np.ndarray  # log e_j for j = 0..k
    m_used: int
    k: int

    @property
    def values(self) -> np.ndarray:
        return np.exp(self.log_values)


def esp(log_lambdas, k: int) -> ESPTable:
    """Elementary symmetric polynomials e_0..e_k of ``exp(log_lambdas)``.

    Uses the recursion ``e_j^(n) = e_j^(n-1) + lambda_n e_(j-1)^(n-1)`` in log
    space. ``log_lambdas`` may contain ``-inf`` for zero eigenvalues.
    """
    log_lambdas = np.asarray(log_lambdas, dtype=np.float64).reshape(-1)
    if k < 0:
        raise InvalidParams("k must be >= 0")
    table = np.full(k + 1, -np.inf)
    table[0] = 0.0
    for n, ll in enumerate(log_lambdas, start=1):
        top = min(n, k)
        if top == 0:
            break
        table[1 : top + 1] = np.logaddexp(table[1 : top + 1], ll + table[0:top])
    return ESPTable(log_values=table, m_used=len(log_lambdas), k=k)


# ---------------------------------------------------------------- normalizer


@dataclass(frozen=True)
class NormalizerBound:
    log_lower: float
    log_upper: float
    m_used: int
    tail: float = field(default=0.0)


def normalizer_bounds(spectrum: Spectrum, k: int, m: int | None = None) -> NormalizerBound:
    """Bracket ``log e_k(lambda_{1:inf})`` from the first ``m`` eigenvalues.

    lower = e_k(lambda_{1:M})
    upper = sum_{j=0..k} tail^j / j! * e_{k-j}(lambda_{1:M})

    ``log_lower`` is ``-inf`` when ``M < k``.
    """
    m = spectrum.m if m is None else m
    if m > spectrum.m:
        raise InvalidParams(f"spectrum only has {spectrum.m} eigenvalues, asked for {m}")
    trace = spectrum.operator_trace
    tail = spectrum.tail(m)
    if tail < 0:
        if tail < -1e-12 * trace:
            raise NegativeTail(f"partial eigenvalue sum exceeds trace by {-tail:.3g}")
        tail = 0.0
    table = esp(spectrum.log_eigenvalues[:m], k)
    log_lower = float(table.log_values[k])
    if tail == 0.0:
        return NormalizerBound(log_lower, log_lower, m, 0.0)
    j = np.arange(k + 1)
    terms = j * math.log(tail) - np.array([math.lgamma(i + 1.0) for i in j]) + table.log_values[k - j]
    log_upper = float(np.logaddexp.reduce(terms))
    return NormalizerBound(log_lower, max(log_upper, log_lower), m, tail)


@lru_cache(maxsize=64)
def log_normalizer(params: KernelParams, k: int, rel_tail: float = 1e-3, max_terms: int = 10_000) -> float:
    """Upper bound on ``log e_k(lambda_{1:inf})``, cached per ``(params, k)``."""
    spec = _cached_spectrum(params, rel_tail, max_terms)
    bound = normalizer_bounds(spec, k)
    log.info("log normalizer k=%d: [%.6g, %.6g] with M=%d", k, bound.log_lower, bound.log_upper, bound.m_used)
    return bound.log_upper


@lru_cache(maxsize=16)
def _cached_spectrum(params: KernelParams, rel_tail: float, max_terms: int) -> Spectrum:
    return truncated_spectrum(params, rel_tail, max_terms)


# ---------------------------------------------------------------- prior


def dpp_log_prior(z, params: KernelParams, log_normalizer: float) -> ad.Node:
    """``log det L_Z - log e_B(lambda)`` for a batch ``z`` of B latent points.

    Uses ``det L_Z = prod_n q(z_n)^2 * det K`` so the factorised matrix has a unit
    diagonal; factoring L_Z directly overflows its inverse once the qualities
    of a batch span hundreds of orders of magnitude.
    """
    log_q, sim = _log_quality_and_similarity(z, params)
    log_det = ad.add(ad.mul(ad.sum(log_q), 2.0), ad.logdet_spd(sim))
    return ad.sub(log_det, log_normalizer)


def nystrom_eigenvalues(params: KernelParams, n_nodes: int = 400, half_width: float | None = None) -> np.ndarray:
    """Numerical eigenvalues of the 1-D integral operator by trapezoid quadrature.

    Used as an independent check of the closed-form spectrum.
    """
    if params.dim != 1:
        raise InvalidParams("Nystrom check is implemented for D=1")
    if half_width is None:
        half_width = 10.0 * params.sigma[0]
    x = np.linspace(-half_width, half_width, n_nodes)
    w = np.full(n_nodes, x[1] - x[0])
    w[0] = w[-1] = 0.5 * (x[1] - x[0])
    q = np.exp([log_quality([xi], params) for xi in x])
    k = np.exp(-((x[:, None] - x[None, :]) ** 2) / (2.0 * params.sigma[0]))
    sw = np.sqrt(w)
    mat = sw[:, None] * q[:, None] * k * q[None, :] * sw[None, :]
    return np.sort(np.linalg.eigvalsh(mat))[::-1]
