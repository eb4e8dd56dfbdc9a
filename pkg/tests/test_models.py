import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial.distance import pdist

from dppvae import autodiff as ad
from dppvae import data, dpp, linalg, models
from dppvae.errors import ConfigError, DataError, DomainError, NotPositiveDefinite, ShapeMismatch


def small_vae(prior="normal", likelihood="gaussian", seed=0, data_dim=5, latent=3, hidden=(7,)):
    kernel = dpp.KernelParams.isotropic(1000.0, 1.0, 1.0, latent)
    return models.build_vae(
        data_dim, latent, hidden=hidden, likelihood=likelihood, prior=prior, kernel=kernel,
        rng=np.random.default_rng(seed),
    )


def encoder_output(mu, log_var):
    return models.EncoderOutput(ad.const(np.asarray(mu, float)), ad.const(np.asarray(log_var, float)))


# ---------------------------------------------------------------- structure


def test_architecture_sizes():
    m = models.build_vae(784, 20)
    assert m.encoder.sizes == [784, 256, 128, 40]
    assert m.decoder.sizes == [20, 128, 256, 784]


def test_unknown_prior_and_likelihood():
    with pytest.raises(ConfigError):
        models.build_vae(4, 2, prior="cauchy")
    with pytest.raises(ConfigError):
        models.build_vae(4, 2, likelihood="poisson")


def test_train_config_validation():
    with pytest.raises(ConfigError):
        models.TrainConfig(batch_size=0)
    with pytest.raises(ConfigError):
        models.TrainConfig(epochs=-1)


# ---------------------------------------------------------------- encode


def test_zero_weight_encoder_returns_bias():
    m = models.build_vae(4, 2, hidden=(3,), rng=None)
    m.encoder.biases[-1].value[:] = [[0.5, -1.0, 0.25, -2.0]]
    out = models.encode(m, np.random.default_rng(0).standard_normal((5, 4)))
    np.testing.assert_array_equal(out.mu.value, np.tile([0.5, -1.0], (5, 1)))
    np.testing.assert_array_equal(out.log_var.value, np.tile([0.25, -2.0], (5, 1)))


def test_identical_rows_give_identical_outputs():
    m = small_vae()
    x = np.tile(np.arange(5.0), (4, 1))
    out = models.encode(m, x)
    assert np.all(out.mu.value == out.mu.value[0])
    assert np.all(out.log_var.value == out.log_var.value[0])


def test_perturbing_one_row_changes_only_that_row():
    m = small_vae()
    x = np.random.default_rng(1).standard_normal((6, 5))
    base = models.encode(m, x).mu.value
    x2 = x.copy()
    x2[3] += 0.5
    moved = models.encode(m, x2).mu.value
    changed = np.any(moved != base, axis=1)
    assert changed.tolist() == [False, False, False, True, False, False]


def test_log_var_clamped():
    m = models.build_vae(3, 1, hidden=(), rng=None)
    m.encoder.biases[-1].value[:] = [[0.0, -50.0]]
    assert float(models.encode(m, np.zeros((1, 3))).log_var.value[0, 0]) == -10.0
    m.encoder.biases[-1].value[:] = [[0.0, 50.0]]
    assert float(models.encode(m, np.zeros((1, 3))).log_var.value[0, 0]) == 10.0


def test_encode_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        models.encode(small_vae(), np.zeros((2, 4)))


# ---------------------------------------------------------------- reparameterize


def test_reparameterize_at_clamp_floor_is_near_mu():
    out = encoder_output([[1.0, -2.0]], [[-10.0, -10.0]])
    z = models.reparameterize(out, np.random.default_rng(0)).value
    eps = np.random.default_rng(0).standard_normal((1, 2))
    np.testing.assert_allclose(z - out.mu.value, math.exp(-5.0) * eps, rtol=1e-12)
    assert math.exp(-5.0) <= math.e**-5


def test_reparameterize_deterministic_per_seed():
    out = encoder_output([[0.3, 0.1]], [[0.2, -0.4]])
    a = models.reparameterize(out, np.random.default_rng(7)).value
    b = models.reparameterize(out, np.random.default_rng(7)).value
    np.testing.assert_array_equal(a, b)


def test_reparameterize_monte_carlo_mean():
    n = 100_000
    mu, log_var = np.array([0.7, -1.3]), np.array([0.5, -1.0])
    out = encoder_output(np.tile(mu, (n, 1)), np.tile(log_var, (n, 1)))
    z = models.reparameterize(out, np.random.default_rng(3)).value
    std = np.exp(log_var / 2)
    assert np.all(np.abs(z.mean(axis=0) - mu) < 3 * std / math.sqrt(n))


def test_reparameterize_gradient_reaches_mu_and_log_var():
    mu = ad.param(np.array([[0.1, 0.2]]))
    lv = ad.param(np.array([[0.3, -0.1]]))
    eps = np.array([[0.5, -1.5]])
    with ad.Tape():
        z = models.reparameterize(models.EncoderOutput(mu, lv), eps=eps)
        loss = ad.sum(z)
    ad.backward(loss)
    np.testing.assert_allclose(mu.grad, 1.0)
    np.testing.assert_allclose(lv.grad, 0.5 * np.exp(lv.value / 2) * eps)


# ---------------------------------------------------------------- reconstruction


def test_gaussian_reconstruction_zero_at_perfect_fit():
    x = np.random.default_rng(0).standard_normal((3, 4))
    assert float(models.reconstruction_loss(x, ad.const(x), "gaussian").value) == 0.0


def test_bernoulli_logit_zero_gives_log2_per_pixel():
    x = np.ones((2, 5))
    loss = float(models.reconstruction_loss(x, ad.const(np.zeros((2, 5))), "bernoulli").value)
    assert loss == pytest.approx(10 * math.log(2.0), rel=1e-14)


def test_bernoulli_rejects_out_of_range_targets():
    with pytest.raises(DomainError):
        models.reconstruction_loss(np.array([[1.5]]), ad.const(np.zeros((1, 1))), "bernoulli")


def test_reconstruction_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        models.reconstruction_loss(np.zeros((2, 3)), ad.const(np.zeros((3, 2))), "gaussian")


@pytest.mark.parametrize("likelihood", ["gaussian", "bernoulli"])
def test_reconstruction_gradient(likelihood):
    rng = np.random.default_rng(4)
    x = rng.uniform(0, 1, (3, 4))
    err = ad.grad_check(lambda h: models.reconstruction_loss(x, h, likelihood), rng.standard_normal((3, 4)))
    assert err < 1e-5


# ---------------------------------------------------------------- standard KLD


def test_standard_kld_zero_at_prior():
    assert float(models.standard_kld(encoder_output(np.zeros((3, 2)), np.zeros((3, 2)))).value) == 0.0


def test_standard_kld_unit_mean():
    assert float(models.standard_kld(encoder_output([[1.0]], [[0.0]])).value) == pytest.approx(0.5, abs=1e-15)


def test_standard_kld_monte_carlo():
    mu, log_var = np.array([[0.8, -0.4]]), np.array([[-0.6, 0.9]])
    closed = float(models.standard_kld(encoder_output(mu, log_var)).value)
    n = 100_000
    std = np.exp(log_var / 2)
    z = mu + std * np.random.default_rng(5).standard_normal((n, 2))
    log_q = -0.5 * np.sum(((z - mu) / std) ** 2 + log_var + math.log(2 * math.pi), axis=1)
    log_p = -0.5 * np.sum(z**2 + math.log(2 * math.pi), axis=1)
    assert abs(np.mean(log_q - log_p) - closed) < 0.01 * closed


@given(
    st.lists(st.floats(-3, 3), min_size=2, max_size=2),
    st.lists(st.floats(-5, 5), min_size=2, max_size=2),
)
def test_standard_kld_nonnegative(mu, log_var):
    assert float(models.standard_kld(encoder_output([mu], [log_var])).value) >= -1e-12


# ---------------------------------------------------------------- DPP KLD


def test_gaussian_neg_entropy_closed_form():
    log_var = np.array([[0.3, -0.2], [1.0, 0.0]])
    got = float(models.gaussian_neg_entropy(encoder_output(np.zeros((2, 2)), log_var)).value)
    want = -0.5 * np.sum(1 + math.log(2 * math.pi) + log_var)
    assert got == pytest.approx(want, rel=1e-14)


def test_dpp_kld_gradient():
    rng = np.random.default_rng(6)
    params = dpp.KernelParams.isotropic(1000.0, 1.0, 1.0, 3)
    eps = rng.standard_normal((6, 3))
    log_norm = dpp.log_normalizer(params, 6)

    def loss(theta):
        out = models.EncoderOutput(ad.slice_cols(theta, 0, 3), ad.slice_cols(theta, 3, 6))
        return models.dpp_kld(out, models.reparameterize(out, eps=eps), params, log_norm)

    assert ad.grad_check(loss, rng.standard_normal((6, 6)) * 0.5) < 1e-4


def _two_point_kld(separation, params, log_var=-1.0):
    # points on a circle of radius 1, so their quality terms stay fixed
    half = separation / 2
    mu = np.array([[math.cos(half), math.sin(half)], [math.cos(half), -math.sin(half)]])
    out = encoder_output(mu, np.full((2, 2), log_var))
    return float(models.dpp_kld(out, out.mu, params, dpp.log_normalizer(params, 2)).value)


def test_dpp_kld_repulsion():
    params = dpp.KernelParams.isotropic(1000.0, 1.0, 1.0, 2)
    losses = [_two_point_kld(s, params) for s in (0.2, 0.5, 1.0, 2.0, 3.0)]
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_duplicated_batch_much_worse_than_separated():
    params = dpp.KernelParams.isotropic(1000.0, 1.0, 1.0, 2)
    duplicated = _two_point_kld(0.0, params)
    separated = _two_point_kld(2.0, params)
    assert duplicated - separated > 10.0


def test_duplicated_batch_diverges_as_jitter_vanishes():
    params = dpp.KernelParams.isotropic(1000.0, 1.0, 1.0, 2)
    z = np.array([[0.5, 0.5], [0.5, 0.5]])
    kernel = dpp.build_kernel_matrix(z, params).value
    with pytest.raises(NotPositiveDefinite):
        linalg.log_det_spd(kernel, linalg.JitterPolicy(max_retries=0))
    penalties = [
        -linalg.log_det_spd(kernel, linalg.JitterPolicy(initial_scale=j, max_retries=1))
        for j in (1e-2, 1e-4, 1e-6, 1e-8, 1e-10)
    ]
    steps = np.diff(penalties)
    assert np.all(steps > 4.0)  # about log(100) per decade pair


def test_kld_swap_only_changes_kld_term():
    x = np.random.default_rng(8).standard_normal((4, 5))
    eps = np.random.default_rng(9).standard_normal((4, 3))
    normal = small_vae("normal")
    dppm = small_vae("dpp")
    _, r1, k1 = models.batch_loss(normal, x, eps=eps)
    _, r2, k2 = models.batch_loss(dppm, x, eps=eps)
    assert float(r1.value) == float(r2.value)
    assert float(k1.value) != float(k2.value)


@pytest.mark.parametrize("prior", ["normal", "dpp"])
def test_elbo_decomposition(prior):
    x = np.random.default_rng(10).standard_normal((5, 5))
    total, recon, kld = models.batch_loss(small_vae(prior), x, np.random.default_rng(11))
    assert abs(float(total.value) - (float(recon.value) + float(kld.value))) <= 1e-12 * max(1.0, abs(float(total.value)))


@pytest.mark.parametrize("prior", ["normal", "dpp"])
@pytest.mark.parametrize("batch,latent,data_dim", [(2, 1, 3), (8, 4, 10)])
def test_end_to_end_gradient(prior, batch, latent, data_dim):
    rng = np.random.default_rng(12)
    x = rng.standard_normal((batch, data_dim))
    eps = rng.standard_normal((batch, latent))
    m = small_vae(prior, data_dim=data_dim, latent=latent, hidden=(6,))
    err = ad.grad_check_params(lambda: models.batch_loss(m, x, eps=eps)[0], m.params, max_entries=60)
    assert err < 1e-4


# ---------------------------------------------------------------- training


def blob_set(n_per_class=100, dim=10, seed=0):
    centers = 2.0 * np.random.default_rng(seed).standard_normal((2, dim))
    return data.make_blobs([n_per_class, n_per_class], dim, centers, 1.0, seed)


def test_training_step_count():
    x = np.zeros((5000, 2))
    m = models.build_vae(2, 1, hidden=(2,), rng=np.random.default_rng(0))
    ck = models.train(m, x, models.TrainConfig(epochs=10, batch_size=100))
    assert ck.history.shape == (500, 3)


def test_training_keeps_short_final_batch():
    m = small_vae("dpp", data_dim=4, latent=2)
    ck = models.train(m, np.random.default_rng(0).standard_normal((25, 4)), models.TrainConfig(epochs=2, batch_size=10))
    assert ck.history.shape == (6, 3)
    assert np.all(np.isfinite(ck.history))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_standard_vae_loss_decreases(seed):
    ds = blob_set(seed=seed)
    m = models.build_vae(10, 2, hidden=(16,), rng=np.random.default_rng(seed))
    ck = models.train(m, ds, models.TrainConfig(epochs=30, batch_size=20, seed=seed))
    smooth = np.convolve(ck.history[:, 2], np.ones(20) / 20, mode="valid")
    assert smooth[-1] < smooth[0]


def test_training_deterministic():
    ds = blob_set(50)
    runs = []
    for _ in range(2):
        m = small_vae("dpp", data_dim=10, latent=2)
        runs.append(models.train(m, ds, models.TrainConfig(epochs=3, batch_size=25, seed=4)).history)
    np.testing.assert_array_equal(runs[0], runs[1])


def test_empty_training_data():
    with pytest.raises(DataError):
        models.train(small_vae(), np.zeros((0, 5)), models.TrainConfig())


def test_larger_rho_spreads_latents():
    ds = blob_set(seed=0)
    spread = []
    for rho in (0.25, 1.0, 4.0):
        kernel = dpp.KernelParams.isotropic(1000.0, rho, 1.0, 4)
        m = models.build_vae(10, 4, hidden=(32,), prior="dpp", kernel=kernel, rng=np.random.default_rng(0))
        models.train(m, ds, models.TrainConfig(epochs=30, batch_size=50, seed=0))
        spread.append(pdist(models.latent_means(m, ds.features)).mean())
    assert spread[0] < spread[1] < spread[2]


# ---------------------------------------------------------------- generate


def test_zero_decoder_constant_output():
    m = models.build_vae(4, 2, hidden=(3,), likelihood="bernoulli", rng=None)
    m.decoder.biases[-1].value[:] = [[0.0, 1.0, -1.0, 2.0]]
    out = models.generate(m, 6, np.random.default_rng(0))
    expected = 1.0 / (1.0 + np.exp(-np.array([0.0, 1.0, -1.0, 2.0])))
    np.testing.assert_allclose(out, np.tile(expected, (6, 1)), rtol=1e-15)


def test_generate_deterministic_and_bernoulli_range():
    m = small_vae(likelihood="bernoulli")
    a = models.generate(m, 100, np.random.default_rng(3))
    b = models.generate(m, 100, np.random.default_rng(3))
    np.testing.assert_array_equal(a, b)
    assert np.all((a >= 0) & (a <= 1))


def test_generate_shared_latents():
    z = np.random.default_rng(0).standard_normal((10, 3))
    m = small_vae()
    np.testing.assert_array_equal(models.generate(m, latents=z), models.decode(m, z).value)


# ---------------------------------------------------------------- checkpoints


@pytest.mark.parametrize("prior", ["normal", "dpp"])
def test_checkpoint_round_trip(tmp_path, prior):
    m = small_vae(prior)
    ck = models.train(m, np.random.default_rng(0).standard_normal((20, 5)), models.TrainConfig(epochs=1, batch_size=10))
    path = models.save_checkpoint(ck, tmp_path / "ck.npz")
    back = models.load_checkpoint(path)
    for p, q in zip(ck.model.params, back.model.params):
        assert p.value.tobytes() == q.value.tobytes()
    np.testing.assert_array_equal(ck.history, back.history)
    assert back.model.spec() == ck.model.spec()
    assert back.config == ck.config


def test_checkpoint_version_check(tmp_path):
    import json

    ck = models.Checkpoint(small_vae(), np.zeros((0, 3)))
    path = models.save_checkpoint(ck, tmp_path / "ck.npz")
    with np.load(path) as f:
        arrays = {k: f[k] for k in f.files}
    header = json.loads(str(arrays["__header__"]))
    header["version"] = "other/9"
    arrays["__header__"] = np.array(json.dumps(header))
    np.savez(path, **arrays)
    with pytest.raises(DataError):
        models.load_checkpoint(path)
