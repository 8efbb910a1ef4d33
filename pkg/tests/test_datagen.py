"""Panel I/O round trips and statistical checks on the synthetic generator."""

import numpy as np
import pytest

from dynreg.datagen import (
    SeriesPanel,
    SignalSpec,
    SynthSpec,
    banded_covariance,
    equicorrelated,
    factor_from_covariance,
    generate,
    load_csv,
    make_synth_spec,
    save_csv,
    save_truth,
    simulate_residual_field,
    sparse_stable_coefficients,
    spectral_radius,
    _group_rng,
    _DOMAIN_NOISE,
)
from dynreg.errors import DataFormatError, NonStationaryError
from dynreg.matnorm import MatrixNormalModel, TriangularFactor, covariance, sample
from dynreg.residual_ar import ArCoefficients


def vec_groups(field, q):
    """Column-major vectorization of each consecutive q-column block."""
    n, t = field.shape
    g = t // q
    return np.stack([field[:, i * q : (i + 1) * q].flatten(order="F") for i in range(g)])


def lag_cross_corr(field, q, k):
    """Sample correlation matrix between vec(R_{g-k}) and vec(R_g)."""
    eta = vec_groups(field, q)
    x, y = eta[:-k], eta[k:]
    d = x.shape[1]
    full = np.corrcoef(np.hstack([x, y]).T)
    return full[:d, d:]


def white_model(n, q):
    return MatrixNormalModel(TriangularFactor.identity(n), TriangularFactor.identity(q))


# ----------------------------------------------------------------- panel + csv


def test_masked_entries_stored_as_zero():
    values = np.array([[1.0, 2.0], [3.0, 4.0]])
    mask = np.array([[True, False], [True, True]])
    panel = SeriesPanel(values, mask)
    assert panel.values[0, 1] == 0.0
    assert panel.values[1, 1] == 4.0


def test_adjacency_validation():
    values = np.zeros((2, 3))
    adj = np.array([[0.0, 1.0], [2.0, 0.5]])
    with pytest.raises(ValueError):
        SeriesPanel(values, None, adjacency=adj)
    ok = np.array([[0.0, 1.0], [2.0, 0.0]])
    panel = SeriesPanel(values, None, adjacency=ok)
    assert panel.adjacency.shape == (2, 2)


def test_load_csv_basic(tmp_path):
    path = tmp_path / "panel.csv"
    path.write_text("time,s1,s2\n0,1.5,2.5\n5,,3.5\n10,4.5,NaN\n")
    panel = load_csv(path)
    assert panel.node_ids == ["s1", "s2"]
    assert panel.resolution_minutes == 5
    assert panel.n_steps == 3
    assert panel.mask.sum() == 4
    assert not panel.mask[0, 1]
    assert not panel.mask[1, 2]
    assert panel.values[0, 2] == 4.5


def test_load_csv_iso_timestamps(tmp_path):
    path = tmp_path / "panel.csv"
    path.write_text(
        "time,a\n2017-01-01 00:00:00,1\n2017-01-01 00:05:00,2\n2017-01-01 00:10:00,3\n"
    )
    panel = load_csv(path)
    assert panel.resolution_minutes == 5


def test_load_csv_ragged_row(tmp_path):
    path = tmp_path / "panel.csv"
    path.write_text("time,a,b\n0,1,2\n1,3\n2,4,5\n")
    with pytest.raises(DataFormatError) as err:
        load_csv(path)
    assert err.value.row == 2


def test_load_csv_non_monotone(tmp_path):
    path = tmp_path / "panel.csv"
    path.write_text("time,a\n0,1\n2,2\n1,3\n")
    with pytest.raises(DataFormatError):
        load_csv(path)


def test_load_csv_bad_value(tmp_path):
    path = tmp_path / "panel.csv"
    path.write_text("time,a\n0,1\n1,oops\n2,3\n")
    with pytest.raises(DataFormatError) as err:
        load_csv(path)
    assert err.value.row == 2
    assert err.value.column == 1


@pytest.mark.parametrize("seed", range(3))
def test_save_load_round_trip(tmp_path, seed):
    rng = np.random.default_rng(seed)
    values = rng.normal(size=(4, 9)) * 10.0 ** rng.integers(-3, 4)
    mask = rng.random((4, 9)) > 0.2
    panel = SeriesPanel(values, mask, resolution_minutes=15, node_ids=["a", "b", "c", "d"])
    path = tmp_path / "rt.csv"
    save_csv(path, panel)
    back = load_csv(path)
    assert back.node_ids == panel.node_ids
    assert back.resolution_minutes == 15
    assert np.array_equal(back.mask, panel.mask)
    assert np.array_equal(back.values, panel.values)


# ----------------------------------------------------------------- signal


def test_signal_shape_and_level():
    sig = SignalSpec(
        amplitude_daily=np.zeros(3),
        amplitude_weekly=np.zeros(3),
        period_daily=12,
        period_weekly=84,
        level=2.5,
    )
    s = sig.evaluate(3, 50)
    assert s.shape == (3, 50)
    assert np.allclose(s, 2.5)


def test_signal_daily_periodicity():
    sig = SignalSpec(
        amplitude_daily=np.ones(2),
        amplitude_weekly=np.zeros(2),
        period_daily=12,
        period_weekly=84,
    )
    s = sig.evaluate(2, 48)
    assert np.allclose(s[:, :12], s[:, 12:24], atol=1e-12)


# ----------------------------------------------------------------- coefficients / factors


def test_spectral_radius_diagonal():
    a = 0.6 * np.eye(3)
    b = 0.5 * np.eye(2)
    assert abs(spectral_radius(a, b) - 0.3) < 1e-12


@pytest.mark.parametrize("seed", range(4))
def test_spectral_radius_product_rule(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(4, 4))
    b = rng.normal(size=(3, 3))
    expected = np.max(np.abs(np.linalg.eigvals(a))) * np.max(np.abs(np.linalg.eigvals(b)))
    assert abs(spectral_radius(a, b) - expected) < 1e-10 * max(1.0, expected)


@pytest.mark.parametrize("dim,rho", [(4, 0.45), (6, -0.1), (3, 0.9)])
def test_factor_from_covariance_round_trip_equicorrelated(dim, rho):
    cov = equicorrelated(dim, rho)
    f = factor_from_covariance(cov)
    assert np.allclose(covariance(f), cov, rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_factor_from_covariance_round_trip_random(seed):
    rng = np.random.default_rng(40 + seed)
    m = rng.normal(size=(5, 5))
    cov = m @ m.T + 5.0 * np.eye(5)
    f = factor_from_covariance(cov)
    assert np.allclose(covariance(f), cov, rtol=1e-9, atol=1e-11)


def test_banded_covariance_layout():
    cov = banded_covariance(4, 0.3, variance=2.0)
    assert np.allclose(np.diag(cov), 2.0)
    assert cov[0, 1] == 0.6
    assert cov[0, 2] == 0.0
    np.linalg.cholesky(cov)  # positive definite


def test_sparse_stable_coefficients():
    coeffs = sparse_stable_coefficients(n=8, q=4, delta=4, radius=0.6, rng_seed=3)
    assert np.all(np.diag(coeffs.a) == 0.0)
    assert np.allclose(coeffs.b, 0.8 * np.eye(4))
    assert abs(spectral_radius(coeffs.a, coeffs.b) - 0.6) < 1e-10
    again = sparse_stable_coefficients(n=8, q=4, delta=4, radius=0.6, rng_seed=3)
    assert np.array_equal(coeffs.a, again.a)


def test_sparse_stable_coefficients_two_nodes():
    # the 2-node ring fills every off-diagonal slot, leaving no room for extras
    coeffs = sparse_stable_coefficients(n=2, q=2, delta=2, radius=0.6, rng_seed=0)
    assert np.all(np.diag(coeffs.a) == 0.0)
    assert np.all(coeffs.a[~np.eye(2, dtype=bool)] != 0.0)
    assert abs(spectral_radius(coeffs.a, coeffs.b) - 0.6) < 1e-10


def test_sparse_stable_coefficients_single_node_rejected():
    with pytest.raises(ValueError, match="2 nodes"):
        sparse_stable_coefficients(n=1, q=2, delta=2, radius=0.6)


# ----------------------------------------------------------------- generator


def small_spec(**overrides):
    base = dict(
        n=3,
        p=4,
        q=2,
        t_total=400,
        delta=4,
        true_a=np.zeros((3, 3)),
        true_b=np.zeros((2, 2)),
        factor_n=TriangularFactor.identity(3),
        factor_q=TriangularFactor.identity(2),
        signal=SignalSpec(
            amplitude_daily=np.ones(3),
            amplitude_weekly=np.zeros(3),
            period_daily=12,
            period_weekly=84,
            level=10.0,
        ),
    )
    base.update(overrides)
    return SynthSpec(**base)


def test_spec_validation():
    with pytest.raises(ValueError):
        small_spec(delta=3)  # not a multiple of q
    with pytest.raises(ValueError):
        small_spec(t_total=401)
    with pytest.raises(ValueError):
        small_spec(missing_rate=1.0)
    with pytest.raises(ValueError):
        small_spec(burn_in_steps=8)


def test_generate_deterministic():
    spec = small_spec(missing_rate=0.2, rng_seed=9)
    p1, _ = generate(spec)
    p2, _ = generate(spec)
    assert np.array_equal(p1.values, p2.values)
    assert np.array_equal(p1.mask, p2.mask)


def test_generate_full_mask_when_rate_zero():
    panel, _ = generate(small_spec(missing_rate=0.0))
    assert panel.mask.all()


def test_generate_missing_rate():
    panel, _ = generate(small_spec(t_total=2000, missing_rate=0.3, rng_seed=1))
    assert abs((~panel.mask).mean() - 0.3) < 0.03


def test_generate_signal_plus_residuals():
    spec = small_spec()
    panel, truth = generate(spec)
    assert np.allclose(panel.values, truth.signal + truth.residuals)


def test_nonstationary_rejected():
    spec = small_spec(true_a=np.eye(3), true_b=np.eye(2))
    with pytest.raises(NonStationaryError):
        generate(spec)


def test_planted_relation_holds_on_grid():
    # every production block must satisfy R_g = A R_{g-k} B + E_g with E_g
    # re-drawn independently from the block's own seed stream
    coeffs = ArCoefficients(
        a=np.array([[0.3, 0.2, 0.0], [0.0, -0.4, 0.1], [0.2, 0.0, 0.3]]),
        b=np.array([[0.7, 0.1], [0.0, 0.6]]),
        seasonal_lag=4,
    )
    noise = white_model(3, 2)
    seed = 17
    field = simulate_residual_field(coeffs, noise, n_groups=30, rng_seed=seed)
    k = coeffs.seasonal_lag // coeffs.q
    for g in range(k, 30):
        r_g = field[:, g * 2 : (g + 1) * 2]
        r_prev = field[:, (g - k) * 2 : (g - k + 1) * 2]
        e = sample(noise, _group_rng(seed, _DOMAIN_NOISE, g))
        assert np.allclose(r_g, coeffs.a @ r_prev @ coeffs.b + e, atol=1e-12)


def test_white_residuals_uncorrelated_at_lag():
    coeffs = ArCoefficients(a=np.zeros((3, 3)), b=np.zeros((2, 2)), seasonal_lag=4)
    field = simulate_residual_field(coeffs, white_model(3, 2), n_groups=5001, rng_seed=5)
    corr = lag_cross_corr(field, q=2, k=2)
    assert np.abs(corr).mean() < 0.05


def test_planted_diagonal_autocorrelation():
    # A = 0.6 I, B = 0.5 I, delta = q: each entry is an AR(1) with coefficient
    # 0.3, so the lag-delta correlation diagonal sits near 0.3
    coeffs = ArCoefficients(a=0.6 * np.eye(3), b=0.5 * np.eye(2), seasonal_lag=2)
    field = simulate_residual_field(coeffs, white_model(3, 2), n_groups=5000, rng_seed=11)
    corr = lag_cross_corr(field, q=2, k=1)
    assert np.all(np.abs(np.diag(corr) - 0.3) < 0.05)
    off = corr[~np.eye(6, dtype=bool)]
    assert np.abs(off).mean() < 0.05


def test_burn_in_doubling_invariance():
    coeffs = ArCoefficients(a=0.6 * np.eye(3), b=0.5 * np.eye(2), seasonal_lag=2)
    noise = white_model(3, 2)
    f1 = simulate_residual_field(coeffs, noise, n_groups=3000, rng_seed=23, burn_in_steps=20)
    f2 = simulate_residual_field(coeffs, noise, n_groups=3000, rng_seed=23, burn_in_steps=40)
    c1 = lag_cross_corr(f1, q=2, k=1)
    c2 = lag_cross_corr(f2, q=2, k=1)
    assert np.linalg.norm(c1 - c2) < 0.01
    # and the bulk of the field is bit-identical once the transient decays
    assert np.array_equal(f1[:, 600:], f2[:, 600:])


def test_truth_bundle_round_trip(tmp_path):
    spec = make_synth_spec(n=4, p=4, q=2, t_total=200, delta=4, rng_seed=2, radius=0.5)
    panel, truth = generate(spec)
    save_truth(truth, tmp_path / "truth")
    reloaded = load_csv(tmp_path / "truth" / "residuals.csv")
    assert np.allclose(reloaded.values, truth.residuals, atol=1e-15)
    for name in ["a.csv", "b.csv", "sigma_n.csv", "sigma_q.csv", "manifest.txt"]:
        assert (tmp_path / "truth" / name).exists()


def test_make_synth_spec_noise_kinds():
    for kind in ["identity", "banded", "equicorrelated"]:
        spec = make_synth_spec(n=4, p=4, q=2, t_total=40, delta=4, noise=kind)
        cov = covariance(spec.factor_n)
        assert cov.shape == (4, 4)
    with pytest.raises(ValueError):
        make_synth_spec(n=4, p=4, q=2, t_total=40, delta=4, noise="heavy")


def test_make_synth_spec_white():
    spec = make_synth_spec(n=3, p=4, q=2, t_total=40, delta=4, white=True)
    assert np.all(spec.true_a == 0.0)
