import numpy as np
import pytest
from pydantic import ValidationError

from app.errors import InvalidArgumentError
from app.models.imaging import Image, ScanningBasis
from app.spi_core import (
    acquire,
    acquire_batch,
    build_scanning_basis,
    hadamard,
    image_rng,
    load_basis,
    measure_stack,
    measurement_count,
    sample_noise,
    save_basis,
    sigma_from_noise_level,
)


@pytest.mark.parametrize("order", [4, 16, 64, 4096])
def test_hadamard_rows_are_orthogonal(order):
    h = hadamard(order)
    np.testing.assert_allclose(h @ h.T, order * np.eye(order), atol=1e-10, rtol=0)


def test_hadamard_rejects_non_power_of_two():
    with pytest.raises(InvalidArgumentError):
        hadamard(12)


@pytest.mark.parametrize("k,n", [(4, 4), (5, 16), (16, 64), (614, 4096)])
def test_scanning_rows_have_unit_norm(k, n):
    phi = build_scanning_basis(k, n, seed=3)
    assert phi.rows.shape == (k, n)
    np.testing.assert_allclose(np.linalg.norm(phi.rows, axis=1), 1.0, atol=1e-12, rtol=0)


def test_scanning_rows_are_scaled_binary_patterns():
    phi = build_scanning_basis(10, 64, seed=0)
    for row in phi.rows:
        levels = np.unique(np.round(row, 12))
        assert len(levels) <= 2
        assert levels[0] == 0.0 or len(levels) == 1


def test_scanning_basis_is_seeded():
    a = build_scanning_basis(8, 64, seed=5)
    b = build_scanning_basis(8, 64, seed=5)
    c = build_scanning_basis(8, 64, seed=6)
    assert np.array_equal(a.rows, b.rows)
    assert not np.array_equal(a.rows, c.rows)
    assert a.sampling_rate == pytest.approx(8 / 64)


def test_scanning_basis_is_read_only():
    phi = build_scanning_basis(4, 16, seed=0)
    with pytest.raises(ValueError):
        phi.rows[0, 0] = 2.0


@pytest.mark.parametrize("k,n", [(0, 16), (17, 16), (4, 12)])
def test_scanning_basis_rejects_bad_dimensions(k, n):
    with pytest.raises(InvalidArgumentError):
        build_scanning_basis(k, n, seed=0)


def test_scanning_basis_model_requires_unit_rows():
    with pytest.raises(ValidationError):
        ScanningBasis(rows=np.ones((2, 4)), seed=0)


def test_measurement_count_rounds_and_clamps():
    assert measurement_count(0.15, 4096) == 614
    assert measurement_count(1e-4, 16) == 1
    assert measurement_count(1.0, 64) == 64
    with pytest.raises(InvalidArgumentError):
        measurement_count(0.0, 64)


def test_noise_level_is_sigma_over_pixel_count():
    assert sigma_from_noise_level(1e-3, 4096) == pytest.approx(4.096)
    with pytest.raises(InvalidArgumentError):
        sigma_from_noise_level(-1.0, 16)


def test_noiseless_acquisition_is_exact(rng):
    phi = build_scanning_basis(16, 64, seed=1)
    x = Image.from_array(rng.uniform(size=(8, 8)))
    y = acquire(x, phi, 0.0)
    np.testing.assert_array_equal(y.values, phi.rows @ x.vector())
    assert y.noise_sigma == 0.0 and y.noise_level == 0.0


def test_noise_has_requested_standard_deviation(rng, orthonormal_basis):
    phi = orthonormal_basis(1024)
    x = Image.from_array(rng.uniform(size=(32, 32)))
    y = acquire(x, phi, 0.5, np.random.default_rng(0))
    residual = y.values - phi.rows @ x.vector()
    assert np.std(residual) == pytest.approx(0.5, rel=0.1)
    assert y.noise_level == pytest.approx(0.5 / 1024)


def test_acquire_rejects_size_mismatch(rng):
    phi = build_scanning_basis(4, 16, seed=0)
    with pytest.raises(InvalidArgumentError):
        acquire(Image.from_array(rng.uniform(size=(8, 8))), phi, 0.0)


def test_batch_acquisition_uses_one_stream_per_image(rng):
    phi = build_scanning_basis(16, 64, seed=2)
    x = rng.uniform(size=(8, 8))
    first = acquire_batch([x, x], phi, sigma=0.1, seed=9)
    again = acquire_batch([x, x], phi, sigma=0.1, seed=9)
    assert not np.array_equal(first[0].values, first[1].values)
    for a, b in zip(first, again):
        np.testing.assert_array_equal(a.values, b.values)


def test_measure_stack_matches_batch_acquisition(rng):
    phi = build_scanning_basis(16, 64, seed=2)
    stack = rng.uniform(size=(3, 8, 8))
    columns = measure_stack(stack, phi, sigma=0.2, seed=4)
    for index, y in enumerate(acquire_batch(list(stack), phi, sigma=0.2, seed=4)):
        np.testing.assert_allclose(columns[:, index], y.values, atol=1e-12)


def test_basis_file_round_trip(tmp_path):
    phi = build_scanning_basis(16, 64, seed=8)
    loaded = load_basis(save_basis(phi, tmp_path / "phi.spib"))
    assert loaded.seed is None
    np.testing.assert_allclose(loaded.rows, phi.rows, atol=1e-6)


def test_sample_noise_edges():
    np.testing.assert_array_equal(sample_noise(0.0, 5, np.random.default_rng(0)), np.zeros(5))
    with pytest.raises(InvalidArgumentError):
        sample_noise(-0.1, 5, np.random.default_rng(0))


def test_sample_noise_statistics_and_seeding():
    q = sample_noise(1.0, 100_000, np.random.default_rng(42))
    assert abs(q.mean()) < 0.02
    assert abs(q.std() - 1.0) < 0.02
    np.testing.assert_array_equal(q, sample_noise(1.0, 100_000, np.random.default_rng(42)))


def test_all_ones_pattern_sums_the_scene():
    phi = ScanningBasis(rows=np.full((1, 4), 0.5), seed=None)
    y = acquire(Image.from_array(np.ones((2, 2))), phi, 0.0)
    np.testing.assert_array_equal(y.values, [2.0])


def test_noiseless_acquisition_is_linear(rng):
    phi = build_scanning_basis(16, 64, seed=1)
    a = rng.uniform(0.0, 0.5, size=(8, 8))
    b = rng.uniform(0.0, 0.5, size=(8, 8))
    combined = acquire(Image.from_array(0.6 * a + 0.8 * b), phi, 0.0).values
    separate = 0.6 * acquire(Image.from_array(a), phi, 0.0).values + 0.8 * acquire(Image.from_array(b), phi, 0.0).values
    np.testing.assert_allclose(combined, separate, atol=1e-12, rtol=0)


def test_noise_is_added_to_the_clean_measurement(rng):
    phi = build_scanning_basis(16, 64, seed=1)
    x = Image.from_array(rng.uniform(size=(8, 8)))
    y = acquire(x, phi, 0.3, image_rng(3, 0))
    np.testing.assert_array_equal(y.values, phi.rows @ x.vector() + sample_noise(0.3, phi.k, image_rng(3, 0)))
