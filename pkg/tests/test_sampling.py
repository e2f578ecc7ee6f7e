import math

import numpy as np
import pytest

from _helpers import make_ensemble
from opcov.kernels import matern_kernel, se_kernel
from opcov.sampling import (
    MAX_MESH_POINTS,
    CovMatrix,
    SamplingError,
    build_mesh,
    covariance_matrix,
    derive_seed,
    ensemble_sup_mean,
    ensemble_to_csv,
    factorize,
    read_ensemble,
    sample_ensemble,
    substream,
    write_ensemble,
)


def test_mesh_1d_two_points():
    mesh = build_mesh(1, 2)
    assert mesh.L == 2
    assert mesh.weight == 0.5
    assert np.array_equal(mesh.coords.ravel(), [0.25, 0.75])


def test_mesh_2d_two_points_lexicographic():
    mesh = build_mesh(2, 2)
    want = [(0.25, 0.25), (0.25, 0.75), (0.75, 0.25), (0.75, 0.75)]
    assert [tuple(row) for row in mesh.coords] == want
    assert mesh.weight == 0.25


def test_mesh_reference_resolution():
    mesh = build_mesh(1, 1250)
    assert mesh.L == 1250
    assert mesh.weight == 8e-4
    assert mesh.weight * mesh.L == 1.0


@pytest.mark.parametrize("d,m", [(0, 4), (4, 4), (1, 1), (1, 0)])
def test_mesh_rejects_bad_arguments(d, m):
    with pytest.raises(SamplingError):
        build_mesh(d, m)


def test_mesh_rejects_oversize():
    with pytest.raises(SamplingError, match="exceeds"):
        build_mesh(3, 24)  # 13824 > MAX_MESH_POINTS
    assert 24**3 > MAX_MESH_POINTS


def test_covariance_matrix_se_2point():
    cov = covariance_matrix(se_kernel(1.0), build_mesh(1, 2))
    off = math.exp(-1.0 / 8.0)
    assert cov.entries == pytest.approx(np.array([[1.0, off], [off, 1.0]]), rel=1e-15)
    assert cov.mesh_weight == 0.5


def test_covariance_matrix_unit_diagonal_and_symmetry():
    for kernel in (se_kernel(0.05), matern_kernel(0.1, 1.5)):
        cov = covariance_matrix(kernel, build_mesh(2, 7))
        assert np.all(np.diag(cov.entries) == 1.0)
        assert np.array_equal(cov.entries, cov.entries.T)


def test_covariance_matrix_matern_entry_matches_scalar_kernel():
    from opcov.kernels import eval_kernel

    kernel = matern_kernel(0.1, 1.5)
    cov = covariance_matrix(kernel, build_mesh(1, 4))
    r = 0.75  # distance between the first and last cell centers
    want = (1 + 7.5 * math.sqrt(3)) * math.exp(-7.5 * math.sqrt(3))
    assert cov.entries[0, 3] == pytest.approx(want, rel=1e-13)
    assert cov.entries[0, 3] == pytest.approx(eval_kernel(kernel, r), rel=1e-15)


def test_sampling_is_deterministic():
    mesh = build_mesh(1, 9)
    cov = covariance_matrix(se_kernel(0.3), mesh)
    a = sample_ensemble(cov, 5, seed=123, mesh=mesh)
    b = sample_ensemble(cov, 5, seed=123, mesh=mesh)
    assert np.array_equal(a.fields, b.fields)
    assert np.array_equal(a.sups, b.sups)
    c = sample_ensemble(cov, 5, seed=124, mesh=mesh)
    assert not np.array_equal(a.fields, c.fields)


def test_sups_cache_coherent():
    mesh = build_mesh(1, 30)
    ens = sample_ensemble(covariance_matrix(se_kernel(0.1), mesh), 40, seed=9, mesh=mesh)
    assert np.array_equal(ens.sups, ens.fields.max(axis=1))
    assert np.all(np.isfinite(ens.fields))


def test_jitter_ladder_recorded():
    # singular PSD matrix: plain Cholesky fails, first jitter rung succeeds
    ones = CovMatrix(entries=np.ones((3, 3)), mesh_weight=1.0 / 3.0)
    factor = factorize(ones)
    assert factor.jitter in (0.0, 1e-12)
    ens = sample_ensemble(ones, 4, seed=1)
    assert ens.jitter == factor.jitter


def test_factorize_rejects_indefinite():
    bad = CovMatrix(entries=np.diag([1.0, -1.0]), mesh_weight=0.5)
    with pytest.raises(SamplingError, match="jitter"):
        factorize(bad)


def test_sample_requires_positive_count():
    cov = CovMatrix(entries=np.eye(2), mesh_weight=0.5)
    with pytest.raises(SamplingError):
        sample_ensemble(cov, 0, seed=1)


def test_single_point_fields_are_standard_normal():
    cov = CovMatrix(entries=np.eye(1), mesh_weight=1.0)
    ens = sample_ensemble(cov, 3, seed=7)
    assert ens.fields.shape == (3, 1)
    assert np.array_equal(ens.sups, ens.fields[:, 0])


def test_empirical_covariance_matches_target():
    # Monte Carlo oracle: 2e5 draws on a 5-point mesh, 5 sigma per entry.
    mesh = build_mesh(1, 5)
    cov = covariance_matrix(se_kernel(0.3), mesh)
    N = 200_000
    ens = sample_ensemble(cov, N, seed=2024, mesh=mesh)
    emp = ens.fields.T @ ens.fields / N
    C = cov.entries
    sigma = np.sqrt((np.outer(np.diag(C), np.diag(C)) + C**2) / N)
    assert np.all(np.abs(emp - C) <= 5.0 * sigma)
    assert np.max(np.abs(emp - C)) < 0.02


def test_ensemble_sup_mean():
    assert ensemble_sup_mean(make_ensemble([[2.0, 1.0], [4.0, 0.0]])) == 3.0
    assert ensemble_sup_mean(make_ensemble([[0.0, 0.0, 0.0]])) == 0.0


def test_binary_round_trip(tmp_path):
    mesh = build_mesh(1, 12)
    ens = sample_ensemble(covariance_matrix(se_kernel(0.2), mesh), 7, seed=55, mesh=mesh)
    path = tmp_path / "ens.opcv"
    write_ensemble(ens, path)
    back = read_ensemble(path)
    assert np.array_equal(back.fields, ens.fields)
    assert np.array_equal(back.sups, ens.sups)
    assert (back.mesh.d, back.mesh.m, back.N) == (1, 12, 7)
    assert back.seed == 55
    assert back.jitter == ens.jitter


def test_binary_rejects_bad_magic(tmp_path):
    path = tmp_path / "junk.opcv"
    path.write_bytes(b"NOPE!" + bytes(40))
    with pytest.raises(SamplingError, match="magic"):
        read_ensemble(path)


def test_binary_rejects_truncation(tmp_path):
    mesh = build_mesh(1, 6)
    ens = sample_ensemble(covariance_matrix(se_kernel(0.2), mesh), 3, seed=1, mesh=mesh)
    path = tmp_path / "ens.opcv"
    write_ensemble(ens, path)
    data = path.read_bytes()
    path.write_bytes(data[:-16])
    with pytest.raises(SamplingError, match="truncated"):
        read_ensemble(path)


def test_csv_export(tmp_path):
    ens = make_ensemble([[1.0, 2.0], [3.0, 4.0]])
    path = tmp_path / "ens.csv"
    ensemble_to_csv(ens, path)
    rows = path.read_text().splitlines()
    assert len(rows) == 2
    assert [float(v) for v in rows[1].split(",")] == [3.0, 4.0]


def test_substreams_are_disjoint_and_stable():
    a = substream(7, 1, 2).standard_normal(4)
    b = substream(7, 1, 2).standard_normal(4)
    c = substream(7, 1, 3).standard_normal(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert derive_seed(7, 1, 2) == derive_seed(7, 1, 2)
    assert derive_seed(7, 1, 2) != derive_seed(7, 2, 1)
