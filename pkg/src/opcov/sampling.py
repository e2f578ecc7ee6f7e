"""Meshes on the unit cube, discretized covariance matrices, exact Gaussian draws.

The mesh is cell-centered so that the quadrature weight is exactly 1/L and
discrete sums approximate integrals over [0,1]^d with no boundary correction.
Sampling uses a dense symmetric factorization (exact, no circulant embedding
or truncation) with a fixed diagonal-jitter ladder; the jitter actually used
is recorded on the ensemble.  Randomness comes from the counter-based Philox
generator keyed through ``numpy.random.SeedSequence`` so that per-trial
substreams are independent of execution order and thread count.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .kernels import KernelModel, eval_kernel

__all__ = [
    "Mesh",
    "CovMatrix",
    "CovFactor",
    "Ensemble",
    "SamplingError",
    "MAX_MESH_POINTS",
    "build_mesh",
    "covariance_matrix",
    "factorize",
    "sample_ensemble",
    "ensemble_sup_mean",
    "substream",
    "derive_seed",
    "write_ensemble",
    "read_ensemble",
    "ensemble_to_csv",
]

# Dense L x L storage caps the mesh size; 12,500 points (~1.25 GB per matrix
# at float64) is the desk-scale limit for every supported dimension.
MAX_MESH_POINTS = 12_500

_JITTER_LADDER = (0.0, 1e-12, 1e-10, 1e-8)

_MAGIC = b"OPCV1"


class SamplingError(RuntimeError):
    """Mesh construction or Gaussian sampling failure."""


def derive_seed(master_seed: int, *key: int) -> int:
    """A 64-bit child seed for substream ``key`` of ``master_seed``.

    Stable across platforms and numpy versions (SeedSequence hashing is part
    of numpy's compatibility guarantee), so runs are reproducible and trial
    substreams never collide in practice.
    """
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, np.uint64)[0])


def substream(master_seed: int, *key: int) -> np.random.Generator:
    """Counter-based generator for substream ``key`` of ``master_seed``."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(seed=ss))


@dataclass(frozen=True)
class Mesh:
    """Uniform cell-centered grid on [0,1]^d.

    coords has shape (L, d) with L = m**d points ordered lexicographically by
    axis (first axis varies slowest); weight = 1/L is the volume per cell.
    """

    d: int
    m: int
    L: int
    coords: np.ndarray
    weight: float


@dataclass(frozen=True)
class CovMatrix:
    """Symmetric L x L covariance matrix sampled on a mesh.

    ``mesh_weight`` is carried along so operator norms can be formed as
    weight * (matrix spectral norm) without re-deriving the mesh.
    """

    entries: np.ndarray
    mesh_weight: float

    @property
    def L(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True)
class CovFactor:
    """Cached lower-triangular factor of a covariance matrix plus jitter used.

    Factor once per covariance, then draw any number of ensembles from it;
    this is the hot path for repeated-trial experiments.
    """

    cov: CovMatrix
    lower: np.ndarray
    jitter: float


@dataclass
class Ensemble:
    """N sampled field realizations on a mesh.

    fields has shape (N, L); sups[n] is the maximum of fields[n] over the
    mesh (the discretized supremum over the domain).  ``seed`` and ``jitter``
    record how the draw was produced.
    """

    mesh: Mesh
    N: int
    fields: np.ndarray
    sups: np.ndarray
    seed: int
    jitter: float


def build_mesh(d: int, m: int) -> Mesh:
    """Cell-centered uniform mesh of [0,1]^d with m points per axis."""
    if d not in (1, 2, 3):
        raise SamplingError(f"dimension d must be 1, 2 or 3, got {d}")
    if m < 2:
        raise SamplingError(f"points per axis m must be >= 2, got {m}")
    L = m**d
    if L > MAX_MESH_POINTS:
        raise SamplingError(
            f"mesh of {L} points exceeds the dense-storage limit {MAX_MESH_POINTS}"
        )
    axis = (np.arange(m) + 0.5) / m
    grids = np.meshgrid(*([axis] * d), indexing="ij")
    coords = np.stack([g.ravel() for g in grids], axis=-1)
    return Mesh(d=d, m=m, L=L, coords=coords, weight=1.0 / L)


def covariance_matrix(kernel: KernelModel, mesh: Mesh) -> CovMatrix:
    """Discretize the covariance operator: entries[i, j] = k(|x_i - x_j|).

    Symmetric by construction with a unit diagonal.  Rejects meshes beyond
    the dense-storage limit before allocating.
    """
    if mesh.L > MAX_MESH_POINTS:
        raise SamplingError(
            f"covariance matrix of order {mesh.L} exceeds the dense-storage "
            f"limit {MAX_MESH_POINTS}; refusing to allocate {mesh.L}x{mesh.L}"
        )
    try:
        dist = cdist(mesh.coords, mesh.coords)
        entries = eval_kernel(kernel, dist)
    except MemoryError as exc:  # pragma: no cover - depends on host memory
        raise SamplingError(
            f"allocation of the {mesh.L}x{mesh.L} covariance matrix failed: {exc}"
        ) from exc
    entries = 0.5 * (entries + entries.T)
    np.fill_diagonal(entries, 1.0)
    return CovMatrix(entries=entries, mesh_weight=mesh.weight)


def factorize(cov: CovMatrix) -> CovFactor:
    """Lower Cholesky factor of cov, escalating diagonal jitter on failure.

    The jitter ladder is fixed at {0, 1e-12, 1e-10, 1e-8}; the rung that
    succeeded is recorded for reproducibility.  Raises ``SamplingError`` if
    the matrix is still not factorizable at the top rung.
    """
    entries = cov.entries
    if not np.allclose(entries, entries.T, rtol=0.0, atol=0.0):
        raise SamplingError("covariance matrix must be exactly symmetric")
    for jitter in _JITTER_LADDER:
        shifted = entries if jitter == 0.0 else entries + jitter * np.eye(cov.L)
        try:
            lower = np.linalg.cholesky(shifted)
        except np.linalg.LinAlgError:
            continue
        return CovFactor(cov=cov, lower=lower, jitter=jitter)
    raise SamplingError(
        f"Cholesky failed at maximum jitter {_JITTER_LADDER[-1]:g}; "
        "input matrix is severely indefinite"
    )


def _mesh_of(cov: CovMatrix) -> Mesh:
    # Minimal stand-in mesh when sampling from a bare matrix (tests build
    # covariances by hand); only L and weight are meaningful downstream.
    L = cov.L
    return Mesh(d=1, m=L, L=L, coords=((np.arange(L) + 0.5) / L)[:, None], weight=cov.mesh_weight)


def sample_ensemble(
    cov: CovMatrix | CovFactor,
    N: int,
    seed: int,
    mesh: Mesh | None = None,
) -> Ensemble:
    """Draw N i.i.d. fields ~ N(0, cov) on the mesh.

    Deterministic given (cov, N, seed): the same inputs give bit-identical
    ensembles on any machine and under any thread count.  Pass a
    :class:`CovFactor` to reuse a factorization across many draws.
    """
    if N < 1:
        raise SamplingError(f"sample count N must be >= 1, got {N}")
    factor = cov if isinstance(cov, CovFactor) else factorize(cov)
    if mesh is None:
        mesh = _mesh_of(factor.cov)
    if mesh.L != factor.cov.L:
        raise SamplingError("mesh size does not match covariance order")
    rng = substream(seed)
    z = rng.standard_normal((N, factor.cov.L))
    fields = z @ factor.lower.T
    sups = fields.max(axis=1)
    return Ensemble(mesh=mesh, N=N, fields=fields, sups=sups, seed=int(seed), jitter=factor.jitter)


def ensemble_sup_mean(ens: Ensemble) -> float:
    """Arithmetic mean over the ensemble of the per-field mesh maxima."""
    return float(ens.sups.mean())


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<5sIIQQd")  # magic, d, m, N, seed, jitter


def write_ensemble(ens: Ensemble, path) -> None:
    """Write the flat binary format: header then N*L little-endian float64."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, ens.mesh.d, ens.mesh.m, ens.N, ens.seed, ens.jitter))
        fh.write(np.ascontiguousarray(ens.fields, dtype="<f8").tobytes())


def read_ensemble(path) -> Ensemble:
    """Read an ensemble written by :func:`write_ensemble`.

    The mesh is rebuilt from (d, m); sups are recomputed from the stored
    fields (the cache-coherence invariant makes this lossless).
    """
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) < _HEADER.size:
            raise SamplingError(f"truncated ensemble header in {path}")
        magic, d, m, N, seed, jitter = _HEADER.unpack(header)
        if magic != _MAGIC:
            raise SamplingError(f"bad magic {magic!r} in {path}; expected {_MAGIC!r}")
        mesh = build_mesh(d, m)
        data = np.frombuffer(fh.read(8 * N * mesh.L), dtype="<f8")
        if data.size != N * mesh.L:
            raise SamplingError(f"truncated field data in {path}")
        fields = data.reshape(N, mesh.L).astype(float)
    return Ensemble(
        mesh=mesh, N=int(N), fields=fields, sups=fields.max(axis=1),
        seed=int(seed), jitter=float(jitter),
    )


def ensemble_to_csv(ens: Ensemble, path) -> None:
    """Plain CSV export for interoperability: one row per field."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for row in ens.fields:
            writer.writerow([repr(float(v)) for v in row])
