"""One ensemble Kalman analysis step: mean-field, stochastic, and localized gains.

Conventions.  The state space is the mesh discretization of L^2 on the unit
cube, with inner product weight * <u, v>.  The observation operator A acts on
raw mesh values; under the weighted inner product its adjoint is A^T / weight,
so the weights cancel in the Kalman gain and the matrix formula
K = C A^T (A C A^T + Gamma)^-1 holds verbatim.  Weighted norms reappear only
in reported quantities: ||A|| = smax(A) / sqrt(weight), covariance operator
norms are weight * (matrix norm), state discrepancies are sqrt(weight) times
the Euclidean norm, and gains carry sqrt(weight) * smax.

The default observation operator takes d_y pointwise values at equispaced
mesh sites.  Pointwise evaluation is unbounded on L^2 and only makes sense
after discretization; a local-average alternative is provided for checking
sensitivity to that choice.

All three analysis updates share the observation y and the per-particle
noises, which isolates the gain estimation error: the difference between two
updates of the same particle is exactly (gain difference) applied to the
innovation.  The mean-field update uses the population covariance; the
stochastic and localized updates use leave-one-out sample covariances,
computed by rank-one downdates of a single Gram accumulation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .estimation import ThresholdRule, hard_threshold, spectral_norm
from .kernels import KernelModel
from .sampling import (
    CovMatrix,
    Ensemble,
    Mesh,
    covariance_matrix,
    derive_seed,
    factorize,
    sample_ensemble,
    substream,
)

__all__ = [
    "EnkfError",
    "ObservationModel",
    "AnalysisComparison",
    "AnalysisComparisonSummary",
    "observation_model",
    "pointwise_observation",
    "local_average_observation",
    "kalman_gain",
    "analysis_update",
    "loo_covariances",
    "gain_continuity_bound",
    "gain_operator_norm",
    "state_norm",
    "compare_analysis_updates",
]

DEFAULT_NOISE_STD = math.sqrt(0.1)


class EnkfError(RuntimeError):
    """Observation model or analysis step failure."""


@dataclass(frozen=True)
class ObservationModel:
    """Linear observation y = A u + eta with eta ~ N(0, Gamma).

    A is d_y x L acting on mesh values; Gamma must be SPD (its Cholesky
    factor is required to succeed without jitter).  ``mesh_weight`` fixes the
    weighted-norm conventions; ``gamma_inv_norm`` and ``a_op_norm`` cache
    ||Gamma^-1|| and the weighted operator norm of A.
    """

    A: np.ndarray
    Gamma: np.ndarray
    mesh_weight: float
    gamma_lower: np.ndarray
    gamma_inv_norm: float
    a_op_norm: float

    @property
    def d_y(self) -> int:
        return self.A.shape[0]


def observation_model(A, Gamma, mesh_weight: float) -> ObservationModel:
    """Build an ObservationModel from an explicit operator and noise covariance."""
    A = np.asarray(A, dtype=float)
    Gamma = np.asarray(Gamma, dtype=float)
    if not np.array_equal(Gamma, Gamma.T):
        raise EnkfError("Gamma must be exactly symmetric")
    try:
        lower = np.linalg.cholesky(Gamma)
    except np.linalg.LinAlgError as exc:
        raise EnkfError("Gamma must be symmetric positive definite") from exc
    gamma_inv_norm = 1.0 / float(np.min(np.linalg.eigvalsh(Gamma)))
    a_op_norm = float(np.linalg.svd(A, compute_uv=False)[0]) / math.sqrt(mesh_weight)
    return ObservationModel(
        A=A, Gamma=Gamma, mesh_weight=mesh_weight,
        gamma_lower=lower, gamma_inv_norm=gamma_inv_norm, a_op_norm=a_op_norm,
    )


def _site_indices(L: int, d_y: int) -> np.ndarray:
    if not (1 <= d_y <= L):
        raise EnkfError(f"need 1 <= d_y <= L, got d_y={d_y}, L={L}")
    return np.floor((np.arange(d_y) + 0.5) * L / d_y).astype(int)


def pointwise_observation(
    mesh: Mesh, d_y: int, noise_std: float = DEFAULT_NOISE_STD
) -> ObservationModel:
    """d_y pointwise evaluations at equispaced mesh sites, Gamma = noise_std^2 I."""
    if noise_std <= 0.0:
        raise EnkfError(f"noise_std must be > 0, got {noise_std}")
    A = np.zeros((d_y, mesh.L))
    A[np.arange(d_y), _site_indices(mesh.L, d_y)] = 1.0
    return observation_model(A, noise_std**2 * np.eye(d_y), mesh.weight)


def local_average_observation(
    mesh: Mesh, d_y: int, width: int, noise_std: float = DEFAULT_NOISE_STD
) -> ObservationModel:
    """Smoothed alternative: each row averages the ``width`` nearest mesh points."""
    if noise_std <= 0.0:
        raise EnkfError(f"noise_std must be > 0, got {noise_std}")
    if not (1 <= width <= mesh.L):
        raise EnkfError(f"need 1 <= width <= L, got width={width}")
    A = np.zeros((d_y, mesh.L))
    for row, site in enumerate(_site_indices(mesh.L, d_y)):
        dist = np.linalg.norm(mesh.coords - mesh.coords[site], axis=1)
        nearest = np.argpartition(dist, width - 1)[:width]
        A[row, nearest] = 1.0 / width
    return observation_model(A, noise_std**2 * np.eye(d_y), mesh.weight)


def kalman_gain(cov: CovMatrix, obs: ObservationModel) -> np.ndarray:
    """K = C A^T (A C A^T + Gamma)^-1 via a symmetric factorization solve."""
    CA = cov.entries @ obs.A.T
    S = obs.A @ CA + obs.Gamma
    S = 0.5 * (S + S.T)
    try:
        factor = cho_factor(S, lower=True)
    except np.linalg.LinAlgError as exc:
        raise EnkfError(
            "innovation covariance A C A^T + Gamma is not positive definite "
            "(indefinite covariance with too-small Gamma)"
        ) from exc
    return cho_solve(factor, CA.T).T


def analysis_update(
    u_n: np.ndarray, eta_n: np.ndarray, y: np.ndarray,
    gain: np.ndarray, obs: ObservationModel,
) -> np.ndarray:
    """u_n + gain (y - A u_n - eta_n); serves all three filters."""
    return u_n + gain @ (y - obs.A @ u_n - eta_n)


def loo_covariances(
    ens: Ensemble, rule: ThresholdRule
) -> Iterator[tuple[int, CovMatrix, CovMatrix, float]]:
    """Yield (n, sample_loo, thresholded_loo, rho_loo) for each particle.

    The leave-one-out sample covariance is the rank-one downdate
    (S - u_n u_n^T) / (N - 1) of the Gram sum S; the threshold is recomputed
    from the N - 1 remaining suprema.  Lazily generated: only one L x L pair
    is alive at a time.
    """
    if ens.N < 2:
        raise EnkfError(f"leave-one-out covariances need N >= 2, got N={ens.N}")
    S = ens.fields.T @ ens.fields
    sup_total = float(ens.sups.sum())
    for n in range(ens.N):
        u = ens.fields[n]
        entries = (S - np.outer(u, u)) / (ens.N - 1)
        entries = 0.5 * (entries + entries.T)
        loo = CovMatrix(entries=entries, mesh_weight=ens.mesh.weight)
        s_bar = (sup_total - float(ens.sups[n])) / (ens.N - 1)
        rho = _loo_threshold(s_bar, ens.N - 1, rule)
        yield n, loo, hard_threshold(loo, rho), rho


def _loo_threshold(s_bar: float, N: int, rule: ThresholdRule) -> float:
    if rule.form == "full":
        if rule.c0 > math.sqrt(N):
            raise EnkfError(
                f"full-form threshold requires c0 <= sqrt(N-1) for the "
                f"leave-one-out estimator: c0={rule.c0}, N-1={N}"
            )
        return rule.c0 * max(1.0 / N, s_bar / math.sqrt(N), s_bar * s_bar / N)
    return max(0.0, rule.c0 * s_bar / math.sqrt(N))


def gain_continuity_bound(delta_norm: float, cov_norm: float, obs: ObservationModel) -> float:
    """Continuity bound on the Kalman gain under a covariance perturbation.

    delta_norm and cov_norm are weighted operator norms of the covariance
    perturbation and of the reference covariance.  The bound is exact for
    positive semi-definite perturbations of a PSD covariance.
    """
    if delta_norm < 0.0 or cov_norm < 0.0:
        raise EnkfError("norms must be nonnegative")
    a, g = obs.a_op_norm, obs.gamma_inv_norm
    return delta_norm * a * g * (1.0 + cov_norm * a * a * g)


def gain_operator_norm(gain: np.ndarray, mesh_weight: float) -> float:
    """Weighted operator norm of a gain matrix (observations to state)."""
    return math.sqrt(mesh_weight) * float(np.linalg.svd(gain, compute_uv=False)[0])


def state_norm(v: np.ndarray, mesh_weight: float) -> float:
    """Mesh-weighted Euclidean norm, the discrete L^2 norm of a field."""
    return math.sqrt(mesh_weight) * float(np.linalg.norm(v))


@dataclass(frozen=True)
class AnalysisComparison:
    """Per-particle discrepancies of one trial, in the weighted state norm.

    ``c_consts`` holds the per-particle conditioning constants
    ||A|| ||Gamma^-1|| ||C|| |y - A u_n - eta_n|; ``continuity_ok`` records
    whether the gain-continuity inequality held for every (PSD) leave-one-out
    sample covariance of the trial.
    """

    disc_vanilla: np.ndarray
    disc_localized: np.ndarray
    innovation_norms: np.ndarray
    c_consts: np.ndarray
    continuity_ok: bool

    @property
    def mean_vanilla(self) -> float:
        return float(self.disc_vanilla.mean())

    @property
    def mean_localized(self) -> float:
        return float(self.disc_localized.mean())


@dataclass(frozen=True)
class AnalysisComparisonSummary:
    """Aggregate of the three-way analysis comparison over independent trials."""

    trials: list[AnalysisComparison]
    mean_vanilla: float
    mean_localized: float
    frac_localized_better: float
    continuity_all_ok: bool

    def pooled_quantiles(self) -> dict[str, float]:
        van = np.concatenate([t.disc_vanilla for t in self.trials])
        loc = np.concatenate([t.disc_localized for t in self.trials])
        out = {}
        for name, data in (("vanilla", van), ("localized", loc)):
            q50, q90, q99 = np.quantile(data, [0.5, 0.9, 0.99])
            out.update({f"{name}_q50": float(q50), f"{name}_q90": float(q90),
                        f"{name}_q99": float(q99)})
        return out


TRIAL_CSV_HEADER = "seed,trial,n,disc_vanilla,disc_localized,innovation_norm,c_const"


def comparison_csv_rows(summary: AnalysisComparisonSummary, seed: int) -> Iterator[str]:
    for t, comp in enumerate(summary.trials):
        for n in range(comp.disc_vanilla.size):
            yield ",".join([
                str(int(seed)), str(t), str(n),
                repr(float(comp.disc_vanilla[n])), repr(float(comp.disc_localized[n])),
                repr(float(comp.innovation_norms[n])), repr(float(comp.c_consts[n])),
            ])


def compare_analysis_updates(
    kernel: KernelModel,
    mesh: Mesh,
    obs: ObservationModel,
    N: int,
    rule: ThresholdRule,
    trials: int,
    seed: int,
    check_continuity: bool = True,
    norm_tol: float = 1e-7,
) -> AnalysisComparisonSummary:
    """Compare stochastic and localized analysis updates to the mean-field one.

    Each trial draws a forecast ensemble, one observation from a fresh truth
    draw, and per-particle noises shared across the three updates.  The
    localized update thresholds the leave-one-out covariance without PSD
    projection; the gain-continuity inequality is therefore checked on the
    vanilla leave-one-out covariance, the (always PSD) object the inequality
    is stated for.
    """
    if N < 2:
        raise EnkfError(f"need N >= 2 particles, got {N}")
    if trials < 1:
        raise EnkfError(f"need at least one trial, got {trials}")
    if obs.A.shape[1] != mesh.L:
        raise EnkfError("observation operator does not match the mesh")
    cov = covariance_matrix(kernel, mesh)
    factor = factorize(cov)
    gain_true = kalman_gain(cov, obs)
    cov_op_norm = mesh.weight * spectral_norm(cov, seed=derive_seed(seed, 0xC0), tol=norm_tol)
    w = mesh.weight
    results: list[AnalysisComparison] = []
    for t in range(trials):
        ens = sample_ensemble(factor, N, derive_seed(seed, t, 0), mesh)
        rng = substream(seed, t, 1)
        u_truth = factor.lower @ rng.standard_normal(mesh.L)
        y = obs.A @ u_truth + obs.gamma_lower @ rng.standard_normal(obs.d_y)
        etas = rng.standard_normal((N, obs.d_y)) @ obs.gamma_lower.T
        disc_v = np.empty(N)
        disc_l = np.empty(N)
        innov_norms = np.empty(N)
        c_consts = np.empty(N)
        continuity_ok = True
        for n, loo, loo_thresh, _rho in loo_covariances(ens, rule):
            u = ens.fields[n]
            innov = y - obs.A @ u - etas[n]
            v_star = u + gain_true @ innov
            gain_v = kalman_gain(loo, obs)
            gain_l = kalman_gain(loo_thresh, obs)
            disc_v[n] = state_norm(u + gain_v @ innov - v_star, w)
            disc_l[n] = state_norm(u + gain_l @ innov - v_star, w)
            innov_norms[n] = float(np.linalg.norm(innov))
            c_consts[n] = obs.a_op_norm * obs.gamma_inv_norm * cov_op_norm * innov_norms[n]
            if check_continuity:
                delta = w * spectral_norm(
                    loo.entries - cov.entries, seed=derive_seed(seed, t, 2, n), tol=norm_tol
                )
                bound = gain_continuity_bound(delta, cov_op_norm, obs)
                actual = gain_operator_norm(gain_v - gain_true, w)
                if actual > bound * (1.0 + 1e-6):
                    continuity_ok = False
        results.append(AnalysisComparison(
            disc_vanilla=disc_v, disc_localized=disc_l,
            innovation_norms=innov_norms, c_consts=c_consts,
            continuity_ok=continuity_ok,
        ))
    mean_v = float(np.mean([r.mean_vanilla for r in results]))
    mean_l = float(np.mean([r.mean_localized for r in results]))
    frac = float(np.mean([r.mean_localized < r.mean_vanilla for r in results]))
    return AnalysisComparisonSummary(
        trials=results,
        mean_vanilla=mean_v,
        mean_localized=mean_l,
        frac_localized_better=frac,
        continuity_all_ok=all(r.continuity_ok for r in results),
    )
