"""Scaling quantities of the estimation theory and Monte Carlo concentration checks.

This module computes discretized and asymptotic versions of the quantities
that drive the estimator error: the L^q sparsity level of the kernel, the
covariance operator norm, the effective rank, and the expected supremum of
the field.  Universal constants in the theoretical statements are never
pinned by the theory itself, so every experiment here is formulated as a
boundedness or stability check over a parameter sweep, with the constants
exposed as arguments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .estimation import (
    EstimationError,
    ThresholdRule,
    population_threshold,
    sample_covariance,
    spectral_norm,
    threshold_parameter,
)
from .kernels import KernelError, KernelModel, eval_kernel, half_width
from .sampling import (
    CovFactor,
    CovMatrix,
    Mesh,
    covariance_matrix,
    derive_seed,
    factorize,
    sample_ensemble,
)

__all__ = [
    "ScalingReport",
    "SupNormSummary",
    "ThresholdConcentrationSummary",
    "SPHERE_AREA",
    "sparsity_level",
    "sparsity_asymptotic",
    "operator_norm_asymptotic",
    "effective_rank",
    "expected_supremum_mc",
    "supremum_scaling_prediction",
    "cq_constant",
    "moment_bound",
    "scaling_report",
    "supnorm_error_experiment",
    "threshold_concentration_experiment",
]

# Surface area of the unit sphere in R^d for d = 1, 2, 3.
SPHERE_AREA = {1: 2.0, 2: 2.0 * math.pi, 3: 4.0 * math.pi}


def _check_q(q: float) -> None:
    if not (0.0 < q < 1.0):
        raise EstimationError(f"sparsity exponent q must lie in (0, 1), got {q!r}")


def sparsity_level(kernel: KernelModel, mesh: Mesh, q: float) -> float:
    """Discretized R_q^q: max_i weight * sum_j |k(x_i, x_j)|^q.

    Returned as R_q^q (not R_q); callers exponentiate if they need R_q.
    """
    _check_q(q)
    cov = covariance_matrix(kernel, mesh)
    return mesh.weight * float(np.max(np.sum(np.abs(cov.entries) ** q, axis=1)))


def _radial_integral(kernel: KernelModel, q: float, d: int, epsrel: float = 1e-10) -> float:
    """integral_0^inf k_1(r)^q r^(d-1) dr by adaptive quadrature.

    The range is split at r_max with k_1(r_max)^q <= 1e-16 (found by doubling;
    the kernel is strictly decreasing), and the tail beyond r_max is computed
    on its own and added; for the supported kernels it is below roundoff.
    """
    unit = KernelModel(kernel.family, 1.0, kernel.nu)

    def integrand(r: float) -> float:
        return eval_kernel(unit, r) ** q * r ** (d - 1)

    r_max = 1.0
    for _ in range(80):
        if eval_kernel(unit, r_max) ** q <= 1e-16:
            break
        r_max *= 2.0
    else:
        raise KernelError("kernel decays too slowly for radial quadrature")
    main, main_err = quad(integrand, 0.0, r_max, epsabs=0.0, epsrel=epsrel, limit=400)
    tail, _ = quad(integrand, r_max, np.inf, epsabs=1e-18, epsrel=1e-6, limit=200)
    if main != 0.0 and main_err / abs(main) > 100.0 * epsrel:
        raise EstimationError(
            f"radial quadrature did not reach epsrel={epsrel:g} "
            f"(estimated relative error {main_err / abs(main):.2e})"
        )
    return main + tail


def sparsity_asymptotic(kernel: KernelModel, q: float, d: int) -> float:
    """Small-lengthscale limit of R_q^q: lam^d A(d) integral k_1(r)^q r^(d-1) dr.

    Accepts q = 1 as the operator-norm limit case.
    """
    if not (0.0 < q <= 1.0):
        raise EstimationError(f"q must lie in (0, 1], got {q!r}")
    if d not in SPHERE_AREA:
        raise EstimationError(f"dimension d must be 1, 2 or 3, got {d}")
    return kernel.lam**d * SPHERE_AREA[d] * _radial_integral(kernel, q, d)


def operator_norm_asymptotic(kernel: KernelModel, d: int) -> float:
    """Small-lengthscale covariance operator norm: the q = 1 sparsity limit."""
    if d not in SPHERE_AREA:
        raise EstimationError(f"dimension d must be 1, 2 or 3, got {d}")
    return kernel.lam**d * SPHERE_AREA[d] * _radial_integral(kernel, 1.0, d)


def effective_rank(cov: CovMatrix, seed: int = 0) -> float:
    """r(C) = Tr / spectral norm; quadrature weights cancel in the ratio."""
    norm = spectral_norm(cov, seed=seed)
    if norm == 0.0:
        raise EstimationError("effective rank is undefined for a zero matrix")
    return float(np.trace(cov.entries)) / norm


def expected_supremum_mc(
    kernel: KernelModel,
    mesh: Mesh,
    M: int,
    seed: int,
    factor: CovFactor | None = None,
) -> tuple[float, float]:
    """Monte Carlo estimate (mean, stderr) of the expected field supremum.

    Draws M independent fields; pass a prebuilt ``factor`` to skip the
    Cholesky factorization.
    """
    if M < 2:
        raise EstimationError(f"need M >= 2 Monte Carlo fields, got {M}")
    if factor is None:
        factor = factorize(covariance_matrix(kernel, mesh))
    ens = sample_ensemble(factor, M, seed, mesh)
    mean = float(ens.sups.mean())
    stderr = float(ens.sups.std(ddof=1) / math.sqrt(M))
    return mean, stderr


def supremum_scaling_prediction(kernel: KernelModel, d: int) -> float:
    """sqrt(d log(sqrt(d) / (s lam))) with s the kernel half-width.

    Valid only where the logarithm is positive (lam < sqrt(d) / s); raises
    otherwise, since the scaling statement does not apply there.
    """
    if d not in SPHERE_AREA:
        raise EstimationError(f"dimension d must be 1, 2 or 3, got {d}")
    s = half_width(kernel)
    arg = math.sqrt(d) / (s * kernel.lam)
    if arg <= 1.0:
        raise EstimationError(
            f"lengthscale {kernel.lam} is outside the scaling regime "
            f"(needs lam < sqrt(d)/s = {math.sqrt(d) / s:.6g})"
        )
    return math.sqrt(d * math.log(arg))


def cq_constant(kernel: KernelModel, q: float, d: int) -> float:
    """Ratio of radial integrals at exponents q and 1.

    For the squared exponential this equals q**(-d/2) exactly.
    """
    _check_q(q)
    return _radial_integral(kernel, q, d) / _radial_integral(kernel, 1.0, d)


def moment_bound(Rq_q: float, q: float, rho: float, N: int, p: float = 1.0, c: float = 1.0) -> float:
    """Right side of the moment bound: Rq_q rho^(1-q) + rho exp(-(c/p) N min(rho, rho^2)).

    The universal constant c is exposed as a parameter (default 1); the bound
    is meaningful for plotting against empirical errors, never as an exact
    assertion.
    """
    _check_q(q)
    if N < 1:
        raise EstimationError(f"sample size N must be >= 1, got {N}")
    if p < 1.0:
        raise EstimationError(f"moment order p must be >= 1, got {p}")
    if c <= 0.0:
        raise EstimationError(f"constant c must be > 0, got {c}")
    if rho < 0.0:
        raise EstimationError(f"threshold rho must be >= 0, got {rho}")
    return Rq_q * rho ** (1.0 - q) + rho * math.exp(-(c / p) * N * min(rho, rho * rho))


@dataclass(frozen=True)
class ScalingReport:
    """Discretized vs asymptotic scaling quantities at one lengthscale.

    ``esup_prediction`` is NaN when the lengthscale lies outside the validity
    region of the supremum scaling law.
    """

    lam: float
    Rq_q: float
    Rq_q_asymptotic: float
    op_norm: float
    op_norm_asymptotic: float
    eff_rank: float
    esup_mc: float
    esup_prediction: float

    CSV_HEADER = "lambda,Rq_q,Rq_q_asymptotic,op_norm,op_norm_asymptotic,eff_rank,esup_mc,esup_prediction"

    def csv_row(self) -> str:
        return ",".join(repr(float(v)) for v in (
            self.lam, self.Rq_q, self.Rq_q_asymptotic, self.op_norm,
            self.op_norm_asymptotic, self.eff_rank, self.esup_mc, self.esup_prediction,
        ))


def scaling_report(
    kernel: KernelModel, mesh: Mesh, q: float, M: int, seed: int
) -> ScalingReport:
    """Assemble every scaling quantity for one (kernel, mesh) pair."""
    _check_q(q)
    cov = covariance_matrix(kernel, mesh)
    factor = factorize(cov)
    mat_norm = spectral_norm(cov, seed=derive_seed(seed, 1))
    esup, _ = expected_supremum_mc(kernel, mesh, M, derive_seed(seed, 2), factor=factor)
    try:
        prediction = supremum_scaling_prediction(kernel, mesh.d)
    except EstimationError:
        prediction = math.nan
    return ScalingReport(
        lam=kernel.lam,
        Rq_q=mesh.weight * float(np.max(np.sum(np.abs(cov.entries) ** q, axis=1))),
        Rq_q_asymptotic=sparsity_asymptotic(kernel, q, mesh.d),
        op_norm=mesh.weight * mat_norm,
        op_norm_asymptotic=operator_norm_asymptotic(kernel, mesh.d),
        eff_rank=float(np.trace(cov.entries)) / mat_norm,
        esup_mc=esup,
        esup_prediction=prediction,
    )


# ---------------------------------------------------------------------------
# Monte Carlo concentration experiments
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SupNormSummary:
    """Quantiles of sup-norm errors of the sample covariance, normalized by rho_N.

    ``max_all`` is max_{ij} |khat - k| / rho_N per trial; ``max_column`` holds
    the same maximum restricted to one fixed reference column (the middle
    mesh point), matching the single-supremum error statement.
    """

    rho_N: float
    esup_mean: float
    esup_stderr: float
    max_all: np.ndarray
    max_column: np.ndarray

    def quantiles(self, which: str = "column") -> dict[str, float]:
        data = self.max_column if which == "column" else self.max_all
        q50, q90, q99 = np.quantile(data, [0.50, 0.90, 0.99])
        return {"q50": float(q50), "q90": float(q90), "q99": float(q99)}

    CSV_HEADER = ("rho_N,max_all_q50,max_all_q90,max_all_q99,"
                  "max_column_q50,max_column_q90,max_column_q99")

    def csv_row(self) -> str:
        qa, qc = self.quantiles("all"), self.quantiles("column")
        return ",".join(repr(v) for v in (
            self.rho_N, qa["q50"], qa["q90"], qa["q99"], qc["q50"], qc["q90"], qc["q99"],
        ))


def supnorm_error_experiment(
    kernel: KernelModel,
    mesh: Mesh,
    N: int,
    trials: int,
    seed: int,
    esup_samples: int = 10_000,
    bound_constant: float = 10.0,
) -> SupNormSummary:
    """Per-trial normalized sup errors of the sample covariance function.

    rho_N is the population threshold (full form, c0 = 1) built from a
    high-precision Monte Carlo estimate of the expected supremum on a
    separate substream.  The stated theory guarantees boundedness only up to
    universal constants, so the companion contract is that the 99% quantile
    of the per-column statistic stays below ``bound_constant``.
    """
    if trials < 30:
        raise EstimationError(f"need at least 30 trials, got {trials}")
    cov = covariance_matrix(kernel, mesh)
    factor = factorize(cov)
    esup, esup_se = expected_supremum_mc(
        kernel, mesh, esup_samples, derive_seed(seed, 0xE5), factor=factor
    )
    rho_N = population_threshold(esup, N, ThresholdRule(c0=1.0, form="full"))
    ref_col = mesh.L // 2
    max_all = np.empty(trials)
    max_col = np.empty(trials)
    for t in range(trials):
        ens = sample_ensemble(factor, N, derive_seed(seed, t), mesh)
        err = np.abs(sample_covariance(ens).entries - cov.entries)
        max_all[t] = err.max() / rho_N
        max_col[t] = err[:, ref_col].max() / rho_N
    summary = SupNormSummary(
        rho_N=rho_N, esup_mean=esup, esup_stderr=esup_se,
        max_all=max_all, max_column=max_col,
    )
    return summary


@dataclass(frozen=True)
class ThresholdConcentrationSummary:
    """Distribution of rho_hat / rho_N over independent ensembles.

    ``theory_bound_half`` is 2 exp(-N (rho_N ^ rho_N^2) / 8): the reference
    bound on P[rho_hat < rho_N / 2].  ``mc_slack`` = 3 / sqrt(trials) is the
    Monte Carlo allowance added on top when checking the contract.
    """

    rho_N: float
    esup_mean: float
    esup_stderr: float
    mean_ratio: float
    below_quarter: float
    below_half: float
    below_three_quarter: float
    theory_bound_half: float
    mc_slack: float

    def contract_holds(self) -> bool:
        return self.below_half <= self.theory_bound_half + self.mc_slack

    CSV_HEADER = ("rho_N,mean_ratio,p_below_025,p_below_050,p_below_075,"
                  "theory_bound_half,mc_slack")

    def csv_row(self) -> str:
        return ",".join(repr(v) for v in (
            self.rho_N, self.mean_ratio, self.below_quarter, self.below_half,
            self.below_three_quarter, self.theory_bound_half, self.mc_slack,
        ))


def threshold_concentration_experiment(
    kernel: KernelModel,
    mesh: Mesh,
    N: int,
    c0: float,
    trials: int,
    seed: int,
    form: str = "full",
    esup_samples: int = 10_000,
) -> ThresholdConcentrationSummary:
    """Empirical concentration of the data-driven threshold around rho_N."""
    if trials < 30:
        raise EstimationError(f"need at least 30 trials, got {trials}")
    rule = ThresholdRule(c0=c0, form=form)
    cov = covariance_matrix(kernel, mesh)
    factor = factorize(cov)
    esup, esup_se = expected_supremum_mc(
        kernel, mesh, esup_samples, derive_seed(seed, 0xE5), factor=factor
    )
    rho_N = population_threshold(esup, N, rule)
    ratios = np.empty(trials)
    for t in range(trials):
        ens = sample_ensemble(factor, N, derive_seed(seed, t), mesh)
        ratios[t] = threshold_parameter(ens, rule) / rho_N
    n_rho = N * min(rho_N, rho_N * rho_N)
    return ThresholdConcentrationSummary(
        rho_N=rho_N,
        esup_mean=esup,
        esup_stderr=esup_se,
        mean_ratio=float(ratios.mean()),
        below_quarter=float(np.mean(ratios < 0.25)),
        below_half=float(np.mean(ratios < 0.5)),
        below_three_quarter=float(np.mean(ratios < 0.75)),
        theory_bound_half=2.0 * math.exp(-n_rho / 8.0),
        mc_slack=3.0 / math.sqrt(trials),
    )
