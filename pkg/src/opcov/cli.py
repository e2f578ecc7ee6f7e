"""Experiment harness: reference-figure reproductions, EnKF demo, custom sweeps.

Commands (also exposed as the ``opcov`` console script)::

    opcov fig1       d=1 error curves over a lengthscale grid, both kernels
    opcov fig2       d=2 variant on the 100x100 mesh
    opcov enkf-demo  localized vs stochastic analysis step over a grid
    opcov custom     single-kernel sweep with explicit grids
    opcov theory     scaling-report sweep (sparsity, norms, effective rank)

Every command takes ``--config <path>`` (flat ``key = value`` lines, ``#``
comments), and individual flags, with flags winning.  Runs are deterministic
given the master seed: each (kernel, lengthscale, trial) cell draws from its
own substream, so results are identical for any ``--threads`` value; output
rows are written in grid order by a single writer.  CSVs carry one leading
``# generated <timestamp>`` comment line, excluded from rerun comparisons;
wall times go to a separate timing file for the same reason.

Exit codes: 0 success, 1 configuration error, 2 runtime failure,
3 acceptance-threshold violation under ``--check``.
"""

from __future__ import annotations

import argparse
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import enkf as enkf_mod
from ._svg import Series, error_plot
from .estimation import (
    REPORT_CSV_HEADER,
    EstimationError,
    ThresholdRule,
    estimate_and_report,
    report_csv_row,
    spectral_norm,
)
from .kernels import KernelError, KernelModel, parse_kernel
from .sampling import (
    SamplingError,
    build_mesh,
    covariance_matrix,
    derive_seed,
    factorize,
    sample_ensemble,
)
from .theory import scaling_report

__all__ = [
    "ConfigError",
    "CheckFailure",
    "ExperimentConfig",
    "fig1_config",
    "fig2_config",
    "enkf_demo_config",
    "sample_size",
    "run_figure",
    "run_enkf_demo",
    "run_theory",
    "main",
]


class ConfigError(ValueError):
    """Bad configuration file or flag combination."""


class CheckFailure(RuntimeError):
    """A --check criterion was violated."""


@dataclass
class ExperimentConfig:
    experiment: str = "custom"
    kernel: str = "se:lambda=0.1"
    d: int = 1
    m: int = 312
    lambda_grid: list[float] = field(default_factory=lambda: [0.1])
    n_rule: str = "5log"  # or "fixed"
    n_fixed: int = 0
    c0: float = 5.0
    form: str = "simplified"
    trials: int = 30
    master_seed: int = 0
    output_dir: str = "opcov_out"
    log_base: float = math.e
    n_exponent: int = 0  # 0 means "use d"
    threads: int = 1
    plot: bool = False
    check: bool = False
    # enkf-demo
    dy: int = 8
    noise_std: float = math.sqrt(0.1)
    # theory
    q: float = 0.5
    esup_samples: int = 2000

    def validate(self) -> None:
        if self.experiment not in ("fig1", "fig2", "enkf-demo", "custom", "theory"):
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        if not len(self.lambda_grid):
            raise ConfigError("lambda_grid must not be empty")
        # numpy scalars sneak in via logspace grids; plain floats keep the
        # CSV writers on the shortest round-trip repr
        self.lambda_grid = [float(l) for l in self.lambda_grid]
        if any(not (l > 0) for l in self.lambda_grid):
            raise ConfigError("lambda_grid entries must be strictly positive")
        if any(nxt >= prev for prev, nxt in zip(self.lambda_grid, self.lambda_grid[1:])):
            raise ConfigError("lambda_grid must be sorted in strictly descending order")
        if self.trials < 1:
            raise ConfigError(f"trials must be >= 1, got {self.trials}")
        if self.n_rule not in ("5log", "fixed"):
            raise ConfigError(f"n_rule must be '5log' or 'fixed', got {self.n_rule!r}")
        if self.n_rule == "fixed" and self.n_fixed < 1:
            raise ConfigError("fixed n_rule needs n_fixed >= 1")
        if self.form not in ("full", "simplified"):
            raise ConfigError(f"form must be 'full' or 'simplified', got {self.form!r}")
        if self.log_base <= 1.0:
            raise ConfigError(f"log_base must be > 1, got {self.log_base}")
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")


def fig1_config(**overrides) -> ExperimentConfig:
    """d=1 reference setup: 1250-point mesh, 30 lengthscales in [1e-3, 1e-0.1]."""
    cfg = ExperimentConfig(
        experiment="fig1", d=1, m=1250,
        lambda_grid=list(np.logspace(-0.1, -3.0, 30)),
        n_rule="5log", c0=5.0, form="simplified", trials=100,
    )
    return replace(cfg, **overrides)


def fig2_config(**overrides) -> ExperimentConfig:
    """d=2 reference setup: 100x100 mesh, 10 lengthscales in [1e-2.3, 1e-0.1]."""
    cfg = ExperimentConfig(
        experiment="fig2", d=2, m=100,
        lambda_grid=list(np.logspace(-0.1, -2.3, 10)),
        n_rule="5log", c0=5.0, form="simplified", trials=30,
    )
    return replace(cfg, **overrides)


def enkf_demo_config(**overrides) -> ExperimentConfig:
    cfg = ExperimentConfig(
        experiment="enkf-demo", kernel="se:lambda=1", d=1, m=1250,
        lambda_grid=list(np.logspace(-1.0, -3.0, 5)),
        n_rule="5log", c0=5.0, form="simplified", trials=20,
    )
    return replace(cfg, **overrides)


def sample_size(lam: float, cfg: ExperimentConfig) -> int:
    """N for one lengthscale: ceil(5 log(lam^-exponent)), floored at 2.

    The log base defaults to e; the exponent defaults to the physical
    dimension d.  Both are isolated here because the reference description is
    ambiguous on them.
    """
    if cfg.n_rule == "fixed":
        return cfg.n_fixed
    exponent = cfg.n_exponent if cfg.n_exponent else cfg.d
    n = 5.0 * exponent * math.log(1.0 / lam) / math.log(cfg.log_base)
    return max(2, math.ceil(n))


# ---------------------------------------------------------------------------
# config files and flags
# ---------------------------------------------------------------------------

_CONFIG_CASTS = {
    "experiment": str, "kernel": str, "d": int, "m": int,
    "n_rule": str, "n_fixed": int, "c0": float, "form": str, "trials": int,
    "master_seed": int, "output_dir": str, "log_base": float, "n_exponent": int,
    "threads": int, "plot": bool, "check": bool, "dy": int, "noise_std": float,
    "q": float, "esup_samples": int,
}


def _parse_bool(text: str) -> bool:
    if text.lower() in ("1", "true", "yes", "on"):
        return True
    if text.lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(text)


def _parse_lambda_grid(text: str) -> list[float]:
    try:
        grid = [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad lambda_grid entry: {exc}") from None
    if not grid:
        raise ConfigError("lambda_grid is empty")
    return grid


def load_config_file(path) -> dict:
    """Parse a flat ``key = value`` config file with ``#`` comments."""
    values: dict = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not eq or not key:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        if key == "lambda_grid":
            values[key] = _parse_lambda_grid(value)
            continue
        if key not in _CONFIG_CASTS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        cast = _parse_bool if _CONFIG_CASTS[key] is bool else _CONFIG_CASTS[key]
        try:
            values[key] = cast(value)
        except ValueError:
            raise ConfigError(
                f"{path}:{lineno}: bad value {value!r} for key {key!r}"
            ) from None
    return values


# ---------------------------------------------------------------------------
# figure runs
# ---------------------------------------------------------------------------


def _timestamp_line() -> str:
    return f"# generated {datetime.now(timezone.utc).isoformat()}"


def _figure_kernels(cfg: ExperimentConfig) -> list[tuple[str, str]]:
    """(name, family template) pairs; fig runs cover both reference families."""
    if cfg.experiment in ("fig1", "fig2"):
        return [("se", "se"), ("matern", "matern")]
    kern = parse_kernel(cfg.kernel)
    return [(kern.family, kern.family)]


def _kernel_at(template: str, lam: float, cfg: ExperimentConfig) -> KernelModel:
    if template == "se":
        return KernelModel("se", lam)
    if template == "matern":
        base = parse_kernel(cfg.kernel) if cfg.experiment == "custom" else None
        nu = base.nu if base is not None and base.nu is not None else 1.5
        return KernelModel("matern", lam, nu)
    raise ConfigError(f"unknown kernel template {template!r}")


@dataclass
class LambdaSummary:
    lam: float
    N: int
    trials: int
    mean_eps_sample: float
    ci95_eps_sample: float
    mean_eps_thresh: float
    ci95_eps_thresh: float
    mean_rho_hat: float
    mean_nnz: float
    frac_thresh_worse: float  # per-trial fraction with eps_thresh >= eps_sample


SUMMARY_CSV_HEADER = ("lambda,N,trials,mean_eps_sample,ci95_eps_sample,"
                      "mean_eps_thresh,ci95_eps_thresh,mean_rho_hat,mean_nnz_fraction,"
                      "frac_thresh_worse")


def _summary_row(s: LambdaSummary) -> str:
    return ",".join([
        repr(float(s.lam)), str(s.N), str(s.trials),
        repr(s.mean_eps_sample), repr(s.ci95_eps_sample),
        repr(s.mean_eps_thresh), repr(s.ci95_eps_thresh),
        repr(s.mean_rho_hat), repr(s.mean_nnz), repr(s.frac_thresh_worse),
    ])


def _run_kernel_sweep(cfg: ExperimentConfig, kernel_idx: int, template: str, out_dir: Path,
                      name_prefix: str):
    """All (lambda, trial) cells for one kernel family; returns summaries."""
    mesh = build_mesh(cfg.d, cfg.m)
    rule = ThresholdRule(c0=cfg.c0, form=cfg.form)
    trial_lines: list[str] = []
    summaries: list[LambdaSummary] = []
    timings: list[str] = []
    for lam_idx, lam in enumerate(cfg.lambda_grid):
        kernel = _kernel_at(template, lam, cfg)
        N = sample_size(lam, cfg)
        t_setup = time.perf_counter()
        cov = covariance_matrix(kernel, mesh)
        factor = factorize(cov)
        truth_norm = spectral_norm(cov, seed=derive_seed(cfg.master_seed, 0xA0, kernel_idx, lam_idx))
        setup_s = time.perf_counter() - t_setup

        def one_trial(trial: int):
            t0 = time.perf_counter()
            seed = derive_seed(cfg.master_seed, kernel_idx, lam_idx, trial)
            ens = sample_ensemble(factor, N, seed, mesh)
            report = estimate_and_report(ens, cov, rule, seed=seed, truth_norm=truth_norm)
            return report, seed, time.perf_counter() - t0

        if cfg.threads > 1:
            with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
                results = list(pool.map(one_trial, range(cfg.trials)))
        else:
            results = [one_trial(t) for t in range(cfg.trials)]
        eps_s = np.array([r.eps_sample for r, _, _ in results])
        eps_t = np.array([r.eps_thresh for r, _, _ in results])
        for trial, (report, seed, _) in enumerate(results):
            trial_lines.append(
                report_csv_row(report, seed, cfg.d, cfg.m, lam, N, rule) + f",{trial}"
            )
        def ci95(x):
            return 1.96 * float(x.std(ddof=1)) / math.sqrt(x.size) if x.size > 1 else 0.0
        summaries.append(LambdaSummary(
            lam=lam, N=N, trials=cfg.trials,
            mean_eps_sample=float(eps_s.mean()), ci95_eps_sample=ci95(eps_s),
            mean_eps_thresh=float(eps_t.mean()), ci95_eps_thresh=ci95(eps_t),
            mean_rho_hat=float(np.mean([r.rho_hat for r, _, _ in results])),
            mean_nnz=float(np.mean([r.nnz_fraction for r, _, _ in results])),
            frac_thresh_worse=float(np.mean(eps_t >= eps_s)),
        ))
        trial_s = sum(dt for _, _, dt in results)
        timings.append(f"{name_prefix} lambda={lam!r} setup_s={setup_s:.3f} trials_s={trial_s:.3f}")

    trials_path = out_dir / f"{name_prefix}_trials.csv"
    with open(trials_path, "w", newline="") as fh:
        fh.write(_timestamp_line() + "\n")
        fh.write(REPORT_CSV_HEADER + ",trial\n")
        fh.write("\n".join(trial_lines) + "\n")
    summary_path = out_dir / f"{name_prefix}_summary.csv"
    with open(summary_path, "w", newline="") as fh:
        fh.write(_timestamp_line() + "\n")
        fh.write(SUMMARY_CSV_HEADER + "\n")
        fh.write("\n".join(_summary_row(s) for s in summaries) + "\n")
    if cfg.plot:
        lams = [s.lam for s in summaries]
        error_plot(
            out_dir / f"{name_prefix}.svg",
            [
                Series(lams, [s.mean_eps_sample for s in summaries], "#1f77b4",
                       "relative error, sample", dash="6,4"),
                Series(lams, [s.mean_eps_thresh for s in summaries], "#d62728",
                       "relative error, thresholded"),
                Series(lams, [float(s.N) for s in summaries], "#2ca02c",
                       "sample size N", dash="2,3", right_axis=True),
            ],
            title=f"{name_prefix}: relative errors vs lengthscale",
            xlabel="lengthscale", ylabel="relative error", right_label="N",
        )
    return summaries, timings


def _check_figure(summaries: list[LambdaSummary]) -> list[str]:
    """Qualitative reference checks on one kernel sweep; returns violations."""
    problems = []
    by_lam = sorted(summaries, key=lambda s: s.lam)  # ascending
    if len(by_lam) >= 6:
        small = np.mean([s.mean_eps_thresh for s in by_lam[:3]])
        large = np.mean([s.mean_eps_thresh for s in by_lam[-3:]])
        ratio = small / large if large > 0 else math.inf
        if not (0.5 <= ratio <= 2.0):
            problems.append(
                f"thresholded curve is not flat: small/large lengthscale mean ratio {ratio:.3f}"
            )
        div = by_lam[0].mean_eps_sample / by_lam[-1].mean_eps_sample
        if div < 3.0:
            problems.append(
                f"sample-covariance curve does not diverge: error ratio {div:.3f} < 3"
            )
    largest = by_lam[-1]
    if largest.lam >= 10 ** -0.2:
        if largest.frac_thresh_worse < 0.5:
            problems.append(
                "no large-lengthscale crossover: thresholding beat the sample covariance "
                f"in most trials at lambda={largest.lam:.4g}"
            )
    return problems


def run_figure(cfg: ExperimentConfig) -> dict:
    """Run fig1/fig2/custom; returns {kernel_name: [LambdaSummary]}."""
    cfg.validate()
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    prefix = cfg.experiment if cfg.experiment != "custom" else "custom"
    all_summaries: dict = {}
    all_timings: list[str] = []
    for kernel_idx, (name, template) in enumerate(_figure_kernels(cfg)):
        summaries, timings = _run_kernel_sweep(
            cfg, kernel_idx, template, out_dir, f"{prefix}_{name}"
        )
        all_summaries[name] = summaries
        all_timings.extend(timings)
    with open(out_dir / f"{prefix}_timing.txt", "w") as fh:
        fh.write(_timestamp_line() + "\n")
        fh.write("\n".join(all_timings) + "\n")
    if cfg.check:
        problems = []
        for name, summaries in all_summaries.items():
            problems.extend(f"[{name}] {p}" for p in _check_figure(summaries))
        report_path = out_dir / f"{prefix}_check.txt"
        with open(report_path, "w") as fh:
            fh.write(_timestamp_line() + "\n")
            fh.write("PASS\n" if not problems else "FAIL\n" + "\n".join(problems) + "\n")
        if problems:
            raise CheckFailure("; ".join(problems))
    return all_summaries


# ---------------------------------------------------------------------------
# enkf demo and theory sweep
# ---------------------------------------------------------------------------


def run_enkf_demo(cfg: ExperimentConfig) -> list[dict]:
    """Localized vs stochastic analysis step over the lengthscale grid."""
    cfg.validate()
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    mesh = build_mesh(cfg.d, cfg.m)
    obs = enkf_mod.pointwise_observation(mesh, cfg.dy, cfg.noise_std)
    rule = ThresholdRule(c0=cfg.c0, form=cfg.form)
    base = parse_kernel(cfg.kernel)
    rows: list[str] = []
    summary_rows: list[dict] = []
    kv_lines: list[str] = []
    for lam_idx, lam in enumerate(cfg.lambda_grid):
        kernel = KernelModel(base.family, lam, base.nu)
        N = sample_size(lam, cfg)
        seed = derive_seed(cfg.master_seed, 0xEF, lam_idx)
        summary = enkf_mod.compare_analysis_updates(
            kernel, mesh, obs, N, rule, cfg.trials, seed
        )
        rows.extend(enkf_mod.comparison_csv_rows(summary, seed))
        record = {
            "lambda": lam, "N": N, "trials": cfg.trials,
            "mean_disc_vanilla": summary.mean_vanilla,
            "mean_disc_localized": summary.mean_localized,
            "frac_localized_better": summary.frac_localized_better,
            "continuity_all_ok": summary.continuity_all_ok,
        }
        record.update(summary.pooled_quantiles())
        summary_rows.append(record)
        for key, value in record.items():
            kv_lines.append(f"lambda_{lam_idx}.{key} = {value!r}")
    with open(out_dir / "enkf_demo_trials.csv", "w", newline="") as fh:
        fh.write(_timestamp_line() + "\n")
        fh.write(enkf_mod.TRIAL_CSV_HEADER + "\n")
        fh.write("\n".join(rows) + "\n")
    header = sorted(summary_rows[0].keys())
    with open(out_dir / "enkf_demo_summary.csv", "w", newline="") as fh:
        fh.write(_timestamp_line() + "\n")
        fh.write(",".join(header) + "\n")
        for record in summary_rows:
            fh.write(",".join(repr(record[k]) if not isinstance(record[k], bool)
                              else str(record[k]) for k in header) + "\n")
    with open(out_dir / "enkf_demo_summary.txt", "w") as fh:
        fh.write(_timestamp_line() + "\n")
        fh.write("\n".join(kv_lines) + "\n")
    if cfg.check:
        smallest = summary_rows[-1]
        problems = []
        if smallest["frac_localized_better"] < 0.9:
            problems.append(
                "localized update beat the stochastic one in only "
                f"{smallest['frac_localized_better']:.0%} of trials at the smallest lengthscale"
            )
        if not all(r["continuity_all_ok"] for r in summary_rows):
            problems.append("gain-continuity inequality violated in some trial")
        with open(out_dir / "enkf_demo_check.txt", "w") as fh:
            fh.write(_timestamp_line() + "\n")
            fh.write("PASS\n" if not problems else "FAIL\n" + "\n".join(problems) + "\n")
        if problems:
            raise CheckFailure("; ".join(problems))
    return summary_rows


def run_theory(cfg: ExperimentConfig) -> list:
    """Scaling-report sweep over the lengthscale grid for one kernel family."""
    cfg.validate()
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    mesh = build_mesh(cfg.d, cfg.m)
    base = parse_kernel(cfg.kernel)
    reports = []
    for lam_idx, lam in enumerate(cfg.lambda_grid):
        kernel = KernelModel(base.family, lam, base.nu)
        reports.append(scaling_report(
            kernel, mesh, cfg.q, cfg.esup_samples,
            derive_seed(cfg.master_seed, 0x7E, lam_idx),
        ))
    with open(out_dir / "theory_sweep.csv", "w", newline="") as fh:
        fh.write(_timestamp_line() + "\n")
        fh.write(reports[0].CSV_HEADER + "\n")
        fh.write("\n".join(r.csv_row() for r in reports) + "\n")
    return reports


# ---------------------------------------------------------------------------
# argument parsing and entry point
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # remap argparse's exit(2) onto config errors
        raise ConfigError(message)


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", type=str, default=None, help="flat key = value config file")
    sub.add_argument("--seed", type=int, default=None, help="master seed")
    sub.add_argument("--out", type=str, default=None, help="output directory")
    sub.add_argument("--plot", action="store_true", default=None, help="write SVG plots")
    sub.add_argument("--threads", type=int, default=None, help="worker threads per lengthscale")
    sub.add_argument("--check", action="store_true", default=None,
                     help="verify qualitative acceptance thresholds; exit 3 on violation")
    sub.add_argument("--trials", type=int, default=None)
    sub.add_argument("--m", type=int, default=None, help="mesh points per axis")
    sub.add_argument("--lambdas", type=str, default=None,
                     help="comma-separated descending lengthscale grid")
    sub.add_argument("--c0", type=float, default=None)
    sub.add_argument("--form", type=str, default=None, choices=("full", "simplified"))
    sub.add_argument("--n-rule", type=str, default=None, choices=("5log", "fixed"))
    sub.add_argument("--n-fixed", type=int, default=None)
    sub.add_argument("--log-base", type=float, default=None)
    sub.add_argument("--n-exponent", type=int, default=None)
    sub.add_argument("--kernel", type=str, default=None, help="kernel spec string")


def _build_parser() -> _Parser:
    parser = _Parser(prog="opcov", description=__doc__.splitlines()[0])
    subs = parser.add_subparsers(dest="command", required=True)
    for name in ("fig1", "fig2", "enkf-demo", "custom", "theory"):
        sub = subs.add_parser(name)
        _add_common(sub)
        if name == "enkf-demo":
            sub.add_argument("--dy", type=int, default=None)
            sub.add_argument("--noise-std", type=float, default=None)
        if name == "custom":
            sub.add_argument("--d", type=int, default=None)
        if name == "theory":
            sub.add_argument("--d", type=int, default=None)
            sub.add_argument("--q", type=float, default=None)
            sub.add_argument("--esup-samples", type=int, default=None)
    return parser


_FLAG_TO_FIELD = {
    "seed": "master_seed", "out": "output_dir", "lambdas": "lambda_grid",
    "n_rule": "n_rule", "n_fixed": "n_fixed", "log_base": "log_base",
    "n_exponent": "n_exponent", "noise_std": "noise_std", "esup_samples": "esup_samples",
}


def _config_from_args(args) -> ExperimentConfig:
    if args.command == "fig1":
        cfg = fig1_config()
    elif args.command == "fig2":
        cfg = fig2_config()
    elif args.command == "enkf-demo":
        cfg = enkf_demo_config()
    else:
        cfg = ExperimentConfig(experiment=args.command)
    if args.config:
        for key, value in load_config_file(args.config).items():
            if key == "experiment" and value != cfg.experiment:
                raise ConfigError(
                    f"config file sets experiment={value!r} but the command is {cfg.experiment!r}"
                )
            setattr(cfg, key, value)
    for flag, value in vars(args).items():
        if flag in ("command", "config") or value is None:
            continue
        name = _FLAG_TO_FIELD.get(flag, flag)
        if name == "lambda_grid":
            value = _parse_lambda_grid(value)
        setattr(cfg, name, value)
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
        cfg = _config_from_args(args)
    except ConfigError as exc:
        print(f"opcov: configuration error: {exc}", file=sys.stderr)
        return 1
    try:
        if cfg.experiment in ("fig1", "fig2", "custom"):
            # Full-form surfaces its c0 <= sqrt(N) precondition before any work.
            if cfg.form == "full":
                for lam in cfg.lambda_grid:
                    n = sample_size(lam, cfg)
                    if cfg.c0 > math.sqrt(n):
                        print(
                            f"opcov: configuration error: full form needs c0 <= sqrt(N); "
                            f"c0={cfg.c0}, N={n} at lambda={lam!r}",
                            file=sys.stderr,
                        )
                        return 1
            run_figure(cfg)
        elif cfg.experiment == "enkf-demo":
            run_enkf_demo(cfg)
        else:
            run_theory(cfg)
    except CheckFailure as exc:
        print(f"opcov: check failed: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, KernelError) as exc:
        print(f"opcov: configuration error: {exc}", file=sys.stderr)
        return 1
    except (EstimationError, SamplingError, enkf_mod.EnkfError, OSError) as exc:
        print(f"opcov: runtime failure: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
