"""Command-line entry points: test, fit, simulate.

Every run emits a versioned JSON report (schema 1) embedding the config
echo, the library version, the seed actually used, and wall-clock timing,
so any result can be reproduced from its own report.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import __version__
from .correlated import dense_covariance, paired_covariance
from .dataset import load_dataset
from .gpr import MODEL_NAMES, GprModelSpec, fit_model
from .kernels import (
    FAMILIES,
    KernelSpec,
    choose_q_n,
    fit_kernel_params,
    kernel_spec,
)
from .permute import PermutationPlan
from .pipeline import auto_rho, null_fit, run_full_test
from .sim import (
    NOISE_FAMILIES,
    ScenarioSpec,
    TestConfig,
    run_calibration,
    study_summary,
    truncate_residuals,
    write_study_csv,
)
from .stats import STATISTIC_NAMES, pooled_feature_rank

_ADAPTIVE = ("gaussian", "rq")


@dataclass(frozen=True)
class RunConfig:
    """Normalized flag values for one invocation; echoed into the report."""

    command: str
    data: str | None = None
    out: str | None = None
    report: str | None = None
    seed: int | None = None
    threads: int | None = None
    no_header: bool = False
    # kernel
    kernel: str = "gaussian"
    degree: int = 1
    bandwidth: tuple[float, ...] = ()
    exponent: float = 1.0
    q: str = "auto"
    kappa: float = 2.0
    basis: str = "monomial"
    jitter: float | None = None
    gamma: float = 0.1
    anisotropic: bool = False
    # test
    stat: str = "lr-pseudo"
    mode: str = "discrete"
    b_n: str = "auto"
    alpha: float = 0.05
    n_perm: int = 999
    standardize: str = "auto"
    size_rule: str = "gp"
    sigma: str | None = None
    sigma_pairs: str | None = None
    rho: str | None = None
    truncate: float = 0.0
    # fit
    model: str = "h0"
    # simulate
    scenario: int | None = None
    case: str | None = None
    fn: str | None = None
    n: int = 200
    reps: int = 500
    sigma0_sq: float | None = None
    delta: float | None = None
    noise: str = "gaussian"
    sigma_mode: str = "none"
    rho_override: float | None = None

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("--alpha must lie in (0, 1)")
        if self.n_perm < 1:
            raise ValueError("--n-perm must be >= 1")
        if not 0.0 <= self.truncate < 0.5:
            raise ValueError("--truncate must lie in [0, 0.5)")
        if self.b_n not in ("auto", "n-p0"):
            try:
                if int(self.b_n) < 0:
                    raise ValueError
            except ValueError:
                raise ValueError("--b-n must be 'auto', 'n-p0', or a nonnegative integer") from None
        if self.sigma is not None and self.sigma_pairs is not None:
            raise ValueError("--sigma and --sigma-pairs are mutually exclusive")
        if self.rho is not None and self.sigma_pairs is None and self.command == "test":
            raise ValueError("--rho needs --sigma-pairs")
        if self.sigma_pairs is not None and self.rho is None:
            raise ValueError("--sigma-pairs needs --rho <value|auto>")
        if self.rho is not None and self.rho != "auto":
            try:
                float(self.rho)
            except ValueError:
                raise ValueError("--rho must be a number or 'auto'") from None


def _apply_threads(threads: int | None) -> int:
    # best effort: binds only for pools that have not started yet
    used = threads if threads is not None else (os.cpu_count() or 1)
    if threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(threads)
    return used


def _resolve_seed(cfg: RunConfig) -> int:
    if cfg.seed is not None:
        return cfg.seed
    return int(np.random.SeedSequence().entropy)


def _kernel_from_config(cfg: RunConfig, n_rows: int):
    """KernelSpec, or the bare family name when bandwidths are to be fitted."""
    fam = cfg.kernel
    if fam not in FAMILIES:
        raise ValueError(f"unknown kernel family {fam!r}")
    if fam in _ADAPTIVE and not cfg.bandwidth:
        return fam
    kw = {}
    if fam == "polynomial":
        kw["degree"] = cfg.degree
    if fam == "truncated":
        kw["q"] = choose_q_n(n_rows, cfg.kappa) if cfg.q == "auto" else int(cfg.q)
        kw["basis"] = cfg.basis
    if fam in _ADAPTIVE:
        kw["bandwidths"] = cfg.bandwidth
        if fam == "rq":
            kw["exponent"] = cfg.exponent
    return kernel_spec(fam, jitter=cfg.jitter, **kw)


def _standardize_flag(cfg: RunConfig) -> bool | None:
    return {"auto": None, "yes": True, "no": False}[cfg.standardize]


def _load_matrix_csv(path: str) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2)


def _load_pairs_csv(path: str) -> np.ndarray:
    rows = []
    with open(path, newline="") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row:
                continue
            if i == 0 and not row[0].strip().lstrip("+-").isdigit():
                continue  # header
            if len(row) != 2:
                raise ValueError(f"row {i + 1}: pair file needs exactly two columns")
            rows.append((int(row[0]), int(row[1])))
    if not rows:
        raise ValueError("empty pair file")
    return np.asarray(rows, dtype=int)


def _sigma_from_config(cfg: RunConfig, ds, kernel):
    """(model, metadata) for the noise covariance flags, or (None, None)."""
    if cfg.sigma is not None:
        return dense_covariance(_load_matrix_csv(cfg.sigma)), {"form": "dense", "path": cfg.sigma}
    if cfg.sigma_pairs is not None:
        pairs = _load_pairs_csv(cfg.sigma_pairs)
        if cfg.rho == "auto":
            rho = auto_rho(ds, pairs, kernel, cfg.gamma)
        else:
            rho = float(cfg.rho)
        meta = {"form": "paired", "path": cfg.sigma_pairs, "rho": rho,
                "rho_estimated": cfg.rho == "auto"}
        return paired_covariance(pairs, rho), meta
    return None, None


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        obj = float(obj)
    if isinstance(obj, float):
        if math.isnan(obj):
            return "nan"
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        return obj
    if isinstance(obj, (str, int, bool)) or obj is None:
        return obj
    return str(obj)


def dumps_report(report: dict) -> str:
    """Canonical serialization: load + re-dump is byte-identical."""
    return json.dumps(_jsonable(report), indent=2, sort_keys=True,
                      ensure_ascii=False) + "\n"


def write_report(report: dict, path: str | None) -> None:
    text = dumps_report(report)
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def _kernel_echo(spec) -> dict:
    if isinstance(spec, KernelSpec):
        return {
            "family": spec.family, "degree": spec.degree,
            "bandwidths": list(spec.bandwidths), "exponent": spec.exponent,
            "q": spec.q, "basis": spec.basis, "jitter": spec.jitter,
        }
    return {"family": spec}


def _report_shell(cfg: RunConfig, seed: int, threads: int) -> dict:
    return {
        "schema": 1,
        "version": __version__,
        "command": cfg.command,
        "seed": seed,
        "threads": threads,
        "config": asdict(cfg),
    }


def cmd_test(cfg: RunConfig) -> dict:
    t0 = time.perf_counter()
    seed = _resolve_seed(cfg)
    threads = _apply_threads(cfg.threads)
    ds = load_dataset(cfg.data, has_header=not cfg.no_header)
    kernel = _kernel_from_config(cfg, ds.n)

    truncation = None
    if cfg.truncate > 0.0:
        f_hat, _ = null_fit(ds, kernel, cfg.gamma)
        from .sim import _with_response

        ds = _with_response(ds, truncate_residuals(ds.y, f_hat, cfg.truncate))
        truncation = {"tail": cfg.truncate, "applied": True}

    sigma_model, sigma_meta = _sigma_from_config(cfg, ds, kernel)

    plan = None
    if cfg.b_n != "auto":
        if cfg.b_n == "n-p0":
            if not isinstance(kernel, KernelSpec):
                raise ValueError("--b-n n-p0 needs a finite-feature kernel")
            b = ds.n - pooled_feature_rank(kernel, ds.x)
        else:
            b = int(cfg.b_n)
        plan = PermutationPlan(b_n=b, mode=cfg.mode, n_perm=cfg.n_perm, seed=seed)

    report = run_full_test(
        ds,
        kernel=kernel,
        plan=plan,
        stat=cfg.stat,
        alpha=cfg.alpha,
        gamma=cfg.gamma,
        mode=cfg.mode,
        n_perm=cfg.n_perm,
        seed=seed,
        standardize=_standardize_flag(cfg),
        size_rule=cfg.size_rule,
        sigma_model=sigma_model,
        isotropic=not cfg.anisotropic,
    )

    out = _report_shell(cfg, seed, threads)
    nuis = report.nuisance
    out["result"] = {
        "p_value": report.p_value,
        "corrected_p": report.corrected_p,
        "t_obs": report.t_obs,
        "b_n": report.b_n,
        "mode": report.mode,
        "n_perm": report.n_perm,
        "exhaustive": report.exhaustive,
        "correction": report.correction,
        "alpha0": report.alpha0,
        "stat": cfg.stat,
        "kernel": _kernel_echo(report.kernel),
        "nuisance": {
            "xi": nuis.xi, "sigma0": nuis.sigma0, "delta2": nuis.delta2,
            "sigma2_mle": nuis.sigma2_mle, "loglik": nuis.loglik,
        },
        "sigma": sigma_meta,
        "truncation": truncation,
        "warnings": list(report.warnings),
    }
    out["seconds"] = time.perf_counter() - t0
    return out


def cmd_fit(cfg: RunConfig) -> dict:
    t0 = time.perf_counter()
    seed = _resolve_seed(cfg)
    threads = _apply_threads(cfg.threads)
    if cfg.model not in MODEL_NAMES:
        raise ValueError(f"--model must be one of {MODEL_NAMES}")
    ds = load_dataset(cfg.data, has_header=not cfg.no_header)
    kernel = _kernel_from_config(cfg, ds.n)

    work = ds
    std = _standardize_flag(cfg)
    family = kernel.family if isinstance(kernel, KernelSpec) else kernel
    if std is None:
        std = family in _ADAPTIVE
    if std:
        from .dataset import standardize

        work, _ = standardize(ds)
    if not isinstance(kernel, KernelSpec):
        kernel = fit_kernel_params(
            work, kernel, cfg.gamma, isotropic=not cfg.anisotropic
        )

    fit = fit_model(work, GprModelSpec(model=cfg.model, kernel=kernel, gamma=cfg.gamma))
    out = _report_shell(cfg, seed, threads)
    out["result"] = {
        "model": cfg.model,
        "standardized": std,
        "kernel": _kernel_echo(kernel),
        "tau2": list(fit.tau2),
        "loglik": fit.loglik,
        "iterations": fit.iterations,
        "converged": fit.converged,
        "method": fit.method,
    }
    out["seconds"] = time.perf_counter() - t0
    return out


def cmd_simulate(cfg: RunConfig) -> dict:
    t0 = time.perf_counter()
    seed = _resolve_seed(cfg)
    threads = _apply_threads(cfg.threads)
    if cfg.scenario is None:
        raise ValueError("--scenario is required")
    spec = ScenarioSpec(
        scenario=cfg.scenario,
        case=cfg.case,
        fn=cfg.fn,
        n=cfg.n,
        sigma0_sq=cfg.sigma0_sq,
        delta=cfg.delta,
        noise=cfg.noise,
        rho=float(cfg.rho) if cfg.rho is not None else None,
        seed=seed,
    )
    kernel = _kernel_from_config(cfg, cfg.n)
    b_n = None if cfg.b_n == "auto" else (
        cfg.b_n if cfg.b_n == "n-p0" else int(cfg.b_n)
    )
    config = TestConfig(
        kernel=kernel,
        stat=cfg.stat,
        mode=cfg.mode,
        n_perm=cfg.n_perm,
        alpha=cfg.alpha,
        gamma=cfg.gamma,
        standardize=_standardize_flag(cfg),
        size_rule=cfg.size_rule,
        b_n=b_n,
        isotropic=not cfg.anisotropic,
        sigma_mode=cfg.sigma_mode,
        rho_override=cfg.rho_override,
        truncate_tail=cfg.truncate,
    )
    result = run_calibration(spec, config, reps=cfg.reps)
    if cfg.out is not None:
        write_study_csv(cfg.out, result)
    out = _report_shell(cfg, seed, threads)
    out["result"] = study_summary(result)
    out["result"]["csv"] = cfg.out
    out["seconds"] = time.perf_counter() - t0
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="ppt",
        description="Kernel-based partial permutation tests for functional "
                    "heterogeneity across groups.",
    )
    p.add_argument("--version", action="version", version=f"ppt {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def add_common(sp, with_data: bool):
        if with_data:
            sp.add_argument("data", help="input CSV: columns x1..xd, y, z")
            sp.add_argument("--no-header", action="store_true",
                            help="the CSV has no header row")
        sp.add_argument("--kernel", default="gaussian", choices=FAMILIES)
        sp.add_argument("--degree", type=int, default=1,
                        help="polynomial kernel degree")
        sp.add_argument("--bandwidth", type=float, action="append", default=None,
                        help="kernel bandwidth; repeat for per-coordinate values "
                             "(omit to fit by marginal likelihood)")
        sp.add_argument("--exponent", type=float, default=1.0,
                        help="rational-quadratic tail exponent")
        sp.add_argument("--q", default="auto",
                        help="truncated-basis size, or 'auto' for the sample-size rule")
        sp.add_argument("--kappa", type=float, default=2.0,
                        help="smoothness order driving the automatic basis size")
        sp.add_argument("--basis", default="monomial", choices=("monomial", "fourier"))
        sp.add_argument("--jitter", type=float, default=None,
                        help="diagonal ridge used inside model fits")
        sp.add_argument("--gamma", type=float, default=0.1,
                        help="signal-scaling exponent of the working model")
        sp.add_argument("--anisotropic", action="store_true",
                        help="fit one bandwidth per coordinate")
        sp.add_argument("--standardize", default="auto", choices=("auto", "yes", "no"))
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--threads", type=int, default=None)
        sp.add_argument("--out", default=None, help="output file path")

    t = sub.add_parser("test", help="run the permutation test on a CSV")
    add_common(t, with_data=True)
    t.add_argument("--stat", default="lr-pseudo",
                   choices=[s for s in STATISTIC_NAMES if s != "custom"])
    t.add_argument("--mode", default="discrete", choices=("discrete", "continuous"))
    t.add_argument("--b-n", dest="b_n", default="auto",
                   help="'auto' (size rule), an integer, or 'n-p0'")
    t.add_argument("--alpha", type=float, default=0.05)
    t.add_argument("--n-perm", dest="n_perm", type=int, default=999,
                   help="Monte-Carlo permutation draws")
    t.add_argument("--size-rule", dest="size_rule", default="gp",
                   choices=("gp", "fixed"))
    t.add_argument("--sigma", default=None, help="dense noise covariance CSV")
    t.add_argument("--sigma-pairs", dest="sigma_pairs", default=None,
                   help="CSV of paired row indices (1-based)")
    t.add_argument("--rho", default=None, help="pair correlation, or 'auto'")
    t.add_argument("--truncate", type=float, default=0.0,
                   help="winsorize fitted residuals at this tail fraction")

    f = sub.add_parser("fit", help="fit one working model and report it")
    add_common(f, with_data=True)
    f.add_argument("--model", default="h0", choices=MODEL_NAMES)

    s = sub.add_parser("simulate", help="run a scenario study")
    add_common(s, with_data=False)
    s.add_argument("--scenario", type=int, required=True)
    s.add_argument("--case", default=None)
    s.add_argument("--fn", default=None)
    s.add_argument("--n", type=int, default=200)
    s.add_argument("--reps", type=int, default=500)
    s.add_argument("--stat", default="lr-pseudo",
                   choices=[x for x in STATISTIC_NAMES if x != "custom"])
    s.add_argument("--mode", default="discrete", choices=("discrete", "continuous"))
    s.add_argument("--b-n", dest="b_n", default="auto")
    s.add_argument("--alpha", type=float, default=0.05)
    s.add_argument("--n-perm", dest="n_perm", type=int, default=199)
    s.add_argument("--size-rule", dest="size_rule", default="gp",
                   choices=("gp", "fixed"))
    s.add_argument("--sigma0-sq", dest="sigma0_sq", type=float, default=None)
    s.add_argument("--delta", type=float, default=None)
    s.add_argument("--noise", default="gaussian", choices=NOISE_FAMILIES)
    s.add_argument("--rho", default=None, help="generative pair correlation (scenario 6)")
    s.add_argument("--sigma-mode", dest="sigma_mode", default="none",
                   choices=("none", "true", "estimate"))
    s.add_argument("--rho-override", dest="rho_override", type=float, default=None)
    s.add_argument("--truncate", type=float, default=0.0)
    s.add_argument("--report", default=None,
                   help="write the summary JSON here instead of stdout")

    return p


def config_from_args(args: argparse.Namespace) -> RunConfig:
    d = vars(args).copy()
    bw = d.pop("bandwidth", None)
    d["bandwidth"] = tuple(bw) if bw else ()
    d.setdefault("report", None)
    allowed = RunConfig.__dataclass_fields__.keys()
    return RunConfig(**{k: v for k, v in d.items() if k in allowed})


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        if cfg.command == "test":
            report = cmd_test(cfg)
            write_report(report, cfg.out)
        elif cfg.command == "fit":
            report = cmd_fit(cfg)
            write_report(report, cfg.out)
        else:
            report = cmd_simulate(cfg)
            write_report(report, cfg.report)
    except (ValueError, OSError, RuntimeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
