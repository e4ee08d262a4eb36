"""Simulation scenarios and study runners.

Six data-generating scenarios: mixture-covariate nulls in one and two
dimensions (1, 2), interpolated two-group alternatives in one and two
dimensions (3, 4), the duplicated-covariate parallel design (5), and its
correlated-noise variant (6). Runners draw replicate datasets, run the full
test on each, and aggregate p-values into ECDFs and rejection rates.

Replicate seeds are pre-split from one master sequence, so replicates could
run in any order or on a worker pool; this implementation runs them
serially and aggregation is order-independent either way.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy.integrate import quad

from .correlated import paired_covariance
from .dataset import Dataset, make_dataset
from .kernels import KernelSpec
from .permute import PermutationPlan
from .pipeline import auto_rho, null_fit, run_full_test

NOISE_FAMILIES = ("gaussian", "uniform", "t5")

_CASE_PROBS = {"a": (0.5, 0.5), "b": (0.2, 0.8), "c": (0.5, 0.5),
               "d": (0.2, 0.8), "e": (0.5, 0.5)}
_CASE_MIX = {"a": (0.5, 0.5), "b": (0.5, 0.5), "c": (0.8, 0.2),
             "d": (0.8, 0.2), "e": (1.0, 0.0)}

_DEFAULT_NOISE_VAR = {1: 0.1, 2: 0.1, 3: 0.5, 4: 0.5, 5: 1.0, 6: 0.1}

_FN_MENU = {
    1: ("i", "ii", "iii", "iv", "v", "vi", "g0"),
    2: ("i", "ii", "iii", "iv", "v", "vi", "g0"),
    3: ("i", "ii", "iii"),
    4: ("iv", "v", "vi"),
    5: ("i", "ii"),
}


def nonsmooth_g0(x):
    """Piecewise-linear zigzag with kinks at multiples of 1/6 and slopes
    alternating between the 1x and 2x scale; range within [-1, 1]."""
    x = np.asarray(x, dtype=float)
    t = 3.0 * x
    fl = np.floor(t)
    frac = np.minimum(np.abs(t - fl), np.abs(t - fl - 1.0))
    mult = np.mod(fl, 2.0) + 1.0
    out = 2.0 * frac * mult - 1.0
    return out if out.ndim else float(out)


_S1_FN = {
    "i": lambda x: x,
    "ii": lambda x: 2.0 * x**2 - 1.0,
    "iii": lambda x: 4.0 * x**3 / 3.0 - x / 3.0,
    "iv": lambda x: 4.0 / (1.0 + x**2) - 3.0,
    "v": lambda x: np.sin(4.0 * x),
    "vi": lambda x: np.sin(6.0 * x),
    "g0": nonsmooth_g0,
}

_S2_FN = {
    "i": lambda x1, x2: (x1 + x2) / 2.0,
    "ii": lambda x1, x2: x1 * x2,
    "iii": lambda x1, x2: 2.0 * (x1 + x2) ** 3 / 15.0 - (x1 + x2) / 30.0,
    "iv": lambda x1, x2: 3.0 / (1.0 + x1**2 + x2**2) - 2.0,
    "v": lambda x1, x2: np.sin(6.0 * x1) + x2,
    "vi": lambda x1, x2: np.sin(6.0 * x1 + 6.0 * x2),
    "g0": lambda x1, x2: nonsmooth_g0(x1) * nonsmooth_g0(x2),
}

_S3_FN = {
    "i": (lambda x: 1.0 + x, lambda x: 2.0 + 3.0 * x),
    "ii": (lambda x: 1.0 / 3.0 + x / 2.0, lambda x: (x + 1.0) ** 2 / 4.0),
    "iii": (
        lambda x: 1.0 / 3.0 + x / 2.0,
        lambda x: 0.2 + x / 2.0 - x**4 + x**2,
    ),
}

_S4_FN = {
    "iv": (
        lambda x1, x2: 1.0 + x1 + x2,
        lambda x1, x2: 2.0 + 3.0 * x1 + x2,
    ),
    "v": (
        lambda x1, x2: 1.0 / 3.0 + x1 / 2.0 + x2 / 2.0,
        lambda x1, x2: (x1 + 1.0) ** 2 / 4.0 + (x2 + 1.0) ** 2 / 4.0 - 1.0 / 3.0,
    ),
    "vi": (
        lambda x1, x2: 1.0 / 3.0 + x1 / 2.0 + x2 / 2.0,
        lambda x1, x2: 1.0 / 3.0 + x1 / 2.0 + x2 / 2.0
        + np.sin(np.pi * x1) * np.sin(np.pi * x2),
    ),
}


@lru_cache(maxsize=None)
def _parallel_centering() -> tuple[float, float, float]:
    # centering constants: each curve integrates to zero over (0, 1)
    m1 = quad(lambda x: 2.5 * math.sin(3.0 * math.pi * x) * (1.0 - x), 0.0, 1.0)[0]
    m2 = quad(lambda x: 3.5 * math.sin(3.0 * math.pi * x) * (1.0 - x), 0.0, 1.0)[0]
    m3 = quad(lambda x: 2.5 * math.sin(3.4 * math.pi * x) * (1.0 - x), 0.0, 1.0)[0]
    return m1, m2, m3


def parallel_functions(fn: str):
    """The centered curve pair for the duplicated-covariate design."""
    m1, m2, m3 = _parallel_centering()
    f1 = lambda x: 2.5 * np.sin(3.0 * np.pi * x) * (1.0 - x) - m1
    if fn == "i":
        f2 = lambda x: 3.5 * np.sin(3.0 * np.pi * x) * (1.0 - x) - m2
    else:
        f2 = lambda x: 2.5 * np.sin(3.4 * np.pi * x) * (1.0 - x) - m3
    return f1, f2


@dataclass(frozen=True)
class ScenarioSpec:
    """One fully specified data-generating configuration."""

    scenario: int
    case: str | None = None
    fn: str | None = None
    n: int = 200
    sigma0_sq: float | None = None
    delta: float | None = None
    noise: str = "gaussian"
    rho: float | None = None
    seed: int | None = None

    def __post_init__(self):
        s = self.scenario
        if s not in (1, 2, 3, 4, 5, 6):
            raise ValueError("scenario must be 1..6")
        if s in (1, 2):
            if self.case not in ("a", "b", "c", "d", "e"):
                raise ValueError(f"scenario {s} needs case a..e")
        elif s in (3, 4):
            if self.case not in ("a", "b"):
                raise ValueError(f"scenario {s} needs case a or b")
        elif self.case is not None:
            raise ValueError(f"scenario {s} has a fixed design; case does not apply")
        if s == 6:
            if self.fn is not None:
                raise ValueError("scenario 6 has a fixed function")
        elif self.fn not in _FN_MENU[s]:
            raise ValueError(f"scenario {s} function must be one of {_FN_MENU[s]}")
        if s in (1, 2, 6) and self.delta is not None:
            raise ValueError(f"delta does not apply to scenario {s}")
        if s == 6:
            if self.rho is None or not -1.0 < self.rho < 1.0:
                raise ValueError("scenario 6 needs rho in (-1, 1)")
            if self.noise != "gaussian":
                raise ValueError("scenario 6 noise is gaussian by construction")
        elif self.rho is not None:
            raise ValueError(f"rho does not apply to scenario {s}")
        if self.noise not in NOISE_FAMILIES:
            raise ValueError(f"unknown noise family {self.noise!r}")
        if self.n < 4:
            raise ValueError("need n >= 4")
        if s in (5, 6) and self.n % 2 != 0:
            raise ValueError(f"scenario {s} needs an even n")
        if self.sigma0_sq is not None and self.sigma0_sq <= 0.0:
            raise ValueError("noise variance must be positive")

    @property
    def noise_var(self) -> float:
        if self.sigma0_sq is not None:
            return self.sigma0_sq
        return _DEFAULT_NOISE_VAR[self.scenario]

    @property
    def delta_value(self) -> float:
        return 1.0 if self.delta is None else self.delta


def scenario_pairs(n: int) -> np.ndarray:
    """Row-index pairs (i, n/2+i), 1-based, of the duplicated design."""
    m = n // 2
    return np.column_stack([np.arange(1, m + 1), np.arange(m + 1, n + 1)])


def _noise(spec: ScenarioSpec, rng: np.random.Generator, n: int) -> np.ndarray:
    if spec.noise == "gaussian":
        return rng.normal(0.0, math.sqrt(spec.noise_var), n)
    if spec.noise == "uniform":
        # unit-variance uniform, used at its native scale
        return rng.uniform(-math.sqrt(3.0), math.sqrt(3.0), n)
    return rng.standard_t(5, n)


def _draw_groups(rng: np.random.Generator, n: int, probs) -> np.ndarray:
    for _ in range(10000):
        z = 1 + (rng.uniform(size=n) >= probs[0]).astype(int)
        if np.any(z == 1) and np.any(z == 2):
            return z
    raise RuntimeError("could not draw a sample containing both groups")


def _mixture_covariate(rng, z, mix) -> np.ndarray:
    a = np.where(z == 1, mix[0], mix[1])
    pick_neg = rng.uniform(size=z.shape[0]) < a
    neg = rng.uniform(-1.0, 0.0, z.shape[0])
    pos = rng.uniform(0.0, 1.0, z.shape[0])
    return np.where(pick_neg, neg, pos)


def _with_response(ds: Dataset, y: np.ndarray) -> Dataset:
    y = np.asarray(y, dtype=float)
    y.setflags(write=False)
    return replace(ds, y=y)


def generate(spec: ScenarioSpec, rng: np.random.Generator | None = None) -> Dataset:
    """One draw of the scenario. Deterministic given ``spec.seed``; an explicit rng wins."""
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    n = spec.n
    s = spec.scenario

    if s in (1, 2):
        z = _draw_groups(rng, n, _CASE_PROBS[spec.case])
        mix = _CASE_MIX[spec.case]
        cols = [_mixture_covariate(rng, z, mix) for _ in range(1 if s == 1 else 2)]
        x = np.column_stack(cols)
        f = _S1_FN[spec.fn](x[:, 0]) if s == 1 else _S2_FN[spec.fn](x[:, 0], x[:, 1])
        return make_dataset(x, f + _noise(spec, rng, n), z)

    if s in (3, 4):
        z = _draw_groups(rng, n, _CASE_PROBS[spec.case])
        d = 1 if s == 3 else 2
        x = rng.uniform(-1.0, 1.0, (n, d))
        if s == 3:
            f1, f2 = _S3_FN[spec.fn]
            v1, v2 = f1(x[:, 0]), f2(x[:, 0])
        else:
            f1, f2 = _S4_FN[spec.fn]
            v1, v2 = f1(x[:, 0], x[:, 1]), f2(x[:, 0], x[:, 1])
        vals = np.where(z == 1, v1, v1 + spec.delta_value * (v2 - v1))
        return make_dataset(x, vals + _noise(spec, rng, n), z)

    m = n // 2
    xh = rng.uniform(0.0, 1.0, m)
    x = np.concatenate([xh, xh])[:, None]
    z = np.concatenate([np.ones(m, dtype=int), np.full(m, 2, dtype=int)])

    if s == 5:
        f1, f2 = parallel_functions(spec.fn)
        v1 = f1(xh)
        v2 = v1 + spec.delta_value * (f2(xh) - v1)
        y = np.concatenate([v1, v2]) + _noise(spec, rng, n)
        return make_dataset(x, y, z)

    # scenario 6: shared curve, pairwise-correlated gaussian noise
    f = 2.5 * np.sin(3.0 * np.pi * xh) * (1.0 - xh)
    a = rng.normal(size=m)
    b = rng.normal(size=m)
    rho = spec.rho
    e2 = rho * a + math.sqrt(1.0 - rho * rho) * b
    eps = math.sqrt(spec.noise_var) * np.concatenate([a, e2])
    return make_dataset(x, np.concatenate([f, f]) + eps, z)


def truncate_residuals(y: np.ndarray, f_hat: np.ndarray, tail: float = 0.02) -> np.ndarray:
    """Winsorize fitted residuals at their tail and 1-tail sample quantiles
    (linear-interpolation quantile convention) and reassemble the response."""
    if not 0.0 <= tail < 0.5:
        raise ValueError("tail fraction must lie in [0, 0.5)")
    y = np.asarray(y, dtype=float).ravel()
    f_hat = np.asarray(f_hat, dtype=float).ravel()
    if y.shape != f_hat.shape:
        raise ValueError("fitted values must match the response length")
    if tail == 0.0:
        return y.copy()
    r = y - f_hat
    lo = np.quantile(r, tail)
    hi = np.quantile(r, 1.0 - tail)
    return f_hat + np.clip(r, lo, hi)


# ---------------------------------------------------------------------------
# study runners
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TestConfig:
    """How each replicate is tested. b_n None uses the automatic size rule;
    an integer fixes it; the string "n-p0" subtracts the pooled feature rank
    from n (the exact-validity configuration for finite-feature kernels)."""

    kernel: object = "gaussian"
    stat: str = "lr-pseudo"
    mode: str = "discrete"
    n_perm: int = 199
    alpha: float = 0.05
    gamma: float = 0.1
    standardize: bool | None = None
    size_rule: str = "gp"
    b_n: object = None
    isotropic: bool = True
    sigma_mode: str = "none"
    rho_override: float | None = None
    truncate_tail: float = 0.0

    def __post_init__(self):
        if self.sigma_mode not in ("none", "true", "estimate"):
            raise ValueError("sigma_mode must be none, true, or estimate")
        if self.b_n is not None and self.b_n != "n-p0" and (
            not isinstance(self.b_n, int) or self.b_n < 0
        ):
            raise ValueError("b_n must be None, a nonnegative integer, or 'n-p0'")


TestConfig.__test__ = False  # the Test prefix is API naming, not a test case


@dataclass(frozen=True)
class StudyResult:
    """Per-replicate outputs plus their aggregates; the rejection rate at a
    level is exactly the fraction of p-values at or below it."""

    p_values: np.ndarray
    corrected_p: np.ndarray
    b_n: np.ndarray
    rejection: dict
    ecdf_grid: np.ndarray
    ecdf: np.ndarray
    seconds: float

    @property
    def reps(self) -> int:
        return self.p_values.shape[0]


@dataclass(frozen=True)
class PowerRow:
    spec: ScenarioSpec
    result: StudyResult

    @property
    def label(self) -> str:
        bits = [f"S{self.spec.scenario}"]
        if self.spec.case:
            bits.append(self.spec.case)
        if self.spec.fn:
            bits.append(self.spec.fn)
        return "".join(bits)


def _pooled_feature_rank(kernel, ds: Dataset) -> int:
    from .stats import pooled_feature_rank

    if not isinstance(kernel, KernelSpec):
        raise ValueError("b_n='n-p0' needs an explicit finite-feature KernelSpec")
    return pooled_feature_rank(kernel, ds.x)


def _run_one(spec: ScenarioSpec, config: TestConfig, child: np.random.SeedSequence):
    gen_seq, test_seq = child.spawn(2)
    ds = generate(spec, np.random.Generator(np.random.PCG64(gen_seq)))

    if config.truncate_tail > 0.0:
        f_hat, _ = null_fit(ds, config.kernel, config.gamma)
        ds = _with_response(ds, truncate_residuals(ds.y, f_hat, config.truncate_tail))

    sigma_model = None
    if config.sigma_mode != "none":
        if spec.scenario not in (5, 6):
            raise ValueError("noise-covariance modes need the paired design")
        pairs = scenario_pairs(spec.n)
        if config.rho_override is not None:
            rho = config.rho_override
        elif config.sigma_mode == "estimate":
            rho = auto_rho(ds, pairs, config.kernel, config.gamma)
        else:
            if spec.rho is None:
                raise ValueError("sigma_mode 'true' needs the scenario rho")
            rho = spec.rho
        sigma_model = paired_covariance(pairs, rho)

    seed = int(test_seq.generate_state(1)[0])
    plan = None
    if config.b_n is not None:
        b = config.b_n
        if b == "n-p0":
            b = ds.n - _pooled_feature_rank(config.kernel, ds)
        plan = PermutationPlan(
            b_n=b, mode=config.mode, n_perm=config.n_perm, seed=seed
        )

    return run_full_test(
        ds,
        kernel=config.kernel,
        plan=plan,
        stat=config.stat,
        alpha=config.alpha,
        gamma=config.gamma,
        mode=config.mode,
        n_perm=config.n_perm,
        seed=seed,
        standardize=config.standardize,
        size_rule=config.size_rule,
        sigma_model=sigma_model,
        isotropic=config.isotropic,
    )


def _aggregate(p, pc, bs, alphas, seconds) -> StudyResult:
    p = np.asarray(p)
    grid = np.round(np.linspace(0.0, 1.0, 101), 2)
    ecdf = np.array([np.mean(p <= t) for t in grid])
    rejection = {float(a): float(np.mean(p <= a)) for a in alphas}
    return StudyResult(
        p_values=p, corrected_p=np.asarray(pc), b_n=np.asarray(bs, dtype=int),
        rejection=rejection, ecdf_grid=grid, ecdf=ecdf, seconds=seconds,
    )


def run_calibration(
    spec: ScenarioSpec,
    config: TestConfig = TestConfig(),
    reps: int = 500,
    alphas=(0.01, 0.05, 0.10),
) -> StudyResult:
    """reps independent generate-then-test runs under one configuration."""
    if reps < 1:
        raise ValueError("need at least one replicate")
    master = np.random.SeedSequence(spec.seed)
    t0 = time.perf_counter()
    p, pc, bs = [], [], []
    for child in master.spawn(reps):
        report = _run_one(spec, config, child)
        p.append(report.p_value)
        pc.append(report.corrected_p)
        bs.append(report.b_n)
    return _aggregate(p, pc, bs, alphas, time.perf_counter() - t0)


def run_power(
    grid,
    config: TestConfig = TestConfig(),
    reps: int = 500,
    alphas=(0.01, 0.05, 0.10),
) -> list[PowerRow]:
    """One calibration study per grid point, as table rows."""
    return [PowerRow(spec=s, result=run_calibration(s, config, reps, alphas))
            for s in grid]


def write_study_csv(path: str, result: StudyResult) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["replicate", "p_value", "corrected_p", "b_n"])
        for i in range(result.reps):
            writer.writerow([
                i + 1,
                repr(float(result.p_values[i])),
                repr(float(result.corrected_p[i])),
                int(result.b_n[i]),
            ])


def study_summary(result: StudyResult) -> dict:
    return {
        "reps": result.reps,
        "rejection": {f"{a:g}": r for a, r in result.rejection.items()},
        "mean_b_n": float(np.mean(result.b_n)),
        "seconds": result.seconds,
    }
