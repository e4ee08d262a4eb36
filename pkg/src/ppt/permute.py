"""Partial permutation engine: keep the response's projections onto the
leading kernel eigenvectors fixed, resample the trailing ones, and compute
the Monte-Carlo p-value.

Discrete mode permutes the trailing coordinates as a multiset; continuous
mode redraws them uniformly from the sphere that preserves their squared
norm. Replicate randomness is split from the master seed per replicate, so
results do not depend on evaluation order or worker count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import permutations as _iter_permutations

import numpy as np

from .dataset import Dataset
from .numerics import EigenSystem

DEFAULT_N_PERM = 999

# exhaustive enumeration threshold: tail length whose factorial stays small
EXHAUSTIVE_MAX_B = 5
EXHAUSTIVE_MAX_PERMS = 120


@dataclass(frozen=True)
class PermutationPlan:
    """How to resample: tail length b_n, mode, Monte-Carlo draw count, seed.

    seed None draws fresh entropy; the seed actually used is recorded in
    the report either way.
    """

    b_n: int
    mode: str = "discrete"
    n_perm: int = DEFAULT_N_PERM
    seed: int | None = None

    def __post_init__(self):
        if self.mode not in ("discrete", "continuous"):
            raise ValueError(f"mode must be discrete or continuous, not {self.mode!r}")
        if self.b_n < 0:
            raise ValueError("permutation size b_n must be >= 0")
        if self.n_perm < 1:
            raise ValueError("need at least one permutation draw")


@dataclass(frozen=True)
class TestReport:
    """Everything one test run produced; correction fields are filled by the
    pipeline when a correction is requested."""

    t_obs: float
    t_perm: np.ndarray
    p_value: float
    b_n: int
    mode: str
    n_perm: int
    seed: object
    exhaustive: bool = False
    correction: float | None = None
    alpha0: float | None = None
    corrected_p: float | None = None
    kernel: object = None
    nuisance: object = None
    warnings: tuple[str, ...] = field(default=())


def project_responses(es: EigenSystem, y: np.ndarray) -> np.ndarray:
    """Coordinates of y in the eigenvector basis (an isometry)."""
    y = np.asarray(y, dtype=float).ravel()
    if y.shape[0] != es.n:
        raise ValueError("response length does not match the eigen system")
    return es.gamma.T @ y


def sample_discrete(w: np.ndarray, b_n: int, rng: np.random.Generator) -> np.ndarray:
    """Permute the last b_n entries of w uniformly; the rest stay put."""
    w = np.asarray(w, dtype=float)
    _check_b(w.shape[0], b_n)
    if b_n <= 1:
        return w.copy()
    out = w.copy()
    tail = out[-b_n:]
    out[-b_n:] = tail[rng.permutation(b_n)]
    return out


def sample_continuous(w: np.ndarray, b_n: int, rng: np.random.Generator) -> np.ndarray:
    """Redraw the last b_n entries uniformly on the sphere of their norm."""
    w = np.asarray(w, dtype=float)
    _check_b(w.shape[0], b_n)
    out = w.copy()
    if b_n == 0:
        return out
    r2 = float(np.sum(out[-b_n:] ** 2))
    if r2 == 0.0:
        out[-b_n:] = 0.0
        return out
    g = rng.standard_normal(b_n)
    out[-b_n:] = g * (math.sqrt(r2) / float(np.linalg.norm(g)))
    return out


def _check_b(n: int, b_n: int) -> None:
    if not 0 <= b_n <= n:
        raise ValueError(f"b_n must lie in [0, {n}], got {b_n}")


def _tail_matrix(
    w: np.ndarray, b_n: int, mode: str, n_draws: int, seed_seq: np.random.SeedSequence
) -> np.ndarray:
    """(b_n, n_draws) matrix of resampled tails, one spawned stream each."""
    tail = w[-b_n:]
    out = np.empty((b_n, n_draws))
    children = seed_seq.spawn(n_draws)
    if mode == "discrete":
        for j, child in enumerate(children):
            rng = np.random.Generator(np.random.PCG64(child))
            out[:, j] = tail[rng.permutation(b_n)]
        return out
    r = float(np.linalg.norm(tail))
    if r == 0.0:
        out[:] = 0.0
        return out
    for j, child in enumerate(children):
        rng = np.random.Generator(np.random.PCG64(child))
        g = rng.standard_normal(b_n)
        out[:, j] = g * (r / float(np.linalg.norm(g)))
    return out


def _exhaustive_tails(w: np.ndarray, b_n: int) -> np.ndarray:
    """All b_n! tail orderings except the identity, one per column."""
    tail = w[-b_n:]
    cols = [
        tail[list(p)]
        for p in _iter_permutations(range(b_n))
        if p != tuple(range(b_n))
    ]
    return np.column_stack(cols) if cols else np.empty((b_n, 0))


def run_test(ds: Dataset, es: EigenSystem, plan: PermutationPlan, stat) -> TestReport:
    """Run one partial permutation test.

    stat is a pure callback T(X, y, Z) -> real; if it provides a .batch
    method taking (X, Y-columns, Z) it is used to evaluate all resampled
    responses at once. The Monte-Carlo p-value is the add-one estimator; for
    short discrete tails every permutation is enumerated instead and the
    identity permutation counts as a tie by construction.
    """
    n = ds.n
    if es.n != n:
        raise ValueError("eigen system size does not match the dataset")
    _check_b(n, plan.b_n)
    t_obs = float(stat(ds.x, ds.y, ds.z))
    if not math.isfinite(t_obs):
        raise ValueError("statistic returned a non-finite value on the observed data")

    seed_seq = (
        np.random.SeedSequence(plan.seed)
        if plan.seed is not None
        else np.random.SeedSequence()
    )
    seed_used = plan.seed if plan.seed is not None else seed_seq.entropy

    if plan.b_n == 0:
        return TestReport(
            t_obs=t_obs, t_perm=np.empty(0), p_value=1.0, b_n=0,
            mode=plan.mode, n_perm=0, seed=seed_used,
            warnings=("permutation size 0: nothing is resampled, p-value forced to 1",),
        )

    w = project_responses(es, ds.y)
    exhaustive = (
        plan.mode == "discrete"
        and plan.b_n <= EXHAUSTIVE_MAX_B
        and math.factorial(plan.b_n) <= EXHAUSTIVE_MAX_PERMS
    )
    if exhaustive:
        tails = _exhaustive_tails(w, plan.b_n)
    else:
        tails = _tail_matrix(w, plan.b_n, plan.mode, plan.n_perm, seed_seq)

    n_draws = tails.shape[1]
    wp = np.repeat(w[:, None], n_draws, axis=1)
    wp[n - plan.b_n:, :] = tails
    yp = es.gamma @ wp

    if hasattr(stat, "batch") and n_draws > 0:
        t_perm = np.asarray(stat.batch(ds.x, yp, ds.z), dtype=float).ravel()
        if t_perm.shape[0] != n_draws:
            raise ValueError("batch statistic returned the wrong number of values")
    else:
        t_perm = np.empty(n_draws)
        for j in range(n_draws):
            t_perm[j] = float(stat(ds.x, yp[:, j], ds.z))
    bad = np.flatnonzero(~np.isfinite(t_perm))
    if bad.size:
        raise ValueError(
            f"statistic returned a non-finite value on permutation replicate {bad[0] + 1}"
        )

    ties = int(np.sum(t_perm >= t_obs))
    if exhaustive:
        total = math.factorial(plan.b_n)
        p = (1 + ties) / total  # identity permutation is a tie by construction
    else:
        p = (1 + ties) / (n_draws + 1)
    return TestReport(
        t_obs=t_obs, t_perm=t_perm, p_value=float(p), b_n=plan.b_n,
        mode=plan.mode, n_perm=n_draws, seed=seed_used, exhaustive=exhaustive,
    )
