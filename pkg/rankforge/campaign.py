"""
Monte Carlo campaigns

Runs every configured rank test on replicated simulation samples and
aggregates rejection frequencies into a table with one row per (n, m) and
one column per statistic/method, plus the data behind the null-law and
quantile-accuracy figures.
"""
import logging
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, TypeVar, Union

import numpy as np
import pandas as pd

import rankforge
from rankforge import asymptotics, settings
from rankforge.asymptotics import QuantileMethod
from rankforge.constants import (
    DEFAULT_ALPHA,
    DEFAULT_H,
    DEFAULT_P,
    DEFAULT_WEIGHT_LAW,
    FLOAT_FORMAT,
    MAX_CELL_FAILURE_RATE,
)
from rankforge.core_linalg import EstimatedMatrix, restrict_columns
from rankforge.exceptions import NUMERICAL_ERRORS, BootstrapUnstable, CampaignFailure, DegenerateSlicing
from rankforge.random_streams import derive_seed
from rankforge.rank_testing import Lambda1Variant, RankTestSpec, TestMethod, run_test
from rankforge.schemas import COLUMNS, CampaignConfig, CampaignMetadata
from rankforge.sir import ModelSpec, WStarSampler, build_matrices, contrast_basis, generate
from rankforge.statistics import StatKind, compute

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

ABSORBED_ERRORS = NUMERICAL_ERRORS + (BootstrapUnstable, DegenerateSlicing)

COLUMN_SPECS: Dict[str, Tuple[StatKind, TestMethod, Optional[Lambda1Variant]]] = {
    "wood": (StatKind.LAMBDA1, TestMethod.ASYMPTOTIC, Lambda1Variant.WOOD),
    "rescaled": (StatKind.LAMBDA1, TestMethod.ASYMPTOTIC, Lambda1Variant.RESCALED),
    "adjusted": (StatKind.LAMBDA1, TestMethod.ASYMPTOTIC, Lambda1Variant.ADJUSTED),
    "mc": (StatKind.LAMBDA1, TestMethod.ASYMPTOTIC, Lambda1Variant.MONTE_CARLO_WEIGHTS),
    "cb_lambda1": (StatKind.LAMBDA1, TestMethod.BOOTSTRAP, None),
    "lambda2": (StatKind.LAMBDA2, TestMethod.ASYMPTOTIC, None),
    "cb_lambda2": (StatKind.LAMBDA2, TestMethod.BOOTSTRAP, None),
    "lambda3": (StatKind.LAMBDA3, TestMethod.ASYMPTOTIC, None),
    "cb_lambda3": (StatKind.LAMBDA3, TestMethod.BOOTSTRAP, None),
}

# stream codes for the figure helpers
_NULL_STREAM = 101
_BOOT_STREAM = 102
_ACCURACY_STREAM = 103


def column_code(column: str) -> int:
    return COLUMNS.index(column) + 1


@dataclass(frozen=True)
class ReplicationRecord:
    n: int
    rep: int
    m: int
    column: str
    seed: int
    statistic: float = float("nan")
    quantile: float = float("nan")
    reject: Optional[bool] = None
    error: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.error is not None


@dataclass
class CampaignTable:
    """
    Rejection frequencies indexed by (n, m)

    Each cell is rejections / successful replications; log holds one row
    per (replication, m, column).
    """
    frame: pd.DataFrame
    metadata: CampaignMetadata
    log: pd.DataFrame

    def cell(self, n: int, m: int, column: str) -> float:
        return float(self.frame.loc[(n, m), column])

    def to_csv(self, path: Union[str, Path, None] = None) -> Optional[str]:
        """Write the table (17 significant digits); returns the text when path is None."""
        return self.frame.reset_index().to_csv(path, index=False, float_format=FLOAT_FORMAT)

    def write_sidecar(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.metadata.model_dump_json(indent=2))

    def write_log(self, path: Union[str, Path]) -> None:
        self.log.to_csv(path, index=False, float_format=FLOAT_FORMAT)


def map_ordered(func: Callable[[T], R], items: Sequence[T], workers: int, label: str = "jobs") -> List[R]:
    """
    Apply func to every item, optionally on a thread pool

    Results come back in item order whatever the completion order.
    """
    items = list(items)
    results: Dict[int, R] = {}
    step = max(1, len(items) // 10)
    if workers <= 1:
        for idx, item in enumerate(items):
            results[idx] = func(item)
            if (idx + 1) % step == 0:
                logger.info("📊 %s: %d/%d done", label, idx + 1, len(items))
    else:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            future_to_index = {executor.submit(func, item): idx for idx, item in enumerate(items)}
            for done, future in enumerate(as_completed(future_to_index), start=1):
                results[future_to_index[future]] = future.result()
                if done % step == 0:
                    logger.info("📊 %s: %d/%d done", label, done, len(items))
    return [results[i] for i in range(len(items))]


def _reduced_sample(model: ModelSpec, slicing: str, weight_law: str) -> Tuple[EstimatedMatrix, WStarSampler]:
    sample = generate(model)
    if slicing != sample.slicing:
        sample = replace(sample, slicing=slicing)
    matrices, est = build_matrices(sample)
    basis = contrast_basis(model.h)
    return restrict_columns(est, basis), WStarSampler(matrices, weight_law, basis)


def column_spec(column: str, m: int, seed: int, boot_b: int, alpha: float, mc_draws: int) -> RankTestSpec:
    kind, method, variant = COLUMN_SPECS[column]
    return RankTestSpec(
        kind=kind,
        m=m,
        method=method,
        variant=variant,
        alpha=alpha,
        replicates=boot_b,
        seed=seed,
        mc_draws=mc_draws,
    )


def run_replication(cfg: CampaignConfig, n: int, rep: int) -> List[ReplicationRecord]:
    """All configured tests on one simulated sample."""
    seeds = {
        (m, col): derive_seed(cfg.master_seed, n, rep, m, column_code(col))
        for m in cfg.ranks_to_test
        for col in cfg.columns
    }
    model = ModelSpec(cfg.model, n, cfg.p, cfg.h, derive_seed(cfg.master_seed, n, rep))
    try:
        est, sampler = _reduced_sample(model, cfg.slicing, cfg.weight_law)
    except ABSORBED_ERRORS as e:
        logger.warning("⚠️  n=%d rep=%d: sample unusable (%s)", n, rep, e)
        return [ReplicationRecord(n, rep, m, col, s, error=repr(e)) for (m, col), s in seeds.items()]

    records = []
    for (m, col), seed in seeds.items():
        spec = column_spec(col, m, seed, cfg.boot_b, cfg.alpha, cfg.mc_draws)
        try:
            result = run_test(est, spec, sampler, sampler.gamma_star_rule)
        except ABSORBED_ERRORS as e:
            logger.debug("n=%d rep=%d m=%d %s failed: %s", n, rep, m, col, e)
            records.append(ReplicationRecord(n, rep, m, col, seed, error=repr(e)))
            continue
        records.append(
            ReplicationRecord(n, rep, m, col, seed, result.statistic.value, result.quantile, result.reject)
        )
    return records


def _cell_key(n: int, m: int, column: str) -> str:
    return f"n={n},m={m},{column}"


def aggregate(cfg: CampaignConfig, records: List[ReplicationRecord]) -> Tuple[pd.DataFrame, Dict[str, int], Dict[str, int]]:
    """
    Rejection frequency per (n, m, column)

    Raises:
        CampaignFailure: If a cell lost more than 2% of its replications
    """
    rejects: Dict[Tuple[int, int, str], int] = {}
    successes: Dict[Tuple[int, int, str], int] = {}
    failures: Dict[Tuple[int, int, str], int] = {}
    for rec in records:
        key = (rec.n, rec.m, rec.column)
        if rec.failed:
            failures[key] = failures.get(key, 0) + 1
        else:
            successes[key] = successes.get(key, 0) + 1
            rejects[key] = rejects.get(key, 0) + int(rec.reject)
    for key, count in sorted(failures.items()):
        if count > MAX_CELL_FAILURE_RATE * cfg.reps:
            raise CampaignFailure(key, count, cfg.reps)

    index = pd.MultiIndex.from_tuples(
        [(n, m) for n in sorted(cfg.n_values) for m in sorted(cfg.ranks_to_test)], names=["n", "m"]
    )
    frame = pd.DataFrame(index=index, columns=list(cfg.columns), dtype=float)
    for n, m in index:
        for col in cfg.columns:
            ok = successes.get((n, m, col), 0)
            frame.loc[(n, m), col] = rejects.get((n, m, col), 0) / ok if ok else float("nan")
    failure_counts = {_cell_key(*k): v for k, v in sorted(failures.items())}
    success_counts = {_cell_key(*k): v for k, v in sorted(successes.items())}
    return frame, failure_counts, success_counts


def run_campaign(cfg: CampaignConfig) -> CampaignTable:
    """
    Level/power table for a simulation model

    Results depend only on the config, never on the worker count:
    every replication and every test draws from streams keyed by
    (master_seed, n, rep[, m, column]).

    Args:
        cfg: Experimental grid; RANKFORGE_THREADS overrides cfg.parallelism

    Returns:
        CampaignTable with frequencies, metadata and the per-replication log

    Raises:
        CampaignFailure: If any cell lost more than 2% of its replications
    """
    workers = settings.threads_override() or cfg.parallelism
    jobs = [(n, rep) for n in sorted(cfg.n_values) for rep in range(cfg.reps)]
    logger.info(
        "📊 model %s: %d replications x %d tests on %d workers",
        cfg.model, len(jobs), len(cfg.ranks_to_test) * len(cfg.columns), workers,
    )
    started = time.perf_counter()
    per_job = map_ordered(lambda job: run_replication(cfg, *job), jobs, workers, label="replications")
    records = [rec for recs in per_job for rec in recs]
    frame, failures, successes = aggregate(cfg, records)
    elapsed = time.perf_counter() - started
    logger.info("✅ campaign finished in %.1fs with %d failed tests", elapsed, sum(failures.values()))
    metadata = CampaignMetadata(
        config=cfg,
        failures=failures,
        successes=successes,
        wall_time_seconds=elapsed,
        package_version=rankforge.__version__,
    )
    log = pd.DataFrame([{**asdict(r), "failed": r.failed} for r in records])
    return CampaignTable(frame=frame, metadata=metadata, log=log)


def _null_statistics(
    model_id: str, n: int, m: int, kind: StatKind, draws: int, seed: int,
    p: int, h: int, slicing: str, workers: int,
) -> np.ndarray:
    def one(i: int) -> float:
        model = ModelSpec(model_id, n, p, h, derive_seed(seed, _NULL_STREAM, i))
        try:
            est, _ = _reduced_sample(model, slicing, DEFAULT_WEIGHT_LAW)
            return compute(kind, est, m, with_weights=False).value
        except ABSORBED_ERRORS as e:
            logger.debug("null draw %d failed: %s", i, e)
            return float("nan")

    values = np.array(map_ordered(one, range(draws), workers, label="null draws"))
    return values[np.isfinite(values)]


def _asymptotic_grid(kind: StatKind, weights_or_df, draws: int, seed: int) -> np.ndarray:
    levels = (np.arange(draws) + 0.5) / draws
    if kind is StatKind.LAMBDA1:
        law = asymptotics.weighted(weights_or_df, QuantileMethod.MONTE_CARLO, seed=seed)
        return np.array([asymptotics.quantile(law, lv) for lv in levels])
    return np.array([asymptotics.chi2_quantile(weights_or_df, lv) for lv in levels])


def null_comparison(
    model_id: str = "I",
    n: int = 100,
    m: int = 1,
    kind: StatKind = StatKind.LAMBDA3,
    draws: int = 2000,
    boot_b: int = 2000,
    seed: int = 0,
    p: int = DEFAULT_P,
    h: int = DEFAULT_H,
    slicing: str = "count",
    weight_law: str = DEFAULT_WEIGHT_LAW,
    workers: int = 1,
) -> pd.DataFrame:
    """
    Null law of a statistic against its CS bootstrap and asymptotic laws

    Returns:
        Long-format frame with columns source ("null", "bootstrap",
        "asymptotic"), index and value. Asymptotic rows are quantiles at
        evenly spaced levels.
    """
    kind = StatKind(kind)
    null = _null_statistics(model_id, n, m, kind, draws, seed, p, h, slicing, workers)
    est, sampler = _reduced_sample(
        ModelSpec(model_id, n, p, h, derive_seed(seed, _BOOT_STREAM)), slicing, weight_law
    )
    spec = RankTestSpec(kind, m, TestMethod.BOOTSTRAP, replicates=boot_b, seed=derive_seed(seed, _BOOT_STREAM, 1))
    result = run_test(est, spec, sampler, sampler.gamma_star_rule)
    aux = result.statistic.weights if kind is StatKind.LAMBDA1 else result.statistic.df
    asym = _asymptotic_grid(kind, aux, draws, seed & 0xFFFFFFFF)
    parts = [
        pd.DataFrame({"source": name, "index": np.arange(vals.size), "value": vals})
        for name, vals in (("null", null), ("bootstrap", result.replicate_values), ("asymptotic", asym))
    ]
    return pd.concat(parts, ignore_index=True)


def quantile_accuracy(
    model_id: str = "I",
    n: int = 100,
    m: int = 1,
    kind: StatKind = StatKind.LAMBDA3,
    samples: int = 100,
    boot_b: int = 1000,
    null_draws: int = 5000,
    alpha: float = DEFAULT_ALPHA,
    seed: int = 0,
    p: int = DEFAULT_P,
    h: int = DEFAULT_H,
    slicing: str = "count",
    weight_law: str = DEFAULT_WEIGHT_LAW,
    workers: int = 1,
) -> pd.DataFrame:
    """
    Accuracy of CS bootstrap quantiles

    For each of `samples` independent samples, the bootstrap quantile q̂ and
    F_n(q̂), where F_n is the null distribution estimated from `null_draws`
    fresh samples. A well calibrated procedure puts F_n(q̂) near 1 - alpha.

    Returns:
        Frame with columns sample, quantile, coverage, target
    """
    kind = StatKind(kind)
    null = np.sort(_null_statistics(model_id, n, m, kind, null_draws, seed, p, h, slicing, workers))

    def one(j: int) -> Tuple[float, float]:
        spec = RankTestSpec(
            kind, m, TestMethod.BOOTSTRAP, alpha=alpha, replicates=boot_b,
            seed=derive_seed(seed, _ACCURACY_STREAM, j, 1),
        )
        try:
            est, sampler = _reduced_sample(
                ModelSpec(model_id, n, p, h, derive_seed(seed, _ACCURACY_STREAM, j)), slicing, weight_law
            )
            q = run_test(est, spec, sampler, sampler.gamma_star_rule).quantile
        except ABSORBED_ERRORS as e:
            logger.debug("accuracy sample %d failed: %s", j, e)
            return float("nan"), float("nan")
        return q, float(np.searchsorted(null, q, side="right") / null.size)

    rows = map_ordered(one, range(samples), workers, label="accuracy samples")
    frame = pd.DataFrame(rows, columns=["quantile", "coverage"])
    frame.insert(0, "sample", np.arange(samples))
    frame["target"] = 1.0 - alpha
    return frame.dropna().reset_index(drop=True)
