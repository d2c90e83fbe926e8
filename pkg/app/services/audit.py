"""Audit orchestration: trials, per-epsilon summaries, certificates and MSE sweeps."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from app.config import get_settings
from app.errors import DegenerateAuditError, DomainError
from app.models.distribution import Distribution
from app.models.estimator import EstimatorConfig, SplitMode
from app.models.mechanism import MechanismSpec, QueryDatabasePair, Side
from app.models.report import BACKWARD, FORWARD, AuditRecord, AuditReport, Certificate
from app.services import divergence
from app.services.estimators import estimate, estimate_knownP, plugin_estimate
from app.services.mechanisms import DEFAULT_BIN_WIDTH, MechanismSource, dictionary_for, validate_pair
from app.services.poly_cache import get_poly_table
from app.services.sampling import (
    DistributionSource,
    EmpiricalHistogram,
    Seed,
    as_seed_sequence,
    spawn_seeds,
    split_samples,
    union_symbols,
)

logger = logging.getLogger(__name__)

MSE_COLUMNS = ["n", "mse_plugin", "mse_alg2", "se_plugin", "se_alg2"]
KNOWN_P_COLUMNS = ["mse_alg1", "se_alg1"]


def default_eps_grid(points: int = 21, upper: float = 1.0) -> List[float]:
    return [float(x) for x in np.linspace(0.0, upper, points)]


def standard_error(values: Sequence[float]) -> float:
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        return 0.0
    return float(np.std(values, ddof=1) / math.sqrt(values.size))


def jackknife_se(values: Sequence[float]) -> float:
    """Leave-one-out standard error of the mean of ``values``."""
    values = np.asarray(values, dtype=float)
    size = values.size
    if size < 2:
        return 0.0
    loo = (values.sum() - values) / (size - 1)
    return float(math.sqrt((size - 1) / size * np.sum((loo - loo.mean()) ** 2)))


def _run_tasks(func: Callable, tasks: List[tuple], jobs: Optional[int]) -> list:
    if jobs is not None and jobs <= 1 or len(tasks) <= 1:
        return [func(*task) for task in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(func, *zip(*tasks)))


def _base_config(config: EstimatorConfig, epsilon: float, n: float) -> EstimatorConfig:
    return EstimatorConfig(
        epsilon=epsilon,
        n=n,
        c1=config.c1,
        c2=config.c2,
        c3=config.c3,
        split_mode=config.split_mode,
    )


def _warm_table(config: EstimatorConfig) -> None:
    table = get_poly_table()
    table.abs_approx(config.degree)
    table.h2k(config.degree)


# ---- Mechanism audits ----------------------------------------------------------


@dataclass
class TrialResult:
    category_index: int
    trial: int
    forward: List[float]
    backward: List[float]
    claimed_forward: float
    claimed_backward: float
    rate_n: float
    d_counts: Dict[int, int]
    dprime_counts: Dict[int, int]
    descriptions: Dict[int, str]


def audit_trial(
    spec: MechanismSpec,
    pair: QueryDatabasePair,
    category_index: int,
    trial: int,
    seed: Seed,
    eps_grid: Sequence[float],
    config: EstimatorConfig,
    bin_width: float,
) -> TrialResult:
    """One trial on one category: sample both sides, estimate both directions."""
    dictionary = dictionary_for(spec, pair, bin_width)
    seed_d, seed_dprime = spawn_seeds(seed, 2)
    parts = 2 if config.split_mode is SplitMode.SPLIT else 1
    split_d = split_samples(MechanismSource(spec, pair, Side.D, dictionary), config.n, parts, seed_d)
    split_dprime = split_samples(MechanismSource(spec, pair, Side.DPRIME, dictionary), config.n, parts, seed_dprime)
    if len(dictionary) == 0:
        raise DegenerateAuditError(f"{spec.label} on '{pair.category}' produced no outputs")

    table = get_poly_table()
    forward = [estimate(split_d, split_dprime, config.at_epsilon(e), table) for e in eps_grid]
    backward = [estimate(split_dprime, split_d, config.at_epsilon(e), table) for e in eps_grid]
    claimed = config.at_epsilon(spec.epsilon0)
    use_split = config.split_mode is SplitMode.SPLIT
    d_hist = split_d.roles(use_split)[1]
    dprime_hist = split_dprime.roles(use_split)[1]
    return TrialResult(
        category_index=category_index,
        trial=trial,
        forward=forward,
        backward=backward,
        claimed_forward=estimate(split_d, split_dprime, claimed, table),
        claimed_backward=estimate(split_dprime, split_d, claimed, table),
        rate_n=config.n,
        d_counts=dict(d_hist.counts),
        dprime_counts=dict(dprime_hist.counts),
        descriptions={symbol: dictionary.describe(symbol) for symbol in range(len(dictionary))},
    )


def certificate_margin(certificate: Certificate) -> float:
    """Recompute P_hat(T) - e^eps Q_hat(T) - delta from the stored histograms."""
    p_hat = EmpiricalHistogram(certificate.p_counts, certificate.rate_n)
    q_hat = EmpiricalHistogram(certificate.q_counts, certificate.rate_n)
    symbols = union_symbols([p_hat, q_hat])
    positions = np.searchsorted(symbols, certificate.symbols)
    gap = divergence.set_margin(p_hat.as_vector(symbols), q_hat.as_vector(symbols), certificate.epsilon, positions)
    return gap - certificate.delta


def _pooled_counts(
    results: Sequence[TrialResult], direction: str
) -> Tuple[Dict[int, int], Dict[int, int], List[str]]:
    """Sum the estimation histograms of ``results`` over trials.

    Each trial interns its own symbol ids, so outputs are matched through their
    descriptions and renumbered in order of first appearance.
    """
    ids: Dict[str, int] = {}
    p_counts: Dict[int, int] = {}
    q_counts: Dict[int, int] = {}
    for result in results:
        p_side, q_side = (
            (result.d_counts, result.dprime_counts) if direction == FORWARD else (result.dprime_counts, result.d_counts)
        )
        for source, target in ((p_side, p_counts), (q_side, q_counts)):
            for symbol, count in source.items():
                pooled = ids.setdefault(result.descriptions.get(symbol, str(symbol)), len(ids))
                target[pooled] = target.get(pooled, 0) + int(count)
    return p_counts, q_counts, list(ids)


def _certificate(
    spec: MechanismSpec,
    pairs: Sequence[QueryDatabasePair],
    results: Sequence[TrialResult],
    claimed: AuditRecord,
    tolerance: float,
) -> Optional[Certificate]:
    """Certificate set for the worst category and direction, read off its pooled histograms.

    Only issued when the mean estimate at epsilon0 is itself a violation.
    """
    if not claimed.exceeds(spec.claimed_delta, tolerance):
        return None
    index = next(i for i, pair in enumerate(pairs) if pair.category == claimed.category)
    mine = [r for r in results if r.category_index == index]
    p_counts, q_counts, descriptions = _pooled_counts(mine, claimed.direction)
    rate_n = math.fsum(r.rate_n for r in mine)
    p_hat = EmpiricalHistogram(p_counts, rate_n)
    q_hat = EmpiricalHistogram(q_counts, rate_n)
    symbols = union_symbols([p_hat, q_hat])
    positions = divergence.certificate_set(p_hat.as_vector(symbols), q_hat.as_vector(symbols), spec.epsilon0)
    chosen = sorted(int(symbols[i]) for i in positions)
    certificate = Certificate(
        epsilon=spec.epsilon0,
        delta=spec.claimed_delta,
        category=claimed.category,
        direction=claimed.direction,
        trials=len(mine),
        symbols=chosen,
        raw_outputs=[descriptions[s] for s in chosen],
        margin=0.0,
        rate_n=rate_n,
        p_counts=p_counts,
        q_counts=q_counts,
    )
    margin = certificate_margin(certificate)
    if not chosen or margin <= 0:
        logger.warning("%s: violation without a positive-margin certificate set", spec.label)
        return None
    return certificate.model_copy(update={"margin": margin})


def _summarise(
    values: np.ndarray, epsilon: float, n: float, category: str, direction: str
) -> AuditRecord:
    return AuditRecord(
        epsilon=epsilon,
        delta_hat=float(np.mean(values)),
        stderr=standard_error(values),
        trials=int(values.size),
        n=n,
        category=category,
        direction=direction,
    )


def _max_record(records: Sequence[AuditRecord]) -> AuditRecord:
    best = records[0]
    for record in records[1:]:
        if record.delta_hat > best.delta_hat:
            best = record
    return best


def _monotonicity_flags(records: Sequence[AuditRecord]) -> List[float]:
    flags = []
    for prev, cur in zip(records, records[1:]):
        if cur.delta_hat > prev.delta_hat + 2.0 * max(prev.stderr, cur.stderr):
            logger.warning(
                "delta_hat rises from %.4f at eps=%.3f to %.4f at eps=%.3f",
                prev.delta_hat,
                prev.epsilon,
                cur.delta_hat,
                cur.epsilon,
            )
            flags.append(cur.epsilon)
    return flags


def run_audit(
    spec: MechanismSpec,
    pairs: Sequence[QueryDatabasePair],
    eps_grid: Sequence[float],
    n: float,
    trials: int,
    seed: int,
    config: EstimatorConfig,
    *,
    jobs: Optional[int] = 1,
    bin_width: float = DEFAULT_BIN_WIDTH,
    mechanism_id: Optional[str] = None,
    violation_tolerance: Optional[float] = None,
) -> AuditReport:
    """Estimate delta_hat(eps) for ``spec`` over ``pairs``, both directions, mean over trials."""
    if violation_tolerance is None:
        violation_tolerance = get_settings().violation_tolerance
    if trials < 1:
        raise DomainError(f"trials must be at least 1, got {trials}")
    grid = sorted({float(e) for e in eps_grid})
    if not grid or grid[0] < 0:
        raise DomainError("eps_grid must be non-empty and non-negative")
    if not pairs:
        raise DomainError("at least one database pair is required")
    for pair in pairs:
        validate_pair(spec, pair)
    base = _base_config(config, spec.epsilon0, n)
    _warm_table(base)

    category_seeds = spawn_seeds(as_seed_sequence(seed), len(pairs))
    tasks = []
    for index, pair in enumerate(pairs):
        for trial, trial_seed in enumerate(spawn_seeds(category_seeds[index], trials)):
            tasks.append((spec, pair, index, trial, trial_seed, grid, base, bin_width))
    results: List[TrialResult] = _run_tasks(audit_trial, tasks, jobs)

    category_records: List[AuditRecord] = []
    claimed_records: List[AuditRecord] = []
    for index, pair in enumerate(pairs):
        mine = [r for r in results if r.category_index == index]
        for direction, pick, claimed_pick in (
            (FORWARD, lambda r: r.forward, lambda r: r.claimed_forward),
            (BACKWARD, lambda r: r.backward, lambda r: r.claimed_backward),
        ):
            matrix = np.array([pick(r) for r in mine])
            for k, epsilon in enumerate(grid):
                category_records.append(_summarise(matrix[:, k], epsilon, n, pair.category, direction))
            claimed_values = np.array([claimed_pick(r) for r in mine])
            claimed_records.append(_summarise(claimed_values, spec.epsilon0, n, pair.category, direction))

    records = [
        _max_record([r for r in category_records if r.epsilon == epsilon]) for epsilon in grid
    ]
    claimed = _max_record(claimed_records)
    report = AuditReport(
        mechanism=mechanism_id or spec.label,
        spec=spec,
        config=base,
        n=n,
        trials=trials,
        seed=seed,
        records=records,
        category_records=category_records,
        claimed=claimed,
        certificate=_certificate(spec, pairs, results, claimed, violation_tolerance),
        monotonicity_flags=_monotonicity_flags(records),
    )
    logger.info(
        "%s: delta_hat(%.3f) = %.4f (+/- %.4f) from %s",
        report.mechanism,
        spec.epsilon0,
        report.claimed.delta_hat,
        report.claimed.stderr,
        report.claimed.category,
    )
    return report


def write_report_csv(report: AuditReport, path: Path) -> int:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = report.to_frame()
    frame.to_csv(path, index=False)
    return len(frame)


def write_category_csv(report: AuditReport, path: Path) -> int:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = report.category_frame()
    frame.to_csv(path, index=False)
    return len(frame)


def write_certificate(report: AuditReport, path: Path) -> bool:
    """Companion file with the certificate set; returns False when there is none."""
    path.parent.mkdir(parents=True, exist_ok=True)
    certificate = report.certificate
    if certificate is None:
        path.write_text(f"# no certificate: delta_hat({report.spec.epsilon0}) within the claim\n", encoding="utf-8")
        return False
    lines = [
        f"mechanism={report.mechanism}",
        f"epsilon={certificate.epsilon!r}",
        f"delta={certificate.delta!r}",
        f"category={certificate.category}",
        f"direction={certificate.direction}",
        f"trials={certificate.trials}",
        f"margin={certificate.margin!r}",
        "symbol_id,raw_output",
    ]
    lines.extend(f"{s},{raw}" for s, raw in zip(certificate.symbols, certificate.raw_outputs))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return True


# ---- Synthetic MSE sweeps ------------------------------------------------------


def synthetic_trial(
    P: Distribution,
    Q: Distribution,
    config: EstimatorConfig,
    seed: Seed,
    include_known_p: bool,
) -> Tuple[float, float, float]:
    """(plug-in, Algorithm 2, Algorithm 1 or nan) for one trial."""
    seed_p, seed_q = spawn_seeds(seed, 2)
    use_split = config.split_mode is SplitMode.SPLIT
    parts = 2 if use_split else 1
    p_split = split_samples(DistributionSource(P), config.n, parts, seed_p)
    q_split = split_samples(DistributionSource(Q), config.n, parts, seed_q)
    table = get_poly_table()
    plugin = plugin_estimate(p_split.roles(use_split)[1], q_split.roles(use_split)[1], config.epsilon)
    two_sample = estimate(p_split, q_split, config, table)
    known = estimate_knownP(P, q_split, config, table) if include_known_p else float("nan")
    return plugin, two_sample, known


def synthetic_mse(
    P: Distribution,
    Q: Distribution,
    eps: float,
    n_grid: Sequence[float],
    trials: int,
    seed: int,
    config: EstimatorConfig,
    *,
    jobs: Optional[int] = 1,
    include_known_p: bool = False,
) -> pd.DataFrame:
    """MSE of each estimator against the exact d_eps(P||Q) for every n in ``n_grid``."""
    if trials < 1:
        raise DomainError(f"trials must be at least 1, got {trials}")
    if not n_grid:
        raise DomainError("n_grid must not be empty")
    truth = divergence.d_eps(P, Q, eps)
    n_seeds = spawn_seeds(as_seed_sequence(seed), len(n_grid))
    rows = []
    for n, n_seed in zip(n_grid, n_seeds):
        cfg = _base_config(config, eps, float(n))
        _warm_table(cfg)
        tasks = [(P, Q, cfg, s, include_known_p) for s in spawn_seeds(n_seed, trials)]
        outcomes = np.array(_run_tasks(synthetic_trial, tasks, jobs), dtype=float)
        errors = (outcomes - truth) ** 2
        row = {
            "n": float(n),
            "mse_plugin": float(errors[:, 0].mean()),
            "mse_alg2": float(errors[:, 1].mean()),
            "se_plugin": jackknife_se(errors[:, 0]),
            "se_alg2": jackknife_se(errors[:, 1]),
        }
        if include_known_p:
            row["mse_alg1"] = float(errors[:, 2].mean())
            row["se_alg1"] = jackknife_se(errors[:, 2])
        logger.info("n=%g: plug-in %.3e, alg2 %.3e (truth %.4f)", n, row["mse_plugin"], row["mse_alg2"], truth)
        rows.append(row)
    columns = MSE_COLUMNS + (KNOWN_P_COLUMNS if include_known_p else [])
    return pd.DataFrame(rows, columns=columns)
