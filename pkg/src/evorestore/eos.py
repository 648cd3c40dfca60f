"""Evolutionary search over the loss-weight simplex, run against a frozen model.

Every `trigger_interval` training iterations the trainer freezes the model and
runs a tiny generational search over convex weight pairs (alpha, beta):
evaluate the population on fixed validation pairs, keep the top-k elites,
refill by convex crossover of elite parents plus Gaussian mutation, project
back onto the simplex. Fitness is the negated mean weighted validation loss,
so it is affine in (alpha, beta) for a frozen model, and elitism plus fully
deterministic evaluation makes the per-generation best fitness non-decreasing.

A search with G generations evaluates G populations (P*G fitness evaluations)
and rebuilds offspring between consecutive evaluated generations; the winner
is the argmax of the final evaluated generation (= global argmax, ties broken
toward the lower candidate index).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericIntegrityError
from .fmm import FmmParams, fmm_forward
from .losses import (
    DEFAULT_CHARBONNIER_EPS,
    MsSsimConfig,
    WeightPair,
    charbonnier,
    ms_ssim_value,
)
from .util import parallel_map

__all__ = [
    "WeightPair",
    "EosConfig",
    "CandidateRecord",
    "EosTrace",
    "OverheadReport",
    "project_simplex",
    "sample_simplex",
    "val_losses",
    "evaluate_fitness",
    "run_eos",
    "eos_overhead_report",
    "write_trace_csv",
    "write_summary_csv",
]


def project_simplex(alpha: float, beta: float) -> WeightPair:
    """Euclidean projection of (alpha, beta) onto the 2-simplex.

    Closed form for two coordinates: shift both by (1 - alpha - beta) / 2;
    if either coordinate goes negative, clamp it to 0 and give the other 1.
    The second coordinate is recomputed as 1 - alpha so the sum invariant
    holds exactly in floating point, not just to rounding error.
    """
    if not (np.isfinite(alpha) and np.isfinite(beta)):
        raise NumericIntegrityError(f"cannot project non-finite pair ({alpha}, {beta})")
    shift = (1.0 - alpha - beta) / 2.0
    a = alpha + shift
    b = beta + shift
    if a < 0.0:
        return WeightPair(0.0, 1.0)
    if b < 0.0:
        return WeightPair(1.0, 0.0)
    return WeightPair(a, 1.0 - a)


def sample_simplex(rng: np.random.Generator) -> WeightPair:
    """Uniform draw on the segment alpha + beta = 1, alpha in [0, 1]."""
    a = float(rng.random())
    return WeightPair(a, 1.0 - a)


@dataclass(frozen=True)
class EosConfig:
    population: int = 5
    generations: int = 3
    elites: int = 2
    mutation_sigma: float = 0.05
    trigger_interval: int = 500
    seed: int = 0

    def validate(self) -> None:
        if self.population < 1:
            raise ConfigError(f"population must be >= 1, got {self.population}")
        if self.generations < 1:
            raise ConfigError(f"generations must be >= 1, got {self.generations}")
        if not 1 <= self.elites <= self.population:
            raise ConfigError(
                f"elites must be in 1..population({self.population}), got {self.elites}"
            )
        if self.mutation_sigma < 0:
            raise ConfigError(f"mutation_sigma must be >= 0, got {self.mutation_sigma}")
        if self.trigger_interval < 1:
            raise ConfigError(
                f"trigger_interval must be >= 1, got {self.trigger_interval}"
            )


@dataclass
class CandidateRecord:
    generation: int
    candidate: int
    alpha: float
    beta: float
    fitness: float
    is_elite: bool
    is_winner: bool


@dataclass
class EosTrace:
    trigger_index: int
    best_per_generation: list
    winner: WeightPair
    evaluations: int
    eval_wall_ms: float
    total_wall_ms: float
    records: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# Fitness
# ---------------------------------------------------------------------------


def val_losses(
    params: FmmParams,
    val_set,
    eps: float = DEFAULT_CHARBONNIER_EPS,
    ms_cfg: MsSsimConfig | None = None,
    workers: int = 1,
):
    """Mean (fidelity, perceptual) over (degraded, clean) validation pairs.

    The restorations depend only on the frozen model, never on the candidate
    weights, so one pass suffices for a whole search trigger.
    """
    val_set = list(val_set)
    if not val_set:
        raise ConfigError("validation set is empty")

    def one(pair):
        degraded, clean = pair
        y = fmm_forward(degraded, params).y_hat
        cfg = ms_cfg if ms_cfg is not None else MsSsimConfig.for_shape(*clean.shape)
        fid, _ = charbonnier(y, clean, eps)
        return fid, 1.0 - ms_ssim_value(y, clean, cfg)

    results = parallel_map(one, val_set, workers)
    mean_fid = sum(r[0] for r in results) / len(results)
    mean_perc = sum(r[1] for r in results) / len(results)
    return mean_fid, mean_perc


def _fitness(candidate: WeightPair, mean_fid: float, mean_perc: float) -> float:
    return -(candidate.alpha * mean_fid + candidate.beta * mean_perc)


def evaluate_fitness(
    candidate: WeightPair,
    params: FmmParams,
    val_set,
    eps: float = DEFAULT_CHARBONNIER_EPS,
    ms_cfg: MsSsimConfig | None = None,
    workers: int = 1,
) -> float:
    """Negated mean weighted validation loss of `candidate` under a frozen model.

    Affine in (alpha, beta); deterministic and bit-identical for identical
    inputs (no randomness anywhere in the evaluation path).
    """
    mean_fid, mean_perc = val_losses(params, val_set, eps, ms_cfg, workers)
    return _fitness(candidate, mean_fid, mean_perc)


# ---------------------------------------------------------------------------
# Search
# ---------------------------------------------------------------------------


def run_eos(
    params: FmmParams,
    val_set,
    cfg: EosConfig,
    init=(),
    *,
    trigger_index: int = 0,
    eps: float = DEFAULT_CHARBONNIER_EPS,
    ms_cfg: MsSsimConfig | None = None,
    workers: int = 1,
):
    """One full search trigger; returns (winner, EosTrace).

    `init` may hold up to `population` starting candidates (already on the
    simplex); the remainder is topped up with seeded-uniform simplex draws.
    The model is read-only throughout. Deterministic given cfg.seed.
    """
    cfg.validate()
    init = list(init)
    if len(init) > cfg.population:
        raise ConfigError(
            f"init has {len(init)} candidates, population is {cfg.population}"
        )
    for c in init:
        if not (np.isfinite(c.alpha) and np.isfinite(c.beta)):
            raise NumericIntegrityError(f"non-finite init candidate {c}")

    t_total = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    pop = list(init) + [
        sample_simplex(rng) for _ in range(cfg.population - len(init))
    ]

    eval_ms = 0.0
    t0 = time.perf_counter()
    mean_fid, mean_perc = val_losses(params, val_set, eps, ms_cfg, workers)
    eval_ms += (time.perf_counter() - t0) * 1e3

    records: list[CandidateRecord] = []
    best_per_generation: list[float] = []
    order = None
    for g in range(cfg.generations):
        t0 = time.perf_counter()
        fits = [_fitness(c, mean_fid, mean_perc) for c in pop]
        eval_ms += (time.perf_counter() - t0) * 1e3

        order = sorted(range(len(pop)), key=lambda i: (-fits[i], i))
        elite_idx = set(order[: cfg.elites])
        best_per_generation.append(fits[order[0]])
        for i, (c, f) in enumerate(zip(pop, fits)):
            records.append(
                CandidateRecord(g, i, c.alpha, c.beta, f, i in elite_idx, False)
            )

        if g < cfg.generations - 1:
            elites = [pop[i] for i in order[: cfg.elites]]
            children = list(elites)
            while len(children) < cfg.population:
                pa = elites[int(rng.integers(len(elites)))]
                pb = elites[int(rng.integers(len(elites)))]
                lam = float(rng.random())
                a = lam * pa.alpha + (1.0 - lam) * pb.alpha
                b = lam * pa.beta + (1.0 - lam) * pb.beta
                if cfg.mutation_sigma > 0:
                    e = rng.normal(0.0, cfg.mutation_sigma, size=2)
                    a += e[0]
                    b += e[1]
                children.append(project_simplex(a, b))
            pop = children

    winner_idx = order[0]
    winner = pop[winner_idx]
    # flag the winning record of the final evaluated generation
    for rec in records:
        if rec.generation == cfg.generations - 1 and rec.candidate == winner_idx:
            rec.is_winner = True

    if any(b2 < b1 for b1, b2 in zip(best_per_generation, best_per_generation[1:])):
        raise NumericIntegrityError(
            f"best fitness decreased across generations: {best_per_generation}"
        )

    total_ms = (time.perf_counter() - t_total) * 1e3
    trace = EosTrace(
        trigger_index=trigger_index,
        best_per_generation=best_per_generation,
        winner=winner,
        evaluations=cfg.population * cfg.generations,
        eval_wall_ms=eval_ms,
        total_wall_ms=total_ms,
        records=records,
    )
    return winner, trace


# ---------------------------------------------------------------------------
# Reporting
# ---------------------------------------------------------------------------


@dataclass
class OverheadReport:
    triggers: int
    evaluations: int
    eval_ms: float
    residual_ms: float
    total_ms: float
    epoch_ms: float
    pct_of_epoch: float


def eos_overhead_report(traces, epoch_wall_ms: float) -> OverheadReport:
    """Aggregate wall-clock accounting; eval_ms + residual_ms == total_ms exactly."""
    traces = list(traces)
    total = sum(t.total_wall_ms for t in traces)
    eval_ms = sum(t.eval_wall_ms for t in traces)
    return OverheadReport(
        triggers=len(traces),
        evaluations=sum(t.evaluations for t in traces),
        eval_ms=eval_ms,
        residual_ms=total - eval_ms,
        total_ms=total,
        epoch_ms=epoch_wall_ms,
        pct_of_epoch=(100.0 * total / epoch_wall_ms) if epoch_wall_ms > 0 else 0.0,
    )


TRACE_HEADER = (
    "trigger",
    "generation",
    "candidate",
    "alpha",
    "beta",
    "fitness",
    "is_elite",
    "is_winner",
)
SUMMARY_HEADER = (
    "trigger",
    "winner_alpha",
    "winner_beta",
    "eval_ms",
    "total_ms",
    "evaluations",
)


def write_trace_csv(path, traces) -> None:
    from .util import write_csv

    rows = []
    for t in traces:
        for r in t.records:
            rows.append(
                (
                    t.trigger_index,
                    r.generation,
                    r.candidate,
                    r.alpha,
                    r.beta,
                    r.fitness,
                    r.is_elite,
                    r.is_winner,
                )
            )
    write_csv(path, TRACE_HEADER, rows)


def write_summary_csv(path, traces) -> None:
    from .util import write_csv

    rows = [
        (
            t.trigger_index,
            t.winner.alpha,
            t.winner.beta,
            t.eval_wall_ms,
            t.total_wall_ms,
            t.evaluations,
        )
        for t in traces
    ]
    write_csv(path, SUMMARY_HEADER, rows)
