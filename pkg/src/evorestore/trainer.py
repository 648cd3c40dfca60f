"""Deterministic plain-GD training loop with periodic evolutionary weight triggers.

Schedule semantics (all 1-based iteration indices):

* batches are drawn by seeded epoch shuffles over the train split;
* iterations strictly after `lr_halve_at` use learning_rate / 2;
* after finishing iteration i with i % trigger_interval == 0 (and i before the
  final iteration), the model is frozen and the weight search runs; its winner
  is the active weight pair for iterations i+1 .. i+T. Trigger r uses EOS seed
  `eos.seed + r`, warm-started from the currently active pair;
* a combined batch loss above `divergence_limit` aborts with DivergenceError
  naming the iteration.

Two runs with identical configs and datasets produce bit-identical parameter
bytes and trace rows; worker parallelism never changes any output.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .degrade import PairedDataset, capped_psnr, psnr, ssim
from .errors import ConfigError, DivergenceError
from .eos import EosConfig, EosTrace, run_eos
from .fmm import (
    FmmParams,
    apply_update,
    default_params,
    fmm_backward,
    fmm_forward,
    zero_grads,
)
from .losses import (
    DEFAULT_CHARBONNIER_EPS,
    MsSsimConfig,
    WeightPair,
    charbonnier,
    combined_loss,
    ms_ssim_value,
)
from .util import parallel_map, write_csv

DIVERGENCE_LIMIT = 1e6


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 500
    learning_rate: float = 2e-4
    lr_halve_at: int | None = None
    batch_size: int = 4
    init_alpha: float = 0.8
    init_beta: float = 0.2
    eval_every: int = 50
    seed: int = 0
    checkpoint_every: int = 0  # 0 = final checkpoint only
    charbonnier_eps: float = DEFAULT_CHARBONNIER_EPS
    # model block
    mask_mode: str = "per_frequency"
    spatial_mode: str = "per_pixel"
    kernel_size: int = 5
    n_bins: int = 8
    # parameter blocks excluded from updates ("lowpass", "spectral", "spatial")
    freeze: tuple = ()
    eos: EosConfig = field(default_factory=EosConfig)

    def validate(self) -> None:
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.lr_halve_at is not None and self.lr_halve_at < 1:
            raise ConfigError(f"lr_halve_at must be >= 1, got {self.lr_halve_at}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.eval_every < 0:
            raise ConfigError(f"eval_every must be >= 0, got {self.eval_every}")
        if self.checkpoint_every < 0:
            raise ConfigError(f"checkpoint_every must be >= 0, got {self.checkpoint_every}")
        wsum = self.init_alpha + self.init_beta
        if self.init_alpha < 0 or self.init_beta < 0 or abs(wsum - 1.0) > 1e-9:
            raise ConfigError(
                f"init weights must be a convex pair, got ({self.init_alpha}, {self.init_beta})"
            )
        for name in self.freeze:
            if name not in ("lowpass", "spectral", "spatial"):
                raise ConfigError(f"unknown freeze block {name!r}")
        self.eos.validate()


@dataclass
class IterationRow:
    iteration: int
    loss_fid: float
    loss_perc: float
    loss_combined: float
    alpha: float
    beta: float
    lr: float


@dataclass
class EvalPoint:
    iteration: int
    psnr: float
    ssim: float
    loss_fid: float
    loss_perc: float


@dataclass
class TrainTrace:
    rows: list = field(default_factory=list)  # IterationRow per iteration
    evals: list = field(default_factory=list)  # EvalPoint every eval_every
    weight_timeline: list = field(default_factory=list)  # (from_iter, alpha, beta)
    eos_traces: list = field(default_factory=list)  # EosTrace per trigger
    wall_ms: float = 0.0


class _BatchSampler:
    """Seeded epoch shuffler; batch = next slice of the current permutation."""

    def __init__(self, n: int, batch_size: int, rng: np.random.Generator):
        self.n = n
        self.batch_size = min(batch_size, n)
        self.rng = rng
        self.order = rng.permutation(n)
        self.cursor = 0

    def next_batch(self):
        if self.cursor + self.batch_size > self.n:
            self.order = self.rng.permutation(self.n)
            self.cursor = 0
        sel = self.order[self.cursor : self.cursor + self.batch_size]
        self.cursor += self.batch_size
        return list(sel)


def _dataset_shape(dataset: PairedDataset):
    shapes = {r.clean.shape for r in dataset.pairs}
    if len(shapes) != 1:
        raise ConfigError(f"dataset mixes grid shapes {sorted(shapes)}")
    return next(iter(shapes))


def train(
    dataset: PairedDataset,
    cfg: TrainConfig,
    *,
    params: FmmParams | None = None,
    workers: int = 1,
):
    """Run the loop; returns (trained FmmParams, TrainTrace)."""
    cfg.validate()
    if not dataset.train_idx:
        raise ConfigError("dataset has no training pairs")
    h, w = _dataset_shape(dataset)
    if params is None:
        params = default_params(
            h,
            w,
            mask_mode=cfg.mask_mode,
            spatial_mode=cfg.spatial_mode,
            kernel_size=cfg.kernel_size,
            n_bins=cfg.n_bins,
        )
    else:
        params = params.copy()
    ms_cfg = MsSsimConfig.for_shape(h, w)
    val_set = dataset.restoration_pairs("val") if dataset.val_idx else []
    train_rows = dataset.train_pairs()

    rng = np.random.default_rng(cfg.seed)
    sampler = _BatchSampler(len(train_rows), cfg.batch_size, rng)
    active = WeightPair(cfg.init_alpha, cfg.init_beta)
    trace = TrainTrace(weight_timeline=[(1, active.alpha, active.beta)])
    t_start = time.perf_counter()
    trigger = 0

    for it in range(1, cfg.iterations + 1):
        lr = cfg.learning_rate
        if cfg.lr_halve_at is not None and it > cfg.lr_halve_at:
            lr = cfg.learning_rate / 2.0

        batch = sampler.next_batch()
        grads = zero_grads(params)
        fid_sum = perc_sum = comb_sum = 0.0
        for bi in batch:
            row = train_rows[bi]
            acts = fmm_forward(row.degraded, params)
            lv, g_out = combined_loss(
                acts.y_hat, row.clean, active, cfg.charbonnier_eps, ms_cfg
            )
            grads.scaled_add(fmm_backward(acts, params, g_out))
            fid_sum += lv.fidelity
            perc_sum += lv.perceptual
            comb_sum += lv.combined
        nb = len(batch)
        fid_m, perc_m, comb_m = fid_sum / nb, perc_sum / nb, comb_sum / nb
        if not math.isfinite(comb_m) or comb_m > DIVERGENCE_LIMIT:
            raise DivergenceError(it, comb_m)
        params = apply_update(params, grads, lr / nb, freeze=cfg.freeze)

        trace.rows.append(
            IterationRow(it, fid_m, perc_m, comb_m, active.alpha, active.beta, lr)
        )

        if cfg.eval_every and it % cfg.eval_every == 0 and val_set:
            trace.evals.append(
                _eval_point(it, params, val_set, cfg.charbonnier_eps, ms_cfg, workers)
            )

        if (
            val_set
            and it % cfg.eos.trigger_interval == 0
            and it < cfg.iterations
        ):
            trigger += 1
            eos_cfg = replace(cfg.eos, seed=cfg.eos.seed + trigger)
            winner, eos_trace = run_eos(
                params,
                val_set,
                eos_cfg,
                init=[active],
                trigger_index=trigger,
                eps=cfg.charbonnier_eps,
                ms_cfg=ms_cfg,
                workers=workers,
            )
            active = winner
            trace.eos_traces.append(eos_trace)
            trace.weight_timeline.append((it + 1, active.alpha, active.beta))

    trace.wall_ms = (time.perf_counter() - t_start) * 1e3
    return params, trace


def _eval_point(it, params, val_set, eps, ms_cfg, workers) -> EvalPoint:
    def one(pair):
        degraded, clean = pair
        y = fmm_forward(degraded, params).y_hat
        return (
            capped_psnr(y, clean),
            ssim(y, clean),
            charbonnier(y, clean, eps)[0],
            1.0 - ms_ssim_value(y, clean, ms_cfg),
        )

    vals = parallel_map(one, val_set, workers)
    n = len(vals)
    return EvalPoint(
        it,
        sum(v[0] for v in vals) / n,
        sum(v[1] for v in vals) / n,
        sum(v[2] for v in vals) / n,
        sum(v[3] for v in vals) / n,
    )


# ---------------------------------------------------------------------------
# Evaluation table
# ---------------------------------------------------------------------------


@dataclass
class MetricsRow:
    split: str
    kind: str
    count: int
    capped: int  # PSNR entries at the +inf sentinel, excluded from the mean
    psnr_mean: float
    ssim_mean: float
    fid_mean: float
    perc_mean: float


def evaluate(
    params: FmmParams,
    dataset: PairedDataset,
    split: str = "val",
    eps: float = DEFAULT_CHARBONNIER_EPS,
    workers: int = 1,
) -> list:
    """Per-kind and aggregate restoration metrics on one split."""
    idx = {"train": dataset.train_idx, "val": dataset.val_idx, "test": dataset.test_idx}
    if split not in idx:
        raise ConfigError(f"unknown split {split!r}")
    rows = [dataset.pairs[i] for i in idx[split]]
    if not rows:
        raise ConfigError(f"split {split!r} is empty")
    ms_cfg = MsSsimConfig.for_shape(*rows[0].clean.shape)

    def one(row):
        y = fmm_forward(row.degraded, params).y_hat
        return (
            row.kind,
            psnr(y, row.clean),
            ssim(y, row.clean),
            charbonnier(y, row.clean, eps)[0],
            1.0 - ms_ssim_value(y, row.clean, ms_cfg),
        )

    per_pair = parallel_map(one, rows, workers)

    def reduce(kind, entries):
        finite = [e[1] for e in entries if math.isfinite(e[1])]
        capped = len(entries) - len(finite)
        psnr_mean = sum(finite) / len(finite) if finite else PSNR_SENTINEL
        return MetricsRow(
            split,
            kind,
            len(entries),
            capped,
            psnr_mean,
            sum(e[2] for e in entries) / len(entries),
            sum(e[3] for e in entries) / len(entries),
            sum(e[4] for e in entries) / len(entries),
        )

    kinds = sorted({e[0] for e in per_pair})
    table = [reduce(k, [e for e in per_pair if e[0] == k]) for k in kinds]
    table.append(reduce("all", per_pair))
    return table


PSNR_SENTINEL = 99.0

TRACE_HEADER = ("iteration", "loss_fid", "loss_perc", "loss_combined", "alpha", "beta", "lr")
EVAL_HEADER = ("iteration", "psnr", "ssim", "loss_fid", "loss_perc")
METRICS_HEADER = (
    "split",
    "kind",
    "count",
    "capped",
    "psnr_mean",
    "ssim_mean",
    "fid_mean",
    "perc_mean",
)


def write_trace_csv(path, trace: TrainTrace) -> None:
    write_csv(
        path,
        TRACE_HEADER,
        [
            (r.iteration, r.loss_fid, r.loss_perc, r.loss_combined, r.alpha, r.beta, r.lr)
            for r in trace.rows
        ],
    )


def write_eval_csv(path, trace: TrainTrace) -> None:
    write_csv(
        path,
        EVAL_HEADER,
        [(e.iteration, e.psnr, e.ssim, e.loss_fid, e.loss_perc) for e in trace.evals],
    )


def write_metrics_csv(path, table) -> None:
    write_csv(
        path,
        METRICS_HEADER,
        [
            (
                r.split,
                r.kind,
                r.count,
                r.capped,
                r.psnr_mean,
                r.ssim_mean,
                r.fid_mean,
                r.perc_mean,
            )
            for r in table
        ],
    )
