"""Weight-search engine: projection, fitness, selection, and bookkeeping."""

import math

import numpy as np
import pytest

from evorestore import fmm
from evorestore.eos import (
    EosConfig,
    SUMMARY_HEADER,
    TRACE_HEADER,
    WeightPair,
    eos_overhead_report,
    evaluate_fitness,
    project_simplex,
    run_eos,
    sample_simplex,
    val_losses,
    write_summary_csv,
    write_trace_csv,
)
from evorestore.errors import ConfigError, NumericIntegrityError
from evorestore.grids import identity_kernel


def sort_projection_oracle(v):
    """Euclidean projection onto the probability simplex, sort-based form."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, v.size + 1)
    cond = u - css / ind > 0
    rho = ind[cond][-1]
    tau = css[cond][-1] / rho
    return np.maximum(v - tau, 0.0)


def test_projection_worked_examples():
    p = project_simplex(1.2, 0.3)
    assert abs(p.alpha - 0.95) < 1e-15 and abs(p.beta - 0.05) < 1e-15
    p = project_simplex(1.6, 0.1)
    assert p.alpha == 1.0 and p.beta == 0.0
    # shifting (-0.4, 0.2) by (1 - sum)/2 = 0.6 stays inside the simplex
    p = project_simplex(-0.4, 0.2)
    assert abs(p.alpha - 0.2) < 1e-15 and abs(p.beta - 0.8) < 1e-15
    p = project_simplex(-0.4, 0.9)
    assert p.alpha == 0.0 and p.beta == 1.0


def test_projection_fixes_points_already_on_simplex():
    for a in (0.0, 0.25, 0.5, 1.0):
        p = project_simplex(a, 1.0 - a)
        assert abs(p.alpha - a) < 1e-15
        assert abs(p.beta - (1.0 - a)) < 1e-15


def test_projection_invariants_and_oracle_match():
    rng = np.random.default_rng(42)
    for _ in range(1000):
        v = rng.uniform(-2.0, 3.0, size=2)
        p = project_simplex(v[0], v[1])
        assert p.alpha >= 0.0 and p.beta >= 0.0
        assert p.alpha + p.beta == 1.0  # exact by construction
        ref = sort_projection_oracle(v)
        assert abs(p.alpha - ref[0]) < 1e-12 and abs(p.beta - ref[1]) < 1e-12


def test_projection_rejects_non_finite():
    with pytest.raises(NumericIntegrityError):
        project_simplex(float("nan"), 0.5)


def test_sample_simplex_is_on_simplex():
    rng = np.random.default_rng(0)
    for _ in range(100):
        p = sample_simplex(rng)
        assert 0.0 <= p.alpha <= 1.0
        assert p.alpha + p.beta == 1.0


# -- a tiny frozen model + validation set used by all search tests ----------


def identity_model(n=16):
    return fmm.FmmParams(
        lowpass=identity_kernel(1),
        mask_mode=fmm.MASK_PER_FREQUENCY,
        spectral_logits=np.full((n, n), 500.0),
        spatial_mode=fmm.SPATIAL_GAP_AFFINE,
        spatial_logits=np.zeros(2),
    )


def rigged_pairs(kind, n=16):
    """Validation pairs where one loss term dwarfs the other.

    "structural": tiny amplitude sign noise on a flat ramp; cheap pointwise,
    catastrophic for windowed correlation -> the perceptual mean dominates.
    "offset": constant brightness shift; expensive pointwise, nearly invisible
    to variance-based similarity -> the fidelity mean dominates.
    """
    ramp = np.linspace(0.45, 0.55, n)[:, None] * np.ones((1, n))
    if kind == "structural":
        noise = np.sign(np.random.default_rng(7).normal(size=(n, n))) * 0.05
        return [(ramp + noise, ramp)]
    return [(ramp + 0.12, ramp)]


def test_fitness_decouples_at_vertices():
    params = identity_model()
    pairs = rigged_pairs("offset")
    mf, mp = val_losses(params, pairs)
    f10 = evaluate_fitness(WeightPair(1.0, 0.0), params, pairs)
    f01 = evaluate_fitness(WeightPair(0.0, 1.0), params, pairs)
    assert abs(f10 - (-mf)) < 1e-15
    assert abs(f01 - (-mp)) < 1e-15


def test_fitness_affine_on_simplex():
    params = identity_model()
    pairs = rigged_pairs("structural")
    rng = np.random.default_rng(3)
    for _ in range(50):
        p = sample_simplex(rng)
        q = sample_simplex(rng)
        lam = rng.random()
        mix = WeightPair(lam * p.alpha + (1 - lam) * q.alpha, lam * p.beta + (1 - lam) * q.beta)
        fmix = evaluate_fitness(mix, params, pairs)
        fsep = lam * evaluate_fitness(p, params, pairs) + (1 - lam) * evaluate_fitness(
            q, params, pairs
        )
        assert abs(fmix - fsep) < 1e-12


def test_single_generation_is_argmax_of_init():
    params = identity_model()
    pairs = rigged_pairs("offset")  # higher beta is strictly better here
    init = [WeightPair(0.9, 0.1), WeightPair(0.4, 0.6), WeightPair(0.7, 0.3)]
    cfg = EosConfig(population=3, generations=1, elites=1, mutation_sigma=0.5, seed=0)
    winner, trace = run_eos(params, pairs, cfg, init=init)
    assert (winner.alpha, winner.beta) == (0.4, 0.6)
    assert trace.evaluations == 3
    assert len(trace.best_per_generation) == 1


def test_zero_mutation_keeps_best_fitness_constant():
    # crossover alone cannot exceed the best candidate of an affine fitness
    params = identity_model()
    pairs = rigged_pairs("structural")
    for seed in range(10):
        cfg = EosConfig(population=5, generations=4, elites=2, mutation_sigma=0.0, seed=seed)
        _, trace = run_eos(params, pairs, cfg)
        best = trace.best_per_generation
        assert all(abs(b - best[0]) < 1e-15 for b in best)


def test_best_fitness_non_decreasing_across_many_seeds():
    params = identity_model()
    for kind in ("structural", "offset"):
        pairs = rigged_pairs(kind)
        for seed in range(30):
            cfg = EosConfig(
                population=5, generations=3, elites=2, mutation_sigma=0.3, seed=seed
            )
            _, trace = run_eos(params, pairs, cfg)
            best = trace.best_per_generation
            assert all(b2 >= b1 for b1, b2 in zip(best, best[1:]))


def test_run_eos_never_mutates_model_params():
    params = identity_model()
    before = fmm.params_to_bytes(params)
    run_eos(params, rigged_pairs("structural"), EosConfig(seed=5, trigger_interval=1))
    assert fmm.params_to_bytes(params) == before


def test_run_eos_deterministic():
    params = identity_model()
    pairs = rigged_pairs("offset")
    cfg = EosConfig(population=5, generations=3, elites=2, mutation_sigma=0.4, seed=9)
    w1, t1 = run_eos(params, pairs, cfg)
    w2, t2 = run_eos(params, pairs, cfg)
    assert (w1.alpha, w1.beta) == (w2.alpha, w2.beta)
    r1 = [(r.generation, r.candidate, r.alpha, r.beta, r.fitness) for r in t1.records]
    r2 = [(r.generation, r.candidate, r.alpha, r.beta, r.fitness) for r in t2.records]
    assert r1 == r2


def test_trace_bookkeeping_and_winner_flag():
    params = identity_model()
    cfg = EosConfig(population=5, generations=3, elites=2, mutation_sigma=0.3, seed=1)
    winner, trace = run_eos(params, rigged_pairs("offset"), cfg, trigger_index=4)
    assert trace.trigger_index == 4
    assert trace.evaluations == 15  # population x generations
    assert len(trace.records) == 15
    flagged = [r for r in trace.records if r.is_winner]
    assert len(flagged) == 1
    assert flagged[0].generation == 2
    assert (flagged[0].alpha, flagged[0].beta) == (winner.alpha, winner.beta)
    assert trace.eval_wall_ms <= trace.total_wall_ms


def test_candidates_stay_on_simplex():
    params = identity_model()
    for seed in range(20):
        cfg = EosConfig(population=6, generations=3, elites=2, mutation_sigma=1.5, seed=seed)
        _, trace = run_eos(params, rigged_pairs("structural"), cfg)
        for r in trace.records:
            assert r.alpha >= 0.0 and r.beta >= 0.0
            assert r.alpha + r.beta == 1.0


def test_init_validation():
    params = identity_model()
    pairs = rigged_pairs("offset")
    too_many = [WeightPair(0.5, 0.5)] * 6
    with pytest.raises(ConfigError):
        run_eos(params, pairs, EosConfig(population=5), init=too_many)
    with pytest.raises(NumericIntegrityError):
        run_eos(params, pairs, EosConfig(), init=[WeightPair(math.nan, 0.5)])


def test_config_validation():
    with pytest.raises(ConfigError):
        EosConfig(population=0).validate()
    with pytest.raises(ConfigError):
        EosConfig(elites=6, population=5).validate()
    with pytest.raises(ConfigError):
        EosConfig(mutation_sigma=-0.1).validate()
    with pytest.raises(ConfigError):
        EosConfig(generations=0).validate()


def test_trace_csv_schema(tmp_path):
    params = identity_model()
    cfg = EosConfig(population=4, generations=2, elites=1, mutation_sigma=0.3, seed=2)
    _, trace = run_eos(params, rigged_pairs("offset"), cfg, trigger_index=1)
    tp = tmp_path / "eos_trace.csv"
    sp = tmp_path / "eos_summary.csv"
    write_trace_csv(tp, [trace])
    write_summary_csv(sp, [trace])
    lines = tp.read_text().strip().split("\n")
    assert lines[0] == ",".join(TRACE_HEADER)
    assert len(lines) == 1 + 8  # population x generations rows
    slines = sp.read_text().strip().split("\n")
    assert slines[0] == ",".join(SUMMARY_HEADER)
    assert len(slines) == 2
    assert slines[1].startswith("1,")


def test_overhead_report_accounting():
    params = identity_model()
    traces = []
    for seed in range(3):
        _, tr = run_eos(
            params, rigged_pairs("structural"), EosConfig(seed=seed), trigger_index=seed
        )
        traces.append(tr)
    rep = eos_overhead_report(traces, epoch_wall_ms=10_000.0)
    assert rep.triggers == 3
    assert rep.evaluations == sum(t.evaluations for t in traces)
    assert abs((rep.eval_ms + rep.residual_ms) - rep.total_ms) < 1e-9
    assert abs(rep.pct_of_epoch - 100.0 * rep.total_ms / 10_000.0) < 1e-12
