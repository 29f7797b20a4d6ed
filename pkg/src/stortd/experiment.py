"""Experiment drivers: single runs, parameter sweeps, ablations and cost profiles."""

import itertools
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import engine
from .engine import Variant
from .masks import Pattern, gen_mask, inject_outliers
from .metrics import EvalAccumulator, RunReport, SliceRecord, outlier_f1, rse, streaming_profile
from .regularizers import build_graph, build_laplacian, empty_laplacian, load_adjacency_csv
from .streamio import read_stream
from .synth import gen_stream

logger = logging.getLogger(__name__)

# weights 1, 10, ..., 1e6
LOG_GRID = tuple(10.0**k for k in range(7))
ALL_PATTERNS = (Pattern.RM, Pattern.TM, Pattern.SM, Pattern.MM)
DEFAULT_RATES = (0.2, 0.4, 0.6, 0.8)


def max_workers():
    cap = os.environ.get("STORTD_THREADS")
    n = os.cpu_count() or 1
    if cap:
        n = min(n, max(1, int(cap)))
    return n


def _map(fn, jobs):
    jobs = list(jobs)
    workers = min(max_workers(), len(jobs))
    if workers <= 1:
        return [fn(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, *zip(*jobs)))


def _laplacian(cfg, reference_day, n2):
    if cfg.adjacency is not None:
        graph = load_adjacency_csv(cfg.adjacency)
    elif reference_day is not None:
        graph = build_graph(np.asarray(reference_day).T, sigma=cfg.graph_sigma)
    else:
        logger.warning("no fully observed day and no adjacency file; spatial term disabled")
        return empty_laplacian(n2)
    if graph.n != n2:
        raise ValueError(f"graph has {graph.n} nodes but the stream has {n2} locations")
    return build_laplacian(graph)


def _synthetic_source(cfg, seed):
    clean, _ = gen_stream(cfg.synth_spec(seed))
    n1, n2, T = clean.shape
    days = ((clean[:, :, t], np.ones((n1, n2), dtype=bool)) for t in range(T))
    return (n1, n2, T), days, clean[:, :, 0], float(clean.std())


def _file_source(cfg):
    # first pass: stream statistics and the first fully observed day
    header, days = read_stream(cfg.input, cfg.mask_input)
    reference = None
    total = total_sq = 0.0
    count = 0
    for values, observed in days:
        if reference is None and observed.all():
            reference = values.copy()
        v = values[observed]
        total += float(v.sum())
        total_sq += float(np.sum(v**2))
        count += v.size
    if count == 0:
        raise ValueError(f"{cfg.input}: stream has no observed entries")
    mean = total / count
    sigma = float(np.sqrt(max(total_sq / count - mean**2, 0.0)))
    _, days = read_stream(cfg.input, cfg.mask_input)
    return (header.n1, header.n2, header.T), days, reference, sigma


def run(cfg, seed=None, keep_slices=False, state_hook=None):
    """Stream one configured scenario through the engine and score it.

    The engine sees the configured missing pattern (on top of any mask
    supplied with a file stream) and the injected outliers; imputation RSE
    is measured on the entries hidden by the pattern.
    """
    seed = cfg.seed if seed is None else seed
    if cfg.is_synthetic:
        (n1, n2, T), days, reference, sigma = _synthetic_source(cfg, seed)
    else:
        (n1, n2, T), days, reference, sigma = _file_source(cfg)

    state = engine.init(n1, n2, cfg.hyperparams(), _laplacian(cfg, reference, n2), seed=seed)
    mask_spec = cfg.mask_spec(seed)
    outlier_spec = cfg.outlier_spec(seed)
    acc = EvalAccumulator()
    recovered, outliers = ([], []) if keep_slices else (None, None)

    for day, (values, available) in enumerate(days):
        mask = available & gen_mask(mask_spec, n1, n2, day)
        corrupted, spikes = inject_outliers(np.where(available, values, 0.0), mask, outlier_spec, sigma, day)
        observed = np.where(mask, corrupted, np.nan)

        start = time.perf_counter()
        result = engine.step(state, observed, mask)
        elapsed = time.perf_counter() - start if cfg.timing else 0.0

        held_out = available & ~mask
        if held_out.any() and np.any(values[held_out] != 0):
            truth, estimate = values[held_out], result.recovered[held_out]
        else:
            truth, estimate = values[available], result.recovered[available]
        acc.add(values[held_out], result.recovered[held_out])
        slice_rse = rse(truth, estimate) if np.any(truth != 0) else float("nan")
        f1 = outlier_f1(spikes, result.outliers)[2] if outlier_spec.density > 0 else float("nan")
        acc.record(
            SliceRecord(
                t=day,
                rse=slice_rse,
                wall_time=elapsed,
                state_elements=state.element_count(),
                inner_iters=result.inner_iters,
                f1=f1,
            )
        )
        if keep_slices:
            recovered.append(result.recovered)
            outliers.append(result.outliers)
        if state_hook is not None:
            state_hook(day, state, result)

    return RunReport(
        records=acc.records,
        final_rse=acc.rse(),
        state_elements=state.element_count(),
        recovered=recovered,
        outliers=outliers,
    )


def _final_rse(cfg, seed):
    return run(cfg, seed=seed).final_rse


def mean_rse(cfg):
    """Per-seed final RSEs and their mean over ``cfg.seeds`` consecutive seeds."""
    values = _map(_final_rse, [(cfg, cfg.seed + s) for s in range(cfg.seeds)])
    return values, float(np.mean(values))


def _cells_rse(cells):
    """Evaluate many configs, each over its own seed range, in one worker pool."""
    jobs = [(c, c.seed + s) for c in cells for s in range(c.seeds)]
    flat = _map(_final_rse, jobs)
    out, pos = [], 0
    for c in cells:
        vals = flat[pos : pos + c.seeds]
        pos += c.seeds
        out.append((vals, float(np.mean(vals))))
    return out


def run_sweep(cfg, alphas=LOG_GRID, betas=LOG_GRID, patterns=None):
    """RSE for every ``(pattern, alpha, beta)`` cell, averaged over the configured seeds."""
    if not alphas or not betas:
        raise ValueError("alpha and beta grids must be nonempty")
    patterns = [cfg.pattern] if patterns is None else [Pattern(p) for p in patterns]
    cells = [
        cfg.with_overrides(pattern=p, alpha=float(a), beta=float(b))
        for p in patterns
        for a, b in itertools.product(alphas, betas)
    ]
    rows = []
    for c, (vals, mean) in zip(cells, _cells_rse(cells)):
        rows.append({"pattern": c.pattern.value, "alpha": c.alpha, "beta": c.beta, "mean_rse": mean, "rse": vals})
    return rows


def _variant_candidates(cfg, variant, grid):
    if grid is None:
        return [cfg.with_overrides(variant=variant)]
    grid = [float(g) for g in grid]
    if variant is Variant.ORTD:
        pairs = [(0.0, 0.0)]
    elif variant is Variant.SORTD:
        pairs = [(0.0, b) for b in grid]
    elif variant is Variant.TORTD:
        pairs = [(a, 0.0) for a in grid]
    else:
        pairs = list(itertools.product(grid, grid))
    return [cfg.with_overrides(variant=variant, alpha=a, beta=b) for a, b in pairs]


def run_ablation(cfg, patterns=None, rates=None, grid=LOG_GRID):
    """Compare ORTD, SORTD, TORTD and STORTD on identical streams, masks and seeds.

    With a `grid`, each variant keeps the best (lowest mean RSE) setting of
    the weights it is allowed to use; with ``grid=None`` the configured
    ``alpha``/``beta`` are used as they are (subject to the variant).
    """
    patterns = [cfg.pattern] if patterns is None else [Pattern(p) for p in patterns]
    rates = [cfg.rate] if rates is None else list(rates)
    rows = []
    for pattern, rate in itertools.product(patterns, rates):
        base = cfg.with_overrides(pattern=pattern, rate=float(rate))
        for variant in (Variant.ORTD, Variant.SORTD, Variant.TORTD, Variant.STORTD):
            candidates = _variant_candidates(base, variant, grid)
            scored = _cells_rse(candidates)
            best = int(np.argmin([mean for _, mean in scored]))
            chosen = candidates[best].hyperparams()
            vals, mean = scored[best]
            rows.append(
                {
                    "variant": variant.value,
                    "pattern": pattern.value,
                    "rate": float(rate),
                    "alpha": chosen.alpha,
                    "beta": chosen.beta,
                    "mean_rse": mean,
                    "rse": vals,
                }
            )
    return rows


def _batch_resolve_time(stream, masks, ranks, iters):
    from .oracle import batch_tucker_als

    total = 0.0
    for t in range(1, stream.shape[2] + 1):
        sub_ranks = tuple(min(r, d) for r, d in zip(ranks, (stream.shape[0], stream.shape[1], t)))
        start = time.perf_counter()
        batch_tucker_als(stream[:, :, :t], masks[:, :, :t], sub_ranks, iters=iters)
        total += time.perf_counter() - start
    return total


def run_profile(cfg, lengths=(50, 100, 200), batch_iters=30, with_batch=True):
    """Per-slice cost and state size for streams of increasing length.

    With ``with_batch`` the same stream is also completed from scratch by
    :func:`oracle.batch_tucker_als` after every day, and the cumulative time
    ratio is reported as ``speedup``.
    """
    rows = []
    for T in lengths:
        c = cfg.with_overrides(synth_dims=(cfg.synth_dims[0], cfg.synth_dims[1], int(T)), timing=True)
        report = run(c)
        prof = streaming_profile(report.records)
        online_total = float(sum(r.wall_time for r in report.records))
        row = {
            "T": int(T),
            "mean_time_ms": prof.mean_time * 1e3,
            "slope_ms_per_slice": prof.slope * 1e3,
            "relative_slope": prof.slope / prof.mean_time if prof.mean_time > 0 else float("nan"),
            "state_elements": prof.max_state_elements,
            "state_constant": prof.constant_state,
            "online_total_s": online_total,
            "batch_total_s": float("nan"),
            "speedup": float("nan"),
        }
        if with_batch:
            stream, masks = materialize(c, c.seed)
            batch_total = _batch_resolve_time(stream, masks, c.ranks, batch_iters)
            row["batch_total_s"] = batch_total
            row["speedup"] = batch_total / online_total if online_total > 0 else float("inf")
        rows.append(row)
    return rows


def materialize(cfg, seed):
    """Full ``(n1, n2, T)`` observed stream and mask exactly as :func:`run` feeds the engine."""
    if not cfg.is_synthetic:
        raise ValueError("materialize is only available for synthetic configurations")
    clean, _ = gen_stream(cfg.synth_spec(seed))
    n1, n2, T = clean.shape
    sigma = float(clean.std())
    observed = np.empty_like(clean)
    masks = np.empty(clean.shape, dtype=bool)
    mask_spec, outlier_spec = cfg.mask_spec(seed), cfg.outlier_spec(seed)
    for day in range(T):
        masks[:, :, day] = gen_mask(mask_spec, n1, n2, day)
        observed[:, :, day], _ = inject_outliers(clean[:, :, day], masks[:, :, day], outlier_spec, sigma, day)
    return observed, masks
