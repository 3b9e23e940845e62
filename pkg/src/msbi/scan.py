"""Sweeps over misspecification knobs: summary MMD, detection rate, posterior error.

Each grid point is evaluated on several independent repetitions; a repetition
simulates fresh observed datasets from the knob-modified model, summarizes
them with the trained network, and compares against the training model's
validation summaries. The rejection threshold comes from one shared null
estimate, so points are directly comparable.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .diagnose import flow_sampler, posterior_rmse
from .mmd import KernelSpec, critical_value, mmd, null_distribution
from .models import GenerativeModel
from .models.ddm import contaminate_reaction_times
from .rng import RngState
from .summary import summarize

__all__ = ["ScanPoint", "misspec_scan", "contamination_scan", "scan_to_csv"]


@dataclass(frozen=True)
class ScanPoint:
    knobs: dict
    mean_mmd: float
    sd_mmd: float
    detection_rate: float
    posterior_rmse: float

    def to_dict(self) -> dict:
        return {
            "knobs": dict(self.knobs),
            "mean_mmd": self.mean_mmd,
            "sd_mmd": self.sd_mmd,
            "detection_rate": self.detection_rate,
            "posterior_rmse": self.posterior_rmse,
        }


def _has_oracle(model: GenerativeModel) -> bool:
    return type(model).analytic_posterior is not GenerativeModel.analytic_posterior


def _respawn(seed: int, path: tuple) -> RngState:
    rng = RngState(seed)
    return rng.substream(*path) if path else rng


def _scan_rep(args) -> tuple[int, int, float, float]:
    (
        point_idx, rep, model, knobs, store, summary_cfg, flow_cfg,
        standardizer, validation, kernel, seed, path, n_observed,
        rmse_draws, want_rmse,
    ) = args
    rng = _respawn(seed, path)
    variant = model.with_knobs(**knobs)
    thetas = variant.sample_prior(rng.substream("prior"), n_observed)
    xs = variant.simulate_batch(rng.substream("data"), thetas)
    z = ad.value_of(summarize(store, summary_cfg, xs, standardizer))
    value = mmd(z, validation, kernel)
    rmse = float("nan")
    if want_rmse:
        draw_fn = flow_sampler(store, summary_cfg, flow_cfg, model.transform, standardizer)
        rmse = posterior_rmse(draw_fn, model, xs, rmse_draws, rng.substream("rmse"))
    return point_idx, rep, value, rmse


def misspec_scan(
    model: GenerativeModel,
    store,
    summary_cfg,
    flow_cfg,
    validation_summaries: np.ndarray,
    kernel: KernelSpec,
    alpha: float,
    rng: RngState,
    grid: list[dict],
    n_observed: int = 100,
    n_reps: int = 20,
    n_replicates: int = 300,
    rmse_draws: int = 250,
    with_rmse: bool | None = None,
    threads: int = 1,
    standardizer=None,
) -> list[ScanPoint]:
    """Evaluate every knob setting in ``grid`` against the training model.

    Posterior RMSE is reported where the training model has a conjugate
    oracle (the posterior is always computed under the training model, even
    for misspecified data). ``threads > 1`` fans repetitions out to worker
    processes; results are merged by index, so the output is identical to
    the serial run.
    """
    if not grid:
        raise ValueError("grid must contain at least one knob setting")
    if n_reps < 1:
        raise ValueError(f"n_reps must be >= 1, got {n_reps}")
    validation_summaries = np.asarray(validation_summaries, dtype=np.float64)
    null = null_distribution(rng.substream("null"), validation_summaries, n_observed, kernel, n_replicates)
    threshold = critical_value(null, alpha)
    if with_rmse is None:
        with_rmse = _has_oracle(model)
    tasks = []
    for p, knobs in enumerate(grid):
        for r in range(n_reps):
            task_rng = rng.substream("point", p, "rep", r)
            tasks.append(
                (
                    p, r, model, dict(knobs), store, summary_cfg, flow_cfg,
                    standardizer, validation_summaries, kernel,
                    task_rng.seed, task_rng.path, n_observed, rmse_draws, with_rmse,
                )
            )
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_scan_rep, tasks))
    else:
        results = [_scan_rep(task) for task in tasks]

    mmds = np.full((len(grid), n_reps), np.nan)
    rmses = np.full((len(grid), n_reps), np.nan)
    for point_idx, rep, value, rmse in results:
        mmds[point_idx, rep] = value
        rmses[point_idx, rep] = rmse
    points = []
    for p, knobs in enumerate(grid):
        points.append(
            ScanPoint(
                knobs=dict(knobs),
                mean_mmd=float(mmds[p].mean()),
                sd_mmd=float(mmds[p].std()),
                detection_rate=float(np.mean(mmds[p] > threshold)),
                posterior_rmse=float(np.mean(rmses[p])) if with_rmse else float("nan"),
            )
        )
    return points


def contamination_scan(
    model,
    store,
    summary_cfg,
    flow_cfg,
    validation_summaries: np.ndarray,
    kernel: KernelSpec,
    alpha: float,
    rng: RngState,
    rates: list[float],
    modes: list[str],
    n_observed: int = 100,
    n_reps: int = 20,
    n_replicates: int = 300,
    standardizer=None,
) -> list[ScanPoint]:
    """Contamination sweep sharing one set of base datasets per repetition.

    All (mode, rate) combinations within a repetition contaminate the same
    clean simulations, so differences across the grid reflect the
    contamination itself rather than simulation noise.
    """
    if not rates or not modes:
        raise ValueError("rates and modes must be non-empty")
    validation_summaries = np.asarray(validation_summaries, dtype=np.float64)
    null = null_distribution(rng.substream("null"), validation_summaries, n_observed, kernel, n_replicates)
    threshold = critical_value(null, alpha)
    combos = [(mode, float(rate)) for mode in modes for rate in rates]
    values = np.empty((len(combos), n_reps))
    for r in range(n_reps):
        rep_rng = rng.substream("rep", r)
        thetas = model.sample_prior(rep_rng.substream("prior"), n_observed)
        base = model.simulate_batch(rep_rng.substream("data"), thetas)
        for c, (mode, rate) in enumerate(combos):
            if rate == 0.0:
                data = base
            else:
                data = np.stack(
                    [
                        contaminate_reaction_times(
                            rep_rng.substream("contaminate", mode, repr(rate), i),
                            base[i],
                            rate,
                            mode,
                            model.t_max,
                        )
                        for i in range(n_observed)
                    ]
                )
            z = ad.value_of(summarize(store, summary_cfg, data, standardizer))
            values[c, r] = mmd(z, validation_summaries, kernel)
    points = []
    for c, (mode, rate) in enumerate(combos):
        points.append(
            ScanPoint(
                knobs={"contamination": rate, "contamination_mode": mode},
                mean_mmd=float(values[c].mean()),
                sd_mmd=float(values[c].std()),
                detection_rate=float(np.mean(values[c] > threshold)),
                posterior_rmse=float("nan"),
            )
        )
    return points


def _cell(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (tuple, list, np.ndarray)):
        return ";".join(repr(float(v)) for v in value)
    if value is None:
        return ""
    return repr(float(value))


def scan_to_csv(points: list[ScanPoint], path: str | Path) -> None:
    """One row per grid point; knob columns first, then the metrics."""
    if not points:
        raise ValueError("no scan points to write")
    knob_keys = sorted({k for p in points for k in p.knobs})
    header = [*knob_keys, "mean_mmd", "sd_mmd", "detection_rate", "posterior_rmse"]
    lines = [",".join(header)]
    for p in points:
        cells = [_cell(p.knobs.get(k)) for k in knob_keys]
        cells += [_cell(p.mean_mmd), _cell(p.sd_mmd), _cell(p.detection_rate), _cell(p.posterior_rmse)]
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")
