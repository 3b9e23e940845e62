"""Posterior-quality diagnostics: RMSE against oracles, calibration, recovery, PCA.

The flow-sampling diagnostics take a draw function ``(rng, dataset, n) ->
draws`` so the same machinery runs on a trained flow, a conjugate oracle
sampler, or a deliberately broken stub.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats

from . import autodiff as ad
from .flow import CouplingFlowConfig, sample as flow_sample
from .linalg import pca
from .mmd import KernelSpec, MmdReport, hypothesis_test
from .rng import RngState
from .summary import FeatureStandardizer, summarize
from .tensorio import write_csv

__all__ = [
    "SbcResult",
    "RecoveryReport",
    "PcaCorrelation",
    "flow_sampler",
    "posterior_means",
    "posterior_rmse",
    "sbc",
    "recovery_report",
    "pca_param_correlation",
    "summary_gaussianity_test",
]


def flow_sampler(store, summary_cfg, flow_cfg: CouplingFlowConfig, transform, standardizer=None):
    """Posterior draw function for one dataset, in the native parameterization."""

    def draw(rng: RngState, dataset: np.ndarray, n_draws: int) -> np.ndarray:
        z = ad.value_of(summarize(store, summary_cfg, dataset[None, ...], standardizer))[0]
        w = flow_sample(store, z, n_draws, rng, flow_cfg)
        return transform.from_unconstrained(w)

    return draw


def posterior_means(draw_fn, datasets: np.ndarray, n_draws: int, rng: RngState) -> np.ndarray:
    """Mean of ``n_draws`` posterior draws for each dataset, shape (N, D)."""
    if n_draws < 1:
        raise ValueError(f"n_draws must be >= 1, got {n_draws}")
    means = []
    for i, dataset in enumerate(datasets):
        draws = draw_fn(rng.substream("dataset", i), np.asarray(dataset, dtype=np.float64), n_draws)
        means.append(np.mean(draws, axis=0))
    return np.asarray(means)


def posterior_rmse(draw_fn, oracle_model, datasets: np.ndarray, n_draws: int, rng: RngState) -> float:
    """RMSE of estimated posterior means against the conjugate oracle's means.

    The oracle posterior is always the training model's, whatever process
    produced the datasets.
    """
    analytic = []
    for dataset in datasets:
        posterior = oracle_model.analytic_posterior(np.asarray(dataset, dtype=np.float64))
        if posterior is None:
            raise ValueError(f"model {oracle_model.name!r} has no analytic posterior")
        analytic.append(posterior.mean_theta())
    analytic = np.asarray(analytic)
    estimated = posterior_means(draw_fn, datasets, n_draws, rng)
    return float(np.sqrt(np.mean((estimated - analytic) ** 2)))


@dataclass
class SbcResult:
    """Rank statistics of ground truths among posterior draws."""

    ranks: np.ndarray
    n_draws: int
    param_names: tuple[str, ...]
    ks_stat: np.ndarray
    ks_p: np.ndarray

    def histogram(self, param: int) -> np.ndarray:
        """Counts over the L+1 possible ranks; sums to the number of datasets."""
        return np.bincount(self.ranks[:, param], minlength=self.n_draws + 1)

    def to_dict(self) -> dict:
        return {
            "n_datasets": int(self.ranks.shape[0]),
            "n_draws": self.n_draws,
            "params": [
                {"name": name, "ks_stat": float(self.ks_stat[j]), "ks_p": float(self.ks_p[j])}
                for j, name in enumerate(self.param_names)
            ],
        }

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "sbc.json").write_text(json.dumps(self.to_dict(), indent=1) + "\n")
        write_csv(directory / "sbc_ranks.csv", self.ranks.astype(np.float64), list(self.param_names))
        hist = np.stack([self.histogram(j) for j in range(len(self.param_names))], axis=1)
        bins = np.arange(self.n_draws + 1, dtype=np.float64)[:, None]
        write_csv(
            directory / "sbc_histograms.csv",
            np.hstack([bins, hist.astype(np.float64)]),
            ["rank", *self.param_names],
        )


def sbc(model, draw_fn, n_datasets: int, n_draws: int, rng: RngState) -> SbcResult:
    """Simulation-based calibration ranks with per-parameter KS uniformity tests.

    For each fresh (theta*, x) pair the rank is the number of posterior draws
    below theta*, dimension by dimension; a calibrated sampler makes these
    uniform on {0, ..., n_draws}. KS is applied to the midpoint-shifted ranks
    (rank + 0.5) / (n_draws + 1).
    """
    if n_draws < 10:
        raise ValueError(f"need at least 10 draws per dataset, got {n_draws}")
    if n_datasets < 1:
        raise ValueError(f"n_datasets must be >= 1, got {n_datasets}")
    thetas = model.sample_prior(rng.substream("prior"), n_datasets)
    xs = model.simulate_batch(rng.substream("data"), thetas)
    ranks = np.empty((n_datasets, thetas.shape[1]), dtype=np.int64)
    for i in range(n_datasets):
        draws = draw_fn(rng.substream("draws", i), xs[i], n_draws)
        ranks[i] = np.sum(draws < thetas[i], axis=0)
    uniform = (ranks + 0.5) / (n_draws + 1.0)
    ks_stat = np.empty(thetas.shape[1])
    ks_p = np.empty(thetas.shape[1])
    for j in range(thetas.shape[1]):
        result = stats.kstest(uniform[:, j], "uniform")
        ks_stat[j] = result.statistic
        ks_p[j] = result.pvalue
    return SbcResult(
        ranks=ranks,
        n_draws=n_draws,
        param_names=tuple(model.theta_names),
        ks_stat=ks_stat,
        ks_p=ks_p,
    )


@dataclass
class RecoveryReport:
    """Per-parameter agreement between posterior means and ground truth."""

    param_names: tuple[str, ...]
    rmse: np.ndarray
    bias: np.ndarray
    r2: np.ndarray

    def to_dict(self) -> dict:
        return {
            "params": [
                {
                    "name": name,
                    "rmse": float(self.rmse[j]),
                    "bias": float(self.bias[j]),
                    "r2": float(self.r2[j]),
                }
                for j, name in enumerate(self.param_names)
            ]
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")


def recovery_report(true_thetas: np.ndarray, estimated_means: np.ndarray, param_names) -> RecoveryReport:
    true_thetas = np.asarray(true_thetas, dtype=np.float64)
    estimated_means = np.asarray(estimated_means, dtype=np.float64)
    if true_thetas.shape != estimated_means.shape or true_thetas.ndim != 2:
        raise ValueError(
            f"shape mismatch: truths {true_thetas.shape} vs estimates {estimated_means.shape}"
        )
    err = estimated_means - true_thetas
    rmse = np.sqrt(np.mean(err**2, axis=0))
    bias = np.mean(err, axis=0)
    centered = true_thetas - true_thetas.mean(axis=0)
    ss_tot = np.sum(centered**2, axis=0)
    if np.any(ss_tot == 0.0):
        raise ValueError("ground-truth parameters have zero variance; R^2 undefined")
    r2 = 1.0 - np.sum(err**2, axis=0) / ss_tot
    return RecoveryReport(param_names=tuple(param_names), rmse=rmse, bias=bias, r2=r2)


@dataclass
class PcaCorrelation:
    """How strongly each parameter aligns with each summary principal component."""

    correlations: np.ndarray
    explained_variance_ratio: np.ndarray

    @property
    def cumulative_ratio(self) -> np.ndarray:
        return np.cumsum(self.explained_variance_ratio)

    def to_dict(self) -> dict:
        return {
            "correlations": self.correlations.tolist(),
            "explained_variance_ratio": self.explained_variance_ratio.tolist(),
            "cumulative_ratio": self.cumulative_ratio.tolist(),
        }


def pca_param_correlation(summaries: np.ndarray, params: np.ndarray, n_components: int | None = None) -> PcaCorrelation:
    """Pearson correlation of each parameter with each summary PC score."""
    summaries = np.asarray(summaries, dtype=np.float64)
    params = np.asarray(params, dtype=np.float64)
    if summaries.ndim != 2 or params.ndim != 2 or summaries.shape[0] != params.shape[0]:
        raise ValueError(f"incompatible shapes {summaries.shape} and {params.shape}")
    n, s = summaries.shape
    if n <= s:
        raise ValueError(f"need more rows than summary dimensions, got {n} <= {s}")
    if n_components is None:
        n_components = s
    result = pca(summaries, n_components)
    scores = result.transform(summaries)
    score_sd = scores.std(axis=0)
    param_sd = params.std(axis=0)
    if np.any(param_sd == 0.0) or np.any(score_sd == 0.0):
        raise ValueError("degenerate variance in parameters or component scores")
    sc = (scores - scores.mean(axis=0)) / score_sd
    pc = (params - params.mean(axis=0)) / param_sd
    correlations = pc.T @ sc / n
    return PcaCorrelation(
        correlations=correlations,
        explained_variance_ratio=result.explained_variance_ratio,
    )


def summary_gaussianity_test(
    validation_summaries: np.ndarray,
    kernel: KernelSpec,
    alpha: float,
    rng: RngState,
    n_reference: int = 2000,
    n_replicates: int = 300,
) -> MmdReport:
    """Test whether summaries of well-specified data look unit Gaussian.

    The reference pool is drawn fresh from N(0, I); the summaries play the
    observed side of the two-sample test.
    """
    validation_summaries = np.asarray(validation_summaries, dtype=np.float64)
    if validation_summaries.ndim != 2:
        raise ValueError(f"expected (M, S) summaries, got {validation_summaries.shape}")
    if n_reference < validation_summaries.shape[0]:
        raise ValueError("reference pool must be at least as large as the summary set")
    reference = rng.substream("reference").standard_normal((n_reference, validation_summaries.shape[1]))
    return hypothesis_test(
        validation_summaries, reference, kernel, alpha, rng.substream("null"), n_replicates
    )
