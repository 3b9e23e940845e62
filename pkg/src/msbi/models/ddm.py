"""Two-condition drift-diffusion model with reaction-time contamination.

Evidence for each trial starts midway between the absorbing bounds 0 and a
and follows an Euler random walk ``x += v dt + sqrt(dt) xi``. A trial's
reaction time is the first-passage time plus the non-decision offset, capped
at ``t_max`` with a censoring flag. Contamination replaces a fraction of
reaction times per condition and response with uniform draws anchored at
quantiles of the clean data, mimicking lapses that are faster or slower than
the process can produce.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..rng import RngState
from ..transforms import LogTransform
from .base import GenerativeModel

__all__ = ["DriftDiffusionModel", "contaminate_reaction_times"]

_MODES = ("fast", "slow", "both")


def contaminate_reaction_times(
    rng: RngState, dataset: np.ndarray, rate: float, mode: str, t_max: float = 10.0
) -> np.ndarray:
    """Replace a fraction ``rate`` of reaction times per (condition, response).

    Fast contaminants are uniform on (0.1, Q10), slow ones on (Q75, t_max),
    with quantiles taken from the clean rows of the group; ``both`` splits
    the fraction equally. Groups whose anchor interval is empty are left
    untouched. Replaced rows lose their censoring flag.
    """
    if mode not in _MODES:
        raise ValueError(f"mode must be one of {_MODES}, got {mode!r}")
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"rate must lie in [0, 1], got {rate}")
    out = np.asarray(dataset, dtype=np.float64).copy()
    if out.ndim != 2 or out.shape[1] != 4:
        raise ValueError(f"expected (n, 4) reaction-time rows, got {out.shape}")
    if rate == 0.0:
        return out
    for cond in (0.0, 1.0):
        for resp in (0.0, 1.0):
            group = np.nonzero((out[:, 2] == cond) & (out[:, 1] == resp))[0]
            n = group.size
            if n == 0:
                continue
            clean = out[group, 0]
            if mode == "both":
                plan = [("fast", int(round(rate * n / 2.0))), ("slow", int(round(rate * n / 2.0)))]
            else:
                plan = [(mode, int(round(rate * n)))]
            total = min(sum(c for _, c in plan), n)
            if total == 0:
                continue
            chosen = rng.choice_without_replacement(n, total)
            cursor = 0
            for kind, count in plan:
                take = chosen[cursor : min(cursor + count, total)]
                cursor += count
                if take.size == 0:
                    continue
                if kind == "fast":
                    lo, hi = 0.1, float(np.quantile(clean, 0.10))
                else:
                    lo, hi = float(np.quantile(clean, 0.75)), t_max
                if not lo < hi:
                    continue
                rows = group[take]
                out[rows, 0] = lo + (hi - lo) * rng.random(take.size)
                out[rows, 3] = 0.0
    return out


@dataclass(frozen=True)
class DriftDiffusionModel(GenerativeModel):
    trials_per_condition: int = 100
    dt: float = 0.001
    t_max: float = 10.0
    contamination: float = 0.0
    contamination_mode: str = "both"
    prior_shape: float = 5.0
    prior_scale: float = 0.5
    chunk_steps: int = 256

    KNOBS = ("contamination", "contamination_mode")

    name = "ddm"
    theta_dim = 5
    theta_names = ("drift_0", "drift_1", "bound_0", "bound_1", "non_decision")
    data_kind = "set"
    row_dim = 4
    transform = LogTransform()

    def __post_init__(self):
        if self.trials_per_condition < 1:
            raise ValueError(f"trials_per_condition must be >= 1, got {self.trials_per_condition}")
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if not self.t_max > 0:
            raise ValueError(f"t_max must be > 0, got {self.t_max}")
        if not 0.0 <= self.contamination <= 1.0:
            raise ValueError(f"contamination must lie in [0, 1], got {self.contamination}")
        if self.contamination_mode not in _MODES:
            raise ValueError(f"contamination_mode must be one of {_MODES}")
        if not (self.prior_shape > 0 and self.prior_scale > 0):
            raise ValueError("prior_shape and prior_scale must be > 0")
        if self.chunk_steps < 1:
            raise ValueError(f"chunk_steps must be >= 1, got {self.chunk_steps}")

    @property
    def dataset_size(self) -> int:
        return 2 * self.trials_per_condition

    def sample_prior(self, rng: RngState, n: int) -> np.ndarray:
        return self.prior_scale * rng.gamma_shape(self.prior_shape, (n, 5))

    def simulate(self, rng: RngState, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64)
        base = self._walk_batch([rng.substream("walk")], theta[None, :])[0]
        if self.contamination > 0.0:
            base = contaminate_reaction_times(
                rng.substream("contaminate"), base, self.contamination, self.contamination_mode, self.t_max
            )
        return base

    def simulate_batch(self, rng: RngState, thetas: np.ndarray) -> np.ndarray:
        thetas = np.asarray(thetas, dtype=np.float64)
        n = thetas.shape[0]
        streams = [rng.substream("dataset", i, "walk") for i in range(n)]
        base = self._walk_batch(streams, thetas)
        if self.contamination > 0.0:
            base = np.stack(
                [
                    contaminate_reaction_times(
                        rng.substream("dataset", i, "contaminate"),
                        base[i],
                        self.contamination,
                        self.contamination_mode,
                        self.t_max,
                    )
                    for i in range(n)
                ]
            )
        return base

    def _walk_batch(self, streams: list, thetas: np.ndarray) -> np.ndarray:
        """Euler walks for all datasets, one noise stream per dataset.

        Noise for dataset ``i``, condition ``c``, chunk ``j`` comes from the
        substream ``(cond, c, chunk, j)`` of ``streams[i]``, so results do
        not depend on how many datasets share the batch. Absorbed trials are
        dropped from later chunks; a chunk draws noise only for the trials
        still running, in trial-index order.
        """
        if thetas.ndim != 2 or thetas.shape[1] != 5:
            raise ValueError(f"expected (n, 5) parameters, got {thetas.shape}")
        if np.any(thetas <= 0):
            raise ValueError("all drift-diffusion parameters must be positive")
        n = thetas.shape[0]
        n_t = self.trials_per_condition
        out = np.empty((n, 2 * n_t, 4))
        for cond in range(2):
            block = slice(cond * n_t, (cond + 1) * n_t)
            for i in range(n):
                rt, choice, censored = self._walk_condition(
                    streams[i].substream("cond", cond),
                    drift=thetas[i, cond],
                    bound=thetas[i, 2 + cond],
                    t0=thetas[i, 4],
                )
                out[i, block, 0] = rt
                out[i, block, 1] = choice
                out[i, block, 2] = float(cond)
                out[i, block, 3] = censored
        return out

    def _walk_condition(self, stream: RngState, drift: float, bound: float, t0: float):
        n_t = self.trials_per_condition
        max_steps = int(np.ceil(self.t_max / self.dt))
        n_chunks = (max_steps + self.chunk_steps - 1) // self.chunk_steps
        sqrt_dt = np.sqrt(self.dt)
        pos = np.full(n_t, bound / 2.0)
        steps = np.full(n_t, -1, dtype=np.int64)
        upper = np.zeros(n_t, dtype=bool)
        active = np.arange(n_t)
        for chunk in range(n_chunks):
            if active.size == 0:
                break
            length = min(self.chunk_steps, max_steps - chunk * self.chunk_steps)
            noise = stream.substream("chunk", chunk).standard_normal((active.size, length))
            paths = pos[active, None] + np.cumsum(drift * self.dt + sqrt_dt * noise, axis=1)
            hit_up = paths >= bound
            hit = hit_up | (paths <= 0.0)
            any_hit = hit.any(axis=1)
            first = hit.argmax(axis=1)
            done = active[any_hit]
            steps[done] = chunk * self.chunk_steps + first[any_hit] + 1
            upper[done] = hit_up[any_hit, first[any_hit]]
            pos[active] = paths[:, -1]
            active = active[~any_hit]
        crossed = steps >= 0
        rt = np.where(crossed, t0 + steps * self.dt, self.t_max)
        censored = ~crossed | (rt > self.t_max)
        rt = np.minimum(rt, self.t_max)
        choice = np.where(crossed, upper, pos >= bound / 2.0)
        return rt, choice.astype(np.float64), censored.astype(np.float64)
