"""Windowed-mass confidence score, its EWMA smoothing, and measurement gating.

A tracker that outputs one discrete distribution per box coordinate gets a
confidence in [0, 1]: the probability mass inside a small window centered at
each distribution's mode, reduced over the four coordinates by min. A smoothed
copy of that score (EWMA) drives the accept/reject decisions for tracker
measurements, ego-motion measurements, and template updates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geom import Pmf, Pmf4


@dataclass(frozen=True)
class GatingConfig:
    """Thresholds for the score and the measurement gates.

    alpha is the window fraction of the bin axis. Only alpha has an
    empirically fixed value; the tau_* thresholds are tunable defaults.
    tau_sigma applies to the diagonal of the ego-motion covariance.
    """

    alpha: float = 0.03
    alpha_ewma: float = 0.3
    tau_ewma: float = 0.45
    tau_diff: float = 0.25
    tau_template: float = 0.7
    tau_sigma: float = 1e-3

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must be in (0, 1)")
        if not 0.0 < self.alpha_ewma <= 1.0:
            raise ValueError("alpha_ewma must be in (0, 1]")
        for name in ("tau_ewma", "tau_diff", "tau_template"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} must be in [0, 1]")
        if self.tau_sigma < 0.0:
            raise ValueError("tau_sigma must be nonnegative")


@dataclass
class EwmaState:
    """Smoothed confidence score for one tracked sequence."""

    s: float = 0.0
    initialized: bool = False


def window_bounds(k_star: int, alpha: float, n: int) -> tuple[int, int]:
    """Integer bin window of width ~alpha*n centered at k_star, clamped to [0, n-1]."""
    if not 0 <= k_star < n:
        raise ValueError(f"peak {k_star} outside [0, {n})")
    half = alpha * n / 2.0
    k_min = max(0, math.ceil(k_star - half))
    k_max = min(n - 1, math.floor(k_star + half))
    return k_min, k_max


def coordinate_score(pmf: Pmf, alpha: float) -> float:
    """Probability mass inside the window around the pmf's mode.

    Argmax ties break toward the lowest bin index.
    """
    k_star = int(np.argmax(pmf.bins))
    k_min, k_max = window_bounds(k_star, alpha, pmf.n)
    return float(pmf.bins[k_min : k_max + 1].sum())


def pmf4_confidence(p: Pmf4, alpha: float) -> float:
    """Lowest of the four per-coordinate window scores."""
    return min(coordinate_score(pmf, alpha) for pmf in p.as_dict().values())


def ewma_update(state: EwmaState, p_k: float, alpha_ewma: float) -> EwmaState:
    """Exponentially weighted moving average of the score.

    The first observed score initializes the average.
    """
    if not 0.0 <= p_k <= 1.0:
        raise ValueError(f"score {p_k} outside [0, 1]")
    if not state.initialized:
        return EwmaState(s=p_k, initialized=True)
    return EwmaState(s=alpha_ewma * p_k + (1.0 - alpha_ewma) * state.s, initialized=True)


def gate_tracker(state: EwmaState, p_k: float, cfg: GatingConfig) -> bool:
    """Accept a tracker measurement, given the EWMA already updated with p_k.

    Rejects when the smoothed score is low or when the instantaneous score
    dropped sharply below it.
    """
    if state.s < cfg.tau_ewma:
        return False
    if (state.s - p_k) > cfg.tau_diff:
        return False
    return True


def gate_ego(ego_cov: np.ndarray, cfg: GatingConfig) -> bool:
    """Accept an ego-motion measurement iff its worst diagonal variance is small."""
    cov = np.asarray(ego_cov, dtype=np.float64)
    return float(np.max(np.diag(cov))) <= cfg.tau_sigma


def gate_template(p_k: float, cfg: GatingConfig) -> bool:
    """Allow a template update only on strictly high-confidence frames."""
    return p_k > cfg.tau_template
