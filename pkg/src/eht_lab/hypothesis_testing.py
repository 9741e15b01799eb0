"""l2 goodness-of-fit test of a belief against observed opponent play.

A player with belief ``b_i`` observes ``T`` joint opponent profiles, forms the
empirical distribution ``pi_hat`` over ``A_{-i}`` and rejects when

    ||pi_hat - b_i||_2 > tau + sqrt(|A_{-i}| ln(2/alpha) / (2T)).

Samples are handled as count vectors over ``A_{-i}`` (a sufficient
statistic), so large ``T`` costs nothing beyond one multinomial draw.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .belief_space import PlayerBeliefs, dedupe_rows, product_distribution
from .game_core import Game, product_of_marginals
from .rng import make_rng

DEFAULT_MAX_T = 10**7


class TestsNeverNeeded(ValueError):
    """No (belief, strategy) pair is farther than tau apart, so no test can ever matter."""

    __test__ = False


class SampleSizeCapped(UserWarning):
    pass


@dataclass(frozen=True)
class TestConfig:
    tolerance: float
    significance: float
    sample_size: int

    __test__ = False  # keep pytest from collecting this class

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError(f"tolerance must be positive, got {self.tolerance}")
        if not 0 < self.significance < 1:
            raise ValueError(f"significance must lie in (0, 1), got {self.significance}")
        if int(self.sample_size) != self.sample_size or self.sample_size < 1:
            raise ValueError(f"sample size must be a positive integer, got {self.sample_size}")


@dataclass(frozen=True)
class TestOutcome:
    statistic: float
    threshold: float
    rejected: bool

    __test__ = False


def empirical_counts(samples: Sequence[int], profile_count: int) -> np.ndarray:
    s = np.asarray(samples, dtype=np.int64)
    if s.size == 0:
        raise ValueError("need at least one sample")
    if s.min() < 0 or s.max() >= profile_count:
        raise ValueError(f"sample indices must lie in [0, {profile_count})")
    return np.bincount(s, minlength=profile_count)


def empirical_distribution(samples: Sequence[int], profile_count: int) -> np.ndarray:
    counts = empirical_counts(samples, profile_count)
    return counts / counts.sum()


def rejection_threshold(config: TestConfig, profile_count: int) -> float:
    slack = math.sqrt(profile_count * math.log(2.0 / config.significance) / (2.0 * config.sample_size))
    return config.tolerance + slack


def _belief_vector(belief) -> np.ndarray:
    if hasattr(belief, "marginals"):
        return product_distribution(belief)
    return np.asarray(belief, dtype=float)


def test_statistic(counts, belief) -> float:
    counts = np.asarray(counts)
    return float(np.linalg.norm(counts / counts.sum() - _belief_vector(belief)))


def run_test(belief, samples, config: TestConfig, counts=None) -> TestOutcome:
    """Test ``belief`` (a ``BeliefProfile`` or a distribution over ``A_{-i}``).

    Pass either the raw sample sequence or, with ``samples=None``, a count
    vector via ``counts``.
    """
    b = _belief_vector(belief)
    if counts is None:
        counts = empirical_counts(samples, b.shape[0])
    counts = np.asarray(counts)
    if counts.shape != b.shape:
        raise ValueError(f"counts over {counts.shape} profiles, belief over {b.shape}")
    if int(counts.sum()) != config.sample_size:
        raise ValueError(f"got {int(counts.sum())} samples, config expects {config.sample_size}")
    stat = test_statistic(counts, b)
    thr = rejection_threshold(config, b.shape[0])
    return TestOutcome(stat, thr, stat > thr)


def sample_size_for_gap(gap: float, profile_count: int, alpha: float) -> int:
    """Smallest T making both error probabilities at most ``alpha`` at distance ``tau + gap``."""
    if not gap > 0:
        raise ValueError("gap must be positive")
    return math.ceil(2.0 * profile_count * math.log(2.0 / alpha) / gap**2)


@dataclass(frozen=True)
class SampleSizeReport:
    sample_size: int
    uncapped: int
    capped: bool
    min_gap: float
    player: int


def sample_size_report(game: Game, M: int, sigma: float, tau: float, alpha: float,
                       max_T: int = DEFAULT_MAX_T, cap: int | None = None) -> SampleSizeReport:
    """T(alpha) over all players, beliefs and opponent profiles in the image of Br."""
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    beliefs = [PlayerBeliefs(game, i, M, sigma, cap) for i in range(game.player_count)]
    images = [dedupe_rows(pb.responses) for pb in beliefs]
    best = None
    for i in range(game.player_count):
        opp_images = [images[j] for j in game.opponents(i)]
        grids = np.indices([len(im) for im in opp_images]).reshape(len(opp_images), -1).T
        profiles = np.array([product_of_marginals([im[k] for im, k in zip(opp_images, g)]) for g in grids])
        dist = np.linalg.norm(beliefs[i].products[:, None, :] - profiles[None, :, :], axis=-1)
        gaps = dist[dist > tau] - tau
        if gaps.size == 0:
            continue
        g = float(gaps.min())
        t = math.ceil(2.0 * game.opponent_profile_count(i) * math.log(2.0 / alpha) / g**2)
        if best is None or t > best[0]:
            best = (t, g, i)
    if best is None:
        raise TestsNeverNeeded(
            "every belief is within tau of every reachable opponent profile; tests never reject"
        )
    t, g, i = best
    capped = t > max_T
    if capped:
        warnings.warn(f"T(alpha)={t} exceeds max_T={max_T}; using the cap", SampleSizeCapped, stacklevel=2)
    return SampleSizeReport(min(t, int(max_T)), t, capped, g, i)


def required_sample_size(game: Game, M: int, sigma: float, tau: float, alpha: float,
                         max_T: int = DEFAULT_MAX_T, cap: int | None = None) -> int:
    return sample_size_report(game, M, sigma, tau, alpha, max_T, cap).sample_size


@dataclass(frozen=True)
class ErrorEstimate:
    kind: str  # "type1" at consistent pairs, "type2" at inconsistent ones
    rate: float
    halfwidth: float
    distance: float
    trials: int


def estimate_error_rates(belief, true_strategy_profile, config: TestConfig, trials: int,
                         seed: int | None = None) -> ErrorEstimate:
    """Monte Carlo error rate of the test at one (belief, truth) pair.

    ``true_strategy_profile`` is either a list of opponent mixed strategies or
    a distribution over ``A_{-i}``.  Returns the rejection frequency when the
    pair is consistent (type I) and the acceptance frequency otherwise
    (type II), with a 3-sigma binomial half-width.
    """
    if trials < 100:
        raise ValueError("use at least 100 trials")
    b = _belief_vector(belief)
    truth = true_strategy_profile
    if isinstance(truth, (list, tuple)):
        truth = product_of_marginals(truth)
    truth = np.asarray(truth, dtype=float)
    truth = truth / truth.sum()
    distance = float(np.linalg.norm(truth - b))
    rng = make_rng(seed)
    counts = rng.multinomial(config.sample_size, truth, size=trials)
    stats = np.linalg.norm(counts / config.sample_size - b, axis=1)
    rejected = stats > rejection_threshold(config, b.shape[0])
    if distance <= config.tolerance:
        kind, errors = "type1", rejected
    else:
        kind, errors = "type2", ~rejected
    p = float(errors.mean())
    return ErrorEstimate(kind, p, 3.0 * math.sqrt(p * (1 - p) / trials), distance, trials)
