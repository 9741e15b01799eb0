"""Epoch-based learning with episodic hypothesis tests.

Each epoch:

1. one multinomial draw of ``T`` joint action profiles from the current
   product strategy; every player sees the same counts, marginalized to
   ``A_{-i}``;
2. players in index order draw a test coin (probability ``gamma_i``);
3. a tested player runs the l2 test at significance ``xi ** u_bar``;
4. a tested player who does not reject draws an exploration coin with
   probability ``xi ** f_i(U_i(pi_i, b_i))``;
5. a player who rejected or explored draws a new belief from ``psi_i(.|b_i)``.

Every player acts on the state at the start of the epoch.  Random draws are
consumed in exactly the order above (player by player for steps 2 to 5), so a
seed reproduces a trajectory draw for draw.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .belief_space import StateSpace
from .game_core import Game, u_bar
from .hypothesis_testing import (
    DEFAULT_MAX_T,
    TestsNeverNeeded,
    required_sample_size,
)
from .rng import make_rng


@dataclass(frozen=True)
class Resampler:
    """Belief resampling kernel ``psi_i(b'|b)``.

    ``uniform`` draws from ``B_i`` uniformly.  ``weighted`` takes per-player
    weights: a vector over ``B_i`` (same row for every current belief) or a
    full ``|B_i| x |B_i|`` matrix; rows are normalized.  Every entry must be at
    least ``floor``.
    """

    kind: str = "uniform"
    floor: float | None = None
    weights: tuple | None = None

    def __post_init__(self):
        if self.kind not in ("uniform", "weighted"):
            raise ValueError(f"unknown resampler kind {self.kind!r}")
        if self.kind == "weighted" and self.weights is None:
            raise ValueError("weighted resampler needs per-player weights")
        if self.floor is not None and not self.floor > 0:
            raise ValueError("resampler floor must be positive")

    def matrices(self, space: StateSpace) -> list[np.ndarray]:
        out = []
        for i, pb in enumerate(space.players):
            k = len(pb)
            if self.kind == "uniform":
                psi = np.full((k, k), 1.0 / k)
            else:
                w = np.asarray(self.weights[i], dtype=float)
                if w.shape == (k,):
                    w = np.tile(w, (k, 1))
                if w.shape != (k, k):
                    raise ValueError(f"resampler weights for player {i} must have shape ({k},) or ({k}, {k})")
                if np.any(w <= 0):
                    raise ValueError("resampler weights must be strictly positive")
                psi = w / w.sum(axis=1, keepdims=True)
            if self.floor is not None and psi.min() < self.floor:
                raise ValueError(f"resampler for player {i} has an entry {psi.min():.3g} below floor {self.floor}")
            out.append(psi)
        return out

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.floor is not None:
            d["floor"] = self.floor
        if self.weights is not None:
            d["weights"] = _listify(self.weights)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Resampler":
        w = d.get("weights")
        return cls(d.get("kind", "uniform"), d.get("floor"), _tuplify(w) if w is not None else None)


def _listify(x):
    return [_listify(v) for v in x] if isinstance(x, (list, tuple)) else x


def _tuplify(x):
    return tuple(_tuplify(v) for v in x) if isinstance(x, (list, tuple)) else x


@dataclass(frozen=True)
class RunConfig:
    xi: float
    test_probs: tuple
    transforms: tuple
    sigma: float
    tau: float
    M: int
    epochs: int = 1000
    epoch_length: int | None = None
    max_epoch_length: int = DEFAULT_MAX_T
    u_bar_override: float | None = None
    resampler: Resampler = field(default_factory=Resampler)
    seed: int | None = 0
    distance_mode: str = "joint_product"

    def __post_init__(self):
        object.__setattr__(self, "test_probs", tuple(float(g) for g in self.test_probs))
        object.__setattr__(self, "transforms", tuple(self.transforms))
        if not 0 < self.xi < 1:
            raise ValueError(f"xi must lie in (0, 1), got {self.xi}")
        if any(not 0 <= g <= 1 for g in self.test_probs):
            raise ValueError(f"test probabilities must lie in [0, 1], got {self.test_probs}")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.epoch_length is not None and self.epoch_length < 1:
            raise ValueError("epoch_length must be at least 1")
        if len(self.test_probs) != len(self.transforms):
            raise ValueError("need one test probability and one transform per player")

    def with_xi(self, xi: float) -> "RunConfig":
        return replace(self, xi=xi)

    def u_bar(self, game: Game) -> float:
        if self.u_bar_override is not None:
            return float(self.u_bar_override)
        return u_bar(game, self.transforms)


def default_epoch_length(game: Game, config: RunConfig) -> int:
    """``T(xi ** u_bar)`` capped at ``max_epoch_length``."""
    if config.epoch_length is not None:
        return int(config.epoch_length)
    alpha = config.xi ** config.u_bar(game)
    if alpha <= 0:
        raise ValueError(f"significance xi**u_bar underflows to 0 at xi={config.xi}")
    try:
        return required_sample_size(game, config.M, config.sigma, config.tau, alpha,
                                    max_T=config.max_epoch_length)
    except TestsNeverNeeded:
        return 1


@dataclass
class EpochLog:
    epoch: int
    state_before: int
    state_after: int
    tested: tuple
    rejected: tuple
    explored: tuple
    resampled_to: tuple
    joint_counts: tuple
    anticipated: tuple

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "state_before": self.state_before,
            "state_after": self.state_after,
            "tested": list(self.tested),
            "rejected": list(self.rejected),
            "explored": list(self.explored),
            "resampled_to": list(self.resampled_to),
            "joint_counts": list(self.joint_counts),
            "anticipated": list(self.anticipated),
        }


class Dynamics:
    """Precomputed tables for simulating one (game, config) pair."""

    def __init__(self, game: Game, config: RunConfig, space: StateSpace | None = None):
        if space is None:
            space = StateSpace(game, config.M, config.sigma, distance_mode=config.distance_mode)
        if len(config.test_probs) != game.player_count:
            raise ValueError("need one test probability per player")
        self.game = game
        self.config = config
        self.space = space
        self.epoch_length = default_epoch_length(game, config)
        self.u_bar = config.u_bar(game)
        self.alpha = config.xi ** self.u_bar
        n = game.player_count
        self._psi_cdf = [np.cumsum(p, axis=1) for p in config.resampler.matrices(space)]
        for c in self._psi_cdf:
            c[:, -1] = 1.0
        self._explore = []
        for i, f in enumerate(config.transforms):
            expo = np.asarray(f(space.players[i].anticipated), dtype=float)
            if np.any(expo <= 0):
                raise ValueError(
                    f"transform of player {i} gives a nonpositive exploration exponent "
                    f"({expo.min():.4g}); exploration would not vanish as xi -> 0"
                )
            self._explore.append(config.xi ** expo)
        self._threshold = [
            config.tau + math.sqrt(
                game.opponent_profile_count(i) * math.log(2.0 / self.alpha) / (2.0 * self.epoch_length)
            )
            for i in range(n)
        ]
        self._joint = [space.players[i].responses for i in range(n)]

    def joint_distribution(self, state: int) -> np.ndarray:
        bi = self.space.belief_index[state]
        p = np.ones(1)
        for i, resp in enumerate(self._joint):
            p = np.multiply.outer(p, resp[bi[i]]).ravel()
        return p

    def run_epoch(self, state: int, rng: np.random.Generator, epoch: int = 0):
        game, space, T = self.game, self.space, self.epoch_length
        n = game.player_count
        bi = space.belief_index[state]
        p = self.joint_distribution(state)
        counts = rng.multinomial(T, p)
        tensor = counts.reshape(game.action_counts)
        tested, rejected, explored, resampled = [], [], [], []
        new_bi = list(int(x) for x in bi)
        for i in range(n):
            b = int(bi[i])
            t_i = bool(rng.random() < self.config.test_probs[i])
            r_i = e_i = False
            if t_i:
                opp_counts = tensor.sum(axis=i).ravel()
                stat = np.linalg.norm(opp_counts / T - space.players[i].products[b])
                r_i = bool(stat > self._threshold[i])
                if not r_i:
                    e_i = bool(rng.random() < self._explore[i][b])
            target = None
            if r_i or e_i:
                target = int(np.searchsorted(self._psi_cdf[i][b], rng.random(), side="right"))
                new_bi[i] = target
            tested.append(t_i)
            rejected.append(r_i)
            explored.append(e_i)
            resampled.append(target)
        nxt = space.index_of(new_bi)
        log = EpochLog(
            epoch, int(state), nxt, tuple(tested), tuple(rejected), tuple(explored),
            tuple(resampled), tuple(int(c) for c in counts),
            tuple(float(space.anticipated[state, i]) for i in range(n)),
        )
        return nxt, log

    def run(self, initial: int, epochs: int | None = None, rng: np.random.Generator | None = None,
            replication: int = 0) -> list[EpochLog]:
        if epochs is None:
            epochs = self.config.epochs
        if rng is None:
            rng = make_rng(self.config.seed, replication)
        state = int(initial)
        logs = []
        for k in range(epochs):
            state, log = self.run_epoch(state, rng, k)
            logs.append(log)
        return logs


def run_epoch(dynamics: Dynamics, state, rng: np.random.Generator):
    """One epoch from ``state`` (a ``SystemState`` or a state index)."""
    idx = getattr(state, "index", state)
    nxt, log = dynamics.run_epoch(int(idx), rng)
    return dynamics.space[nxt], log


def run(dynamics: Dynamics, initial, replication: int = 0) -> list[EpochLog]:
    return dynamics.run(int(getattr(initial, "index", initial)), replication=replication)


def initial_state(spec, space: StateSpace, rng: np.random.Generator, mu=None) -> int:
    """Resolve an initial-state spec: ``"uniform"``, ``"stationary"`` (needs ``mu``),
    a state index, or a list of per-player belief indices."""
    if spec == "uniform":
        return int(rng.integers(len(space)))
    if spec == "stationary":
        if mu is None:
            raise ValueError("stationary start needs the stationary distribution")
        mu = np.asarray(mu, dtype=float)
        return int(np.searchsorted(np.cumsum(mu) / mu.sum(), rng.random(), side="right").clip(0, len(space) - 1))
    if isinstance(spec, (int, np.integer)):
        if not 0 <= spec < len(space):
            raise ValueError(f"initial state {spec} out of range")
        return int(spec)
    return space.index_of(spec)


def occupancy(trajectory: Sequence[EpochLog], state_subset: Iterable[int]) -> float:
    """Fraction of epochs whose post-epoch state lies in ``state_subset``."""
    if len(trajectory) == 0:
        raise ValueError("empty trajectory")
    subset = set(int(s) for s in state_subset)
    return sum(log.state_after in subset for log in trajectory) / len(trajectory)


def write_ndjson(path, trajectory: Sequence[EpochLog]) -> None:
    with open(path, "w") as fh:
        for log in trajectory:
            fh.write(json.dumps(log.to_dict(), separators=(",", ":")) + "\n")


def write_summary_csv(path, trajectory: Sequence[EpochLog], z_dagger, z_star) -> None:
    zd, zs = set(map(int, z_dagger)), set(map(int, z_star))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "state_index", "in_Z_dagger", "in_Z_star"])
        for log in trajectory:
            s = log.state_after
            w.writerow([log.epoch, s, int(s in zd), int(s in zs)])


def read_ndjson(path) -> list[EpochLog]:
    out = []
    with open(path) as fh:
        for line in fh:
            d = json.loads(line)
            out.append(EpochLog(
                d["epoch"], d["state_before"], d["state_after"], tuple(d["tested"]),
                tuple(d["rejected"]), tuple(d["explored"]), tuple(d["resampled_to"]),
                tuple(d["joint_counts"]), tuple(d["anticipated"]),
            ))
    return out


def reachability_lower_bound(config: RunConfig, space: StateSpace) -> float:
    """Lower bound ``prod_i gamma_i lambda_i xi^{max f_i}`` on every idealized one-epoch transition.

    A player moves with probability at least ``gamma_i xi^{f_i}`` whether or
    not it is consistent, and lands on any given belief with probability at
    least the smallest resampling entry ``lambda_i``.
    """
    bound = 1.0
    for i, (f, psi) in enumerate(zip(config.transforms, config.resampler.matrices(space))):
        fmax = float(np.max(f(space.players[i].anticipated)))
        bound *= config.test_probs[i] * psi.min() * config.xi ** fmax
    if bound <= 0:
        warnings.warn("reachability bound is zero; some test probability vanishes")
    return bound
