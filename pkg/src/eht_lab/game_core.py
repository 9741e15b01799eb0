"""Finite normal-form games, logit responses and utility transforms.

Payoffs are stored as a dense array of shape ``(n, |A_1|, ..., |A_n|)`` so that
``payoffs[i][a]`` is player ``i``'s payoff at joint action ``a``.  Joint
opponent profiles ``a_{-i}`` are always flattened in C order over the
opponents taken in increasing player index; every function in the package
that produces or consumes a vector over ``A_{-i}`` follows that convention.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

SIMPLEX_ATOL = 1e-9


class Game:
    """An immutable n-player normal-form game.

    Parameters
    ----------
    payoffs : array_like, shape (n, |A_1|, ..., |A_n|)
        ``payoffs[i, a_1, ..., a_n]`` is the payoff of player ``i``.
    action_labels : optional list of per-player label lists
    player_labels : optional list of player names
    """

    def __init__(self, payoffs, action_labels=None, player_labels=None):
        arr = np.array(payoffs, dtype=float)
        if arr.ndim < 3:
            raise ValueError("payoff tensor needs a player axis and at least two action axes")
        n = arr.shape[0]
        if n < 2 or arr.ndim != n + 1:
            raise ValueError(
                f"payoff tensor of shape {arr.shape} does not describe a {n}-player game"
            )
        if any(k < 1 for k in arr.shape[1:]):
            raise ValueError("every player needs at least one action")
        if not np.all(np.isfinite(arr)):
            raise ValueError("payoffs must be finite")
        arr.setflags(write=False)
        self.payoffs = arr
        self.player_count = n
        self.action_counts = tuple(int(k) for k in arr.shape[1:])
        if action_labels is None:
            action_labels = [[str(a) for a in range(k)] for k in self.action_counts]
        if player_labels is None:
            player_labels = [str(i) for i in range(n)]
        self.action_labels = [list(map(str, labels)) for labels in action_labels]
        self.player_labels = list(map(str, player_labels))
        if [len(x) for x in self.action_labels] != list(self.action_counts):
            raise ValueError("action label counts do not match the payoff tensor")
        if len(self.player_labels) != n:
            raise ValueError("player label count does not match the payoff tensor")
        self._slices = [self._build_slice(i) for i in range(n)]

    @classmethod
    def from_profile_table(cls, table, **kwargs) -> "Game":
        """Build from a nested table indexed ``[a_1]...[a_n] -> (u_1, ..., u_n)``."""
        arr = np.array(table, dtype=float)
        return cls(np.moveaxis(arr, -1, 0), **kwargs)

    def to_profile_table(self) -> list:
        return np.moveaxis(self.payoffs, 0, -1).tolist()

    @property
    def profile_count(self) -> int:
        return int(np.prod(self.action_counts))

    def opponents(self, player: int) -> list[int]:
        self._check_player(player)
        return [j for j in range(self.player_count) if j != player]

    def opponent_profile_count(self, player: int) -> int:
        return int(np.prod([self.action_counts[j] for j in self.opponents(player)]))

    def payoff_range(self, player: int) -> tuple[float, float]:
        self._check_player(player)
        return float(self.payoffs[player].min()), float(self.payoffs[player].max())

    def payoff_slice(self, player: int) -> np.ndarray:
        """``u_i(a_i, a_{-i})`` as a matrix of shape ``(|A_i|, |A_{-i}|)``."""
        self._check_player(player)
        return self._slices[player]

    def _build_slice(self, i):
        m = np.moveaxis(self.payoffs[i], i, 0).reshape(self.action_counts[i], -1)
        m = np.ascontiguousarray(m)
        m.setflags(write=False)
        return m

    def _check_player(self, player):
        if not 0 <= player < self.player_count:
            raise IndexError(f"player index {player} out of range for {self.player_count} players")

    def __eq__(self, other):
        return (
            isinstance(other, Game)
            and self.payoffs.shape == other.payoffs.shape
            and bool(np.array_equal(self.payoffs, other.payoffs))
            and self.action_labels == other.action_labels
            and self.player_labels == other.player_labels
        )

    def __repr__(self):
        return f"Game(players={self.player_count}, actions={self.action_counts})"


def as_mixed_strategy(weights, size: int | None = None) -> np.ndarray:
    """Validate a probability vector and return it as a float array."""
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or (size is not None and w.shape[0] != size):
        raise ValueError(f"expected a strategy over {size} actions, got shape {w.shape}")
    if np.any(w < -SIMPLEX_ATOL) or abs(w.sum() - 1.0) > SIMPLEX_ATOL:
        raise ValueError(f"not a point of the probability simplex: {w}")
    return w


def validate_profile(game: Game, profile: Sequence) -> list[np.ndarray]:
    if len(profile) != game.player_count:
        raise ValueError(
            f"profile has {len(profile)} strategies for {game.player_count} players"
        )
    return [as_mixed_strategy(p, k) for p, k in zip(profile, game.action_counts)]


def product_of_marginals(marginals: Sequence) -> np.ndarray:
    """Flattened outer product of independent marginals (C order)."""
    out = np.ones(1)
    for m in marginals:
        out = np.multiply.outer(out, np.asarray(m, dtype=float)).ravel()
    return out


def expected_utility(game: Game, player: int, profile: Sequence) -> float:
    """``U_i(pi)``: expected payoff of ``player`` under independent mixing."""
    game._check_player(player)
    strategies = validate_profile(game, profile)
    value = game.payoffs[player]
    for s in strategies:
        value = np.tensordot(s, value, axes=(0, 0))
    return float(value)


def _marginals_of(belief):
    return getattr(belief, "marginals", belief)


def action_utilities_vs_belief(game: Game, player: int, belief) -> np.ndarray:
    """Expected payoff of each own action against the product of the belief marginals.

    ``belief`` is a ``BeliefProfile`` or any sequence holding one marginal per
    opponent (in increasing opponent index).
    """
    opponents = game.opponents(player)
    marginals = list(_marginals_of(belief))
    if len(marginals) != len(opponents):
        raise ValueError(f"need {len(opponents)} opponent marginals, got {len(marginals)}")
    for j, m in zip(opponents, marginals):
        if np.shape(m) != (game.action_counts[j],):
            raise ValueError(
                f"marginal for player {j} has shape {np.shape(m)}, expected ({game.action_counts[j]},)"
            )
    return game.payoff_slice(player) @ product_of_marginals(marginals)


def logit(utilities, sigma: float) -> np.ndarray:
    """Softmax of ``utilities / sigma`` with max-subtraction."""
    if not sigma > 0:
        raise ValueError(f"temperature must be positive, got {sigma}")
    u = np.asarray(utilities, dtype=float) / sigma
    z = np.exp(u - u.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def smooth_best_response(game: Game, player: int, belief, sigma: float) -> np.ndarray:
    return logit(action_utilities_vs_belief(game, player, belief), sigma)


def deviation_payoffs(game: Game, player: int, profile: Sequence) -> np.ndarray:
    """``U_i(a_i, pi_{-i})`` for every own action ``a_i``."""
    strategies = validate_profile(game, profile)
    return action_utilities_vs_belief(
        game, player, [strategies[j] for j in game.opponents(player)]
    )


def epsilon_ne_gap(game: Game, profile: Sequence) -> float:
    """Largest gain any player gets from a unilateral deviation.

    Pure deviations suffice because ``U_i`` is linear in ``pi_i``.
    """
    strategies = validate_profile(game, profile)
    gap = 0.0
    for i in range(game.player_count):
        dev = deviation_payoffs(game, i, strategies)
        gap = max(gap, float(dev.max() - dev @ strategies[i]))
    return max(gap, 0.0)


@dataclass(frozen=True)
class UtilityTransform:
    """Increasing map from utilities to exploration exponents.

    ``kind`` is ``"identity"``, ``"affine"`` (``scale * u + shift``) or
    ``"table"`` (piecewise-linear through ``breakpoints``/``values``, clamped
    outside the table).
    """

    kind: str = "identity"
    scale: float = 1.0
    shift: float = 0.0
    breakpoints: tuple = field(default=())
    values: tuple = field(default=())

    def __post_init__(self):
        if self.kind == "identity":
            return
        if self.kind == "affine":
            if not (math.isfinite(self.scale) and math.isfinite(self.shift)):
                raise ValueError("affine transform needs finite scale and shift")
            if self.scale <= 0:
                raise ValueError(f"affine transform must be increasing, got scale={self.scale}")
            return
        if self.kind == "table":
            bp, vals = tuple(map(float, self.breakpoints)), tuple(map(float, self.values))
            object.__setattr__(self, "breakpoints", bp)
            object.__setattr__(self, "values", vals)
            if len(bp) < 2 or len(bp) != len(vals):
                raise ValueError("table transform needs at least two (breakpoint, value) pairs")
            if any(b2 <= b1 for b1, b2 in zip(bp, bp[1:])):
                raise ValueError("table breakpoints must be strictly increasing")
            if any(v2 <= v1 for v1, v2 in zip(vals, vals[1:])):
                raise ValueError("table values must be strictly increasing")
            if vals[0] <= 0:
                raise ValueError("table values must be strictly positive")
            return
        raise ValueError(f"unknown transform kind {self.kind!r}")

    @classmethod
    def identity(cls):
        return cls("identity")

    @classmethod
    def affine(cls, scale, shift):
        return cls("affine", scale=float(scale), shift=float(shift))

    @classmethod
    def table(cls, breakpoints, values):
        return cls("table", breakpoints=tuple(breakpoints), values=tuple(values))

    def __call__(self, u):
        if self.kind == "identity":
            return u * 1.0
        if self.kind == "affine":
            return self.scale * u + self.shift
        out = np.interp(u, self.breakpoints, self.values)
        return float(out) if np.ndim(out) == 0 else out

    def validate_on(self, lo: float, hi: float, positive_from: float | None = None) -> None:
        """Check monotonicity on ``[lo, hi]`` and positivity on ``[positive_from, hi]``.

        Raises ``ValueError`` naming the violated property.
        """
        if self.kind == "table" and not (self.breakpoints[0] <= lo and hi <= self.breakpoints[-1]):
            if hi > lo:
                raise ValueError(
                    f"table transform is flat outside [{self.breakpoints[0]}, "
                    f"{self.breakpoints[-1]}], payoff range is [{lo}, {hi}]"
                )
        start = lo if positive_from is None else positive_from
        if not self(start) > 0:
            raise ValueError(f"transform output {self(start)} at u={start} is not positive")

    def to_dict(self) -> dict:
        if self.kind == "identity":
            return {"kind": "identity"}
        if self.kind == "affine":
            return {"kind": "affine", "scale": self.scale, "shift": self.shift}
        return {"kind": "table", "breakpoints": list(self.breakpoints), "values": list(self.values)}

    @classmethod
    def from_dict(cls, d: dict) -> "UtilityTransform":
        kind = d.get("kind", "identity")
        if kind == "affine":
            return cls.affine(d.get("scale", 1.0), d.get("shift", 0.0))
        if kind == "table":
            return cls.table(d["breakpoints"], d["values"])
        return cls(kind)


def transform_utility(transform: UtilityTransform, u: float) -> float:
    return float(transform(u))


def u_bar(game: Game, transforms: Sequence[UtilityTransform]) -> float:
    """Vertex upper bound ``sum_i f_i(max_a u_i(a)) + 1`` on total transformed utility."""
    if len(transforms) != game.player_count:
        raise ValueError("need one transform per player")
    return float(sum(f(game.payoff_range(i)[1]) for i, f in enumerate(transforms)) + 1.0)
