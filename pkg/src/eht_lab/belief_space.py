"""Discretized belief simplices, belief profiles and the joint state space.

Beliefs are integer count vectors out of ``M`` so grid membership and state
identity are exact.  Orderings are lexicographic throughout:

* grid points of one simplex in ascending lexicographic order of counts;
* player ``i``'s belief space ``B_i`` is the product of the opponents' grids,
  first opponent most significant;
* a joint state is the tuple of belief indices, player 0 most significant.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from functools import cached_property
from typing import Iterator, Sequence

import numpy as np

from .game_core import Game, logit, product_of_marginals

DEFAULT_STATE_CAP = 10**6
DISTANCE_MODES = ("joint_product", "concatenated_marginals")


class CapacityError(RuntimeError):
    """Raised when an enumeration would exceed the configured size cap."""

    def __init__(self, what: str, attempted: int, cap: int):
        super().__init__(f"{what} has {attempted} elements, above the cap of {cap}")
        self.attempted = attempted
        self.cap = cap


def state_cap(override: int | None = None) -> int:
    """Resolve the enumeration cap: explicit argument, then ``EHT_STATE_CAP``, then default."""
    if override is not None:
        return int(override)
    env = os.environ.get("EHT_STATE_CAP")
    if env:
        return int(float(env))
    return DEFAULT_STATE_CAP


def simplex_size(dimension: int, M: int) -> int:
    return math.comb(M + dimension - 1, dimension - 1)


def _compositions(total, parts):
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def enumerate_simplex(dimension: int, M: int, cap: int | None = None) -> np.ndarray:
    """All integer compositions of ``M`` into ``dimension`` parts, lexicographically sorted.

    Returns an int array of shape ``(C(M+k-1, k-1), k)``; divide by ``M`` for
    probabilities.
    """
    if dimension < 1 or M < 1:
        raise ValueError(f"need dimension >= 1 and M >= 1, got {dimension}, {M}")
    count = simplex_size(dimension, M)
    cap = state_cap(cap)
    if count > cap:
        raise CapacityError(f"simplex grid (k={dimension}, M={M})", count, cap)
    return np.array(list(_compositions(M, dimension)), dtype=np.int64).reshape(count, dimension)


class DiscretizedSimplex:
    """The grid ``{m/M}`` on the probability simplex over ``dimension`` actions."""

    def __init__(self, dimension: int, M: int, cap: int | None = None):
        self.dimension = int(dimension)
        self.M = int(M)
        self.counts = enumerate_simplex(self.dimension, self.M, cap)
        self.counts.setflags(write=False)
        self._index = {tuple(c): k for k, c in enumerate(self.counts.tolist())}

    @cached_property
    def points(self) -> np.ndarray:
        return self.counts / self.M

    def __len__(self):
        return self.counts.shape[0]

    def index_of(self, counts) -> int:
        key = tuple(int(c) for c in counts)
        if key not in self._index:
            raise KeyError(f"{key} is not a point of the M={self.M} grid")
        return self._index[key]

    def __contains__(self, counts):
        return tuple(int(c) for c in counts) in self._index


def nearest_grid_point(x, M: int) -> np.ndarray:
    """Nearest point (in l2) of the ``M``-grid to the simplex point ``x``, as counts.

    The optimum rounds ``M x`` down and hands the remaining units to the
    coordinates with the largest fractional parts.  Among equal fractional
    parts the later coordinate gets the unit, which yields the
    lexicographically smallest optimal count vector.
    """
    y = np.asarray(x, dtype=float) * M
    base = np.floor(y)
    frac = y - base
    base = base.astype(np.int64)
    missing = int(M - base.sum())
    if missing > 0:
        idx = np.arange(len(y))
        order = np.lexsort((-idx, -frac))
        base[order[:missing]] += 1
    elif missing < 0:
        # only reachable through rounding noise when x does not sum to 1 exactly
        idx = np.arange(len(y))
        order = np.lexsort((idx, frac))
        for k in order:
            if missing == 0:
                break
            if base[k] > 0:
                base[k] -= 1
                missing += 1
    return base


@dataclass(frozen=True)
class BeliefProfile:
    """Player ``owner``'s belief: one grid point (integer counts out of ``M``) per opponent."""

    owner: int
    counts: tuple
    M: int

    def __post_init__(self):
        object.__setattr__(self, "counts", tuple(tuple(int(c) for c in m) for m in self.counts))
        for m in self.counts:
            if sum(m) != self.M or min(m) < 0:
                raise ValueError(f"{m} is not a point of the M={self.M} grid")

    @property
    def marginals(self) -> list[np.ndarray]:
        return [np.array(m, dtype=float) / self.M for m in self.counts]

    def product(self) -> np.ndarray:
        return product_of_marginals(self.marginals)


def product_distribution(belief) -> np.ndarray:
    """Joint distribution over ``A_{-i}`` induced by independent marginals."""
    return product_of_marginals(getattr(belief, "marginals", belief))


def nearest_grid_belief(target: Sequence, M: int, owner: int = -1) -> BeliefProfile:
    """Per-marginal nearest grid point to a real opponent profile."""
    return BeliefProfile(owner, tuple(tuple(nearest_grid_point(m, M)) for m in target), M)


def belief_distance(belief_product, strategy_product, belief_marginals=None,
                    strategy_marginals=None, mode: str = "joint_product"):
    """Distance between a belief and the opponents' actual strategies.

    ``joint_product`` compares the induced distributions over ``A_{-i}``;
    ``concatenated_marginals`` stacks the per-opponent differences.
    """
    if mode == "joint_product":
        return np.linalg.norm(np.asarray(belief_product) - np.asarray(strategy_product), axis=-1)
    if mode == "concatenated_marginals":
        sq = sum(
            np.sum((np.asarray(b) - np.asarray(s)) ** 2, axis=-1)
            for b, s in zip(belief_marginals, strategy_marginals)
        )
        return np.sqrt(sq)
    raise ValueError(f"unknown distance mode {mode!r}; expected one of {DISTANCE_MODES}")


class PlayerBeliefs:
    """Enumerated belief space ``B_i`` of one player with cached responses.

    Attributes
    ----------
    counts : int array (|B_i|, n_opponents, ...) as a list of per-opponent count arrays
    products : (|B_i|, |A_{-i}|) product distributions
    utilities : (|B_i|, |A_i|) action utilities against each belief
    responses : (|B_i|, |A_i|) smooth best responses
    anticipated : (|B_i|,) anticipated utility ``U_i(Br(b), b)``
    """

    def __init__(self, game: Game, player: int, M: int, sigma: float, cap: int | None = None):
        self.player = player
        self.M = M
        self.opponents = game.opponents(player)
        self.grids = [DiscretizedSimplex(game.action_counts[j], M, cap) for j in self.opponents]
        sizes = [len(g) for g in self.grids]
        self.size = int(np.prod(sizes))
        cap = state_cap(cap)
        if self.size > cap:
            raise CapacityError(f"belief space of player {player}", self.size, cap)
        grid_idx = np.indices(sizes).reshape(len(sizes), -1).T
        self.grid_index = grid_idx
        self.marginals = [g.points[grid_idx[:, k]] for k, g in enumerate(self.grids)]
        prod = np.ones((self.size, 1))
        for m in self.marginals:
            prod = (prod[:, :, None] * m[:, None, :]).reshape(self.size, -1)
        self.products = prod
        self.utilities = prod @ game.payoff_slice(player).T
        self.responses = logit(self.utilities, sigma)
        self.anticipated = np.einsum("ba,ba->b", self.responses, self.utilities)

    def __len__(self):
        return self.size

    def belief(self, index: int) -> BeliefProfile:
        counts = tuple(tuple(g.counts[self.grid_index[index, k]]) for k, g in enumerate(self.grids))
        return BeliefProfile(self.player, counts, self.M)

    def index_of(self, belief: BeliefProfile) -> int:
        idx = [g.index_of(c) for g, c in zip(self.grids, belief.counts)]
        return int(np.ravel_multi_index(idx, [len(g) for g in self.grids]))


@dataclass(frozen=True)
class SystemState:
    """A node of the chain: beliefs plus the smooth best responses they induce."""

    index: int
    belief_indices: tuple
    beliefs: tuple
    strategies: tuple


class StateSpace(Sequence):
    """The full product state space ``Z = B_1 x ... x B_n`` with per-state caches.

    Per-state arrays (``distances``, ``anticipated``, ``realized``) have shape
    ``(|Z|, n)``.
    """

    def __init__(self, game: Game, M: int, sigma: float, cap: int | None = None,
                 distance_mode: str = "joint_product"):
        if distance_mode not in DISTANCE_MODES:
            raise ValueError(f"unknown distance mode {distance_mode!r}")
        if M < 1:
            raise ValueError(f"M must be a positive integer, got {M}")
        if not sigma > 0:
            raise ValueError(f"sigma must be positive, got {sigma}")
        self.game = game
        self.M = int(M)
        self.sigma = float(sigma)
        self.distance_mode = distance_mode
        cap = state_cap(cap)
        n = game.player_count
        sizes = [
            math.prod(simplex_size(game.action_counts[j], M) for j in game.opponents(i))
            for i in range(n)
        ]
        total = math.prod(sizes)
        if total > cap:
            raise CapacityError("state space", total, cap)
        self.players = [PlayerBeliefs(game, i, self.M, self.sigma, cap) for i in range(n)]
        self.belief_sizes = tuple(sizes)
        self.size = total
        self.belief_index = np.indices(sizes).reshape(n, -1).T
        self._compute_state_tables()

    def _compute_state_tables(self):
        game, n = self.game, self.game.player_count
        bi = self.belief_index
        pi = [self.players[i].responses[bi[:, i]] for i in range(n)]
        self.strategy_table = pi
        dist = np.empty((self.size, n))
        realized = np.empty((self.size, n))
        anticipated = np.empty((self.size, n))
        for i in range(n):
            pb = self.players[i]
            opp = game.opponents(i)
            prod = np.ones((self.size, 1))
            for j in opp:
                prod = (prod[:, :, None] * pi[j][:, None, :]).reshape(self.size, -1)
            belief_prod = pb.products[bi[:, i]]
            belief_marg = [m[bi[:, i]] for m in pb.marginals]
            dist[:, i] = belief_distance(
                belief_prod, prod, belief_marg, [pi[j] for j in opp], self.distance_mode
            )
            dev = prod @ game.payoff_slice(i).T
            realized[:, i] = np.einsum("za,za->z", pi[i], dev)
            anticipated[:, i] = pb.anticipated[bi[:, i]]
        self.distances = dist
        self.realized = realized
        self.anticipated = anticipated

    def __len__(self):
        return self.size

    def __getitem__(self, index):
        if isinstance(index, slice):
            return [self[k] for k in range(*index.indices(self.size))]
        index = int(index)
        if index < 0:
            index += self.size
        if not 0 <= index < self.size:
            raise IndexError(index)
        idx = tuple(int(x) for x in self.belief_index[index])
        beliefs = tuple(p.belief(k) for p, k in zip(self.players, idx))
        strategies = tuple(s[index].copy() for s in self.strategy_table)
        return SystemState(index, idx, beliefs, strategies)

    def __iter__(self) -> Iterator[SystemState]:
        for k in range(self.size):
            yield self[k]

    def index_of(self, belief_indices) -> int:
        return int(np.ravel_multi_index(tuple(belief_indices), self.belief_sizes))

    def state_from_beliefs(self, beliefs: Sequence[BeliefProfile]) -> SystemState:
        return self[self.index_of([p.index_of(b) for p, b in zip(self.players, beliefs)])]

    def consistent_mask(self, tau: float) -> np.ndarray:
        return np.all(self.distances <= tau, axis=1)

    def node_values(self, transforms) -> np.ndarray:
        """``min_i f_i(U_i(pi_i, b_i))`` for every state."""
        vals = np.column_stack(
            [np.asarray(f(self.anticipated[:, i]), dtype=float) for i, f in enumerate(transforms)]
        )
        return vals.min(axis=1)


def enumerate_states(game: Game, M: int, sigma: float, cap: int | None = None,
                     distance_mode: str = "joint_product") -> StateSpace:
    return StateSpace(game, M, sigma, cap, distance_mode)


def br_image(game: Game, player: int, M: int, sigma: float, cap: int | None = None,
             tol: float = 1e-12) -> np.ndarray:
    """Distinct smooth best responses of ``player`` over its belief space."""
    responses = PlayerBeliefs(game, player, M, sigma, cap).responses
    return dedupe_rows(responses, tol)


def dedupe_rows(rows: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Rows of ``rows`` with near-duplicates (max-abs difference <= tol) removed, order kept."""
    kept: list[np.ndarray] = []
    for r in rows:
        if not any(np.max(np.abs(r - k)) <= tol for k in kept):
            kept.append(r)
    return np.array(kept)
