"""Exact Markov-chain analysis of the learning dynamics.

The analytic chain uses an idealized error model: a consistent player's test
rejects with probability exactly ``xi**u_bar`` and an inconsistent player's
test rejects with probability exactly ``1 - xi**u_bar``.  Each player then
keeps or resamples its belief independently, so every transition row is an
outer product of per-player kernels

    K_i(z, b') = p_i(z) psi_i(b'|b_i) + (1 - p_i(z)) 1{b' = b_i}

with ``p_i`` the probability that player ``i`` resamples.  The unperturbed
chain is the ``xi -> 0`` limit of the same construction.
"""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import networkx as nx
import numpy as np

from .belief_space import StateSpace
from .dynamics import Resampler, RunConfig
from .game_core import Game

DENSE_LIMIT = 2000
BRUTE_FORCE_LIMIT = 8
TIE_TOL = 1e-9


class ReducibleChainError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


@dataclass
class TransitionModel:
    """A transition model stored as per-player kernels.

    ``factors[i]`` has shape ``(|Z|, |B_i|)``: the distribution of player
    ``i``'s next belief from each state.  The dense matrix is built on demand.
    """

    factors: list
    belief_sizes: tuple
    xi: float
    error_model: str = "idealized"
    _matrix: np.ndarray | None = field(default=None, repr=False)

    @property
    def state_count(self) -> int:
        return self.factors[0].shape[0]

    @property
    def matrix(self) -> np.ndarray:
        if self._matrix is None:
            P = self.factors[0]
            for K in self.factors[1:]:
                P = (P[:, :, None] * K[:, None, :]).reshape(P.shape[0], -1)
            self._matrix = P
        return self._matrix

    def row_sum_error(self) -> float:
        # the product of stochastic factors sums to prod of factor sums
        sums = np.ones(self.state_count)
        for K in self.factors:
            sums = sums * K.sum(axis=1)
        return float(np.max(np.abs(sums - 1.0)))

    def left_multiply(self, mu: np.ndarray) -> np.ndarray:
        """``mu @ P`` without forming ``P``."""
        out = mu[:, None] * self.factors[0]
        for K in self.factors[1:]:
            out = np.einsum("zs,zb->zsb", out, K).reshape(out.shape[0], -1)
        return out.sum(axis=0)


def consistent_states(space: StateSpace, tau: float) -> np.ndarray:
    """Indices of states where every player's belief is within ``tau`` of actual play."""
    return np.flatnonzero(space.consistent_mask(tau))


def _kernel(move_prob, psi, belief_idx):
    K = move_prob[:, None] * psi[belief_idx]
    K[np.arange(len(belief_idx)), belief_idx] += 1.0 - move_prob
    return K


def unperturbed_matrix(space: StateSpace, tau: float, test_probs: Sequence[float],
                       resampler: Resampler) -> TransitionModel:
    """``P^0``: consistent players keep their belief, inconsistent ones resample w.p. ``gamma_i``."""
    consistent = space.distances <= tau
    psis = resampler.matrices(space)
    factors = []
    for i in range(space.game.player_count):
        move = np.where(consistent[:, i], 0.0, float(test_probs[i]))
        factors.append(_kernel(move, psis[i], space.belief_index[:, i]))
    return TransitionModel(factors, space.belief_sizes, 0.0, "unperturbed")


def move_probabilities(space: StateSpace, config: RunConfig, xi: float, u_bar: float) -> np.ndarray:
    """Per-state, per-player probability of resampling under the idealized error model."""
    a = xi**u_bar
    consistent = space.distances <= config.tau
    out = np.empty_like(space.distances)
    for i, f in enumerate(config.transforms):
        e = xi ** np.asarray(f(space.anticipated[:, i]), dtype=float)
        g = config.test_probs[i]
        out[:, i] = np.where(consistent[:, i], g * (a + (1 - a) * e), g * ((1 - a) + a * e))
    return out


def idealized_transition_matrix(space: StateSpace, config: RunConfig, xi: float | None = None) -> TransitionModel:
    xi = config.xi if xi is None else xi
    if not 0 < xi < 1:
        raise ValueError(f"xi must lie in (0, 1), got {xi}")
    ub = config.u_bar(space.game)
    move = move_probabilities(space, config, xi, ub)
    psis = config.resampler.matrices(space)
    factors = [_kernel(move[:, i], psis[i], space.belief_index[:, i]) for i in range(space.game.player_count)]
    return TransitionModel(factors, space.belief_sizes, xi, "idealized")


def support_graph(model: TransitionModel) -> nx.DiGraph:
    P = model.matrix
    G = nx.DiGraph()
    G.add_nodes_from(range(P.shape[0]))
    src, dst = np.nonzero(P > 0)
    G.add_edges_from(zip(src.tolist(), dst.tolist()))
    return G


def recurrent_classes(model: TransitionModel) -> list[list[int]]:
    """Closed strongly connected components of the positive-support graph, sorted."""
    classes = [sorted(c) for c in nx.attracting_components(support_graph(model))]
    return sorted(classes)


def gth_stationary(P: np.ndarray) -> np.ndarray:
    """Stationary vector by Grassmann-Taksar-Heyman elimination.

    Only off-diagonal entries are used and no subtraction occurs, so the
    result keeps full relative accuracy even when exit probabilities are tiny.
    """
    A = np.array(P, dtype=float)
    n = A.shape[0]
    for k in range(n - 1, 0, -1):
        s = A[k, :k].sum()
        if s <= 0:
            raise ReducibleChainError(f"state {k} cannot reach states 0..{k - 1}; chain is reducible")
        A[:k, k] /= s
        A[:k, :k] += np.outer(A[:k, k], A[k, :k])
    mu = np.zeros(n)
    mu[0] = 1.0
    for k in range(1, n):
        mu[k] = mu[:k] @ A[:k, k]
    return mu / mu.sum()


def stationary_distribution(model: TransitionModel, tol: float = 1e-10,
                            max_iter: int = 10**6) -> np.ndarray:
    if model.error_model == "unperturbed" or model.xi == 0:
        raise ReducibleChainError("the unperturbed chain has no unique stationary distribution")
    n = model.state_count
    if n <= DENSE_LIMIT:
        P = model.matrix
        if not nx.is_strongly_connected(support_graph(model)):
            raise ReducibleChainError("transition support is not strongly connected")
        mu = gth_stationary(P)
        residual = float(np.max(np.abs(mu @ P - mu)))
        if residual >= tol:
            raise ConvergenceError(f"stationary residual {residual:.3g} above {tol}", residual)
        return mu
    mu = np.full(n, 1.0 / n)
    residual = math.inf
    for _ in range(max_iter):
        nxt = model.left_multiply(mu)
        nxt /= nxt.sum()
        residual = float(np.max(np.abs(nxt - mu)))
        mu = nxt
        if residual < min(tol, 1e-12):
            return mu
    raise ConvergenceError(f"power iteration stalled at residual {residual:.3g}", residual)


def edge_resistances(space: StateSpace, tau: float, transforms, test_probs=None) -> np.ndarray:
    """Dense matrix of one-step resistances ``r[z, z']``.

    Each consistent player whose belief changes contributes ``f_i(U_i(pi_i, b_i))``;
    inconsistent players move at no cost.  Transitions that need a player with
    zero test probability to move are impossible and get ``inf``.
    """
    n = space.game.player_count
    consistent = space.distances <= tau
    R = np.zeros((len(space), len(space)))
    for i, f in enumerate(transforms):
        b = space.belief_index[:, i]
        changed = b[:, None] != b[None, :]
        w = np.where(consistent[:, i], np.asarray(f(space.anticipated[:, i]), dtype=float), 0.0)
        R += w[:, None] * changed
        if test_probs is not None and test_probs[i] == 0:
            R[changed] = np.inf
    return R


def edge_resistance(space: StateSpace, z: int, z_prime: int, tau: float, transforms) -> float:
    r = 0.0
    for i, f in enumerate(transforms):
        if space.belief_index[z, i] != space.belief_index[z_prime, i] and space.distances[z, i] <= tau:
            r += float(f(space.anticipated[z, i]))
    return r


def dijkstra(weights: np.ndarray, source: int) -> np.ndarray:
    """Single-source shortest paths on a dense nonnegative weight matrix.

    ``weights[u, v]`` is the cost of edge ``u -> v``; ``inf`` means no edge.
    """
    W = np.asarray(weights, dtype=float)
    if np.any(W < 0):
        raise ValueError("negative edge weight")
    n = W.shape[0]
    dist = np.full(n, np.inf)
    dist[source] = 0.0
    done = np.zeros(n, dtype=bool)
    for _ in range(n):
        open_dist = np.where(done, np.inf, dist)
        u = int(np.argmin(open_dist))
        if not np.isfinite(open_dist[u]):
            break
        done[u] = True
        np.minimum(dist, np.where(done, np.inf, dist[u] + W[u]), out=dist)
    return dist


def min_path_resistance(z: int, w: int, resistances: np.ndarray) -> float:
    return float(dijkstra(resistances, z)[w])


@dataclass
class ResistanceGraph:
    """Consistent states with their node values and reduced edge weights.

    ``weights[k, l]`` is the minimum path resistance from node ``k`` to node
    ``l`` (both positions in ``nodes``); the diagonal is 0.
    """

    nodes: np.ndarray
    node_values: np.ndarray
    weights: np.ndarray
    realized_values: np.ndarray | None = None

    @property
    def size(self) -> int:
        return len(self.nodes)


def node_values(space: StateSpace, transforms) -> np.ndarray:
    return space.node_values(transforms)


def realized_node_values(space: StateSpace, transforms) -> np.ndarray:
    """``min_i f_i(U_i(pi))`` using the utility of the realized profile."""
    vals = np.column_stack([np.asarray(f(space.realized[:, i]), dtype=float) for i, f in enumerate(transforms)])
    return vals.min(axis=1)


def build_resistance_graph(space: StateSpace, tau: float, transforms, test_probs=None) -> ResistanceGraph:
    nodes = consistent_states(space, tau)
    if nodes.size == 0:
        raise ValueError("no consistent states; the resistance graph is empty")
    R = edge_resistances(space, tau, transforms, test_probs)
    W = np.array([dijkstra(R, int(z))[nodes] for z in nodes])
    return ResistanceGraph(nodes, node_values(space, transforms)[nodes], W,
                           realized_node_values(space, transforms)[nodes])


def stochastic_potential_closed_form(graph: ResistanceGraph) -> np.ndarray:
    if graph.size == 0:
        raise ValueError("empty resistance graph")
    v = np.asarray(graph.node_values, dtype=float)
    return v.sum() - v


def _in_tree_costs_bruteforce(W: np.ndarray, root: int) -> float:
    n = W.shape[0]
    others = [j for j in range(n) if j != root]
    if not others:
        return 0.0
    choices = [[p for p in range(n) if p != j] for j in others]
    parents = np.array(list(itertools.product(*choices)), dtype=np.int64)
    full = np.empty((parents.shape[0], n), dtype=np.int64)
    full[:, others] = parents
    full[:, root] = root
    # pointer doubling: after k rounds ptr follows 2**k parent links
    ptr = full
    for _ in range(math.ceil(math.log2(n))):
        ptr = np.take_along_axis(ptr, ptr, axis=1)
    valid = np.all(ptr == root, axis=1)
    cost = np.zeros(parents.shape[0])
    for k, j in enumerate(others):
        cost = cost + W[j, parents[:, k]]
    return float(cost[valid].min())


def _in_tree_cost_arborescence(W: np.ndarray, root: int) -> float:
    n = W.shape[0]
    if n == 1:
        return 0.0
    G = nx.DiGraph()
    G.add_nodes_from(range(n))
    for u in range(n):
        if u == root:
            continue
        for v in range(n):
            if v != u and np.isfinite(W[u, v]):
                # reversed edge: in-trees to root become out-trees from root
                G.add_edge(v, u, weight=float(W[u, v]))
    arb = nx.minimum_spanning_arborescence(G, attr="weight", preserve_attrs=True)
    return float(sum(d["weight"] for _, _, d in arb.edges(data=True)))


def stochastic_potentials(W: np.ndarray, method: str = "auto") -> np.ndarray:
    """Minimum in-tree weight rooted at each node of a complete weighted digraph.

    ``W[src, dst]`` is the edge weight.  ``bruteforce`` enumerates every
    parent function (up to 8 nodes); ``arborescence`` runs Edmonds' algorithm.
    """
    W = np.asarray(W, dtype=float)
    n = W.shape[0]
    if method == "auto":
        method = "bruteforce" if n <= BRUTE_FORCE_LIMIT else "arborescence"
    if method == "bruteforce":
        if n > BRUTE_FORCE_LIMIT:
            raise ValueError(f"brute-force enumeration is limited to {BRUTE_FORCE_LIMIT} nodes, got {n}")
        return np.array([_in_tree_costs_bruteforce(W, r) for r in range(n)])
    if method == "arborescence":
        return np.array([_in_tree_cost_arborescence(W, r) for r in range(n)])
    raise ValueError(f"unknown method {method!r}")


def stochastic_potential_bruteforce(graph: ResistanceGraph) -> np.ndarray:
    return stochastic_potentials(graph.weights, "auto")


def _argbest(values, best, tol):
    return np.flatnonzero(np.abs(values - best) <= tol)


def stochastically_stable_set(graph: ResistanceGraph, potentials: np.ndarray | None = None,
                              tol: float = TIE_TOL) -> np.ndarray:
    """State indices minimizing the stochastic potential, cross-checked against max node value."""
    if graph.size == 0:
        raise ValueError("empty resistance graph")
    if potentials is None:
        potentials = stochastic_potential_closed_form(graph)
    by_phi = _argbest(potentials, potentials.min(), tol)
    v = graph.node_values
    by_value = _argbest(v, v.max(), tol)
    if not np.array_equal(by_phi, by_value):
        raise AssertionError(
            f"potential minimizers {graph.nodes[by_phi].tolist()} differ from "
            f"node-value maximizers {graph.nodes[by_value].tolist()}"
        )
    return graph.nodes[by_phi]


@dataclass
class RefinementReport:
    case: str  # "identical", "dominated_player" or "general"
    player: int | None
    target_set: list
    matches: bool | None
    detail: str


def _transforms_identical(transforms, lo, hi, extra=()):
    grid = np.concatenate([np.linspace(lo, hi, 257), np.asarray(extra, dtype=float)])
    ref = np.asarray(transforms[0](grid), dtype=float)
    return all(np.allclose(np.asarray(f(grid), dtype=float), ref, rtol=0, atol=1e-12) for f in transforms[1:])


def corollary_selection(space: StateSpace, graph: ResistanceGraph, transforms, z_star,
                        tol: float = TIE_TOL) -> RefinementReport:
    """Which max-min refinement case applies, and whether its target set equals ``z_star``.

    Utility ranges are those of the anticipated utility over each player's
    whole belief space.
    """
    n = space.game.player_count
    ranges = [(float(p.anticipated.min()), float(p.anticipated.max())) for p in space.players]
    lo, hi = min(r[0] for r in ranges), max(r[1] for r in ranges)
    U = space.anticipated[graph.nodes]
    z_star = sorted(int(z) for z in z_star)
    if _transforms_identical(transforms, lo, hi, U.ravel()):
        score = U.min(axis=1)
        target = graph.nodes[_argbest(score, score.max(), tol)]
        t = sorted(int(z) for z in target)
        return RefinementReport("identical", None, t, t == z_star,
                               "identical transforms: max-min anticipated utility")
    for ih in range(n):
        top = float(transforms[ih](ranges[ih][1]))
        if all(top <= float(transforms[j](ranges[j][0])) for j in range(n) if j != ih):
            score = U[:, ih]
            target = graph.nodes[_argbest(score, score.max(), tol)]
            t = sorted(int(z) for z in target)
            return RefinementReport("dominated_player", ih, t, t == z_star,
                                   f"player {ih}'s transformed utility never exceeds the others'")
    return RefinementReport("general", None, [], None, "general case: no refinement claim")


@dataclass
class SlopeCheck:
    source: int
    target: int
    resistance: float
    slope: float
    rel_error: float


def fitted_slope(xis: Sequence[float], probs: Sequence[float]) -> float:
    x = np.log(np.asarray(xis, dtype=float))
    y = np.log(np.asarray(probs, dtype=float))
    return float(np.polyfit(x, y, 1)[0])


def perturbation_slope_check(space: StateSpace, config: RunConfig, entries=None,
                             xi_grid=(1e-2, 1e-3, 1e-4)) -> list[SlopeCheck]:
    """Log-log slope of ``P^xi[z, z']`` against ``xi`` compared with the resistance.

    ``entries`` defaults to every pair with positive resistance.
    """
    R = edge_resistances(space, config.tau, config.transforms, config.test_probs)
    ub = config.u_bar(space.game)
    if np.any(R[np.isfinite(R)] >= ub):
        raise AssertionError("an edge resistance reaches u_bar; the error-rate term would dominate")
    if entries is None:
        src, dst = np.nonzero(np.isfinite(R) & (R > 0))
        entries = list(zip(src.tolist(), dst.tolist()))
    mats = [idealized_transition_matrix(space, config, xi).matrix for xi in xi_grid]
    out = []
    for z, w in entries:
        probs = [P[z, w] for P in mats]
        if min(probs) <= 0:
            raise ValueError(f"transition {z}->{w} has zero probability")
        s = fitted_slope(xi_grid, probs)
        r = float(R[z, w])
        rel = abs(s - r) / r if r > 0 else abs(s)
        out.append(SlopeCheck(int(z), int(w), r, s, rel))
    return out


def mass_on(mu: np.ndarray, subset) -> float:
    return float(np.asarray(mu)[np.asarray(list(subset), dtype=int)].sum()) if len(subset) else 0.0


def max_abs_difference(a: TransitionModel, b: TransitionModel) -> float:
    return float(np.max(np.abs(a.matrix - b.matrix)))


refinement_selection = corollary_selection
