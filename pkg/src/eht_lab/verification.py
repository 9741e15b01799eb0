"""Checks of the parameter bounds and structural conditions behind equilibrium selection."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .belief_space import (
    PlayerBeliefs,
    StateSpace,
    belief_distance,
    dedupe_rows,
    nearest_grid_belief,
)
from .game_core import (
    Game,
    action_utilities_vs_belief,
    epsilon_ne_gap,
    logit,
    product_of_marginals,
    smooth_best_response,
)
from .rng import make_rng


@dataclass
class ParameterCertificate:
    epsilon: float
    sigma: float
    tau: float
    M: int
    sigma_bound: float
    tau_bound: float
    M_bound: float
    sigma_ok: bool
    tau_ok: bool
    M_ok: bool
    factors: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.sigma_ok and self.tau_ok and self.M_ok

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["passed"] = self.passed
        return d


def _game_constants(game: Game) -> dict:
    max_actions = max(game.action_counts)
    return {
        "players": game.player_count,
        "max_actions": max_actions,
        "joint_profiles": game.profile_count,
        "max_payoff": float(game.payoffs.max()),
        "max_own_times_opponent_profiles": max(
            game.action_counts[i] * game.opponent_profile_count(i) for i in range(game.player_count)
        ),
    }


def parameter_bounds(game: Game, epsilon: float, sigma: float, tau: float) -> tuple[float, float, float, dict]:
    """(sigma bound, tau bound at ``sigma``, M bound at ``sigma``/``tau``) plus the constants used."""
    c = _game_constants(game)
    log_a = math.log(c["max_actions"])
    sigma_bound = math.inf if log_a == 0 else epsilon / (2.0 * log_a)
    u, k = c["max_payoff"], c["max_own_times_opponent_profiles"]
    if u <= 0:
        # the bounds are stated for a positive payoff scale
        return sigma_bound, math.nan, math.nan, c
    tau_bound = epsilon * sigma / (2.0 * math.sqrt(c["joint_profiles"]) * u * k)
    M_bound = (c["players"] * c["max_actions"] / tau) * (
        1.0 + math.sqrt(c["max_actions"]) / sigma * u * k * c["players"]
    )
    return sigma_bound, tau_bound, M_bound, c


def check_assumption1(game: Game, epsilon: float, sigma: float, tau: float, M: int) -> ParameterCertificate:
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if not sigma > 0:
        raise ValueError("sigma must be positive for the logit response to exist")
    if not tau > 0:
        raise ValueError("tau must be positive")
    sb, tb, mb, c = parameter_bounds(game, epsilon, sigma, tau)
    return ParameterCertificate(
        epsilon, sigma, tau, int(M), sb, tb, mb,
        sigma <= sb, bool(tau <= tb), bool(M >= mb), c,
    )


def compliant_parameters(game: Game, epsilon: float) -> tuple[float, float, int]:
    """Largest sigma and tau and the smallest M that satisfy the three bounds."""
    sb, _, _, _ = parameter_bounds(game, epsilon, 1.0, 1.0)
    sigma = sb if math.isfinite(sb) else 1.0
    _, tau, _, _ = parameter_bounds(game, epsilon, sigma, 1.0)
    _, _, mb, _ = parameter_bounds(game, epsilon, sigma, tau)
    return sigma, tau, math.ceil(mb)


class FixedPointError(RuntimeError):
    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


def _br_profile(game, profile, sigma):
    return [
        smooth_best_response(game, i, [profile[j] for j in game.opponents(i)], sigma)
        for i in range(game.player_count)
    ]


def find_smooth_br_fixed_point(game: Game, sigma: float, tol: float = 1e-10, max_iter: int = 100_000,
                               eta: float = 0.5, initial=None) -> list[np.ndarray]:
    """Logit equilibrium by damped iteration ``pi <- (1 - eta) pi + eta Br(pi)``."""
    if initial is None:
        pi = [np.full(k, 1.0 / k) for k in game.action_counts]
    else:
        pi = [np.asarray(p, dtype=float) for p in initial]
    residual = math.inf
    for _ in range(max_iter):
        br = _br_profile(game, pi, sigma)
        residual = max(float(np.max(np.abs(p - b))) for p, b in zip(pi, br))
        if residual < tol:
            return pi
        pi = [(1 - eta) * p + eta * b for p, b in zip(pi, br)]
    raise FixedPointError(f"no fixed point within {max_iter} iterations (residual {residual:.3g})", residual)


@dataclass
class ConstructionReport:
    certificate: ParameterCertificate
    pi_star: list
    belief_counts: list
    pi_dagger: list
    belief_to_fixed_point: list
    response_shift: list
    belief_to_play: list
    epsilon_gap: float
    tau: float
    epsilon: float

    @property
    def checks(self) -> dict:
        return {
            "belief_near_fixed_point": max(self.belief_to_fixed_point) <= self.tau,
            "response_near_fixed_point": max(self.response_shift) <= self.tau,
            "belief_consistent": max(self.belief_to_play) <= self.tau,
            "epsilon_nash": self.epsilon_gap <= self.epsilon,
        }

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def to_dict(self) -> dict:
        return {
            "certificate": self.certificate.to_dict(),
            "pi_star": [p.tolist() for p in self.pi_star],
            "belief_counts": self.belief_counts,
            "pi_dagger": [p.tolist() for p in self.pi_dagger],
            "belief_to_fixed_point": self.belief_to_fixed_point,
            "response_shift": self.response_shift,
            "belief_to_play": self.belief_to_play,
            "epsilon_gap": self.epsilon_gap,
            "checks": self.checks,
            "passed": self.passed,
        }


def _dist(game, i, belief_marginals, strategy_marginals, mode):
    return float(belief_distance(
        product_of_marginals(belief_marginals), product_of_marginals(strategy_marginals),
        belief_marginals, strategy_marginals, mode,
    ))


def verify_prop2_constructive(game: Game, epsilon: float, sigma: float, tau: float, M: int,
                              distance_mode: str = "joint_product", **fp_kwargs) -> ConstructionReport:
    """Build the consistent state next to the logit equilibrium and check it.

    ``b_i`` is the per-marginal nearest grid point to ``pi*_{-i}`` and
    ``pi = Br(b)``.  Only the handful of grid points involved are touched, so
    this runs at the very fine ``M`` the parameter bounds demand.
    """
    cert = check_assumption1(game, epsilon, sigma, tau, M)
    pi_star = find_smooth_br_fixed_point(game, sigma, **fp_kwargs)
    n = game.player_count
    beliefs = [nearest_grid_belief([pi_star[j] for j in game.opponents(i)], M, owner=i) for i in range(n)]
    pi_dagger = [smooth_best_response(game, i, beliefs[i], sigma) for i in range(n)]
    d1, d2, d3 = [], [], []
    for i in range(n):
        opp = game.opponents(i)
        marg = beliefs[i].marginals
        d1.append(_dist(game, i, marg, [pi_star[j] for j in opp], distance_mode))
        br_star = smooth_best_response(game, i, [pi_star[j] for j in opp], sigma)
        d2.append(float(np.linalg.norm(br_star - pi_dagger[i])))
        d3.append(_dist(game, i, marg, [pi_dagger[j] for j in opp], distance_mode))
    return ConstructionReport(
        cert, pi_star, [list(map(list, b.counts)) for b in beliefs], pi_dagger,
        d1, d2, d3, epsilon_ne_gap(game, pi_dagger), tau, epsilon,
    )


@dataclass
class DestabilizingBeliefReport:
    passed: bool
    threshold: float
    witnesses: dict
    failure: tuple | None
    tau: float

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "threshold": self.threshold,
            "failure": None if self.failure is None else list(map(_jsonable, self.failure)),
            "witness_count": len(self.witnesses),
            "tau": self.tau,
        }


def _jsonable(x):
    return list(x) if isinstance(x, tuple) else x


def _bad_belief_scores(space: StateSpace):
    """For each (i, b_{-i}) the score of every candidate belief of player i.

    The score of ``b~_i`` is ``min(dist(b~_i, Br_{-i}(b_{-i})), min_j ||Br_i(b~_i) - b_ji||)``;
    a witness exists for the cell iff the best score exceeds tau.
    Yields ``(i, b_minus_i_indices, scores, dist_to_play, dist_to_beliefs)``.
    """
    game = space.game
    for i in range(game.player_count):
        opp = game.opponents(i)
        me = space.players[i]
        ranges = [range(len(space.players[j])) for j in opp]
        for combo in itertools.product(*ranges):
            play = [space.players[j].responses[bj] for j, bj in zip(opp, combo)]
            play_prod = product_of_marginals(play)
            d_play = belief_distance(
                me.products, play_prod[None, :],
                me.marginals, [p[None, :] for p in play], space.distance_mode,
            )
            d_bel = np.full(len(me), np.inf)
            for j, bj in zip(opp, combo):
                pj = space.players[j]
                k = pj.opponents.index(i)
                b_ji = pj.marginals[k][bj]
                d_bel = np.minimum(d_bel, np.linalg.norm(me.responses - b_ji, axis=1))
            yield i, tuple(combo), np.minimum(d_play, d_bel), d_play, d_bel


def check_assumption2(space: StateSpace, tau: float) -> DestabilizingBeliefReport:
    """Search every player and every opponents' belief profile for a destabilizing belief."""
    witnesses = {}
    failure = None
    threshold = math.inf
    for i, combo, scores, d_play, d_bel in _bad_belief_scores(space):
        ok = np.flatnonzero((d_play > tau) & (d_bel > tau))
        threshold = min(threshold, float(scores.max()))
        if ok.size:
            witnesses[(i, combo)] = int(ok[0])
        elif failure is None:
            failure = (i, combo)
    return DestabilizingBeliefReport(failure is None, threshold, witnesses, failure, tau)


@dataclass
class SimpleConditionReport:
    image_sizes: list
    threshold: float
    tau: float
    image_ok: bool
    tau_ok: bool

    @property
    def passed(self) -> bool:
        return self.image_ok and self.tau_ok

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["passed"] = self.passed
        return d


def check_simple_condition(space: StateSpace, tau: float) -> SimpleConditionReport:
    """Sufficient condition: every Br image has more than |I| points and tau is below the min-max-min distance."""
    n = space.game.player_count
    sizes = [len(dedupe_rows(p.responses)) for p in space.players]
    threshold = min(float(scores.max()) for _, _, scores, _, _ in _bad_belief_scores(space))
    return SimpleConditionReport(sizes, threshold, tau, all(s > n for s in sizes), tau < threshold)


def verify_lipschitz(game: Game, sigma: float, trials: int, seed: int | None = 0) -> float:
    """Largest ``sigma ||Br(b) - Br(b')|| / ||U(b) - U(b')||`` over random continuous belief pairs."""
    if trials < 1:
        raise ValueError("trials must be positive")
    rng = make_rng(seed)
    worst = 0.0
    for t in range(trials):
        i = t % game.player_count
        opp = game.opponents(i)
        b1 = [rng.dirichlet(np.ones(game.action_counts[j])) for j in opp]
        b2 = [rng.dirichlet(np.ones(game.action_counts[j])) for j in opp]
        u1 = action_utilities_vs_belief(game, i, b1)
        u2 = action_utilities_vs_belief(game, i, b2)
        du = float(np.linalg.norm(u1 - u2))
        if du == 0:
            continue
        dbr = float(np.linalg.norm(logit(u1, sigma) - logit(u2, sigma)))
        worst = max(worst, sigma * dbr / du)
    return worst


# descriptive aliases
check_parameter_bounds = check_assumption1
verify_consistent_state_construction = verify_prop2_constructive
check_destabilizing_beliefs = check_assumption2
check_br_image_condition = check_simple_condition
