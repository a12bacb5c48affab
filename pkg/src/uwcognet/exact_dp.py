"""Brute-force optimal scheduling for tiny instances.

Two independent references used only by the test suite:

  * ``constrained_optimum`` enumerates every deterministic policy tree over
    the observation branches (with a configurable information delay) and
    returns the best one meeting the primary-throughput constraint, either
    global (whole horizon) or local (every tail).
  * ``dp_value`` runs the budget-threaded dynamic program over beliefs, with
    the remaining primary budget carried as a state and the same expected
    deduction applied on every observation branch.

Both refuse anything beyond a handful of reachable states or slots. The
oracle observation is the primary-only sensor mean (secondary contributions
are the controller's own choices and cancel out of the inference).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .netmodel import TransitionModel
from .planner_central import baseline_pu_value

_MAX_STATES = 8
_MAX_HORIZON = 4
_MAX_OBS_LEVELS = 5
_KEY_DECIMALS = 9


def reachable_states(model: TransitionModel, x0: int | None = None) -> list:
    """States reachable from the start under any decision sequence."""
    x0 = model.initial_state if x0 is None else x0
    seen = {x0}
    frontier = [x0]
    while frontier:
        x = frontier.pop()
        for d in range(model.n_decisions):
            for nx in np.nonzero(model.P[d, x] > 0)[0]:
                if int(nx) not in seen:
                    seen.add(int(nx))
                    frontier.append(int(nx))
    return sorted(seen)


def _check_caps(model: TransitionModel, horizon: int, states: list):
    if len(states) > _MAX_STATES:
        raise ValueError(
            f"oracle refuses {len(states)} reachable states (cap {_MAX_STATES})")
    if horizon > _MAX_HORIZON:
        raise ValueError(f"oracle refuses horizon {horizon} (cap {_MAX_HORIZON})")


def _obs_cells(model: TransitionModel, states: list, levels: int | None):
    """Map state -> observation cell id under noiseless sensing.

    ``levels`` caps the distinct primary-only signatures; None keeps them all
    (still bounded by the state count).
    """
    sigs = {}
    for x in states:
        key = tuple(round(float(model.obs_mean[i, 0, x]), _KEY_DECIMALS)
                    for i in range(model.space.ns_hops))
        sigs.setdefault(key, []).append(x)
    if levels is not None and len(sigs) > levels:
        raise ValueError(
            f"{len(sigs)} observation signatures exceed the {levels}-level cap")
    cell_of = {}
    for c, key in enumerate(sorted(sigs)):
        for x in sigs[key]:
            cell_of[x] = c
    return cell_of


@dataclass
class OracleResult:
    value: float
    pu_value: float
    policies_searched: int


def constrained_optimum(model: TransitionModel, horizon: int, beta: float,
                        delay: int = 2, local: bool = False,
                        x0: int | None = None,
                        obs_levels: int | None = None) -> OracleResult:
    """Best deterministic policy under the primary constraint.

    ``delay`` slots pass before an observation becomes usable (0 means the
    current slot's observation is seen before deciding). ``local`` switches
    the constraint from the single whole-horizon inequality to one inequality
    per tail.
    """
    x0 = model.initial_state if x0 is None else x0
    states = reachable_states(model, x0)
    _check_caps(model, horizon, states)
    cell_of = _obs_cells(model, states, obs_levels)
    baseline = baseline_pu_value(model, horizon, x0)
    n_delta = model.n_decisions

    best = OracleResult(-math.inf, 0.0, 0)

    def recurse(t, dist, eg_slots, egp_slots):
        """dist: {(state, usable_key, pending): prob} entering slot t."""
        if t == horizon:
            total = sum(eg_slots)
            pu = sum(egp_slots)
            ok = all(
                sum(egp_slots[tau:]) >= beta * baseline[tau] - 1e-12
                for tau in range(horizon)
            ) if local else pu >= beta * baseline[0] - 1e-12
            best.policies_searched += 1
            if ok and total > best.value:
                best.value = total
                best.pu_value = pu
            return
        # promote pending observations that have aged past the delay
        moved = {}
        for (x, usable, pending), p in dist.items():
            u, q = list(usable), list(pending)
            while len(q) > max(delay - 1, 0):
                u.append(q.pop(0))
            if delay == 0:
                u.append(cell_of[x])
            moved[(x, tuple(u), tuple(q))] = moved.get(
                (x, tuple(u), tuple(q)), 0.0) + p
        groups = sorted({k[1] for k in moved})
        for assignment in itertools.product(range(n_delta), repeat=len(groups)):
            act = dict(zip(groups, assignment))
            eg = 0.0
            egp = 0.0
            nxt = {}
            for (x, usable, pending), p in moved.items():
                a = act[usable]
                eg += p * model.g[a, x]
                egp += p * model.g_pu[a, x]
                cell = cell_of[x] if delay > 0 else None
                for nx in np.nonzero(model.P[a, x] > 0)[0]:
                    q = pending + (cell,) if delay > 0 else pending
                    key = (int(nx), usable, q)
                    nxt[key] = nxt.get(key, 0.0) + p * model.P[a, x, int(nx)]
            recurse(t + 1, nxt, eg_slots + [eg], egp_slots + [egp])

    recurse(0, {(x0, (), ()): 1.0}, [], [])
    return best


def dp_value(model: TransitionModel, horizon: int, beta: float,
             omega0: np.ndarray | None = None, t0: int = 0,
             eta0: float | None = None, x0: int | None = None,
             obs_levels: int | None = None):
    """Budget-threaded belief DP value from slot t0.

    The remaining primary budget eta is reduced by the expected primary
    throughput of each slot (identically on every observation branch) and
    must be exhausted by the horizon; an unmeetable branch scores -inf.
    beta = 0 makes the budget vacuous.
    """
    x_start = model.initial_state if x0 is None else x0
    states = reachable_states(model, x_start)
    _check_caps(model, horizon, states)
    cell_of = _obs_cells(model, states, obs_levels)
    baseline = baseline_pu_value(model, horizon, x_start)
    if omega0 is None:
        omega0 = np.zeros(model.n_states)
        omega0[x_start] = 1.0
    if eta0 is None:
        eta0 = beta * baseline[t0]
    n_delta = model.n_decisions
    cells = sorted(set(cell_of.values()))
    memo: dict = {}

    def key(t, omega, eta):
        return (t, tuple(np.round(omega[states], _KEY_DECIMALS)),
                round(eta, _KEY_DECIMALS))

    def value(t, omega, eta):
        if t == horizon:
            return 0.0 if eta <= 1e-9 else -math.inf
        k = key(t, omega, eta)
        if k in memo:
            return memo[k]
        best = -math.inf
        for a in range(n_delta):
            imm = float(omega @ model.g[a])
            imm_p = float(omega @ model.g_pu[a])
            pred = omega @ model.P[a]
            fut = 0.0
            for c in cells:
                mask = np.array([cell_of.get(x) == c
                                 for x in range(model.n_states)])
                p_c = float(pred[mask].sum())
                if p_c <= 0.0:
                    continue
                post = np.where(mask, pred, 0.0) / p_c
                sub = value(t + 1, post, eta - imm_p)
                if sub == -math.inf:
                    fut = -math.inf
                    break
                fut += p_c * sub
            if fut == -math.inf:
                continue
            best = max(best, imm + fut)
        memo[k] = best
        return best

    return value(t0, np.asarray(omega0, dtype=float), float(eta0))
