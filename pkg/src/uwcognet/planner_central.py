"""Centralized cognitive time-slot scheduling (ccts).

A central controller plans secondary transmissions for the whole chain under
a primary-throughput floor. Offline, it runs backward value iteration over a
finite basis of beliefs, the rows of two-decision transition products, which
is exactly the set of beliefs reachable when observations are error-free and
arrive with the two-slot information delay (one slot to sense, one slot to
exchange with the controller). Feasibility keeps only decisions whose planned
primary component stays above the budget share of the always-silent schedule;
staying silent is always allowed. Online, the current belief is a convex
combination of basis rows with known coefficients, and the controller
time-shares: it samples a basis row by its coefficient and plays that row's
stored argmax decision.
"""
from __future__ import annotations

import io
import json
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError
from .netmodel import PHASES, EpisodeResult, TransitionModel, observe, simulate_slot

PLAN_FORMAT_VERSION = 1
_FEAS_TOL = 1e-9
_COEFF_TOL = 1e-9


def decision_order(n_delta: int) -> np.ndarray:
    """Decision masks ordered fewest-transmitters-first, then by mask value.

    Argmax ties resolve toward the earliest entry, biasing toward primary
    protection.
    """
    return np.array(sorted(range(n_delta), key=lambda d: (bin(d).count("1"), d)),
                    dtype=np.int64)


class _BlockMatmul:
    """Phase-blocked left-multiplication by a transition matrix.

    Row block phase p only reaches column block phase p+1, so each product
    needs a third of the dense work.
    """

    def __init__(self, P: np.ndarray, block: int):
        self.block = block
        self.sub = [np.ascontiguousarray(
            P[p * block:(p + 1) * block,
              ((p + 1) % PHASES) * block:(((p + 1) % PHASES) + 1) * block])
            for p in range(PHASES)]

    def dot(self, x: np.ndarray) -> np.ndarray:
        """P @ x for x of shape (m,) or (m, k)."""
        out = np.empty_like(x)
        b = self.block
        for p in range(PHASES):
            q = (p + 1) % PHASES
            out[p * b:(p + 1) * b] = self.sub[p] @ x[q * b:(q + 1) * b]
        return out


def _blocked(model: TransitionModel):
    return [_BlockMatmul(model.P[d], model.space.block)
            for d in range(model.n_decisions)]


def silent_tail_values(P0: np.ndarray, g0: np.ndarray, horizon: int) -> np.ndarray:
    """Per-state primary tail values of the always-silent policy.

    Returns (horizon+1, m) with row t = E[sum_{tau>=t} primary bits | s_t].
    """
    m = P0.shape[0]
    tails = np.zeros((horizon + 1, m))
    for t in range(horizon - 1, -1, -1):
        tails[t] = g0 + P0 @ tails[t + 1]
    return tails


def baseline_pu_value(model: TransitionModel, horizon: int,
                      initial_state: int | None = None) -> np.ndarray:
    """Expected primary tail throughput of the always-silent policy.

    Returns sched of length horizon+1 with sched[t] = E[sum_{tau>=t} of the
    primary bits per slot] starting from the initial distribution; sched[T]=0.
    """
    x0 = model.initial_state if initial_state is None else initial_state
    tails = silent_tail_values(model.P[0], model.g_pu[0], horizon)
    mu = np.zeros(model.n_states)
    mu[x0] = 1.0
    sched = np.zeros(horizon + 1)
    for t in range(horizon):
        sched[t] = float(mu @ tails[t])
        mu = mu @ model.P[0]
    return sched


@dataclass
class PlanTable:
    """Offline plan: per-slot argmax decisions over the two-decision basis.

    decisions[t, d2, d1, s] is the decision for slot t at basis row
    (delta_{t-2}=d2, delta_{t-1}=d1, conditioning state s). w2/wp2 are the
    total/primary value tables of slot 2, used to choose the two
    pre-observation slots jointly. When built with keep_values, full
    per-slot value tables and feasible-set masks are retained for
    inspection and tests.
    """

    horizon: int
    beta: float
    decisions: np.ndarray
    baseline: np.ndarray
    w2: np.ndarray
    wp2: np.ndarray
    values: list | None = None
    pu_values: list | None = None
    feasible: list | None = None

    @property
    def n_decisions(self) -> int:
        return self.decisions.shape[1]

    def save(self, path):
        meta = {"format_version": PLAN_FORMAT_VERSION, "horizon": self.horizon,
                "beta": self.beta}
        np.savez_compressed(
            path, meta=json.dumps(meta), decisions=self.decisions,
            baseline=self.baseline, w2=self.w2, wp2=self.wp2)

    @classmethod
    def load(cls, path) -> "PlanTable":
        data = np.load(path, allow_pickle=False)
        meta = json.loads(str(data["meta"]))
        if meta.get("format_version") != PLAN_FORMAT_VERSION:
            raise NumericalError(
                f"unsupported plan format {meta.get('format_version')}")
        return cls(horizon=meta["horizon"], beta=meta["beta"],
                   decisions=data["decisions"], baseline=data["baseline"],
                   w2=data["w2"], wp2=data["wp2"])

    def dump_csv(self, stream: io.TextIOBase):
        """Flat dump (slot, basis index, value, pu value, decision mask);
        values require a keep_values plan."""
        stream.write("slot,basis_index,value,pu_value,decision\n")
        if self.values is None:
            raise NumericalError("plan was built without keep_values")
        t_count, d, _, m = self.decisions.shape
        for t in range(t_count):
            v = self.values[t].reshape(-1)
            vp = self.pu_values[t].reshape(-1)
            dec = self.decisions[t].reshape(-1)
            for idx in range(d * d * m):
                stream.write(f"{t},{idx},{v[idx]:.9g},{vp[idx]:.9g},{dec[idx]}\n")


def offline_plan(model: TransitionModel, horizon: int, beta: float,
                 keep_values: bool = False) -> PlanTable:
    """Backward value iteration over the basis rows.

    From basis row (d2, d1, s) with candidate decision a, the error-free
    future branches over the next conditioning state s' — the state the
    controller will have observed by the next slot, predicted from the known
    state s through P(d2) — and continues from the refreshed basis row
    (d1, a, s'). Values and their primary components collapse to blocked
    matrix products per decision combination.

    A decision is feasible at a basis row when its planned primary value
    stays above beta times the always-silent value from the same belief;
    comparing against the matched counterfactual keeps silence feasible
    everywhere and avoids punishing transmissions during idle spells.
    """
    if not 0.0 < beta <= 1.0:
        raise ValueError("beta must lie in (0, 1]")
    m = model.n_states
    d = model.n_decisions
    blocked = _blocked(model)
    order = decision_order(d)
    baseline = baseline_pu_value(model, horizon)
    silent = silent_tail_values(model.P[0], model.g_pu[0], horizon)

    # immediate rewards v . g(a) for every basis row: time-independent
    imm = np.empty((d, d, d, m))
    imm_p = np.empty((d, d, d, m))
    stage = np.empty((d, d, m))
    stage_p = np.empty((d, d, m))
    for b in range(d):
        stage[b] = blocked[b].dot(model.g.T).T       # (d over a, m)
        stage_p[b] = blocked[b].dot(model.g_pu.T).T
    for a0 in range(d):
        flat = stage.reshape(d * d, m).T
        flatp = stage_p.reshape(d * d, m).T
        imm[a0] = blocked[a0].dot(flat).T.reshape(d, d, m)
        imm_p[a0] = blocked[a0].dot(flatp).T.reshape(d, d, m)

    w = np.zeros((d, d, m))
    wp = np.zeros((d, d, m))
    w2 = np.zeros((d, d, m))
    wp2 = np.zeros((d, d, m))
    decisions = np.zeros((horizon, d, d, m), dtype=np.uint8)
    values = [] if keep_values else None
    pu_values = [] if keep_values else None
    feasible = [] if keep_values else None

    for t in range(horizon - 1, -1, -1):
        flat = w.reshape(d * d, m).T                  # successor rows (d1, a)
        flatp = wp.reshape(d * d, m).T
        z = np.empty((d, d, d, m))
        zp = np.empty((d, d, d, m))
        for a0 in range(d):
            z[a0] = imm[a0] + blocked[a0].dot(flat).T.reshape(d, d, m)
            zp[a0] = imm_p[a0] + blocked[a0].dot(flatp).T.reshape(d, d, m)
        # silent-policy primary value at every basis row
        half = np.empty((d, m))
        for b in range(d):
            half[b] = blocked[b].dot(silent[t])
        floor = np.empty((d, d, m))
        for a0 in range(d):
            floor[a0] = blocked[a0].dot(half.T).T
        feas = zp >= beta * floor[:, :, None, :] - _FEAS_TOL
        feas[:, :, 0, :] = True                       # silence stays feasible
        z_masked = np.where(feas, z, -np.inf)
        pick = np.argmax(z_masked[:, :, order, :], axis=2)
        chosen = order[pick]
        decisions[t] = chosen.astype(np.uint8)
        idx = chosen[:, :, None, :]
        w = np.take_along_axis(z, idx, axis=2)[:, :, 0, :]
        wp = np.take_along_axis(zp, idx, axis=2)[:, :, 0, :]
        if keep_values:
            values.insert(0, w.copy())
            pu_values.insert(0, wp.copy())
            mask = np.zeros((d, d, m), dtype=np.uint32)
            for a in range(d):
                mask |= (feas[:, :, a, :].astype(np.uint32)) << a
            feasible.insert(0, mask)
        if t == 2:
            w2, wp2 = w.copy(), wp.copy()

    return PlanTable(horizon=horizon, beta=beta, decisions=decisions,
                     baseline=baseline, w2=w2, wp2=wp2,
                     values=values, pu_values=pu_values, feasible=feasible)


def belief_update_central(model: TransitionModel, omega: np.ndarray,
                          delta_pred: int, delta_meas: int,
                          y: np.ndarray) -> np.ndarray:
    """Bayes update of the joint-state belief.

    Predicts through P(delta_pred), then weights by the product of per-sensor
    Gaussian likelihoods of the slot measured under delta_meas. Falls back to
    the bare prediction if every likelihood underflows.
    """
    pred = omega @ model.P[delta_pred]
    log_lik = np.zeros(model.n_states)
    for i in range(model.space.ns_hops):
        mean = model.obs_mean[i, delta_meas, :]
        sig = model.sensor_sigma[i]
        if sig > 0:
            log_lik += -0.5 * ((y[i] - mean) / sig) ** 2
        else:
            log_lik += np.where(np.abs(y[i] - mean) < 1e-9, 0.0, -np.inf)
    support = pred > 0
    max_ll = np.max(log_lik[support]) if support.any() else -np.inf
    if np.isfinite(max_ll):
        post = pred * np.exp(np.clip(log_lik - max_ll, -745.0, 0.0))
    else:
        post = pred  # every likelihood underflew: keep the prediction
    norm = post.sum()
    if norm <= 0.0 or not np.isfinite(norm):
        post = pred
        norm = post.sum()
        if norm <= 0.0 or not np.isfinite(norm):
            raise NumericalError("belief update normalizer vanished")
    return post / norm


def initial_decisions(model: TransitionModel, plan: PlanTable,
                      with_value: bool = False):
    """Jointly pick the two pre-observation decisions.

    Nothing has been sensed when slots 0 and 1 are committed, and after them
    the controller conditions on the known start state, so the slot-2 belief
    for the pair (d0, d1) is exactly the basis row (d0, d1, start). The pair
    maximizes the two immediate slots plus that row's stored value, subject
    to the primary floor; (0, 0) is always allowed.
    """
    x0 = model.initial_state
    omega = np.zeros(model.n_states)
    omega[x0] = 1.0
    d = model.n_decisions
    order = decision_order(d)
    best = (0, 0)
    best_val = -np.inf
    best_p = 0.0
    for a0 in order:
        pred = omega @ model.P[a0]
        v0 = float(omega @ model.g[a0])
        p0 = float(omega @ model.g_pu[a0])
        for a1 in order:
            if plan.horizon > 1:
                v = v0 + float(pred @ model.g[a1]) + float(plan.w2[a0, a1, x0])
                p = p0 + float(pred @ model.g_pu[a1]) + float(plan.wp2[a0, a1, x0])
            else:
                v, p = v0, p0
            feas = (a0 == 0 and a1 == 0) or \
                p >= plan.beta * plan.baseline[0] - _FEAS_TOL
            if feas and v > best_val:
                best = (int(a0), int(a1))
                best_val = v
                best_p = p
    if with_value:
        return best, best_val, best_p
    return best


def decide_online(model: TransitionModel, plan: PlanTable, t: int,
                  delta_prev2: int, delta_prev1: int,
                  posterior: np.ndarray, rng) -> int:
    """Decision for slot t >= 2 by stochastic time-sharing.

    The slot-t belief is sum_s posterior(s) * basis(delta_prev2,
    delta_prev1, s); a basis row is sampled with its coefficient and its
    stored argmax decision returned.
    """
    if t < 2:
        raise NumericalError("slots 0 and 1 are fixed by initial_decisions")
    total = float(posterior.sum())
    if abs(total - 1.0) > _COEFF_TOL:
        raise NumericalError(f"belief coefficients sum to {total}")
    s = int(rng.choice(model.n_states, p=posterior / total))
    return int(plan.decisions[t, delta_prev2, delta_prev1, s])


def plan_value(model: TransitionModel, plan: PlanTable):
    """(total, primary) planned value over the horizon from the start state."""
    _, val, val_p = initial_decisions(model, plan, with_value=True)
    return val, val_p


def run_episode_central(model: TransitionModel, plan: PlanTable, rng,
                        collect: bool = False) -> EpisodeResult:
    """Simulate one horizon under the plan.

    Per slot: secondaries act on the decision broadcast two slots earlier
    (buffer-masked), the controller folds in the previous slot's sensor
    reports, and broadcasts the decision for the next slot.
    """
    horizon = plan.horizon
    m = model.n_states
    x = model.initial_state
    e0 = np.zeros(m)
    e0[x] = 1.0
    d0, d1 = initial_decisions(model, plan)
    decided = {0: d0}
    if horizon > 1:
        decided[1] = d1
    posterior = e0  # over the state of slot t-1; exact at the start
    pu_total = 0.0
    su_total = 0.0
    trace_states = np.zeros(horizon, dtype=np.int64) if collect else None
    trace_cmd = np.zeros(horizon, dtype=np.int64) if collect else None
    trace_eff = np.zeros(horizon, dtype=np.int64) if collect else None
    trace_pu = np.zeros(horizon) if collect else None
    trace_su = np.zeros(horizon) if collect else None
    y_prev = None
    for t in range(horizon):
        d_cmd = decided[t]
        d_eff = model.effective_decision(x, d_cmd)
        y_now = observe(model, x, d_eff, rng)
        if collect:
            trace_states[t] = x
            trace_cmd[t] = d_cmd
            trace_eff[t] = d_eff
        x, pu_bits, su_bits = simulate_slot(model, x, d_eff, rng)
        pu_total += pu_bits
        su_total += su_bits
        if collect:
            trace_pu[t] = pu_bits
            trace_su[t] = su_bits
        # controller work during slot t: fold in y_{t-1}, broadcast t+1
        if t + 1 < horizon and t >= 1:
            if t >= 2:
                posterior = belief_update_central(
                    model, posterior, decided[t - 2], decided[t - 1], y_prev)
            decided[t + 1] = decide_online(
                model, plan, t + 1, decided[t - 1], d_cmd, posterior, rng)
        y_prev = y_now
    return EpisodeResult(pu_total, su_total, trace_states, trace_cmd,
                         trace_eff, trace_pu, trace_su)
