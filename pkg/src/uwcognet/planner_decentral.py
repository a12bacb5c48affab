"""Decentralized cognitive time-slot scheduling (dcts).

Each secondary hop plans alone against a local model of the primary hops
within its one-slot propagation neighborhood, with the source traffic
coefficients standing in for the (bounded) local arrival rate. Decisions are
binary, gated to the hop's reuse phase, and follow a threshold rule whose
two sides come from a small per-hop value table. Secondary-to-secondary
interference is left to the spatial reuse pattern during planning but fully
present in ground-truth simulation.

Packet sizes are optimized per hop separately: for each geometric critical
size, a one-constraint linear program over per-state transmit probabilities
is solved by the fractional-knapsack greedy, and the best size wins.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import NumericalError
from .netmodel import (PHASES, EpisodeResult, LossCalculator, Scenario,
                       TransitionModel, critical_sizes, observe, simulate_slot)

_FEAS_TOL = 1e-9


@dataclass
class LocalModel:
    """One secondary hop's view of the nearby primary pipeline.

    Local states pack (bits over member PU hops, phase). Member hops whose
    predecessor lies outside the neighborhood behave as traffic entry points
    driven by the source arrival chain; interior members relay. P[delta] are
    the two transition matrices; g/g_pu/g_su the per-state expected bits with
    primary credit at the last member hop.
    """

    su_hop: int
    members: tuple          # PU hop ids, ascending
    entries: tuple          # members with no predecessor in the set
    P: np.ndarray           # (2, m, m)
    g: np.ndarray           # (2, m)
    g_pu: np.ndarray
    g_su: np.ndarray
    obs_mean: np.ndarray    # (m,) primary-only sensor mean per local state
    sensor_sigma: float
    su_packet_bits: int
    # other secondaries audible at this sensor, by the phase they own:
    # nuisance[phase] = received powers; each transmits with nuisance_prior
    nuisance: tuple = ((), (), ())
    nuisance_prior: float = 0.8
    initial_state: int = 0

    @property
    def n_states(self) -> int:
        return self.P.shape[1]

    @property
    def receiver(self) -> int | None:
        return self.members[-1] if self.members else None

    def pack(self, bits: int, phase: int) -> int:
        return phase * (1 << len(self.members)) + bits

    def unpack(self, x: int):
        block = 1 << len(self.members)
        return x % block, x // block

    def active_members(self, x: int) -> int:
        bits, phase = self.unpack(x)
        mask = 0
        for k, j in enumerate(self.members):
            if (bits >> k) & 1 and j % PHASES == phase:
                mask |= 1 << k
        return mask


def neighborhood(scenario: Scenario, su_hop: int) -> tuple:
    """PU hops within the one-slot propagation radius of the hop's receiver
    (and on its sub-channel, when a band plan is active)."""
    topo = scenario.topology
    su_rx = topo.rx_pos("su", su_hop)
    reach_m = scenario.sensing_radius_slots * scenario.slotting.slot_s \
        * scenario.env.sound_speed
    su_ch = scenario.channel_of("su", su_hop)
    members = []
    for j in range(topo.np_hops):
        if scenario.channel_of("pu", j) != su_ch:
            continue
        d = min(float(np.linalg.norm(topo.tx_pos("pu", j) - su_rx)),
                float(np.linalg.norm(topo.rx_pos("pu", j) - su_rx)))
        if d <= reach_m:
            members.append(j)
    return tuple(members)


def build_local_model(scenario: Scenario, su_hop: int,
                      su_packet_bits: int | None = None,
                      losses: LossCalculator | None = None) -> LocalModel:
    """Assemble the local chain, throughput vectors and sensing stats."""
    if su_packet_bits is not None and su_packet_bits != scenario.su_packet_bits[su_hop]:
        sizes = list(scenario.su_packet_bits)
        sizes[su_hop] = int(su_packet_bits)
        scenario = replace(scenario, su_packet_bits=tuple(sizes))
        losses = None
    if losses is None:
        losses = LossCalculator(scenario)
    members = neighborhood(scenario, su_hop)
    entries = tuple(j for j in members if j - 1 not in members)
    n = len(members)
    m = PHASES * (1 << n)
    P = np.zeros((2, m, m))
    g_pu = np.zeros((2, m))
    g_su = np.zeros((2, m))
    obs_mean = np.zeros(m)
    a1, a2 = scenario.traffic.alpha1, scenario.traffic.alpha2
    l_p = scenario.pu_packet_bits
    l_s = scenario.su_packet_bits[su_hop]
    su_link = ("su", su_hop)

    # sensing powers from member hops at this hop's transmitter
    topo = scenario.topology
    sensor = topo.tx_pos("su", su_hop)
    own_ch = scenario.channel_of("su", su_hop)
    reach_m = scenario.sensing_radius_slots * scenario.slotting.slot_s \
        * scenario.env.sound_speed
    pw = np.zeros(n)
    for k, j in enumerate(members):
        d = float(np.linalg.norm(topo.tx_pos("pu", j) - sensor))
        if d <= reach_m:
            pw[k] = scenario.channel_power_linear(own_ch) \
                * scenario.mean_gain(d, own_ch)
    # audible sibling secondaries, grouped by the reuse phase they own;
    # their known powers enter the observation likelihood as on/off nuisances
    nuisance = [[], [], []]
    for v in range(topo.ns_hops):
        if v == su_hop or scenario.channel_of("su", v) != own_ch:
            continue
        d = float(np.linalg.norm(topo.tx_pos("su", v) - sensor))
        if d <= reach_m:
            p = scenario.channel_power_linear(own_ch) \
                * scenario.mean_gain(d, own_ch)
            nuisance[v % PHASES].append(p)

    lm = LocalModel(su_hop=su_hop, members=members, entries=entries,
                    P=P, g=np.zeros((2, m)), g_pu=g_pu, g_su=g_su,
                    obs_mean=obs_mean, sensor_sigma=0.0,
                    su_packet_bits=l_s,
                    nuisance=tuple(tuple(v) for v in nuisance))

    for x in range(m):
        bits, phase = lm.unpack(x)
        act = lm.active_members(x)
        active_hops = frozenset(("pu", members[k]) for k in _bits(act))
        obs_mean[x] = sum(pw[k] for k in _bits(act))
        next_phase = (phase + 1) % PHASES
        for delta in (0, 1):
            interf_su = frozenset([su_link]) if delta else frozenset()
            succ = {}
            for k in _bits(act):
                j = members[k]
                others = (active_hops - {("pu", j)}) | interf_su
                succ[k] = 1.0 - losses.loss(("pu", j), others)
            if n and (act >> (n - 1)) & 1:
                g_pu[delta, x] = l_p * succ[n - 1]
            if delta:
                g_su[delta, x] = l_s * (1.0 - losses.loss(su_link, active_hops))
            for mask in range(1 << len(succ)):
                prob = 1.0
                ok = {}
                for b, k in enumerate(succ):
                    if (mask >> b) & 1:
                        prob *= succ[k]
                        ok[k] = True
                    else:
                        prob *= 1.0 - succ[k]
                        ok[k] = False
                if prob == 0.0:
                    continue
                nbits = bits & ~act
                for k in ok:
                    if ok[k] and k + 1 < n and members[k + 1] == members[k] + 1:
                        nbits |= 1 << (k + 1)
                # entry hops resample their arrival bit when leaving their phase
                branches = [(nbits, prob)]
                for k, j in enumerate(members):
                    if j not in entries or j % PHASES != phase:
                        continue
                    p_on = a2 if (bits >> k) & 1 else a1
                    expanded = []
                    for nb, pr in branches:
                        if p_on > 0:
                            expanded.append((nb | (1 << k), pr * p_on))
                        if p_on < 1:
                            expanded.append((nb & ~(1 << k), pr * (1.0 - p_on)))
                    branches = expanded
                for nb, pr in branches:
                    P[delta, x, lm.pack(nb, next_phase)] += pr
    lm.g = g_pu + g_su
    peak = pw.max() if n else 0.0
    if scenario.sensing_noise_std is not None:
        lm.sensor_sigma = float(scenario.sensing_noise_std)
    else:
        ratio = 10.0 ** (scenario.detection_snr_db / 10.0)
        lm.sensor_sigma = peak / ratio if peak > 0 else 1.0
    return lm


def _bits(mask: int):
    k = 0
    while mask:
        if mask & 1:
            yield k
        mask >>= 1
        k += 1


def _nuisance_mixture(powers, prior: float):
    """(offset, weight) components for on/off combinations of known
    interfering powers."""
    comps = [(0.0, 1.0)]
    for p in powers:
        comps = [(off + b * p, wt * (prior if b else 1.0 - prior))
                 for off, wt in comps for b in (0, 1) if
                 (prior if b else 1.0 - prior) > 0]
    return comps


def belief_update_local(lm: LocalModel, omega: np.ndarray, delta_prev: int,
                        y: float) -> np.ndarray:
    """Scalar-observation Bayes update of the local belief.

    Sibling secondaries within earshot are not part of the local state, so
    their known powers enter the likelihood as independent on/off mixture
    components for the phase being observed.
    """
    pred = omega @ lm.P[delta_prev]
    sig = lm.sensor_sigma
    block = lm.n_states // PHASES
    log_lik = np.full(lm.n_states, -np.inf)
    for phase in range(PHASES):
        rows = slice(phase * block, (phase + 1) * block)
        comps = _nuisance_mixture(lm.nuisance[phase], lm.nuisance_prior)
        acc = np.full(block, -np.inf)
        for off, wt in comps:
            if sig > 0:
                term = math.log(wt) - 0.5 * ((y - lm.obs_mean[rows] - off) / sig) ** 2
            else:
                term = np.where(np.abs(y - lm.obs_mean[rows] - off) < 1e-9,
                                math.log(wt), -np.inf)
            acc = np.logaddexp(acc, term)
        log_lik[rows] = acc
    support = pred > 0
    max_ll = np.max(log_lik[support]) if support.any() else -np.inf
    if np.isfinite(max_ll):
        post = pred * np.exp(np.clip(log_lik - max_ll, -745.0, 0.0))
    else:
        post = pred
    norm = post.sum()
    if norm <= 0.0 or not np.isfinite(norm):
        post = pred
        norm = post.sum()
        if norm <= 0.0 or not np.isfinite(norm):
            raise NumericalError("local belief update normalizer vanished")
    return post / norm


def silent_tail_values_local(lm: LocalModel, horizon: int) -> np.ndarray:
    """Per-state always-silent primary tails, (horizon+1, m)."""
    tails = np.zeros((horizon + 1, lm.n_states))
    for t in range(horizon - 1, -1, -1):
        tails[t] = lm.g_pu[0] + lm.P[0] @ tails[t + 1]
    return tails


def baseline_local(lm: LocalModel, horizon: int) -> np.ndarray:
    """Always-silent primary tail schedule from the all-idle start."""
    tails = silent_tail_values_local(lm, horizon)
    mu = np.zeros(lm.n_states)
    mu[lm.initial_state] = 1.0
    sched = np.zeros(horizon + 1)
    for t in range(horizon):
        sched[t] = float(mu @ tails[t])
        mu = mu @ lm.P[0]
    return sched


@dataclass
class LocalPlanTable:
    """Per-slot value tables and threshold pieces for one secondary hop.

    w[t][dp, s] is the reward-to-go at basis row (previous decision dp,
    conditioning state s); wp its primary component. Threshold arrays hold
    both sides of the transmit rule and of the feasibility rule evaluated at
    every basis row. reuse/offset describe the eligibility cycle (reuse 0
    disables the gate for band-plan variants).
    """

    su_hop: int
    horizon: int
    beta_bar: float
    reuse: int
    offset: int
    w: list
    wp: list
    decisions: np.ndarray          # (T, 2, m) uint8
    baseline: np.ndarray
    silent: np.ndarray             # (T+1, m) always-silent per-state tails
    thr_lhs: np.ndarray            # (T, 2, m) immediate advantage of transmit
    thr_rhs: np.ndarray            # (T, 2, m) future advantage of silence
    con_lhs: np.ndarray            # (T, 2, m) planned primary value if transmit
    con_rhs: np.ndarray            # (T, 2, m) matched-silence budget floor

    def eligible(self, t: int) -> bool:
        return self.reuse == 0 or t % self.reuse == self.offset % self.reuse


def offline_plan_local(lm: LocalModel, horizon: int, beta_bar: float,
                       reuse: int = PHASES, offset: int | None = None) -> LocalPlanTable:
    """Backward value iteration over the one-decision basis rows.

    With error-free future sensing the next conditioning state is the
    current one, so both sides of the transmit threshold are linear in the
    belief; the tables record them at every basis row.
    """
    if not 0.0 < beta_bar <= 1.0:
        raise ValueError("beta_bar must lie in (0, 1]")
    offset = lm.su_hop if offset is None else offset
    m = lm.n_states
    base = baseline_local(lm, horizon)
    silent = silent_tail_values_local(lm, horizon)
    w_next = np.zeros((2, m))
    wp_next = np.zeros((2, m))
    w_list: list = [None] * (horizon + 1)
    wp_list: list = [None] * (horizon + 1)
    w_list[horizon] = w_next
    wp_list[horizon] = wp_next
    decisions = np.zeros((horizon, 2, m), dtype=np.uint8)
    thr_lhs = np.zeros((horizon, 2, m))
    thr_rhs = np.zeros((horizon, 2, m))
    con_lhs = np.zeros((horizon, 2, m))
    con_rhs = np.zeros((horizon, 2, m))
    plan = LocalPlanTable(su_hop=lm.su_hop, horizon=horizon, beta_bar=beta_bar,
                          reuse=reuse, offset=offset, w=w_list, wp=wp_list,
                          decisions=decisions, baseline=base, silent=silent,
                          thr_lhs=thr_lhs, thr_rhs=thr_rhs, con_lhs=con_lhs,
                          con_rhs=con_rhs)
    for t in range(horizon - 1, -1, -1):
        # z[dp, a, s] = value of decision a at basis row (dp, s)
        stage = lm.g + w_next                     # (2 over a, m)
        stage_p = lm.g_pu + wp_next
        z = np.einsum("pij,aj->pai", lm.P, stage)
        zp = np.einsum("pij,aj->pai", lm.P, stage_p)
        con_rhs[t] = beta_bar * (lm.P @ silent[t]) - _FEAS_TOL
        thr_lhs[t] = np.einsum("pij,j->pi", lm.P, lm.g[1] - lm.g[0])
        thr_rhs[t] = np.einsum("pij,j->pi", lm.P, w_next[0] - w_next[1])
        con_lhs[t] = zp[:, 1, :]
        if plan.eligible(t):
            take = (con_lhs[t] >= con_rhs[t]) & (thr_lhs[t] > thr_rhs[t])
        else:
            take = np.zeros((2, m), dtype=bool)
        decisions[t] = take.astype(np.uint8)
        w_next = np.where(take, z[:, 1, :], z[:, 0, :])
        wp_next = np.where(take, zp[:, 1, :], zp[:, 0, :])
        w_list[t] = w_next
        wp_list[t] = wp_next
    return plan


def decide_threshold(lm: LocalModel, plan: LocalPlanTable, t: int,
                     omega: np.ndarray) -> int:
    """Transmit decision at an arbitrary belief over the local states.

    Transmits only when the slot is eligible, the planned primary value
    under transmission clears the budget floor, and the immediate advantage
    beats the future advantage of silence (ties resolve to silence).
    """
    if not plan.eligible(t):
        return 0
    w_next = plan.w[t + 1]
    wp_next = plan.wp[t + 1]
    z1_p = float(omega @ (lm.g_pu[1] + wp_next[1]))
    if z1_p < plan.beta_bar * float(omega @ plan.silent[t]) - _FEAS_TOL:
        return 0
    lhs = float(omega @ (lm.g[1] - lm.g[0]))
    rhs = float(omega @ (w_next[0] - w_next[1]))
    return 1 if lhs > rhs else 0


def stationary_distribution(P: np.ndarray, tol: float = 1e-12,
                            max_iter: int = 100_000) -> np.ndarray:
    """Stationary vector of a row-stochastic matrix by power iteration.

    Iterates the three-step Cesaro average so periodic chains (the phase
    cycle) still converge; fails loudly if they do not.
    """
    P = np.asarray(P, dtype=float)
    m = P.shape[0]
    q = (P + P @ P + P @ P @ P) / 3.0
    pi = np.full(m, 1.0 / m)
    for _ in range(max_iter):
        nxt = pi @ q
        s = nxt.sum()
        if s <= 0:
            raise NumericalError("stationary iteration lost mass")
        nxt /= s
        if np.abs(nxt - pi).max() < tol:
            return nxt
        pi = nxt
    raise NumericalError("stationary distribution did not converge")


@dataclass
class PacketSizePlan:
    """Chosen packet size and transmit probabilities for one secondary hop."""

    su_hop: int
    candidates: list
    chosen_bits: int
    q: np.ndarray
    objective: float
    per_candidate: dict


def _lp_greedy(pi: np.ndarray, a_tot: np.ndarray, b_tot: np.ndarray,
               a_pu: np.ndarray, b_pu: np.ndarray, beta: float):
    """Maximize sum_k pi_k [q_k A_k + (1-q_k) B_k] over q in [0,1]^m subject
    to the primary floor, by raising q along the best gain/cost ratio and
    saturating fractionally at the boundary."""
    gain = pi * (a_tot - b_tot)
    cost = np.maximum(pi * (b_pu - a_pu), 0.0)
    budget = (1.0 - beta) * float(pi @ b_pu)
    q = np.zeros_like(pi)
    order = sorted(range(len(pi)),
                   key=lambda k: -(gain[k] / cost[k] if cost[k] > 0 else math.inf))
    remaining = budget
    for k in order:
        if gain[k] <= 0:
            continue
        if cost[k] <= remaining + 1e-15:
            q[k] = 1.0
            remaining -= cost[k]
        elif cost[k] > 0 and remaining > 0:
            q[k] = remaining / cost[k]
            remaining = 0.0
    objective = float(pi @ b_tot + q @ gain)
    return q, objective


def optimize_packet_size(scenario: Scenario, su_hop: int, beta: float,
                         candidates: list | None = None) -> PacketSizePlan:
    """Pick the packet size maximizing stationary one-slot throughput.

    The hop transmits with a per-previous-state probability q_k; the state
    law is approximated by the stationary distribution of the quiet local
    chain. For each candidate size the linear program over q has one
    coupling constraint and is solved exactly by the greedy.
    """
    if candidates is None:
        candidates = critical_sizes(scenario, su_hop)
    base_lm = build_local_model(scenario, su_hop)
    pi = stationary_distribution(base_lm.P[0])
    p0 = base_lm.P[0]
    per_candidate: dict = {}
    best = None
    for bits in sorted(set(int(b) for b in candidates)):
        lm = build_local_model(scenario, su_hop, su_packet_bits=bits)
        a_tot = p0 @ lm.g[1]
        b_tot = p0 @ lm.g[0]
        a_pu = p0 @ lm.g_pu[1]
        b_pu = p0 @ lm.g_pu[0]
        q, objective = _lp_greedy(pi, a_tot, b_tot, a_pu, b_pu, beta)
        per_candidate[bits] = objective
        if best is None or objective > best[1] + 1e-12:
            best = (bits, objective, q)
    return PacketSizePlan(su_hop=su_hop, candidates=sorted(per_candidate),
                          chosen_bits=best[0], q=best[2], objective=best[1],
                          per_candidate=per_candidate)


# ---------------------------------------------------------------------------
# episode runners


class ThresholdDecider:
    """Runtime state of one planned secondary hop.

    Keeps the posterior over the previous slot's local state (the newest
    observation is one slot old) and the hop's own last effective decision
    for the prediction step.
    """

    def __init__(self, lm: LocalModel, plan: LocalPlanTable):
        self.lm = lm
        self.plan = plan
        self.posterior = np.zeros(lm.n_states)
        self.posterior[lm.initial_state] = 1.0
        self.last_effective = 0

    def decide(self, t: int, rng) -> int:
        if t == 0:
            omega = self.posterior
        else:
            omega = self.posterior @ self.lm.P[self.last_effective]
        return decide_threshold(self.lm, self.plan, t, omega)

    def record(self, t: int, y: float, effective: int, rng):
        if t > 0:
            self.posterior = belief_update_local(
                self.lm, self.posterior, self.last_effective, y)
        self.last_effective = effective


def run_decentralized_episode(model: TransitionModel, deciders: list, rng,
                              collect: bool = False,
                              slot_hook=None) -> EpisodeResult:
    """Lockstep ground-truth simulation of independent per-hop deciders.

    Each decider sees only its own sensor stream and its own effective
    transmissions; ``slot_hook(t, x)`` runs before each slot (used for
    schedule broadcasts).
    """
    horizon = model.scenario.slotting.horizon
    x = model.initial_state
    pu_total = 0.0
    su_total = 0.0
    trace_states = np.zeros(horizon, dtype=np.int64) if collect else None
    trace_cmd = np.zeros(horizon, dtype=np.int64) if collect else None
    trace_eff = np.zeros(horizon, dtype=np.int64) if collect else None
    trace_pu = np.zeros(horizon) if collect else None
    trace_su = np.zeros(horizon) if collect else None
    for t in range(horizon):
        if slot_hook is not None:
            slot_hook(t, x)
        cmd = 0
        for i, decider in enumerate(deciders):
            cmd |= (decider.decide(t, rng) & 1) << i
        eff = model.effective_decision(x, cmd)
        y = observe(model, x, eff, rng)
        if collect:
            trace_states[t] = x
            trace_cmd[t] = cmd
            trace_eff[t] = eff
        x, pu_bits, su_bits = simulate_slot(model, x, eff, rng)
        pu_total += pu_bits
        su_total += su_bits
        if collect:
            trace_pu[t] = pu_bits
            trace_su[t] = su_bits
        for i, decider in enumerate(deciders):
            decider.record(t, float(y[i]), (eff >> i) & 1, rng)
    return EpisodeResult(pu_total, su_total, trace_states, trace_cmd,
                         trace_eff, trace_pu, trace_su)


def run_episode_decentral(model: TransitionModel, local_models: list,
                          plans: list, rng, collect: bool = False) -> EpisodeResult:
    """Simulate one horizon with every hop following its threshold plan."""
    deciders = [ThresholdDecider(lm, plan)
                for lm, plan in zip(local_models, plans)]
    return run_decentralized_episode(model, deciders, rng, collect=collect)
