"""Comparison schemes: conventional TDM, interference alignment, and the
frequency-division variants.

All four reuse the ground-truth simulator and, where sensing is involved,
the per-hop local models. C-TDM and C-FDM gate access with a Bernoulli
opportunity of probability 1 - beta_bar and transmit only when the believed
channel-occupancy probability is at most one half. Interference alignment
listens to periodic primary schedule broadcasts and transmits only in slots
whose arrival windows cannot touch any primary reception, with a random
access draw separating secondaries. The FDM variants split the band into
sub-channels with proportional rates and packets clipped to the slot.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError
from .netmodel import PHASES, Scenario, TransitionModel, _bits
from .planner_decentral import (LocalModel, LocalPlanTable, ThresholdDecider,
                                belief_update_local)


@dataclass(frozen=True)
class BandPlan:
    """Sub-channel layout and per-node channel assignment.

    Channels are indexed 0..channel_count-1 in center-frequency order. A hop
    uses the channel of its transmitting node: primary hop j transmits on
    pu_assignment[j], secondary hop i on su_assignment[i].
    """

    centers_khz: tuple
    channel_khz: float
    guard_khz: float
    rate_kbps: float
    pu_assignment: tuple
    su_assignment: tuple

    @property
    def channel_count(self) -> int:
        return len(self.centers_khz)

    def channel_of(self, kind: str, hop: int) -> int:
        table = self.pu_assignment if kind == "pu" else self.su_assignment
        return table[hop]

    def validate(self, total_center_khz: float, total_khz: float,
                 np_hops: int, ns_hops: int):
        errors = []
        n = self.channel_count
        width = n * self.channel_khz + (n - 1) * self.guard_khz
        if width > total_khz + 1e-9:
            errors.append(("band_plan", f"channels plus guards ({width} kHz) "
                           f"exceed the {total_khz} kHz band"))
        lo = total_center_khz - total_khz / 2
        hi = total_center_khz + total_khz / 2
        for c in self.centers_khz:
            if not lo - 1e-9 <= c - self.channel_khz / 2 or not c + self.channel_khz / 2 <= hi + 1e-9:
                errors.append(("band_plan.centers_khz", f"channel at {c} kHz "
                               "falls outside the system band"))
        if len(self.pu_assignment) != np_hops or len(self.su_assignment) != ns_hops:
            errors.append(("band_plan", "assignment lengths must match hop counts"))
        if n > 1:
            # no channel reuse among any three consecutive transmitting nodes
            for kind, table in (("pu", self.pu_assignment), ("su", self.su_assignment)):
                for k in range(len(table) - 1):
                    window = table[k:k + 3]
                    if len(set(window)) != len(window):
                        errors.append((f"band_plan.{kind}_assignment",
                                       f"nodes {k}..{k + len(window) - 1} share a channel"))
        if errors:
            raise ConfigError("invalid band plan", errors)


def default_band_plan(np_hops: int, ns_hops: int,
                      centers=(30.6, 32.0, 33.4), channel_khz: float = 1.2,
                      guard_khz: float = 0.2, rate_kbps: float = 3.0) -> BandPlan:
    """Three-channel plan: each chain cycles channels by hop index, the
    secondary chain offset by one so neighbours of either chain never share."""
    n = len(centers)
    return BandPlan(
        centers_khz=tuple(centers), channel_khz=channel_khz,
        guard_khz=guard_khz, rate_kbps=rate_kbps,
        pu_assignment=tuple(j % n for j in range(np_hops)),
        su_assignment=tuple((i + 1) % n for i in range(ns_hops)),
    )


def build_fdm_model(scenario: Scenario, band_plan: BandPlan) -> Scenario:
    """Frequency-division variant of a scenario.

    Attaches the band plan, drops every per-channel rate to the plan's, and
    clips packet sizes (whole bytes) so transmissions fit the slot at the
    reduced rate. Interference, noise, and link gains are then evaluated per
    sub-channel by the regular model builders.
    """
    band_plan.validate(scenario.center_khz, scenario.bandwidth_khz,
                       scenario.topology.np_hops, scenario.topology.ns_hops)
    max_bits = int(math.floor(scenario.slotting.slot_s * band_plan.rate_kbps
                              * 1e3 / 8.0)) * 8
    if max_bits <= 0:
        raise ConfigError("band plan rate too low for the slot length")
    return replace(
        scenario,
        band_plan=band_plan,
        pu_packet_bits=min(scenario.pu_packet_bits, max_bits),
        su_packet_bits=tuple(min(b, max_bits) for b in scenario.su_packet_bits),
    )


def occupancy_probability(lm: LocalModel, omega: np.ndarray) -> float:
    """Believed probability that any modeled primary hop holds or sends."""
    block = 1 << len(lm.members)
    total = 0.0
    for x in range(lm.n_states):
        if x % block != 0:
            total += omega[x]
    return float(total)


def ctdm_decide(lm: LocalModel, omega: np.ndarray, beta_bar: float, rng) -> int:
    """Conventional TDM rule: Bernoulli(1 - beta_bar) opportunity times an
    occupancy-below-one-half indicator."""
    x = 1 if rng.random() < 1.0 - beta_bar else 0
    y = 1 if occupancy_probability(lm, omega) <= 0.5 else 0
    return x & y


def cfdm_decide(lm: LocalModel, omega: np.ndarray, beta_bar: float, rng) -> int:
    """Conventional FDM rule: identical gating, with occupancy read from the
    hop's own sub-channel (the local model of an FDM scenario already
    contains only same-channel primaries)."""
    return ctdm_decide(lm, omega, beta_bar, rng)


class GatedBeliefDecider:
    """Runtime wrapper for the C-TDM / C-FDM decision rules."""

    def __init__(self, lm: LocalModel, beta_bar: float):
        self.lm = lm
        self.beta_bar = beta_bar
        self.posterior = np.zeros(lm.n_states)
        self.posterior[lm.initial_state] = 1.0
        self.last_effective = 0

    def decide(self, t: int, rng) -> int:
        if t == 0:
            omega = self.posterior
        else:
            omega = self.posterior @ self.lm.P[self.last_effective]
        return ctdm_decide(self.lm, omega, self.beta_bar, rng)

    def record(self, t: int, y: float, effective: int, rng):
        if t > 0:
            self.posterior = belief_update_local(
                self.lm, self.posterior, self.last_effective, y)
        self.last_effective = effective


# ---------------------------------------------------------------------------
# interference alignment


def _phase_safe_mask(model: TransitionModel, su_hop: int) -> int:
    """Phases where this hop's packet cannot overlap any primary reception
    that the slot structure allows to be active."""
    scenario = model.scenario
    mask = 0
    for phase in range(PHASES):
        ok = True
        for j in range(scenario.topology.np_hops):
            if j % PHASES != phase:
                continue
            e = model.overlap.get(((("su", su_hop)), ("pu", j)))
            if e is not None:
                ok = False
                break
        if ok:
            mask |= 1 << phase
    return mask


class AlignmentDecider:
    """Interference alignment: transmit only where geometry guarantees no
    overlap with any primary hop that could be receiving this slot.

    Primary nodes broadcast their pipeline state at every frame boundary
    (costing the secondaries one silent slot); between broadcasts the hop
    tracks which primary hops could possibly transmit, assuming arrivals can
    restart anytime and deliveries never fail. The hop also skips slots where
    a possibly-active primary would wreck its own reception, and contends
    with its siblings by random access.
    """

    def __init__(self, model: TransitionModel, su_hop: int,
                 frame_slots: int = 30, access_prob: float = 1.0 / 3.0):
        self.model = model
        self.su_hop = su_hop
        self.frame = frame_slots
        self.access_prob = access_prob
        self.safe_phases = _phase_safe_mask(model, su_hop)
        self.possible = None  # possibly-transmitting mask per pu hop, or None
        scenario = model.scenario
        self.rx_threats = [
            j for j in range(scenario.topology.np_hops)
            if ((("pu", j)), ("su", su_hop)) in model.overlap
        ]

    def broadcast(self, t: int, x: int):
        """Frame-boundary schedule broadcast: the true pipeline state."""
        pu_bits, _, _ = self.model.space.unpack(x)
        self.possible = pu_bits

    def _roll_possible(self, phase: int):
        if self.possible is None:
            return
        nxt = self.possible
        for j in _bits(self.possible):
            if j % PHASES == phase:
                nxt &= ~(1 << j)
                if j + 1 < self.model.space.np_hops:
                    nxt |= 1 << (j + 1)
        if phase == 0:
            nxt |= 1  # a fresh arrival may occupy the source anytime
        self.possible = nxt

    def decide(self, t: int, rng) -> int:
        phase = t % PHASES
        if t % self.frame == 0:
            # overhead slot: the schedule is being received
            return 0
        if self.possible is None:
            return 0  # no schedule yet: conservative silence
        transmit = 1
        if not (self.safe_phases >> phase) & 1:
            # some primary hop of this phase could be receiving; check the
            # tracked schedule before giving up on the slot
            for j in range(self.model.space.np_hops):
                if j % PHASES != phase:
                    continue
                if ((("su", self.su_hop)), ("pu", j)) not in self.model.overlap:
                    continue
                if (self.possible >> j) & 1:
                    transmit = 0
                    break
        if transmit:
            for j in self.rx_threats:
                if j % PHASES == phase and (self.possible >> j) & 1:
                    transmit = 0  # own packet would be wrecked; skip
                    break
        if transmit and rng.random() >= self.access_prob:
            transmit = 0
        return transmit

    def record(self, t: int, y: float, effective: int, rng):
        self._roll_possible(t % PHASES)


def make_alignment_deciders(model: TransitionModel, frame_slots: int = 30,
                            access_prob: float = 1.0 / 3.0):
    """One alignment decider per secondary hop plus the shared slot hook that
    delivers frame-boundary broadcasts."""
    deciders = [AlignmentDecider(model, i, frame_slots, access_prob)
                for i in range(model.space.ns_hops)]

    def slot_hook(t: int, x: int):
        if t % frame_slots == 0:
            for d in deciders:
                d.broadcast(t, x)

    return deciders, slot_hook
