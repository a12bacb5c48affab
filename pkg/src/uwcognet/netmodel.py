"""Cognitive multi-hop network model.

Builds the discrete-time Markov system model on top of the acoustic channel:
chain topologies, slot structure, bursty primary traffic, the per-bit
interference overlap table implied by propagation delays, per-decision
transition matrices with throughput vectors, critical packet sizes, and the
ground-truth slot simulator with noisy channel-occupancy observations.

Conventions:
  - PU hops and SU hops are 0-indexed; hop j sends from node j to node j+1.
  - Slots are 0-indexed; the slot phase is t mod 3. PU hop j is eligible to
    transmit exactly when the phase equals j mod 3 (half-duplex two-slot-idle
    rule realized as a cyclic pipeline).
  - A system state packs (pu bits, relay buffer bits, phase). The PU bit of
    the source hop doubles as the on/off state of the two-state arrival
    process; it is resampled when leaving the source's eligible phase. The
    first SU hop is backlogged, so only relay buffers (hops 1..N_S-1) are
    stored.
  - A decision is an N_S-bit mask; bit i set means SU hop i transmits. Bits
    of empty-buffer hops are masked off wherever decisions meet states.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import channel as ch
from .errors import ConfigError, ContractViolation

PHASES = 3


# ---------------------------------------------------------------------------
# geometry / configuration types


@dataclass
class Topology:
    """Node positions (meters, 3-D) of the two relay chains."""

    pu_nodes: np.ndarray
    su_nodes: np.ndarray

    def __post_init__(self):
        self.pu_nodes = np.asarray(self.pu_nodes, dtype=float)
        self.su_nodes = np.asarray(self.su_nodes, dtype=float)
        for name, nodes in (("pu_nodes", self.pu_nodes), ("su_nodes", self.su_nodes)):
            if nodes.ndim != 2 or nodes.shape[1] != 3 or nodes.shape[0] < 2:
                raise ConfigError(f"{name} must be an (n >= 2, 3) position array")
            hop = np.linalg.norm(np.diff(nodes, axis=0), axis=1)
            if np.any(hop <= 0):
                raise ConfigError(f"{name} has a zero-length hop")

    @property
    def np_hops(self) -> int:
        return self.pu_nodes.shape[0] - 1

    @property
    def ns_hops(self) -> int:
        return self.su_nodes.shape[0] - 1

    def node(self, kind: str, idx: int) -> np.ndarray:
        return (self.pu_nodes if kind == "pu" else self.su_nodes)[idx]

    def tx_pos(self, kind: str, hop: int) -> np.ndarray:
        return self.node(kind, hop)

    def rx_pos(self, kind: str, hop: int) -> np.ndarray:
        return self.node(kind, hop + 1)

    def hop_distance(self, kind: str, hop: int) -> float:
        return float(np.linalg.norm(self.rx_pos(kind, hop) - self.tx_pos(kind, hop)))


def crossing_lines_topology(np_hops: int = 4, ns_hops: int = 4, hop_m: float = 2500.0,
                            cross_angle_deg: float = 25.0, lateral_offset_m: float = 400.0,
                            depth_m: float = 50.0) -> Topology:
    """PU chain on the x axis; SU chain crossing it mid-span at an angle,
    displaced laterally so no nodes coincide."""
    z = -abs(depth_m)
    pu = np.array([[k * hop_m, 0.0, z] for k in range(np_hops + 1)])
    th = math.radians(cross_angle_deg)
    u = np.array([math.cos(th), math.sin(th), 0.0])
    center = np.array([np_hops * hop_m / 2.0, lateral_offset_m, z])
    su = np.array([center + (k - ns_hops / 2.0) * hop_m * u for k in range(ns_hops + 1)])
    return Topology(pu, su)


@dataclass
class Slotting:
    """Slot length (s), nominal full-band bit rate (kbps), horizon in slots."""

    slot_s: float = 3.0
    bit_rate_kbps: float = 10.0
    horizon: int = 300

    def __post_init__(self):
        if self.slot_s <= 0 or self.bit_rate_kbps <= 0:
            raise ConfigError("slot length and bit rate must be positive")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")


@dataclass
class TrafficModel:
    """Two-state bursty arrival chain at the PU source.

    alpha1 = P(on | off), alpha2 = P(on | on); bursty traffic needs
    alpha1 < alpha2.
    """

    alpha1: float
    alpha2: float

    def __post_init__(self):
        if not (0.0 <= self.alpha1 < self.alpha2 <= 1.0) and not (
            self.alpha1 == self.alpha2 and 0.0 <= self.alpha1 <= 1.0
        ):
            raise ConfigError("traffic requires 0 <= alpha1 < alpha2 <= 1")


@dataclass
class Scenario:
    """Full static description of one experiment instance.

    Immutable by convention once constructed; use dataclasses.replace to
    derive variants (e.g. different packet sizes or an FDM band plan).
    """

    topology: Topology
    slotting: Slotting
    traffic: TrafficModel
    env: ch.AcousticEnvironment
    center_khz: float = 32.0
    bandwidth_khz: float = 4.0
    source_level_db: float = 130.0
    fading_sigma_ln: float = 0.45
    fading_excess_ln: float = 0.0
    pu_packet_bits: int = 12000
    su_packet_bits: tuple = ()
    min_su_packet_bits: int = 512
    detection_snr_db: float = 10.0
    sensing_noise_std: float | None = None
    sensing_radius_slots: float = 1.0
    band_plan: "object | None" = None  # baselines.BandPlan when FDM

    def __post_init__(self):
        if not self.su_packet_bits:
            self.su_packet_bits = tuple([self.pu_packet_bits] * self.topology.ns_hops)
        self.su_packet_bits = tuple(int(b) for b in self.su_packet_bits)
        if len(self.su_packet_bits) != self.topology.ns_hops:
            raise ConfigError("su_packet_bits length must equal the SU hop count")
        if self.pu_packet_bits <= 0 or any(b <= 0 for b in self.su_packet_bits):
            raise ConfigError("packet sizes must be positive")
        if self.fading_sigma_ln < 0:
            raise ConfigError("fading_sigma_ln must be >= 0")
        if self.center_khz - self.bandwidth_khz / 2 <= 0:
            raise ConfigError("band must lie above 0 kHz")
        self._noise_cache: dict = {}
        for kind in ("pu", "su"):
            hops = self.topology.np_hops if kind == "pu" else self.topology.ns_hops
            for j in range(hops):
                dur = self.duration_s(kind, j)
                if dur > self.slotting.slot_s:
                    raise ConfigError(
                        f"{kind} hop {j} packet duration {dur:.3f}s exceeds the slot")
                if self.band_plan is None:
                    need = dur + self.prop_delay(self.topology.tx_pos(kind, j),
                                                 self.topology.rx_pos(kind, j))
                    if need > self.slotting.slot_s + 1e-9:
                        raise ConfigError(
                            f"slot too short for {kind} hop {j}: needs {need:.3f}s")

    # -- band / channel plumbing ------------------------------------------

    def channels(self):
        if self.band_plan is None:
            return [None]
        return list(range(self.band_plan.channel_count))

    def channel_of(self, kind: str, hop: int):
        if self.band_plan is None:
            return None
        return self.band_plan.channel_of(kind, hop)

    def channel_center(self, channel) -> float:
        if channel is None:
            return self.center_khz
        return self.band_plan.centers_khz[channel]

    def channel_bandwidth(self, channel) -> float:
        if channel is None:
            return self.bandwidth_khz
        return self.band_plan.channel_khz

    def rate_bps(self, kind: str, hop: int) -> float:
        if self.band_plan is None:
            return self.slotting.bit_rate_kbps * 1e3
        return self.band_plan.rate_kbps * 1e3

    def packet_bits(self, kind: str, hop: int) -> int:
        return self.pu_packet_bits if kind == "pu" else self.su_packet_bits[hop]

    def duration_s(self, kind: str, hop: int) -> float:
        return self.packet_bits(kind, hop) / self.rate_bps(kind, hop)

    # -- link budget -------------------------------------------------------

    @property
    def tx_power_linear(self) -> float:
        return 10.0 ** (self.source_level_db / 10.0)

    def channel_power_linear(self, channel) -> float:
        """Transmit power radiated within one sub-channel.

        The source level is a total over the system band with a flat
        spectral density, so a sub-channel carries its bandwidth share.
        """
        if channel is None:
            return self.tx_power_linear
        return self.tx_power_linear * self.band_plan.channel_khz / self.bandwidth_khz

    def noise_power(self, channel) -> float:
        key = channel
        if key not in self._noise_cache:
            fc = self.channel_center(channel)
            bw = self.channel_bandwidth(channel)
            self._noise_cache[key] = ch.band_noise_power(fc - bw / 2, fc + bw / 2, self.env)
        return self._noise_cache[key]

    def mu_ln_gain(self, d_m: float, channel=None) -> float:
        """Mean of ln(gain) for a path of length d on the given channel."""
        fc = self.channel_center(channel)
        return self.fading_excess_ln - ch.attenuation_db(d_m, fc, self.env) * ch.LN10_OVER_10

    def mean_gain(self, d_m: float, channel=None) -> float:
        return math.exp(self.mu_ln_gain(d_m, channel) + self.fading_sigma_ln ** 2 / 2.0)

    def prop_delay(self, a: np.ndarray, b: np.ndarray) -> float:
        return float(np.linalg.norm(np.asarray(a) - np.asarray(b))) / self.env.sound_speed


# ---------------------------------------------------------------------------
# state space


class StateSpace:
    """Index packing for (pu bits, relay buffer bits, phase) system states.

    Relay buffer bit i-1 corresponds to SU hop i (hop 0 is backlogged).
    Index layout is phase-major so each phase occupies one contiguous block.
    """

    def __init__(self, np_hops: int, ns_hops: int):
        if np_hops < 1 or ns_hops < 1:
            raise ConfigError("both chains need at least one hop")
        self.np_hops = np_hops
        self.ns_hops = ns_hops
        self.n_relay = ns_hops - 1
        self.block = 1 << (np_hops + self.n_relay)
        self.n_states = PHASES * self.block

    def pack(self, pu_bits: int, relay_bits: int, phase: int) -> int:
        return phase * self.block + (pu_bits << self.n_relay) + relay_bits

    def unpack(self, x: int):
        phase, rem = divmod(x, self.block)
        return rem >> self.n_relay, rem & ((1 << self.n_relay) - 1), phase

    def phase_of(self, x: int) -> int:
        return x // self.block

    def buffers(self, x: int) -> int:
        """Buffer occupancy mask over all N_S hops (bit 0 always set)."""
        _, relay, _ = self.unpack(x)
        return (relay << 1) | 1

    def active_pu(self, x: int) -> int:
        """Mask of PU hops actually transmitting in this state's slot."""
        pu, _, phase = self.unpack(x)
        mask = 0
        for j in range(self.np_hops):
            if (pu >> j) & 1 and j % PHASES == phase:
                mask |= 1 << j
        return mask

    def describe(self, x: int) -> str:
        pu, relay, phase = self.unpack(x)
        pu_s = format(pu, f"0{self.np_hops}b")[::-1]
        b_s = "1" + format(relay, f"0{max(self.n_relay, 1)}b")[::-1][: self.n_relay]
        return f"phase={phase} pu={pu_s} buf={b_s}"


# ---------------------------------------------------------------------------
# interference overlap

_HALF_DUPLEX_EPS = 1e-6


@dataclass(frozen=True)
class OverlapEntry:
    """One interferer's footprint on one receiving link.

    Bit indices are 1-based and inclusive; k_start > k_end encodes an empty
    overlap (entry omitted from tables). half_duplex marks an interferer
    transmitting from the receiving node itself.
    """

    offset_s: float
    k_start: int
    k_end: int
    power_linear: float
    half_duplex: bool = False


def _all_links(topology: Topology):
    for j in range(topology.np_hops):
        yield ("pu", j)
    for i in range(topology.ns_hops):
        yield ("su", i)


def build_overlap_table(scenario: Scenario) -> dict:
    """Per-bit interference windows for every (interferer, receiver) pair.

    All transmissions start at slot boundaries, so the receiver sees its own
    packet starting one hop delay in, and each interferer's packet starting
    at its own propagation offset. The time intersection is mapped to the
    receiver's 1-based bit interval. Pairs on different sub-channels, and
    pairs whose windows cannot meet, are omitted.
    """
    topo = scenario.topology
    out: dict = {}
    for rx in _all_links(topo):
        rx_kind, rx_idx = rx
        rx_pos = topo.rx_pos(rx_kind, rx_idx)
        rx_ch = scenario.channel_of(rx_kind, rx_idx)
        d_des = topo.hop_distance(rx_kind, rx_idx)
        start_d = d_des / scenario.env.sound_speed
        bits = scenario.packet_bits(rx_kind, rx_idx)
        t_bit = 1.0 / scenario.rate_bps(rx_kind, rx_idx)
        for tx in _all_links(topo):
            if tx == rx:
                continue
            tx_kind, tx_idx = tx
            d_int = float(np.linalg.norm(topo.tx_pos(tx_kind, tx_idx) - rx_pos))
            if d_int < _HALF_DUPLEX_EPS:
                # a transmitting modem cannot receive, regardless of channel
                out[(tx, rx)] = OverlapEntry(0.0, 1, bits, math.inf, half_duplex=True)
                continue
            if scenario.channel_of(tx_kind, tx_idx) != rx_ch:
                continue
            offset = d_int / scenario.env.sound_speed
            dur_int = scenario.duration_s(tx_kind, tx_idx)
            a = max(offset, start_d)
            b = min(offset + dur_int, start_d + bits * t_bit)
            if b <= a:
                continue
            k_start = max(1, int(math.floor((a - start_d) / t_bit)) + 1)
            k_end = min(bits, int(math.ceil((b - start_d) / t_bit)))
            if k_end < k_start:
                continue
            power = scenario.channel_power_linear(rx_ch) * scenario.mean_gain(d_int, rx_ch)
            out[(tx, rx)] = OverlapEntry(offset, k_start, k_end, power)
    return out


def critical_sizes(scenario: Scenario, su_hop: int) -> list:
    """Candidate packet sizes (bits) for one SU hop.

    For every PU hop this collects the largest SU packet whose transmission
    cannot reach the PU receiver during its reception window, and the largest
    whose own reception window escapes that PU's signal; sizes are floored to
    whole bytes and clamped to [minimum size, PU size]. The maximum size is
    always a candidate.
    """
    topo = scenario.topology
    c = scenario.env.sound_speed
    rate = scenario.rate_bps("su", su_hop)
    l_max = scenario.pu_packet_bits
    l_min = min(scenario.min_su_packet_bits, l_max)
    su_ch = scenario.channel_of("su", su_hop)
    sizes = {l_max}

    su_tx = topo.tx_pos("su", su_hop)
    su_rx = topo.rx_pos("su", su_hop)
    su_start = topo.hop_distance("su", su_hop) / c

    def clamp(limit_s: float) -> int:
        bits = int(math.floor(limit_s * rate / 8.0)) * 8
        return max(l_min, min(l_max, bits))

    for j in range(topo.np_hops):
        if scenario.channel_of("pu", j) != su_ch:
            continue
        dur_p = scenario.duration_s("pu", j)
        # largest size not reaching PU j's receiver while it listens
        pu_start = topo.hop_distance("pu", j) / c
        t_arr = float(np.linalg.norm(su_tx - topo.rx_pos("pu", j))) / c
        if t_arr >= pu_start + dur_p:
            sizes.add(l_max)
        elif t_arr >= pu_start:
            sizes.add(l_min)
        else:
            sizes.add(clamp(pu_start - t_arr))
        # largest size whose own reception ends before PU j's signal arrives
        t_in = float(np.linalg.norm(topo.tx_pos("pu", j) - su_rx)) / c
        if su_start >= t_in + dur_p:
            sizes.add(l_max)
        elif t_in <= su_start:
            sizes.add(l_min)
        else:
            sizes.add(clamp(t_in - su_start))
    return sorted(sizes)


# ---------------------------------------------------------------------------
# transition model


class LossCalculator:
    """Packet-loss evaluation for links under a fixed slot-activity pattern.

    Wraps a scenario plus its overlap table with a cache keyed by
    (link, active interferer set); shared by the global transition model and
    the per-hop local models.
    """

    def __init__(self, scenario: Scenario, overlap: dict | None = None):
        self.scenario = scenario
        self.overlap = build_overlap_table(scenario) if overlap is None else overlap
        self.cache: dict = {}

    def loss(self, link, others: frozenset) -> float:
        key = (link, others)
        hit = self.cache.get(key)
        if hit is not None:
            return hit
        profile = self.profile(link, others)
        val = 1.0 if profile is None else ch.packet_loss_segments(profile)
        self.cache[key] = val
        return val

    def profile(self, link, others: frozenset):
        """Piecewise-constant BER segments [(bit_count, ber), ...], or None
        when reception is impossible (the receiving node is transmitting)."""
        sc = self.scenario
        kind, idx = link
        bits = sc.packet_bits(kind, idx)
        entries = []
        for other in others:
            e = self.overlap.get((other, link))
            if e is None:
                continue
            if e.half_duplex:
                return None
            entries.append(e)
        channel = sc.channel_of(kind, idx)
        noise = sc.noise_power(channel)
        mu_sig = sc.mu_ln_gain(sc.topology.hop_distance(kind, idx), channel) \
            + math.log(sc.channel_power_linear(channel))
        sigma = sc.fading_sigma_ln
        bounds = {1, bits + 1}
        for e in entries:
            bounds.add(e.k_start)
            bounds.add(e.k_end + 1)
        cuts = sorted(bounds)
        profile = []
        for a, b in zip(cuts[:-1], cuts[1:]):
            interference = sum(e.power_linear for e in entries
                               if e.k_start <= a <= e.k_end)
            ber = ch.ber_lognormal(mu_sig - math.log(interference + noise), sigma)
            profile.append((b - a, ber))
        return profile


@dataclass
class TransitionModel:
    """Per-decision dynamics of the joint system state.

    P[delta] is row-stochastic over the packed state space; g/g_pu/g_su hold
    the expected end-to-end bits delivered per slot from each state under
    each decision. Immutable after build; safe to share across episodes.
    """

    scenario: Scenario
    space: StateSpace
    P: np.ndarray          # (n_delta, m, m)
    g: np.ndarray          # (n_delta, m)
    g_pu: np.ndarray
    g_su: np.ndarray
    obs_mean: np.ndarray   # (ns_hops, n_delta, m)
    sensor_sigma: np.ndarray
    losses: LossCalculator
    initial_state: int = 0

    @property
    def overlap(self) -> dict:
        return self.losses.overlap

    @property
    def n_states(self) -> int:
        return self.space.n_states

    @property
    def n_decisions(self) -> int:
        return self.P.shape[0]

    def effective_decision(self, x: int, delta: int) -> int:
        return delta & self.space.buffers(x)

    def active_transmitters(self, x: int, delta: int):
        """(pu_mask, su_mask) of links actually radiating in this slot."""
        return self.space.active_pu(x), self.effective_decision(x, delta)

    def packet_loss_for(self, x: int, delta: int, link) -> float:
        """Packet loss of one active link given the joint slot activity."""
        pu_mask, su_mask = self.active_transmitters(x, delta)
        kind, idx = link
        if kind == "pu":
            if not (pu_mask >> idx) & 1:
                raise ContractViolation(f"pu hop {idx} is not transmitting")
        else:
            if not (su_mask >> idx) & 1:
                raise ContractViolation(f"su hop {idx} is not transmitting")
        others = _interferer_set(pu_mask, su_mask, link)
        return self.losses.loss(link, others)

    def _loss(self, link, others: frozenset) -> float:
        return self.losses.loss(link, others)

    def per_bit_ber_profile(self, x: int, delta: int, link):
        """Piecewise-constant BER profile [(bit_count, ber), ...] for an
        active link; raises if the link is idle in (x, delta)."""
        pu_mask, su_mask = self.active_transmitters(x, delta)
        kind, idx = link
        active = (pu_mask >> idx) & 1 if kind == "pu" else (su_mask >> idx) & 1
        if not active:
            raise ContractViolation(f"{kind} hop {idx} is not transmitting")
        profile = self.losses.profile(
            link, _interferer_set(pu_mask, su_mask, link))
        if profile is None:
            bits = self.scenario.packet_bits(kind, idx)
            return [(bits, 0.5)]
        return profile


def _interferer_set(pu_mask: int, su_mask: int, link) -> frozenset:
    kind, idx = link
    others = [("pu", j) for j in _bits(pu_mask)] + [("su", i) for i in _bits(su_mask)]
    return frozenset(o for o in others if o != (kind, idx))


def _bits(mask: int):
    j = 0
    while mask:
        if mask & 1:
            yield j
        mask >>= 1
        j += 1


def build_transition_model(scenario: Scenario, state_cap: int = 1 << 16) -> TransitionModel:
    """Enumerate the state space and assemble P(delta), throughput vectors,
    and observation statistics for every decision mask."""
    topo = scenario.topology
    space = StateSpace(topo.np_hops, topo.ns_hops)
    if space.n_states > state_cap:
        raise ConfigError(
            f"state space {space.n_states} exceeds cap {state_cap}")
    n_s, n_p = topo.ns_hops, topo.np_hops
    n_delta = 1 << n_s
    m = space.n_states
    model = TransitionModel(
        scenario=scenario, space=space,
        P=np.zeros((n_delta, m, m)),
        g=np.zeros((n_delta, m)), g_pu=np.zeros((n_delta, m)),
        g_su=np.zeros((n_delta, m)),
        obs_mean=np.zeros((n_s, n_delta, m)),
        sensor_sigma=np.zeros(n_s),
        losses=LossCalculator(scenario),
    )
    a1, a2 = scenario.traffic.alpha1, scenario.traffic.alpha2
    l_p = scenario.pu_packet_bits
    pu_power, su_power = _sensing_powers(scenario)

    for x in range(m):
        pu_bits, relay, phase = space.unpack(x)
        buffers = space.buffers(x)
        pu_mask = space.active_pu(x)
        next_phase = (phase + 1) % PHASES
        for delta in range(n_delta):
            su_mask = delta & buffers
            links = [("pu", j) for j in _bits(pu_mask)] + [("su", i) for i in _bits(su_mask)]
            succ = {
                link: 1.0 - model._loss(link, _interferer_set(pu_mask, su_mask, link))
                for link in links
            }
            # expected end-to-end bits this slot
            if (pu_mask >> (n_p - 1)) & 1:
                model.g_pu[delta, x] = l_p * succ[("pu", n_p - 1)]
            if (su_mask >> (n_s - 1)) & 1:
                model.g_su[delta, x] = (scenario.su_packet_bits[n_s - 1]
                                        * succ[("su", n_s - 1)])
            # observation means at each SU sensor
            for i in range(n_s):
                mean = sum(pu_power[i, j] for j in _bits(pu_mask))
                mean += sum(su_power[i, v] for v in _bits(su_mask) if v != i)
                model.obs_mean[i, delta, x] = mean
            # branch over per-link success outcomes and the arrival draw
            for mask in range(1 << len(links)):
                prob = 1.0
                ok = {}
                for b, link in enumerate(links):
                    if (mask >> b) & 1:
                        prob *= succ[link]
                        ok[link] = True
                    else:
                        prob *= 1.0 - succ[link]
                        ok[link] = False
                if prob == 0.0:
                    continue
                pu_next = pu_bits & ~pu_mask
                for j in _bits(pu_mask):
                    if ok[("pu", j)] and j + 1 < n_p:
                        pu_next |= 1 << (j + 1)
                relay_next = 0
                for i in range(1, n_s):
                    filled = ((su_mask >> (i - 1)) & 1) and ok[("su", i - 1)]
                    held = ((buffers >> i) & 1) and not ((su_mask >> i) & 1)
                    if filled or held:
                        relay_next |= 1 << (i - 1)
                if phase == 0:
                    p_on = a2 if (pu_bits & 1) else a1
                    for src, p_src in ((1, p_on), (0, 1.0 - p_on)):
                        if p_src == 0.0:
                            continue
                        nx = space.pack((pu_next & ~1) | src, relay_next, next_phase)
                        model.P[delta, x, nx] += prob * p_src
                else:
                    nx = space.pack(pu_next, relay_next, next_phase)
                    model.P[delta, x, nx] += prob
    model.g = model.g_pu + model.g_su
    model.sensor_sigma = _sensor_sigma(scenario, pu_power)
    return model


def _sensing_powers(scenario: Scenario):
    """Mean received power at each SU sensing node from every transmitter
    within the one-slot propagation range (zero outside)."""
    topo = scenario.topology
    n_s, n_p = topo.ns_hops, topo.np_hops
    reach_m = scenario.sensing_radius_slots * scenario.slotting.slot_s \
        * scenario.env.sound_speed
    pu_power = np.zeros((n_s, n_p))
    su_power = np.zeros((n_s, n_s))
    for i in range(n_s):
        sensor = topo.tx_pos("su", i)
        ch_i = scenario.channel_of("su", i)
        for j in range(n_p):
            if scenario.channel_of("pu", j) != ch_i:
                continue
            d = float(np.linalg.norm(topo.tx_pos("pu", j) - sensor))
            if d <= reach_m:
                pu_power[i, j] = scenario.channel_power_linear(ch_i) * scenario.mean_gain(d, ch_i)
        for v in range(n_s):
            if v == i or scenario.channel_of("su", v) != ch_i:
                continue
            d = float(np.linalg.norm(topo.tx_pos("su", v) - sensor))
            if d <= reach_m:
                su_power[i, v] = scenario.channel_power_linear(ch_i) * scenario.mean_gain(d, ch_i)
    return pu_power, su_power


def _sensor_sigma(scenario: Scenario, pu_power: np.ndarray) -> np.ndarray:
    """Observation noise std per sensor: explicit override, or set so the
    strongest in-range PU is seen at the configured detection SNR."""
    n_s = pu_power.shape[0]
    if scenario.sensing_noise_std is not None:
        return np.full(n_s, float(scenario.sensing_noise_std))
    ratio = 10.0 ** (scenario.detection_snr_db / 10.0)
    sigma = np.zeros(n_s)
    for i in range(n_s):
        peak = pu_power[i].max() if pu_power.shape[1] else 0.0
        sigma[i] = peak / ratio if peak > 0 else 1.0
    return sigma


# ---------------------------------------------------------------------------
# ground truth simulation


def simulate_slot(model: TransitionModel, x: int, delta: int, rng):
    """Advance the true system by one slot under decision ``delta``.

    Returns (next_state, pu_bits_delivered, su_bits_delivered). The decision
    must already respect buffers; commanding an empty-buffer hop to transmit
    is a contract violation (runtime callers mask against true buffers).
    """
    space = model.space
    if delta & ~space.buffers(x):
        raise ContractViolation("decision transmits from an empty buffer")
    sc = model.scenario
    pu_bits, relay, phase = space.unpack(x)
    pu_mask = space.active_pu(x)
    su_mask = delta
    n_p, n_s = space.np_hops, space.ns_hops
    pu_delivered = 0
    su_delivered = 0
    pu_next = pu_bits & ~pu_mask
    ok_su = {}
    for j in _bits(pu_mask):
        p = model._loss(("pu", j), _interferer_set(pu_mask, su_mask, ("pu", j)))
        if rng.random() >= p:
            if j + 1 < n_p:
                pu_next |= 1 << (j + 1)
            else:
                pu_delivered = sc.pu_packet_bits
    for i in _bits(su_mask):
        p = model._loss(("su", i), _interferer_set(pu_mask, su_mask, ("su", i)))
        ok = rng.random() >= p
        ok_su[i] = ok
        if ok and i == n_s - 1:
            su_delivered = sc.su_packet_bits[i]
    relay_next = 0
    for i in range(1, n_s):
        filled = ok_su.get(i - 1, False)
        held = ((relay >> (i - 1)) & 1) and not ((su_mask >> i) & 1)
        if filled or held:
            relay_next |= 1 << (i - 1)
    if phase == 0:
        p_on = sc.traffic.alpha2 if (pu_bits & 1) else sc.traffic.alpha1
        src = 1 if rng.random() < p_on else 0
        pu_next = (pu_next & ~1) | src
    nx = space.pack(pu_next, relay_next, (phase + 1) % PHASES)
    return nx, pu_delivered, su_delivered


@dataclass
class EpisodeResult:
    """Realized bits of one simulated horizon, plus optional per-slot trace."""

    pu_bits: float
    su_bits: float
    states: np.ndarray | None = None      # visited states, length T
    commanded: np.ndarray | None = None   # decision masks as commanded
    effective: np.ndarray | None = None   # decision masks after buffer masking
    pu_per_slot: np.ndarray | None = None
    su_per_slot: np.ndarray | None = None

    @property
    def total_bits(self) -> float:
        return self.pu_bits + self.su_bits


def observe(model: TransitionModel, x: int, delta: int, rng, hop: int | None = None):
    """Noisy received-power measurement(s) for slot (x, delta).

    One Gaussian sample per SU sensor; scalar when ``hop`` is given.
    ``delta`` must be the effective (buffer-masked) decision of the slot.
    """
    delta_eff = model.effective_decision(x, delta)
    if hop is not None:
        mean = model.obs_mean[hop, delta_eff, x]
        return mean + rng.normal(0.0, model.sensor_sigma[hop])
    means = model.obs_mean[:, delta_eff, x]
    return means + rng.normal(0.0, model.sensor_sigma)
