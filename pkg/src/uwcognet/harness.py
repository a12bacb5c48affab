"""Experiment orchestration: configuration, sweeps, metrics, exports.

A scenario configuration is a JSON document validated field by field. Each
(scheme, sweep value) cell plans offline once, runs seeded episodes (seed =
base_seed + run index, so serial and parallel execution agree bit for bit),
and pairs every run with a matched-seed always-silent run of the same
scenario variant for the primary-throughput ratio.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import baselines as bl
from . import channel as ch
from . import netmodel as nm
from . import planner_central as pc
from . import planner_decentral as pd
from .errors import ConfigError

SCHEMES = ("ccts", "dcts", "ctdm", "ia", "cfdm", "dcts-fdm", "silent")
FDM_SCHEMES = ("cfdm", "dcts-fdm")
SWEEP_AXES = ("alpha2", "beta", "center_khz", "distance_km", "su_packet")


@dataclass
class ScenarioConfig:
    """Validated experiment description; see configs/ for examples."""

    name: str
    scenario: nm.Scenario
    beta: float
    schemes: tuple
    runs: int
    base_seed: int
    band_plan: bl.BandPlan | None = None
    optimize_packets: bool = False
    ia_frame_slots: int = 30
    ia_access_prob: float = 1.0 / 3.0
    sweep_axis: str | None = None
    sweep_values: tuple = ()
    paper_horizon: int = 1000
    paper_runs: int = 100


def _require(cfg: dict, key: str, errors: list, path: str = ""):
    if key not in cfg:
        errors.append((f"{path}{key}", "missing required field"))
        return None
    return cfg[key]


def load_config(path) -> ScenarioConfig:
    """Parse and validate a JSON scenario file.

    Raises ConfigError carrying every violation as (field_path, message).
    """
    try:
        with open(path) as f:
            raw = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot parse {path}: {e}")
    return config_from_dict(raw, name=str(raw.get("name", path)))


def config_from_dict(raw: dict, name: str = "inline") -> ScenarioConfig:
    errors: list = []

    topo_cfg = _require(raw, "topology", errors) or {}
    topology = None
    if "pu_nodes" in topo_cfg and "su_nodes" in topo_cfg:
        try:
            topology = nm.Topology(np.asarray(topo_cfg["pu_nodes"], dtype=float),
                                   np.asarray(topo_cfg["su_nodes"], dtype=float))
        except (ConfigError, ValueError) as e:
            errors.append(("topology", str(e)))
    elif "crossing" in topo_cfg:
        c = topo_cfg["crossing"]
        try:
            topology = nm.crossing_lines_topology(
                np_hops=int(c.get("np_hops", 4)), ns_hops=int(c.get("ns_hops", 4)),
                hop_m=float(c.get("hop_m", 2500.0)),
                cross_angle_deg=float(c.get("cross_angle_deg", 25.0)),
                lateral_offset_m=float(c.get("lateral_offset_m", 400.0)),
                depth_m=float(c.get("depth_m", 50.0)))
        except (ConfigError, ValueError) as e:
            errors.append(("topology.crossing", str(e)))
    else:
        errors.append(("topology", "needs pu_nodes/su_nodes or crossing"))

    env_cfg = raw.get("environment", {})
    env = None
    try:
        env = ch.AcousticEnvironment(
            spreading_factor=float(env_cfg.get("spreading_factor", 1.05)),
            normalizing_constant=float(env_cfg.get("normalizing_constant", 1.0)),
            shipping_activity=float(env_cfg.get("shipping_activity", 0.2)),
            wind_speed=float(env_cfg.get("wind_speed", 0.0)),
            sound_speed=float(env_cfg.get("sound_speed", 1500.0)))
    except ConfigError as e:
        errors.append(("environment", str(e)))

    traffic_cfg = _require(raw, "traffic", errors) or {}
    a1 = float(traffic_cfg.get("alpha1", -1.0))
    a2 = float(traffic_cfg.get("alpha2", -1.0))
    traffic = None
    if not 0.0 <= a1 < a2 <= 1.0:
        errors.append(("traffic", f"needs 0 <= alpha1 < alpha2 <= 1, "
                       f"got alpha1={a1}, alpha2={a2}"))
    else:
        traffic = nm.TrafficModel(a1, a2)

    beta = float(raw.get("beta", 0.8))
    if not 0.0 < beta <= 1.0:
        errors.append(("beta", f"beta={beta} outside (0, 1]"))

    slot_cfg = raw.get("slot", {})
    slotting = None
    try:
        slotting = nm.Slotting(
            slot_s=float(slot_cfg.get("length_s", 3.0)),
            bit_rate_kbps=float(slot_cfg.get("bit_rate_kbps", 10.0)),
            horizon=int(slot_cfg.get("horizon", 300)))
    except ConfigError as e:
        errors.append(("slot", str(e)))

    band_cfg = raw.get("band", {})
    center = float(band_cfg.get("center_khz", 32.0))
    bandwidth = float(band_cfg.get("bandwidth_khz", 4.0))
    if center - bandwidth / 2 <= 0:
        errors.append(("band", "band must lie above 0 kHz"))

    packet_cfg = raw.get("packet", {})
    pu_bytes = int(packet_cfg.get("pu_bytes", 1500))
    su_bytes = packet_cfg.get("su_bytes", pu_bytes)
    optimize_packets = su_bytes == "optimize"
    min_su_bytes = int(packet_cfg.get("min_su_bytes", 64))
    if pu_bytes <= 0:
        errors.append(("packet.pu_bytes", "must be positive"))

    fading_cfg = raw.get("fading", {})
    sigma_ln = float(fading_cfg.get("sigma_ln", 0.45))
    excess_ln = float(fading_cfg.get("excess_ln", 0.0))
    if "fit" in fading_cfg and topology is not None and env is not None:
        fit = fading_cfg["fit"]
        geom = ch.three_path_geometry(
            range_m=float(fit.get("range_m", topology.hop_distance("pu", 0))),
            water_depth_m=float(fit.get("water_depth_m", 100.0)),
            node_depth_m=float(fit.get("node_depth_m", 50.0)),
            length_deviation_std_m=float(fit.get("length_deviation_std_m", 25.0)),
            micropath_count=int(fit.get("micropath_count", 5)),
            micropath_delay_spread_s=float(fit.get("micropath_delay_spread_s", 1e-4)))
        lg = ch.fit_link_gain(geom, center, bandwidth, env,
                              int(fit.get("sample_count", 20000)),
                              np.random.default_rng(int(fit.get("seed", 0))))
        sigma_ln = lg.sigma_ln
        excess_ln = lg.mu_ln + ch.attenuation_db(
            lg.ref_distance_m, center, env) * ch.LN10_OVER_10

    sensing_cfg = raw.get("sensing", {})
    noise_std = sensing_cfg.get("noise_std")
    schemes_raw = raw.get("schemes", ["ccts", "dcts", "ctdm"])
    schemes = tuple(str(s) for s in schemes_raw)
    for s in schemes:
        if s not in SCHEMES:
            errors.append(("schemes", f"unknown scheme '{s}'"))

    band_plan = None
    if "band_plan" in raw and topology is not None:
        bp = raw["band_plan"]
        try:
            centers = tuple(float(c) for c in bp.get("centers_khz", (30.6, 32.0, 33.4)))
            n = len(centers)
            band_plan = bl.BandPlan(
                centers_khz=centers,
                channel_khz=float(bp.get("channel_khz", 1.2)),
                guard_khz=float(bp.get("guard_khz", 0.2)),
                rate_kbps=float(bp.get("rate_kbps", 3.0)),
                pu_assignment=tuple(bp.get(
                    "pu_assignment", [j % n for j in range(topology.np_hops)])),
                su_assignment=tuple(bp.get(
                    "su_assignment", [(i + 1) % n for i in range(topology.ns_hops)])))
            band_plan.validate(center, bandwidth, topology.np_hops, topology.ns_hops)
        except ConfigError as e:
            errors.extend(e.violations or [("band_plan", str(e))])
    if any(s in FDM_SCHEMES for s in schemes) and band_plan is None:
        errors.append(("band_plan", "required by the selected FDM schemes"))

    runs = int(raw.get("runs", 30))
    base_seed = int(raw.get("base_seed", 1))
    if runs < 1:
        errors.append(("runs", "must be >= 1"))

    sweep_cfg = raw.get("sweep", {})
    sweep_axis = sweep_cfg.get("axis")
    sweep_values = tuple(sweep_cfg.get("values", ()))
    if sweep_axis is not None and sweep_axis not in SWEEP_AXES:
        errors.append(("sweep.axis", f"unknown axis '{sweep_axis}'"))

    overhead = raw.get("overhead", {})

    scenario = None
    if not errors:
        try:
            scenario = nm.Scenario(
                topology=topology, slotting=slotting, traffic=traffic, env=env,
                center_khz=center, bandwidth_khz=bandwidth,
                source_level_db=float(raw.get("power", {}).get("source_level_db", 130.0)),
                fading_sigma_ln=sigma_ln, fading_excess_ln=excess_ln,
                pu_packet_bits=pu_bytes * 8,
                su_packet_bits=() if optimize_packets or su_bytes == pu_bytes
                else tuple([int(su_bytes) * 8] * topology.ns_hops),
                min_su_packet_bits=min_su_bytes * 8,
                detection_snr_db=float(sensing_cfg.get("detection_snr_db", 10.0)),
                sensing_noise_std=None if noise_std is None else float(noise_std),
                sensing_radius_slots=float(sensing_cfg.get("radius_slots", 1.0)))
        except ConfigError as e:
            errors.append(("scenario", str(e)))
    if errors:
        detail = "; ".join(f"{p}: {m}" for p, m in errors)
        raise ConfigError(f"invalid configuration ({detail})", errors)
    paper_cfg = raw.get("paper_scale", {})
    return ScenarioConfig(
        name=name, scenario=scenario, beta=beta, schemes=schemes, runs=runs,
        base_seed=base_seed, band_plan=band_plan,
        optimize_packets=optimize_packets,
        ia_frame_slots=int(overhead.get("ia_frame_slots", 30)),
        ia_access_prob=float(overhead.get("ia_access_prob", 1.0 / 3.0)),
        sweep_axis=sweep_axis, sweep_values=sweep_values,
        paper_horizon=int(paper_cfg.get("horizon", 1000)),
        paper_runs=int(paper_cfg.get("runs", 100)))


# ---------------------------------------------------------------------------
# metrics


@dataclass
class RunMetrics:
    """Aggregated Monte Carlo results of one (scheme, sweep value) cell."""

    scheme: str
    axis: str
    value: object
    pu_bits: np.ndarray
    su_bits: np.ndarray
    baseline_pu_bits: np.ndarray
    horizon: int
    slot_s: float
    bandwidth_khz: float

    @property
    def total_bits(self) -> np.ndarray:
        return self.pu_bits + self.su_bits

    @property
    def spectrum_efficiency(self) -> np.ndarray:
        """Delivered bits per second per hertz of the full system band."""
        return self.total_bits / (self.horizon * self.slot_s
                                  * self.bandwidth_khz * 1e3)

    @property
    def constraint_ratio(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.baseline_pu_bits > 0,
                            self.pu_bits / self.baseline_pu_bits, 1.0)

    def summary(self) -> dict:
        out = {"scheme": self.scheme, "axis": self.axis, "value": self.value,
               "n": len(self.pu_bits)}
        for name, arr in (("pu_bits", self.pu_bits), ("su_bits", self.su_bits),
                          ("total_bits", self.total_bits),
                          ("spectrum_efficiency", self.spectrum_efficiency),
                          ("pu_ratio", self.constraint_ratio)):
            out[f"{name}_mean"] = float(np.mean(arr))
            out[f"{name}_stderr"] = float(np.std(arr, ddof=1) / math.sqrt(len(arr))) \
                if len(arr) > 1 else 0.0
        return out


def compute_metrics(scheme: str, axis: str, value, episodes: list,
                    baseline_episodes: list, scenario: nm.Scenario) -> RunMetrics:
    """Fold per-run episode results (and their matched silent runs) into one
    metrics record."""
    if not episodes:
        raise ConfigError("no episodes to aggregate")
    return RunMetrics(
        scheme=scheme, axis=axis, value=value,
        pu_bits=np.array([e.pu_bits for e in episodes]),
        su_bits=np.array([e.su_bits for e in episodes]),
        baseline_pu_bits=np.array([e.pu_bits for e in baseline_episodes]),
        horizon=scenario.slotting.horizon, slot_s=scenario.slotting.slot_s,
        bandwidth_khz=scenario.bandwidth_khz)


# ---------------------------------------------------------------------------
# scheme orchestration


def run_silent_episode(model: nm.TransitionModel, rng) -> nm.EpisodeResult:
    x = model.initial_state
    total = 0.0
    for _ in range(model.scenario.slotting.horizon):
        x, pu_bits, _ = nm.simulate_slot(model, x, 0, rng)
        total += pu_bits
    return nm.EpisodeResult(total, 0.0)


@dataclass
class SchemeArtifacts:
    """Everything a scheme needs to run episodes on one scenario variant."""

    scheme: str
    scenario: nm.Scenario
    model: nm.TransitionModel
    beta_bar: float = 1.0
    plan: pc.PlanTable | None = None
    local_models: list = field(default_factory=list)
    local_plans: list = field(default_factory=list)
    ia_frame: int = 30
    ia_access: float = 1.0 / 3.0


def prepare_scheme(cfg: ScenarioConfig, scheme: str,
                   scenario: nm.Scenario) -> SchemeArtifacts:
    """Build the variant model and offline plans for one scheme."""
    if scheme in FDM_SCHEMES:
        scenario = bl.build_fdm_model(scenario, cfg.band_plan)
    if cfg.optimize_packets and scheme in ("dcts", "dcts-fdm"):
        sizes = [pd.optimize_packet_size(scenario, i, cfg.beta).chosen_bits
                 for i in range(scenario.topology.ns_hops)]
        scenario = replace(scenario, su_packet_bits=tuple(sizes))
    model = nm.build_transition_model(scenario)
    horizon = scenario.slotting.horizon
    n_s = scenario.topology.ns_hops
    beta_bar = cfg.beta ** (1.0 / n_s)
    art = SchemeArtifacts(scheme=scheme, scenario=scenario, model=model,
                          beta_bar=beta_bar, ia_frame=cfg.ia_frame_slots,
                          ia_access=cfg.ia_access_prob)
    if scheme == "ccts":
        art.plan = pc.offline_plan(model, horizon, cfg.beta)
    elif scheme in ("dcts", "dcts-fdm", "ctdm", "cfdm"):
        art.local_models = [pd.build_local_model(scenario, i) for i in range(n_s)]
        if scheme in ("dcts", "dcts-fdm"):
            reuse = 0 if scheme == "dcts-fdm" else nm.PHASES
            art.local_plans = [
                pd.offline_plan_local(lm, horizon, beta_bar, reuse=reuse)
                for lm in art.local_models]
    return art


def run_scheme_episode(art: SchemeArtifacts, rng) -> nm.EpisodeResult:
    scheme = art.scheme
    if scheme == "silent":
        return run_silent_episode(art.model, rng)
    if scheme == "ccts":
        return pc.run_episode_central(art.model, art.plan, rng)
    if scheme in ("dcts", "dcts-fdm"):
        return pd.run_episode_decentral(art.model, art.local_models,
                                        art.local_plans, rng)
    if scheme in ("ctdm", "cfdm"):
        deciders = [bl.GatedBeliefDecider(lm, art.beta_bar)
                    for lm in art.local_models]
        return pd.run_decentralized_episode(art.model, deciders, rng)
    if scheme == "ia":
        deciders, hook = bl.make_alignment_deciders(
            art.model, art.ia_frame, art.ia_access)
        return pd.run_decentralized_episode(art.model, deciders, rng,
                                            slot_hook=hook)
    raise ConfigError(f"unknown scheme '{scheme}'")


def run_cell(cfg: ScenarioConfig, scheme: str, scenario: nm.Scenario,
             axis: str, value, jobs: int = 1) -> RunMetrics:
    """Plan once and run all seeded episodes of one (scheme, value) cell,
    plus the matched-seed silent baseline of the same variant."""
    art = prepare_scheme(cfg, scheme, scenario)
    seeds = [cfg.base_seed + k for k in range(cfg.runs)]

    def one(seed):
        return run_scheme_episode(art, np.random.default_rng(seed))

    def one_base(seed):
        return run_silent_episode(art.model, np.random.default_rng(seed))

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            episodes = list(ex.map(one, seeds))
            baselines_ = list(ex.map(one_base, seeds))
    else:
        episodes = [one(s) for s in seeds]
        baselines_ = [one_base(s) for s in seeds]
    return compute_metrics(scheme, axis, value, episodes, baselines_,
                           art.scenario)


def apply_axis(cfg: ScenarioConfig, axis: str, value) -> tuple:
    """Scenario (and config) variant for one sweep point."""
    sc = cfg.scenario
    new_cfg = cfg
    if axis == "alpha2":
        v = float(value)
        sc = replace(sc, traffic=nm.TrafficModel(v / 4.0, v))
    elif axis == "beta":
        new_cfg = replace(cfg, beta=float(value))
    elif axis == "center_khz":
        sc = replace(sc, center_khz=float(value))
    elif axis == "distance_km":
        topo = sc.topology
        current = float(np.linalg.norm(topo.pu_nodes[-1] - topo.pu_nodes[0]))
        f = float(value) * 1e3 / current
        sc = replace(sc, topology=nm.Topology(topo.pu_nodes * f, topo.su_nodes * f))
    elif axis == "su_packet":
        if value == "optimize":
            new_cfg = replace(cfg, optimize_packets=True)
        elif value == "max":
            new_cfg = replace(cfg, optimize_packets=False)
            sc = replace(sc, su_packet_bits=tuple(
                [sc.pu_packet_bits] * sc.topology.ns_hops))
        else:
            raise ConfigError(f"su_packet axis takes 'optimize' or 'max', got {value}")
    elif axis == "none":
        pass
    else:
        raise ConfigError(f"unknown sweep axis '{axis}'")
    return new_cfg, sc


def run_sweep(cfg: ScenarioConfig, axis: str | None = None, values=None,
              schemes=None, jobs: int = 1) -> list:
    """Full sweep: one RunMetrics per (value, scheme), deterministic in the
    base seed regardless of parallelism."""
    axis = axis or cfg.sweep_axis or "none"
    values = list(values if values is not None else
                  (cfg.sweep_values or [None]))
    schemes = list(schemes or cfg.schemes)
    out = []
    for value in values:
        cell_cfg, scenario = apply_axis(cfg, axis, value) \
            if axis != "none" else (cfg, cfg.scenario)
        for scheme in schemes:
            out.append(run_cell(cell_cfg, scheme, scenario, axis, value, jobs))
    return out


# ---------------------------------------------------------------------------
# export


_SUMMARY_FIELDS = (
    "axis", "value", "scheme", "n",
    "pu_bits_mean", "pu_bits_stderr", "su_bits_mean", "su_bits_stderr",
    "total_bits_mean", "total_bits_stderr",
    "spectrum_efficiency_mean", "spectrum_efficiency_stderr",
    "pu_ratio_mean", "pu_ratio_stderr",
)


def _fmt(v) -> str:
    if isinstance(v, float):
        return format(v, ".10g")
    return "" if v is None else str(v)


def export_results(table: list, path, long_path=None):
    """Write the sweep summary as a wide CSV (one row per value x scheme);
    optionally also a long-format file (one row per value x scheme x
    statistic) for plotting."""
    with open(path, "w") as f:
        f.write(",".join(_SUMMARY_FIELDS) + "\n")
        for rm in table:
            s = rm.summary()
            f.write(",".join(_fmt(s.get(k)) for k in _SUMMARY_FIELDS) + "\n")
    if long_path is not None:
        with open(long_path, "w") as f:
            f.write("axis,value,scheme,statistic,mean,stderr,n\n")
            for rm in table:
                s = rm.summary()
                for stat in ("pu_bits", "su_bits", "total_bits",
                             "spectrum_efficiency", "pu_ratio"):
                    f.write(",".join([
                        _fmt(s["axis"]), _fmt(s["value"]), s["scheme"], stat,
                        _fmt(s[f"{stat}_mean"]), _fmt(s[f"{stat}_stderr"]),
                        str(s["n"])]) + "\n")


def read_results(path) -> list:
    """Re-parse an exported wide CSV into summary dictionaries."""
    rows = []
    with open(path) as f:
        header = f.readline().strip().split(",")
        for line in f:
            parts = line.rstrip("\n").split(",")
            row = dict(zip(header, parts))
            rows.append(row)
    return rows


def export_transitions(model: nm.TransitionModel, path):
    """Diagnostic dump: one row per nonzero transition probability."""
    with open(path, "w") as f:
        f.write("state,decision,next_state,probability\n")
        for d in range(model.n_decisions):
            for x in range(model.n_states):
                row = model.P[d, x]
                for nx in np.nonzero(row)[0]:
                    f.write(f"{x},{d},{int(nx)},{row[nx]:.12g}\n")
