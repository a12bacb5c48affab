"""Interference-constrained time-slot scheduling for cognitive multi-hop
underwater acoustic networks: statistical channel model, Markov system
model, centralized and decentralized planners, baselines, and a Monte Carlo
experiment harness."""

from .channel import (AcousticEnvironment, LinkGainModel, MultipathGeometry,
                      absorption_db_per_km, attenuation_db, band_noise_power,
                      ber_lognormal, fit_link_gain, noise_psd, packet_loss,
                      packet_loss_segments, three_path_geometry)
from .errors import ConfigError, ContractViolation, NumericalError
from .netmodel import (EpisodeResult, Scenario, Slotting, Topology,
                       TrafficModel, TransitionModel, build_overlap_table,
                       build_transition_model, critical_sizes,
                       crossing_lines_topology, observe, simulate_slot)
from .planner_central import (PlanTable, baseline_pu_value,
                              belief_update_central, decide_online,
                              initial_decisions, offline_plan,
                              run_episode_central)
from .planner_decentral import (LocalModel, LocalPlanTable, PacketSizePlan,
                                belief_update_local, build_local_model,
                                decide_threshold, offline_plan_local,
                                optimize_packet_size, run_episode_decentral,
                                stationary_distribution)
from .baselines import (BandPlan, build_fdm_model, cfdm_decide, ctdm_decide,
                        default_band_plan, make_alignment_deciders)
from .harness import (RunMetrics, ScenarioConfig, compute_metrics,
                      export_results, load_config, run_sweep)

__version__ = "0.1.0"
