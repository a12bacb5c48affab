#!/usr/bin/env python3
"""Scenario calibration sweep: geometry, sensing, and scheme behavior.

Prints the interference structure (who can hurt whom, at what power and
overlap), sensor margins, and quick Monte Carlo results for the planned
schemes, for one or more candidate geometries. Used to pick the shipped
default scenario; not part of the test suite.
"""
import argparse
import math
import sys
import time

import numpy as np

from uwcognet import channel as ch
from uwcognet import netmodel as nm
from uwcognet import planner_central as pc
from uwcognet import planner_decentral as pd


def make_topology(cross_x, cross_along, angle_deg, lateral, hop_m=2500.0,
                  np_hops=4, ns_hops=4, depth=50.0):
    z = -depth
    pu = np.array([[k * hop_m, 0.0, z] for k in range(np_hops + 1)])
    th = math.radians(angle_deg)
    u = np.array([math.cos(th), math.sin(th), 0.0])
    cross = np.array([cross_x, lateral, z])
    su = np.array([cross + (k * hop_m - cross_along) * u for k in range(ns_hops + 1)])
    return nm.Topology(pu, su)


def describe(sc, model):
    print("== interference structure ==")
    noise = sc.noise_power(None)
    for (tx, rx), e in sorted(model.overlap.items()):
        if e.half_duplex or tx[0] == rx[0]:
            continue
        i_over_n = 10 * np.log10(e.power_linear / noise)
        frac = (e.k_end - e.k_start + 1) / sc.packet_bits(*rx)
        same_phase = (tx[1] % 3) == (rx[1] % 3) if tx[0] != rx[0] else True
        tag = "SAME-PHASE" if (tx[0] == "su" and rx[0] == "pu" and
                               tx[1] % 3 == rx[1] % 3) else ""
        print(f"  {tx} -> {rx}: bits {e.k_start}-{e.k_end} ({frac:.0%}) "
              f"I/N={i_over_n:+.1f} dB {tag}")
    print("== per-link baseline loss ==")
    for j in range(sc.topology.np_hops):
        print(f"  pu{j}: {model.losses.loss(('pu', j), frozenset()):.4f}", end="")
    print()
    print("== sensing margins (signature / pollution, dB over sigma) ==")
    for i in range(sc.topology.ns_hops):
        lm = pd.build_local_model(sc, i)
        sig = lm.sensor_sigma
        sensor = sc.topology.tx_pos("su", i)
        pus = {j: None for j in lm.members}
        for k, j in enumerate(lm.members):
            p = lm.obs_mean[lm.pack(1 << k, j % 3)]
            pus[j] = 10 * np.log10(p / sig) if p > 0 else -99
        poll = []
        for v in range(sc.topology.ns_hops):
            if v == i:
                continue
            d = float(np.linalg.norm(sc.topology.tx_pos("su", v) - sensor))
            poll.append(10 * np.log10(sc.tx_power_linear * sc.mean_gain(d) / sig))
        print(f"  SU{i}: members={lm.members} sigs_dB={[f'{v:.0f}' for v in pus.values()]} "
              f"su_pollution_dB={[f'{v:.0f}' for v in sorted(poll, reverse=True)[:2]]}")


def run_schemes(sc, model, beta, runs, seed0=1000):
    T = sc.slotting.horizon
    base_sched = pc.baseline_pu_value(model, T)
    base = base_sched[0]
    out = {}
    t0 = time.time()
    plan = pc.offline_plan(model, T, beta)
    plan_t = time.time() - t0
    res = [pc.run_episode_central(model, plan, np.random.default_rng(seed0 + k))
           for k in range(runs)]
    out["ccts"] = (np.array([r.pu_bits for r in res]), np.array([r.su_bits for r in res]))
    bb = beta ** (1.0 / sc.topology.ns_hops)
    lms = [pd.build_local_model(sc, i) for i in range(sc.topology.ns_hops)]
    plans = [pd.offline_plan_local(lm, T, bb) for lm in lms]
    res = [pd.run_episode_decentral(model, lms, plans, np.random.default_rng(seed0 + k))
           for k in range(runs)]
    out["dcts"] = (np.array([r.pu_bits for r in res]), np.array([r.su_bits for r in res]))
    sil = []
    for k in range(runs):
        rng = np.random.default_rng(seed0 + k)
        x, s = model.initial_state, 0.0
        for t in range(T):
            x, pb, sb = nm.simulate_slot(model, x, 0, rng)
            s += pb
        sil.append(s)
    out["silent"] = (np.array(sil), np.zeros(runs))
    print(f"== schemes (beta={beta}, T={T}, {runs} runs; ccts plan {plan_t:.0f}s; "
          f"analytic baseline {base:.0f}) ==")
    for name, (pu, su) in out.items():
        print(f"  {name:7s} pu={pu.mean():9.0f} ({pu.mean()/base:.3f} of baseline) "
              f"su={su.mean():9.0f} total={(pu+su).mean():9.0f}")
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--cross-x", type=float, default=4000.0)
    ap.add_argument("--cross-along", type=float, default=4000.0)
    ap.add_argument("--angle", type=float, default=35.0)
    ap.add_argument("--lateral", type=float, default=600.0)
    ap.add_argument("--kappa", type=float, default=1.05)
    ap.add_argument("--sigma-ln", type=float, default=0.45)
    ap.add_argument("--sensing-std", type=float, default=None)
    ap.add_argument("--snr-db", type=float, default=10.0)
    ap.add_argument("--alpha2", type=float, default=0.2)
    ap.add_argument("--alpha1", type=float, default=None)
    ap.add_argument("--beta", type=float, default=0.8)
    ap.add_argument("--horizon", type=int, default=150)
    ap.add_argument("--runs", type=int, default=40)
    ap.add_argument("--no-run", action="store_true")
    args = ap.parse_args()

    topo = make_topology(args.cross_x, args.cross_along, args.angle, args.lateral)
    env = ch.AcousticEnvironment(spreading_factor=args.kappa)
    a1 = args.alpha1 if args.alpha1 is not None else args.alpha2 / 4
    sc = nm.Scenario(
        topology=topo, slotting=nm.Slotting(horizon=args.horizon),
        traffic=nm.TrafficModel(a1, args.alpha2), env=env,
        fading_sigma_ln=args.sigma_ln, sensing_noise_std=args.sensing_std,
        detection_snr_db=args.snr_db)
    model = nm.build_transition_model(sc)
    describe(sc, model)
    if not args.no_run:
        run_schemes(sc, model, args.beta, args.runs)


if __name__ == "__main__":
    sys.exit(main())
