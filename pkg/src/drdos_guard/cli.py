"""Command-line entry point: ``python -m drdos_guard <command>``.

Exit codes: 0 success, 1 equivalence mismatches, 2 detection errors and
invalid input, 3 I/O errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import math
import random
import sys
from collections import Counter
from ipaddress import IPv4Address, IPv4Network
from typing import Optional, Sequence

import numpy as np

from .detection import Base, Combiner, Detector, DetectorConfig, assign_frames, write_frames_csv
from .errors import BadMagic, DrdosGuardError, InsufficientHistory, UnorderedInput
from .flowtable import FlowTable, Outcome
from .harness import (
    CLASSIFIERS,
    DEFAULT_ALIAS_SUBNET,
    SweepGrid,
    TargetWorkload,
    check_equivalence,
    emit_csv,
    emit_plot_data,
    load_grid,
    read_csv,
    run_scenario,
    sweep,
)
from .mitigation import MitigationManager, Variant, plan_state
from .packet import HostIdentity
from .pcap import read_pcap, write_pcap
from .traffic import DESK_PROFILE, SWEEP_PROFILE, AttackSpec, gen_benign, inject_attack, load_profile

log = logging.getLogger("drdos_guard")

EXIT_OK, EXIT_MISMATCH, EXIT_DETECTION, EXIT_IO = 0, 1, 2, 3


def _profile(args, default=DESK_PROFILE):
    profile = load_profile(args.profile, default) if args.profile else default
    changes = {}
    if args.duration is not None:
        changes["duration"] = args.duration
    if args.seed is not None:
        changes["seed"] = args.seed
    return dataclasses.replace(profile, **changes) if changes else profile


def _add_profile_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--profile", help="key=value traffic profile file")
    p.add_argument("--duration", type=float, help="seconds of traffic")
    p.add_argument("--seed", type=int)


def _add_detector_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("-l", "--frame-length", type=float, default=10.0)
    p.add_argument("-g", "--gap", type=int, default=5)
    p.add_argument("-e", "--entropy-count", type=int, default=1)
    p.add_argument("--T_h", "--entropy-threshold", dest="T_h", type=float, default=-3.0)
    p.add_argument("--T_r", "--ratio-threshold", dest="T_r", type=float, default=0.1)
    p.add_argument("--base", choices=[b.value for b in Base], default="flows")
    p.add_argument("--combiner", choices=[c.value for c in Combiner], default="mean")
    p.add_argument("--prescreen", action="store_true", help="require a destination or ratio indicator too")


def _config(args) -> DetectorConfig:
    return DetectorConfig(
        frame_length=args.frame_length,
        gap=args.gap,
        entropy_count=args.entropy_count,
        entropy_threshold=args.T_h,
        ratio_threshold=args.T_r,
        base=args.base,
        combiner=args.combiner,
        prescreen=args.prescreen,
    )


def cmd_generate(args) -> int:
    profile = _profile(args)
    stream = gen_benign(profile)
    if args.magnitude > 0:
        targets = tuple(IPv4Address(t) for t in args.target) if args.target else profile.target_ips(args.subnet_size)
        stop = profile.duration if args.attack_stop is None else args.attack_stop
        spec = AttackSpec(args.magnitude, args.attack_port, targets, args.attack_start, stop,
                          packets_per_flow=args.packets_per_flow, seed=profile.seed)
        stream = inject_attack(stream, spec, args.frame_length)
    labels: Counter = Counter()

    def counted():
        for pkt in stream:
            labels[pkt.label.value] += 1
            yield pkt

    n = write_pcap(counted(), args.output)
    print(f"wrote {n} packets to {args.output}")
    for label, count in sorted(labels.items()):
        print(f"  {label}: {count}")
    return EXIT_OK


def cmd_detect(args) -> int:
    config = _config(args)
    reader = read_pcap(args.input)
    frames = list(assign_frames(reader, config.frame_length))
    if reader.skipped:
        log.warning("skipped %d malformed records", reader.skipped)
    if args.frames_csv:
        write_frames_csv(frames, args.frames_csv)
    if len(frames) < config.history:
        raise InsufficientHistory(f"{len(frames)} frames, need {config.history}")
    det = Detector(config)
    reports = 0
    for f in frames:
        rep = det.push(f)
        if rep is None:
            continue
        reports += 1
        ev = rep.evidence["src_port"]
        print(f"t={rep.detected_at:.3f} target={rep.target_ip} port={rep.attack_port} "
              f"H_srcport {ev.reference:.3f} -> {ev.current:.3f} (delta {ev.delta:+.3f})")
        if args.first:
            break
    print(f"{len(frames)} frames, {reports} report(s)")
    return EXIT_OK


def cmd_mitigate(args) -> int:
    target = HostIdentity(IPv4Address(args.target_ip), args.target_mac, args.target_prefix)
    rng = random.Random(args.seed) if args.seed is not None else None
    manager = MitigationManager(FlowTable(), IPv4Network(args.alias_subnet), Variant(args.variant), rng=rng)
    plan = manager.activate(target, args.attack_port, now=args.start)
    if args.input:
        outcomes: Counter = Counter()
        pipeline = manager.pipeline()
        next_rotation = args.start + args.rotate_every if args.rotate_every else math.inf
        out = []
        for view in read_pcap(args.input):
            while view.timestamp >= next_rotation:
                manager.rotate(next_rotation, args.grace)
                next_rotation += args.rotate_every
            manager.tick(view.timestamp)
            d = pipeline.process(view)
            outcomes[d.outcome.value] += 1
            if d.view is not None and d.outcome is not Outcome.DROPPED:
                out.append(d.view)
        if args.output:
            write_pcap(out, args.output)
        for k, v in sorted(outcomes.items()):
            print(f"{k}={v}")
        plan = manager.plan
    print(plan_state(plan), end="")
    print(manager.table.dump(), end="")
    return EXIT_OK


def cmd_sweep(args) -> int:
    grid = load_grid(args.grid) if args.grid else SweepGrid()
    base = SWEEP_PROFILE if args.scale == "sweep" else DESK_PROFILE
    profile = _profile(args, base)
    skipped = []
    results = sweep(profile, grid, args.attack_port, args.packets_per_flow, on_skip=skipped.append)
    for s in skipped:
        log.warning("skipped l=%g g=%d e=%d: run holds only %d frames", s.l, s.g, s.e, s.frames)
    if args.output:
        emit_csv(results, args.output)
    if args.plot:
        emit_plot_data(results, args.plot)
    _summarise(results)
    return EXIT_OK


def _summarise(results) -> None:
    print(f"{len(results)} result rows")
    for c in CLASSIFIERS:
        for b in Base:
            accs = [r.accuracy for r in results if r.classifier == c and r.base is b]
            if accs:
                print(f"  {c:8s} {b.value:7s} mean accuracy {np.mean(accs):.4f} over {len(accs)} points")
    undefined = sum(not r.precision_defined for r in results)
    if undefined:
        print(f"  {undefined} rows with no positive verdicts (precision reported as 0)")


def cmd_report(args) -> int:
    results = read_csv(args.input)
    _summarise(results)
    best = sorted(results, key=lambda r: (-r.accuracy, r.latency))[: args.top]
    for r in best:
        print(f"  {r.classifier} {r.base.value} {r.combiner.value} l={r.l:g} g={r.g} e={r.e} "
              f"T={r.threshold:g} a={r.a:g} s={r.s}: P={r.precision:.4f} R={r.recall:.4f} "
              f"A={r.accuracy:.4f} latency={r.latency:g}s")
    return EXIT_OK


def cmd_scenario(args) -> int:
    profile = _profile(args)
    workload = TargetWorkload(seed=profile.seed)
    stop = profile.duration if args.attack_stop is None else args.attack_stop
    spec = AttackSpec(args.magnitude, args.attack_port, (workload.target.ip,), args.attack_start, stop,
                      seed=profile.seed)
    report = run_scenario(profile, spec, _config(args), Variant(args.variant), workload,
                          rotate_every=args.rotate_every, grace=args.grace, seed=profile.seed)
    for k, v in vars(report).items():
        print(f"{k}={v}")
    return EXIT_OK


def cmd_equivalence(args) -> int:
    rep = check_equivalence(args.packets, args.seed)
    print(f"packets={rep.packets} mismatches={rep.mismatches} elapsed={rep.elapsed:.2f}s")
    for region, n in sorted(rep.regions.items()):
        print(f"  {region}: {n}")
    if rep.first_mismatch is not None:
        view, a, b = rep.first_mismatch
        print(f"first mismatch: {view}\n  controller: {a}\n  switch: {b}")
    return EXIT_OK if rep.mismatches == 0 else EXIT_MISMATCH


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="drdos_guard", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write synthetic traffic, optionally with an attack, to pcap")
    _add_profile_args(p)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("-a", "--magnitude", type=float, default=0.0)
    p.add_argument("--attack-port", type=int, default=53)
    p.add_argument("--attack-start", type=float, default=0.0)
    p.add_argument("--attack-stop", type=float)
    p.add_argument("-s", "--subnet-size", type=int, default=1)
    p.add_argument("--target", action="append", help="target address (repeatable)")
    p.add_argument("--packets-per-flow", type=int, default=1)
    p.add_argument("-l", "--frame-length", type=float, default=10.0)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("detect", help="run the detector over a pcap")
    p.add_argument("input")
    _add_detector_args(p)
    p.add_argument("--frames-csv", help="write per-frame statistics here")
    p.add_argument("--first", action="store_true", help="stop at the first report")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("mitigate", help="compile a plan, optionally replay a pcap through it")
    p.add_argument("--target-ip", required=True)
    p.add_argument("--target-mac", required=True)
    p.add_argument("--target-prefix", type=int, default=24)
    p.add_argument("--attack-port", type=int, required=True)
    p.add_argument("--variant", choices=[v.value for v in Variant], default="switch")
    p.add_argument("--alias-subnet", default=str(DEFAULT_ALIAS_SUBNET))
    p.add_argument("--rotate-every", type=float)
    p.add_argument("--grace", type=float, default=0.0)
    p.add_argument("--start", type=float, default=0.0, help="activation time")
    p.add_argument("--seed", type=int, help="seed the alias draw (testing only)")
    p.add_argument("-i", "--input", help="pcap to replay")
    p.add_argument("-o", "--output", help="pcap of packets leaving the switch")
    p.set_defaults(func=cmd_mitigate)

    p = sub.add_parser("sweep", help="precision/recall/accuracy over a parameter grid")
    _add_profile_args(p)
    p.add_argument("--grid", help="key=value grid file")
    p.add_argument("--scale", choices=["sweep", "desk"], default="sweep")
    p.add_argument("--attack-port", type=int, default=53)
    p.add_argument("--packets-per-flow", type=int, default=1)
    p.add_argument("-o", "--output", help="results CSV")
    p.add_argument("--plot", help="per-threshold precision/recall JSON")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("scenario", help="closed-loop detection and mitigation run")
    _add_profile_args(p)
    _add_detector_args(p)
    p.add_argument("-a", "--magnitude", type=float, default=4.0)
    p.add_argument("--attack-port", type=int, default=53)
    p.add_argument("--attack-start", type=float, default=120.0)
    p.add_argument("--attack-stop", type=float)
    p.add_argument("--variant", choices=[v.value for v in Variant], default="switch")
    p.add_argument("--rotate-every", type=float)
    p.add_argument("--grace", type=float, default=0.0)
    p.set_defaults(func=cmd_scenario)

    p = sub.add_parser("equivalence", help="compare both rule programs on random packets")
    p.add_argument("-n", "--packets", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_equivalence)

    p = sub.add_parser("report", help="summarise a sweep CSV")
    p.add_argument("input")
    p.add_argument("--top", type=int, default=10)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (InsufficientHistory, UnorderedInput) as exc:
        log.error("detection failed: %s", exc)
        return EXIT_DETECTION
    except (OSError, BadMagic) as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO
    except (DrdosGuardError, ValueError) as exc:
        # invalid input shares the usage-error code
        log.error("%s", exc)
        return EXIT_DETECTION


if __name__ == "__main__":
    sys.exit(main())
