"""Command line entry: run suites, a single demo scenario, golden-vector
regeneration, and the quick invariant selftest.

    fdsim run --config scenarios/paper_fig6.toml --out-dir out/
    fdsim demo --out-dir out/demo --plot
    fdsim goldens --out-dir out/goldens
    fdsim selftest

Exit code is 0 only when every executed scenario finished without recorded
errors (and, for selftest, every check passed).
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .runner import build_node, run_scenario, run_suite
from .scenario import Scenario, SuiteParseError, load_suite
from .waveform import fd_20mhz, fdd_10mhz, write_iq


def _cmd_run(args) -> int:
    try:
        scenarios = load_suite(args.config)
    except SuiteParseError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    if args.seed_override is not None:
        scenarios = [Scenario(**{**s.__dict__, "seed": args.seed_override})
                     for s in scenarios]
    reports = run_suite(scenarios, args.out_dir, jobs=args.jobs, dump_iq=args.dump_iq)
    failed = 0
    for r in reports:
        status = "ok" if not r.errors else f"ERRORS: {'; '.join(r.errors)}"
        print(f"{r.scenario_id}: {status}")
        failed += bool(r.errors)
    print(f"report: {os.path.join(args.out_dir, 'report.csv')}")
    return 1 if failed else 0


def demo_scenario(seed: int = 1) -> Scenario:
    """The over-the-air constellation scenario: own 4-QAM transmission as
    self-interference, 64-QAM desired link, analog + digital cancellation."""
    return Scenario(
        id="demo_fig6a",
        profile="fd_20mhz",
        qam_down=4,
        qam_up=64,
        snr_db=30.0,
        num_frames=2,
        seed=seed,
        digital_canceller=True,
        passive_isolation_db=42.0,
        active_enabled=True,
        si_taps=((3, 1.0 + 0.0j), (8, 0.0562 + 0.0562j)),
        desired_taps=((0, 0.01 + 0.0j),),
    )


def _cmd_demo(args) -> int:
    sc = demo_scenario(seed=args.seed_override if args.seed_override is not None else 1)
    os.makedirs(args.out_dir, exist_ok=True)
    results = {}
    # left panel of the measured constellations: passive isolation only;
    # right panel: passive + tuned active tap + digital canceller
    for label, active, digital in (("passive_only", False, False),
                                   ("analog_digital", True, True)):
        variant = Scenario(**{**sc.__dict__, "id": f"demo_{label}",
                              "active_enabled": active,
                              "digital_canceller": digital})
        rep = run_scenario(variant, keep_cells=True, keep_iq=args.dump_iq)
        results[label] = rep
        d0 = rep.details.get("direction0")
        print(f"{variant.id}: evm={rep.evm_percent and round(rep.evm_percent, 2)}% "
              f"ber={rep.ber} analog={rep.analog_total_db and round(rep.analog_total_db, 1)} dB "
              f"digital={rep.digital_db and round(rep.digital_db, 1)} dB")
        if d0 is not None and d0.data_cells is not None:
            path = os.path.join(args.out_dir, f"constellation_{label}.csv")
            cells = d0.data_cells
            np.savetxt(path, np.column_stack([cells.real, cells.imag]),
                       delimiter=",", header="re,im", comments="")
            print(f"  constellation dump: {path}")
        if args.dump_iq and d0 is not None and d0.rx is not None:
            write_iq(os.path.join(args.out_dir, f"demo_{label}_rx.iq"), d0.rx,
                     {"profile": sc.profile, "node_id": 0,
                      "qam_order": sc.qam_up, "seed": sc.seed})
    if args.plot:
        _plot_demo(results, args.out_dir)
    return 0


def _plot_demo(results, out_dir: str):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 2, figsize=(10, 5), sharex=True, sharey=True)
    for ax, (label, rep) in zip(axes, results.items()):
        d0 = rep.details.get("direction0")
        if d0 is None or d0.data_cells is None:
            continue
        cells = d0.data_cells[:20000]
        ax.plot(cells.real, cells.imag, ".", markersize=1.5, alpha=0.4)
        ax.set_title(f"{label} (EVM {rep.evm_percent:.1f}%)" if rep.evm_percent else label)
        ax.set_xlabel("I")
        ax.grid(alpha=0.3)
        ax.set_aspect("equal")
    axes[0].set_ylabel("Q")
    path = os.path.join(out_dir, "constellations.png")
    fig.tight_layout()
    fig.savefig(path, dpi=140)
    print(f"  plot: {path}")


def _cmd_goldens(args) -> int:
    os.makedirs(args.out_dir, exist_ok=True)
    seed = args.seed_override if args.seed_override is not None else 0
    for profile, make in (("fd_20mhz", fd_20mhz), ("fdd_10mhz", fdd_10mhz)):
        for node in (0, 1):
            cfg = make(qam_order=4, node_id=node)
            tx = build_node(cfg, 1, seed)
            path = os.path.join(args.out_dir, f"{profile}_node{node}.iq")
            write_iq(path, tx.stream, {
                "profile": profile, "node_id": node,
                "qam_order": cfg.qam_order, "seed": seed,
            })
            print(f"wrote {path} ({len(tx.stream)} samples)")
    return 0


def _cmd_selftest(args) -> int:
    from .selftest import run_selftest
    return run_selftest()


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="fdsim", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a scenario suite")
    p_run.add_argument("--config", required=True, help="suite TOML file")
    p_run.add_argument("--out-dir", default="out", help="report/dump directory")
    p_run.add_argument("--seed-override", type=int, default=None)
    p_run.add_argument("--dump-iq", action="store_true")
    p_run.add_argument("--jobs", type=int, default=1, help="parallel scenarios")
    p_run.set_defaults(fn=_cmd_run)

    p_demo = sub.add_parser("demo", help="constellation demo (canceller off vs on)")
    p_demo.add_argument("--out-dir", default="out/demo")
    p_demo.add_argument("--seed-override", type=int, default=None)
    p_demo.add_argument("--dump-iq", action="store_true")
    p_demo.add_argument("--plot", action="store_true", help="write scatter PNG")
    p_demo.set_defaults(fn=_cmd_demo)

    p_gold = sub.add_parser("goldens", help="regenerate golden IQ vectors")
    p_gold.add_argument("--out-dir", default="out/goldens")
    p_gold.add_argument("--seed-override", type=int, default=None)
    p_gold.set_defaults(fn=_cmd_goldens)

    p_self = sub.add_parser("selftest", help="quick invariant checks")
    p_self.set_defaults(fn=_cmd_selftest)

    args = ap.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
