"""Command line entry point: ``bhchain {run,sweep,spectra,verify}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .checks import run_suite
from .config import ConfigError, ExperimentConfig
from .fock import BasisTooLarge
from .liouville import SolverError
from .pipeline import NotConverged, cmd_run, cmd_spectra, cmd_sweep

EXIT_OK, EXIT_INVALID, EXIT_NOT_CONVERGED, EXIT_CHECK_FAILED = 0, 2, 3, 4


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bhchain", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in [
        ("run", "steady state and observables at one parameter point"),
        ("sweep", "current and spacing statistics over a (U, N) grid"),
        ("spectra", "integrated spacing distributions for the configured U values"),
        ("verify", "structural identity and oracle-equivalence checks"),
    ]:
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="dotted override, e.g. model.U=1.0 (repeatable)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--heavy", action="store_true", help="allow dimensions above the default size guard")
        p.add_argument("--jobs", type=int, help="worker processes for sweeps")
        p.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = ExperimentConfig.load(args.config, args.set, out=args.out, jobs=args.jobs)
        if args.command == "run":
            rec = cmd_run(cfg, args.heavy)
            print(json.dumps({"dim": rec.dim, "current": rec.current, "residual": rec.residual,
                              "record": rec.files.get("record")}))
        elif args.command == "sweep":
            rows, cross = cmd_sweep(cfg, args.heavy)
            for r in rows:
                print(f"U={r['U']:<8.4g} N={r['N']}  dim={r['dim']:<5d} current={r['current']:.6e}"
                      f"  KS_poisson={r['ks_poisson']:.3f}  KS_gue={r['ks_gue']:.3f} {r['error']}")
            print("crossover U (current < half its U=0 value):", cross)
            if any(not r["converged"] for r in rows):
                return EXIT_NOT_CONVERGED
        elif args.command == "spectra":
            for p, st, path in cmd_spectra(cfg, args.heavy):
                print(f"U={p.U:g}: KS_poisson={st.ks_poisson:.3f} KS_gue={st.ks_gue:.3f} "
                      f"favours {st.favours()} -> {path}")
        elif args.command == "verify":
            v = cfg.data["verify"]
            checks = run_suite([tuple(s) for s in v["sizes"]], v["mutate_current_sign"], cfg.data["seed"])
            for c in checks:
                print(c.line())
            failed = [c.name for c in checks if not c.passed]
            if failed:
                print(f"{len(failed)} check(s) failed: {failed}", file=sys.stderr)
                return EXIT_CHECK_FAILED
    except (ConfigError, BasisTooLarge, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NotConverged, SolverError) as exc:
        print(f"not converged: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
