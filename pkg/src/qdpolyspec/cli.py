"""Command line: ``qdpolyspec {simulate,spectra,model-spectra,wtd,fit,scan,pipeline}``.

Values come from the built-in defaults, then ``--config FILE`` (YAML), then
explicit flags.  Every run writes ``manifest.json`` to its output directory.
Exit status is 0 only if every requested stage succeeded; 1 after a stage
failure (partial outputs are kept) and 2 for bad arguments or missing files.
The environment variable ``QDPOLYSPEC_THREADS`` sets the numba thread count.
"""

from __future__ import annotations

import argparse
import sys
from importlib import resources

from . import __version__
from .errors import QdPolyspecError
from .pipeline import (
    DEFAULT_SEED,
    ConfigError,
    StageError,
    cmd_fit,
    cmd_model_spectra,
    cmd_pipeline,
    cmd_scan,
    cmd_simulate,
    cmd_spectra,
    cmd_wtd,
    load_config,
    parse_grid,
    set_threads,
)


def _common(p):
    p.add_argument("--config", help="YAML file with run parameters (flags override it)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help=f"master seed (default {DEFAULT_SEED})")


def _acquisition(p):
    p.add_argument("--duration", type=float, help="trace length in s")
    p.add_argument("--dt", type=float, help="sampling interval in s")
    p.add_argument("--noise", type=float, help="white-noise standard deviation per sample")


def _estimation(p):
    p.add_argument("--fmax", dest="f_max", type=float, help="highest frequency in Hz")
    p.add_argument("--fres", dest="f_resolution", type=float, help="frequency resolution in Hz")
    p.add_argument("--window", choices=["acg", "hann", "rect"])
    p.add_argument("--parts", type=int, help="number of parts for the variance estimate")
    p.add_argument("--overlap", type=float, help="segment overlap fraction (order 2 only)")


def _fitting(p):
    p.add_argument("--models", help="comma-separated candidates, e.g. 2state,m1,m2,m3,m4,general3")
    p.add_argument("--orders", help="comma-separated orders to fit, e.g. 2,3,4")
    p.add_argument("--bootstrap", type=int, help="bootstrap replicates (0 disables)")
    p.add_argument("--restarts", type=int, help="random starts per candidate")
    p.add_argument("--aic-form", dest="aic_form", choices=["standard", "paper"])
    p.add_argument("--weights", choices=["local", "raw"],
                   help="fit weights from neighbouring-bin variances (local) or each bin's own (raw)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qdpolyspec", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a detector trace from a model file")
    _common(p)
    _acquisition(p)
    p.add_argument("--model", help="model file (YAML or JSON)")
    p.add_argument("--format", choices=["raw", "csv"])
    p.add_argument("--simulate-background", dest="simulate_background", action="store_const", const=True,
                   help="also write a noise-only background trace")

    p = sub.add_parser("spectra", help="estimate polyspectra of a trace")
    _common(p)
    _estimation(p)
    p.add_argument("--trace", help="trace file written by 'simulate'")
    p.add_argument("--order", dest="orders", nargs="+", type=int, choices=[1, 2, 3, 4])
    p.add_argument("--background", help="background trace whose spectra are subtracted")
    p.add_argument("--no-csv", dest="spectra_csv", action="store_const", const=False)

    p = sub.add_parser("model-spectra", help="analytic spectra of a model file")
    _common(p)
    p.add_argument("--model", help="model file")
    p.add_argument("--order", type=int, choices=[1, 2, 3, 4], required=True)
    p.add_argument("--grid", default="5000,7.5", help="'FMAX,FRES' or a comma-separated frequency list")

    p = sub.add_parser("wtd", help="waiting-time distributions from jump detection")
    _common(p)
    p.add_argument("--trace", help="trace file")
    p.add_argument("--levels", help="LOW,HIGH output levels")
    p.add_argument("--form", dest="wtd_form", choices=["mono", "bi"], help="form of the high-level WTD")
    p.add_argument("--bins", dest="wtd_bins", type=int)
    p.add_argument("--hysteresis", type=float)

    for name, text in (("fit", "fit candidate models to spectra"), ("scan", "rank candidates by AIC")):
        p = sub.add_parser(name, help=text)
        _common(p)
        _fitting(p)
        p.add_argument("--data", dest="trace", help="directory (or file) of spectrum JSON files")
        p.add_argument("--noise", type=float, help="noise level for bootstrap replicates")

    p = sub.add_parser("pipeline", help="estimate, fit, scan, bootstrap and tabulate")
    _common(p)
    _acquisition(p)
    _estimation(p)
    _fitting(p)
    p.add_argument("--model", help="model file to simulate from")
    p.add_argument("--trace", help="analyse this trace instead of simulating")
    p.add_argument("--background", help="background trace whose spectra are subtracted")
    p.add_argument("--simulate-background", dest="simulate_background", action="store_const", const=True)
    p.add_argument("--bootstrap-models", dest="bootstrap_models")
    p.add_argument("--levels", help="LOW,HIGH levels for jump detection")
    p.add_argument("--form", dest="wtd_form", choices=["mono", "bi"])
    p.add_argument("--no-csv", dest="spectra_csv", action="store_const", const=False)
    p.add_argument("--demo", action="store_true", help="use the bundled desk-scale demo config")
    return parser


_NOT_CONFIG = {"command", "config", "order", "grid", "demo"}


def demo_config_path() -> str:
    return str(resources.files("qdpolyspec").joinpath("data/demo.yaml"))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {k: v for k, v in vars(args).items() if k not in _NOT_CONFIG and v is not None}
    config = args.config
    if getattr(args, "demo", False) and config is None:
        config = demo_config_path()
    set_threads()
    try:
        cfg = load_config(config, overrides)
        if args.command == "simulate":
            cmd_simulate(cfg)
        elif args.command == "spectra":
            cmd_spectra(cfg)
        elif args.command == "model-spectra":
            cmd_model_spectra(cfg, args.order, parse_grid(args.grid))
        elif args.command == "wtd":
            cmd_wtd(cfg)
        elif args.command == "fit":
            cmd_fit(cfg)
        elif args.command == "scan":
            cmd_scan(cfg)
        else:
            result = cmd_pipeline(cfg)
            print(result["table_text"])
    except ConfigError as exc:
        print(f"qdpolyspec {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"qdpolyspec {args.command}: {exc}", file=sys.stderr)
        return 1
    except (OSError, QdPolyspecError, ValueError) as exc:
        print(f"qdpolyspec {args.command}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
