"""
Command-line front end for prodloom. Every subcommand writes a manifest.txt
(config echo plus content hashes) next to its outputs.

Example Usage:

# Simulate a panel with known parameters
python -m prodloom synth --seed 7 --out synth/

# Ingest and validate a panel directory (outputs.csv, inputs.csv, purchases.csv)
python -m prodloom ingest --data synth/ --out clean/

# Full pipeline at a single threshold
python -m prodloom estimate --data synth/ --tau 0.3 --out run/

# Threshold sweep, estimated or calibrated demand
python -m prodloom sweep --data synth/ --grid 0:1:0.01 --out sweep/
python -m prodloom sweep --data synth/ --calibrate alpha=0.2,sigma=0.5 --out sweep/

# Plant block bootstrap
python -m prodloom bootstrap --data synth/ --bootstrap 200 --seed 1 --out boot/

# Regenerate the figure specs of an earlier sweep
python -m prodloom report --sweep sweep/sweep.csv --out sweep/
"""

# Standard
from dataclasses import replace
from typing import Dict, Iterable, List, Optional
import argparse
import os
import sys

# Local
from . import constants
from . import log as prodloom_log
from .config import RunConfig, load_run_config, read_manifest, write_manifest
from .errors import ConfigurationError, EstimationError, PanelValidationError, ValidationError
from .log import log
from .panel import (
    Panel,
    apply_concordance,
    load_panel,
    validate_panel,
    write_ingest_log,
    write_panel,
)
from .pipeline import PipelineReplay, run_pipeline
from .production import BootstrapResult, block_bootstrap, estimate_presets, preset_like
from .report import emit_report, emit_tables, write_bootstrap, write_run_outputs
from .sweep import grid_values, load_sweep_csv, run_threshold_sweep
from .synth import SynthConfig, generate_synthetic, write_synthetic

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_ESTIMATION = 2

COMMANDS = ("ingest", "estimate", "sweep", "synth", "bootstrap", "report")

## Main ########################################################################


class _ArgumentParser(argparse.ArgumentParser):
    """Usage errors exit with the validation status"""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def main(argv: Optional[List[str]] = None) -> int:
    """Main entrypoint as a function"""
    parser = _build_parser()
    args = parser.parse_args(argv)

    prodloom_log.configure(args.log_level)
    try:
        config = load_run_config(args.command, args.config, _overrides(args))
        return _COMMANDS[args.command](config, args)
    except ValidationError as err:
        log.error("%s", err)
        print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except EstimationError as err:
        log.error("%s", err)
        print(f"error: {err}", file=sys.stderr)
        return EXIT_ESTIMATION
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION


## Commands ####################################################################


def _ingest(config: RunConfig, args: argparse.Namespace) -> int:
    os.makedirs(config.out, exist_ok=True)
    log_path = os.path.join(config.out, "ingest_log.txt")
    validation_path = os.path.join(config.out, "validation.txt")
    try:
        panel = _load_panel(config)
    except PanelValidationError as err:
        write_ingest_log(err.ingest_log, log_path)
        _write_lines(validation_path, err.findings)
        _manifest(config, [log_path, validation_path])
        print(f"{len(err.findings)} validation finding(s); see {validation_path}", file=sys.stderr)
        return EXIT_VALIDATION
    report = validate_panel(panel, config.ingest_config())
    paths = list(write_panel(panel, config.out).values())
    write_ingest_log(panel.ingest_log, log_path)
    _write_lines(validation_path, report)
    _manifest(config, paths + [log_path, validation_path])
    if not report.ok:
        print(f"{len(report)} validation finding(s); see {validation_path}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


def _estimate(config: RunConfig, args: argparse.Namespace) -> int:
    panel = _load_panel(config)
    result = run_pipeline(panel, config.tau, config.pipeline_spec(), calibration=config.calibration)
    paths = write_run_outputs(result, config.out)
    _manifest(config, paths)
    if result.errors:
        for message in result.errors:
            print(f"error: {message}", file=sys.stderr)
        return EXIT_ESTIMATION
    return EXIT_OK


def _sweep(config: RunConfig, args: argparse.Namespace) -> int:
    panel = _load_panel(config)
    sweep = run_threshold_sweep(
        panel,
        grid=grid_values(*config.grid),
        calibration=config.calibration,
        spec=config.pipeline_spec(),
        n_jobs=config.jobs,
        seed=config.seed,
    )
    metadata: Dict[str, object] = dict(config.manifest_entries())
    metadata.update({f"sweep.{key}": val for key, val in sweep.metadata.items()})
    emit_report(sweep, metadata, config.out)
    return EXIT_OK


def _synth(config: RunConfig, args: argparse.Namespace) -> int:
    synth_config = SynthConfig(n_plants=config.n_plants, n_years=config.n_years)
    panel, truth = generate_synthetic(synth_config, seed=config.seed or 0)
    paths = list(write_synthetic(panel, truth, config.out).values())
    _manifest(config, paths, {"synth_spec_hash": synth_config.spec_hash()})
    return EXIT_OK


def _bootstrap(config: RunConfig, args: argparse.Namespace) -> int:
    if not config.bootstrap:
        raise ConfigurationError("bootstrap needs --bootstrap B")
    panel = _load_panel(config)
    spec = config.pipeline_spec()
    point = run_pipeline(panel, config.tau, spec, calibration=config.calibration)
    if point.production is None:
        raise EstimationError("; ".join(point.errors) or "No production estimate at the point")
    estimates = estimate_presets(point.product_inputs, spec.moments)
    estimates[spec.moments.preset] = point.production

    paths = write_run_outputs(point, config.out)
    boots: Dict[str, BootstrapResult] = {}
    n_failed: Dict[str, str] = {}
    for preset in sorted(estimates):
        preset_spec = replace(
            spec,
            moments=preset_like(spec.moments, preset),
            run_outcomes=spec.run_outcomes and preset == spec.moments.preset,
        )
        boots[preset] = block_bootstrap(
            panel,
            PipelineReplay.for_panel(panel, config.tau, preset_spec, config.calibration),
            B=config.bootstrap,
            seed=config.seed,
            mode=config.mode,
            demand=point.demand,
            n_jobs=config.jobs,
        )
        paths.extend(write_bootstrap(boots[preset], config.out, label=preset))
        n_failed[f"bootstrap.n_failed.{preset}"] = str(boots[preset].n_failed)
    paths.extend(
        emit_tables(
            config.out,
            estimates,
            {"run": point},
            production_bootstrap=boots,
            outcome_bootstrap={"run": boots[spec.moments.preset]},
        )
    )
    _manifest(config, paths, n_failed)
    return EXIT_OK


def _report(config: RunConfig, args: argparse.Namespace) -> int:
    if not args.sweep:
        raise ConfigurationError("report needs --sweep PATH")
    sweep = load_sweep_csv(args.sweep)
    manifest_path = os.path.join(os.path.dirname(args.sweep), "manifest.txt")
    metadata: Dict[str, object] = {}
    if os.path.exists(manifest_path):
        metadata = {
            key: val for key, val in read_manifest(manifest_path).items() if not key.startswith("sha256.")
        }
    else:
        metadata = dict(config.manifest_entries())
    emit_report(sweep, metadata, config.out)
    return EXIT_OK


_COMMANDS = {
    "ingest": _ingest,
    "estimate": _estimate,
    "sweep": _sweep,
    "synth": _synth,
    "bootstrap": _bootstrap,
    "report": _report,
}

## Implementation Details ######################################################


def _build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(
        prog=constants.THIS_PACKAGE, description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter
    )
    parser.add_argument("command", choices=COMMANDS, help="Subcommand to run")
    parser.add_argument("--config", "-c", default=None, help="key=value config file")
    parser.add_argument("--data", "-d", default=None, help="Panel directory")
    parser.add_argument("--concordance", default=None, help="concordance.csv to apply")
    parser.add_argument(
        "--lenient-concordance",
        dest="strict_concordance",
        action="store_const",
        const=False,
        default=None,
        help="Drop codes missing from the concordance instead of failing",
    )
    parser.add_argument("--market-sizes", dest="market_sizes", default=None, help="market_size.csv")
    parser.add_argument("--kappa", type=float, default=None, help="Market size multiplier")
    parser.add_argument("--tau", type=float, default=None, help="Purchase-share threshold")
    parser.add_argument("--grid", default=None, help="Sweep grid a:b:step")
    parser.add_argument("--calibrate", default=None, help="Fixed demand: alpha=..,sigma=..")
    parser.add_argument(
        "--nest-count-instrument",
        dest="nest_count_instrument",
        action="store_const",
        const=True,
        default=None,
        help="Add the log nest product count as an excluded demand instrument",
    )
    parser.add_argument("--gmm-preset", dest="gmm_preset", default=None, help="col1, col2 or col3")
    parser.add_argument("--me-kind", dest="me_kind", default=None, help="at_means or average")
    parser.add_argument("--bootstrap", "-B", type=int, default=None, help="Bootstrap replications")
    parser.add_argument("--mode", default=None, help="nonparametric or semi-parametric")
    parser.add_argument("--seed", type=int, default=None, help="Root seed")
    parser.add_argument("--jobs", "-j", type=int, default=None, help="Worker count (-1 = all cores)")
    parser.add_argument("--n-plants", dest="n_plants", type=int, default=None, help="Synthetic plants")
    parser.add_argument("--n-years", dest="n_years", type=int, default=None, help="Synthetic years")
    parser.add_argument("--sweep", default=None, help="sweep.csv to re-render (report)")
    parser.add_argument("--out", "-o", default=None, help="Output directory")
    parser.add_argument(
        "--log_level",
        "-l",
        default=os.environ.get("LOG_LEVEL", "warning"),
        help="Default log level",
    )
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, object]:
    keys = (
        "data",
        "concordance",
        "strict_concordance",
        "market_sizes",
        "kappa",
        "tau",
        "grid",
        "calibrate",
        "nest_count_instrument",
        "gmm_preset",
        "me_kind",
        "bootstrap",
        "mode",
        "seed",
        "jobs",
        "n_plants",
        "n_years",
        "out",
    )
    return {key: getattr(args, key) for key in keys}


def _load_panel(config: RunConfig) -> Panel:
    panel = load_panel(
        config.data_path("outputs.csv"),
        config.data_path("inputs.csv"),
        config.data_path("purchases.csv"),
        config.ingest_config(),
    )
    if config.concordance:
        panel = apply_concordance(panel, config.concordance, config.ingest_config())
    return panel


def _manifest(config: RunConfig, paths: List[str], extra: Optional[Dict[str, str]] = None):
    entries: Dict[str, object] = dict(config.manifest_entries())
    entries.update(extra or {})
    os.makedirs(config.out, exist_ok=True)
    write_manifest(os.path.join(config.out, "manifest.txt"), entries, paths)


def _write_lines(path: str, items: Iterable[object]):
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for item in items:
            handle.write(f"{item}\n")


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
