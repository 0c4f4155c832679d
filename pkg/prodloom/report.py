"""
Report emission: sweep.csv plus declarative figure specs, production and outcome
tables with embedded reference rows, and per-run artifact writers. Every
writer is deterministic so that regenerated reports are byte-identical.
"""

# Standard
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Tuple
import math
import os

# Third Party
import numpy as np
import pandas as pd

# Local
from . import constants
from .config import write_manifest
from .errors import ConfigurationError
from .log import log
from .pipeline import PipelineResult
from .production import BootstrapResult, ProductionEstimate
from .sweep import SweepTable, write_sweep_csv

FIGSPEC_SEPARATOR = "---"
BAND_LEVEL = 0.90

## Figure definitions ##########################################################


@dataclass(frozen=True)
class FigureSeries:
    """One plotted line. With `se` set, the figure carries a 90% band
    center +/- z * se (negated centers keep the band symmetric).
    """

    name: str
    column: str
    sign: float = 1.0
    offset: float = 0.0
    se: Optional[str] = None


@dataclass(frozen=True)
class FigureSpec:
    name: str
    title: str
    y_label: str
    series: Tuple[FigureSeries, ...]


FIGURES: Tuple[FigureSpec, ...] = (
    FigureSpec(
        name="price_coefficient",
        title="Estimated IV coefficient for p",
        y_label="coefficient on log price (-alpha)",
        series=(FigureSeries("coef_p", "alpha", sign=-1.0, se="se_alpha"),),
    ),
    FigureSpec(
        name="within_share_coefficient",
        title="Estimated IV coefficient for within-nest share",
        y_label="coefficient on log within share (1 - sigma)",
        series=(FigureSeries("coef_rs_within", "sigma", sign=-1.0, offset=1.0, se="se_sigma"),),
    ),
    FigureSpec(
        name="first_stage_f",
        title="Sanderson-Windmeijer first-stage F",
        y_label="F statistic",
        series=(FigureSeries("F_p", "F_p"), FigureSeries("F_rs", "F_rs")),
    ),
    FigureSpec(
        name="observations",
        title="Observations",
        y_label="observations with Z_t and Z_t-1",
        series=(FigureSeries("n_obs", "n_obs"),),
    ),
    FigureSpec(
        name="efficiency_gains",
        title="Efficiency gain bounds from dropping the lowest-TFPR product",
        y_label="mean gain (percent)",
        series=(FigureSeries("gain_lower", "gain_lower"), FigureSeries("gain_upper", "gain_upper")),
    ),
    FigureSpec(
        name="drop_marginal_effect",
        title="Effect of a 1-SD lower TFPR on the drop probability",
        y_label="percentage points",
        series=(FigureSeries("me_1sd", "me_1sd", se="me_se"),),
    ),
)

## Public ######################################################################


def emit_report(
    sweep: SweepTable,
    metadata: Mapping[str, object],
    outdir: str,
) -> List[str]:
    """Write sweep.csv, one fig_<name>.figspec per figure and manifest.txt

    Args:
        sweep:  SweepTable
            Non-empty sweep
        metadata:  Mapping[str, object]
            Run metadata echoed into every figure spec and the manifest
        outdir:  str
            Output directory (created if missing)

    Returns:
        paths:  List[str]
            sweep.csv, the figure specs and the manifest, in that order
    """
    if not len(sweep):
        raise ConfigurationError("Cannot emit a report for an empty sweep")
    os.makedirs(outdir, exist_ok=True)
    paths = [os.path.join(outdir, "sweep.csv")]
    write_sweep_csv(sweep, paths[0])
    for figure in FIGURES:
        path = os.path.join(outdir, f"fig_{figure.name}.figspec")
        _write_figspec(figure, sweep.frame, metadata, path)
        paths.append(path)
    manifest = os.path.join(outdir, "manifest.txt")
    write_manifest(manifest, dict(metadata), paths)
    paths.append(manifest)
    log.info("Wrote report with %d figure specs to %s", len(FIGURES), outdir)
    return paths


def production_table_frame(
    estimates: Mapping[str, ProductionEstimate],
    bootstrap: Optional[Mapping[str, BootstrapResult]] = None,
) -> pd.DataFrame:
    """Production coefficients by GMM preset, followed by the reference rows

    Returns:
        table:  pd.DataFrame
            source, preset, parameter, estimate, se, se_kind, n_obs, J_stat, note
    """
    rows = []
    for preset in sorted(estimates):
        est = estimates[preset]
        boot = bootstrap.get(preset) if bootstrap else None
        boot_se = boot.se_map() if boot is not None else {}
        analytic = est.se_analytic
        for parameter, column in (("beta_L", "l"), ("beta_K", "k"), ("beta_M", "m")):
            if parameter in boot_se:
                se, kind = boot_se[parameter], "bootstrap"
            else:
                se, kind = analytic.get(column, float("nan")), "analytic"
            rows.append(
                ("estimate", preset, parameter, getattr(est, parameter), se, kind, est.n_obs, est.J_stat, "")
            )
    for preset in sorted(constants.REFERENCE_PRODUCTION):
        for parameter, (value, se) in constants.REFERENCE_PRODUCTION[preset].items():
            rows.append(
                (
                    "reference",
                    preset,
                    parameter,
                    value,
                    se,
                    "bootstrap",
                    constants.REFERENCE_PRODUCTION_NOBS,
                    float("nan"),
                    constants.REFERENCE_NOTE,
                )
            )
    return pd.DataFrame(
        rows,
        columns=["source", "preset", "parameter", "estimate", "se", "se_kind", "n_obs", "J_stat", "note"],
    )


def outcome_table_frame(
    results: Mapping[str, PipelineResult],
    bootstrap: Optional[Mapping[str, BootstrapResult]] = None,
) -> pd.DataFrame:
    """Gain bounds and the 1-SD marginal effect per sample, followed by the
    reference rows

    Returns:
        table:  pd.DataFrame
            source, sample, statistic, estimate, se, note
    """
    rows = []
    for sample in sorted(results):
        result = results[sample]
        lower, upper = result.gain_summary
        boot_se = bootstrap[sample].se_map() if bootstrap and sample in bootstrap else {}
        probit = result.probit
        me = probit.marginal_effect_1sd if probit is not None else float("nan")
        me_se = boot_se.get("me_1sd", probit.me_se if probit is not None else float("nan"))
        note = f"marginal effect {probit.me_kind}" if probit is not None else ""
        rows.append(("estimate", sample, "gain_lower", lower, boot_se.get("gain_lower", float("nan")), ""))
        rows.append(("estimate", sample, "gain_upper", upper, boot_se.get("gain_upper", float("nan")), ""))
        rows.append(("estimate", sample, "me_1sd", me, me_se, note))
    for sample in sorted(constants.REFERENCE_OUTCOMES):
        ref = constants.REFERENCE_OUTCOMES[sample]
        rows.append(("reference", sample, "gain_lower", ref["gain_lower"], float("nan"), constants.REFERENCE_NOTE))
        rows.append(("reference", sample, "gain_upper", ref["gain_upper"], float("nan"), constants.REFERENCE_NOTE))
        me, me_se = ref["me_1sd"]
        rows.append(("reference", sample, "me_1sd", me, me_se, constants.REFERENCE_NOTE))
    return pd.DataFrame(rows, columns=["source", "sample", "statistic", "estimate", "se", "note"])


def emit_tables(
    outdir: str,
    estimates: Mapping[str, ProductionEstimate],
    results: Mapping[str, PipelineResult],
    production_bootstrap: Optional[Mapping[str, BootstrapResult]] = None,
    outcome_bootstrap: Optional[Mapping[str, BootstrapResult]] = None,
) -> List[str]:
    """Write production_table.csv (GMM presets) and outcome_table.csv (gain
    bounds and marginal effects)
    """
    os.makedirs(outdir, exist_ok=True)
    paths = [os.path.join(outdir, "production_table.csv"), os.path.join(outdir, "outcome_table.csv")]
    _write_csv(production_table_frame(estimates, production_bootstrap), paths[0])
    _write_csv(outcome_table_frame(results, outcome_bootstrap), paths[1])
    return paths


def write_run_outputs(result: PipelineResult, outdir: str) -> List[str]:
    """Per-stage CSV artifacts of a single-threshold run. Stages that did not
    run are skipped.
    """
    os.makedirs(outdir, exist_ok=True)
    paths = []

    def target(name: str) -> str:
        paths.append(os.path.join(outdir, name))
        return paths[-1]

    result.instruments.to_csv(target("instruments.csv"))
    summary = pd.DataFrame([result.to_row()])
    _write_csv(summary, target("summary.csv"))
    if result.demand is not None:
        _write_csv(pd.DataFrame([result.demand.to_row()]), target("demand_estimate.csv"))
    if result.allocations is not None:
        result.allocations.to_csv(target("cost_allocation.csv"))
    if result.production is not None:
        _write_csv(pd.DataFrame([result.production.to_row()]), target("production_estimate.csv"))
    if result.tfpr is not None:
        result.tfpr.to_csv(target("tfpr.csv"))
    if result.gains is not None:
        _write_csv(result.gains, target("gains.csv"))
    if result.probit is not None:
        _write_csv(probit_frame(result), target("probit.csv"))
    log.debug("Wrote %d run outputs to %s", len(paths), outdir)
    return paths


def probit_frame(result: PipelineResult) -> pd.DataFrame:
    """term, coefficient, se rows plus the marginal-effect row"""
    probit = result.probit
    se = np.sqrt(np.clip(np.diag(probit.vcov), 0.0, None))
    frame = pd.DataFrame(
        {"term": probit.names, "coefficient": probit.coefficients.to_numpy(), "se": se}
    )
    me_row = pd.DataFrame(
        {
            "term": [f"me_1sd_{probit.me_kind}"],
            "coefficient": [probit.marginal_effect_1sd],
            "se": [probit.me_se],
        }
    )
    return pd.concat([frame, me_row], ignore_index=True)


def write_bootstrap(result: BootstrapResult, outdir: str, label: Optional[str] = None) -> List[str]:
    """bootstrap_se.csv and bootstrap_draws.csv, suffixed with _<label> when
    one run holds several bootstraps
    """
    os.makedirs(outdir, exist_ok=True)
    suffix = f"_{label}" if label else ""
    paths = [
        os.path.join(outdir, f"bootstrap_se{suffix}.csv"),
        os.path.join(outdir, f"bootstrap_draws{suffix}.csv"),
    ]
    _write_csv(result.se, paths[0])
    _write_csv(result.draws, paths[1])
    return paths


def read_figspec(path: str) -> Tuple[Dict[str, str], pd.DataFrame]:
    """Parse a figure spec back into its header and data block"""
    with open(path, encoding="utf-8") as handle:
        text = handle.read()
    head, _, body = text.partition(f"\n{FIGSPEC_SEPARATOR}\n")
    header = dict(line.split("=", 1) for line in head.splitlines())
    rows = [line.split(",") for line in body.splitlines()]
    frame = pd.DataFrame(rows[1:], columns=rows[0])
    frame = frame.replace("", np.nan).astype(float)
    return header, frame


## Implementation Details ######################################################


def _write_csv(frame: pd.DataFrame, path: str):
    frame.to_csv(path, index=False, float_format="%.17g", na_rep="", lineterminator="\n")


def _fmt(value: float) -> str:
    value = float(value)
    return "" if math.isnan(value) else format(value, ".17g")


def _write_figspec(
    figure: FigureSpec,
    frame: pd.DataFrame,
    metadata: Mapping[str, object],
    path: str,
):
    """key=value header, a separator line and a CSV data block. Missing
    values are empty fields so plotting tools draw gaps.
    """
    z = constants.CONFIDENCE_Z90
    columns: List[str] = ["tau"]
    data: Dict[str, np.ndarray] = {"tau": frame["tau"].to_numpy(dtype=float)}
    bands = []
    for series in figure.series:
        center = series.offset + series.sign * frame[series.column].to_numpy(dtype=float)
        columns.append(series.name)
        data[series.name] = center
        if series.se is not None:
            se = frame[series.se].to_numpy(dtype=float)
            lower, upper = f"{series.name}_lower", f"{series.name}_upper"
            data[lower] = center - z * se
            data[upper] = center + z * se
            columns.extend([lower, upper])
            bands.append(f"{series.name}:{lower}:{upper}")

    header = [
        ("figure", figure.name),
        ("title", figure.title),
        ("x", "tau"),
        ("x_label", "purchase-share threshold tau"),
        ("y_label", figure.y_label),
        ("series", ",".join(s.name for s in figure.series)),
        ("bands", ",".join(bands)),
        ("band_level", format(BAND_LEVEL, "g")),
        ("band_z", format(z, ".17g")),
        ("reference_x", format(constants.DEFAULT_TAU, "g")),
        ("missing", "gap"),
    ]
    header.extend((f"meta.{key}", str(metadata[key])) for key in sorted(metadata))
    lines = [f"{key}={value}" for key, value in header]
    lines.append(FIGSPEC_SEPARATOR)
    lines.append(",".join(columns))
    for i in range(len(frame)):
        lines.append(",".join(_fmt(data[column][i]) for column in columns))
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write("\n".join(lines) + "\n")
