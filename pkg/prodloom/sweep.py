"""
The tau-grid robustness sweep. Every grid point is an independent
single-threshold run; rows come back ordered by tau whatever the completion
order of the worker pool.
"""

# Standard
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

# Third Party
import joblib as jbl
import numpy as np
import pandas as pd

# Local
from . import constants
from .demand import is_admissible
from .errors import ConfigurationError, ProdloomError, SchemaError
from .instruments import compute_purchase_shares
from .log import log
from .panel import Panel
from .pipeline import PipelineResult, PipelineSpec, run_pipeline
from .shares import compute_revenue_shares

SWEEP_COLUMNS = (
    "tau",
    "alpha",
    "se_alpha",
    "sigma",
    "se_sigma",
    "one_minus_sigma",
    "F_p",
    "F_rs",
    "n_obs",
    "n_codes",
    "admissible",
    "n_flagged",
    "beta_L",
    "beta_K",
    "beta_M",
    "gain_lower",
    "gain_upper",
    "me_1sd",
    "me_se",
    "error",
)
MODE_ESTIMATE = "estimate"
MODE_CALIBRATE = "calibrate"

## Types #######################################################################


@dataclass(frozen=True, eq=False)
class SweepTable:
    """One row per grid point (SWEEP_COLUMNS), ordered by tau"""

    frame: pd.DataFrame
    metadata: Dict[str, str] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.frame)

    def row(self, tau: float) -> pd.Series:
        matches = self.frame[np.isclose(self.frame["tau"], tau, rtol=0, atol=1e-12)]
        if matches.empty:
            raise KeyError(tau)
        return matches.iloc[0]


## Public ######################################################################


def grid_values(start: float, stop: float, step: float) -> Tuple[float, ...]:
    """Inclusive grid start, start + step, ..., stop rounded to 10 decimals"""
    if not step > 0:
        raise ConfigurationError(f"Grid step must be positive (got {step})")
    if stop < start:
        raise ConfigurationError(f"Grid end {stop} is below its start {start}")
    count = int(round((stop - start) / step))
    values = tuple(round(start + i * step, 10) for i in range(count + 1))
    _check_grid(values)
    return values


def run_threshold_sweep(
    panel: Panel,
    grid: Optional[Sequence[float]] = None,
    calibration: Optional[Tuple[float, float]] = None,
    spec: Optional[PipelineSpec] = None,
    n_jobs: int = 1,
    seed: Optional[int] = None,
) -> SweepTable:
    """Re-run the pipeline at every threshold of the grid

    Args:
        panel:  Panel
            Validated panel
        grid:  Optional[Sequence[float]]
            Thresholds in [0, 1] (default 0.00, 0.01, ..., 1.00)
        calibration:  Optional[Tuple[float, float]]
            Fixed (alpha, sigma) for calibrated-demand mode; 2SLS otherwise
        spec:  Optional[PipelineSpec]
            Stage options shared by every grid point
        n_jobs:  int
            joblib worker count
        seed:  Optional[int]
            Recorded in the metadata; point estimates use no randomness

    Returns:
        sweep:  SweepTable
            One row per grid point. Failures are recorded in the error column
            and never abort the sweep.
    """
    spec = spec or PipelineSpec()
    grid = tuple(grid) if grid is not None else grid_values(*constants.DEFAULT_GRID)
    _check_grid(grid)
    if calibration is not None and not is_admissible(*calibration):
        raise ConfigurationError(
            f"Calibrated demand needs alpha > 0 and 0 < sigma < 1 (got {calibration})"
        )
    mode = MODE_ESTIMATE if calibration is None else MODE_CALIBRATE

    # Shares and purchase shares do not depend on tau
    shares = compute_revenue_shares(panel, spec.market_size_rule)
    purchase_shares = compute_purchase_shares(
        panel.purchases, panel.sector_tags, pooled=spec.instrument.pooled_shares
    )
    log.info("Sweeping %d thresholds in %s mode (%d jobs)", len(grid), mode, n_jobs)
    rows = jbl.Parallel(n_jobs=n_jobs)(
        jbl.delayed(_sweep_point)(panel, tau, spec, calibration, shares, purchase_shares)
        for tau in grid
    )
    frame = pd.DataFrame(rows, columns=list(SWEEP_COLUMNS))
    frame = frame.sort_values("tau", kind="mergesort").reset_index(drop=True)
    n_failed = int((frame["error"] != "").sum())
    if n_failed:
        log.warning("%d of %d grid points recorded errors", n_failed, len(frame))

    metadata = {
        "mode": mode,
        "grid": ",".join(format(tau, "g") for tau in grid),
        "market_size_rule": spec.market_size_rule.label,
        "pipeline_spec_hash": spec.spec_hash(),
        "seed": "" if seed is None else str(seed),
    }
    if calibration is not None:
        metadata["calibration"] = "alpha={:.17g},sigma={:.17g}".format(*calibration)
    metadata.update({f"spec_hash.{key}": val for key, val in spec.spec_hashes().items()})
    return SweepTable(frame=frame, metadata=metadata)


def write_sweep_csv(sweep: SweepTable, path: str):
    """Canonical sweep.csv: %.17g floats, empty fields for missing values"""
    sweep.frame.loc[:, list(SWEEP_COLUMNS)].to_csv(
        path, index=False, float_format="%.17g", na_rep="", lineterminator="\n"
    )


def load_sweep_csv(path: str) -> SweepTable:
    """Read a sweep.csv written by write_sweep_csv"""
    frame = pd.read_csv(path)
    missing = [c for c in SWEEP_COLUMNS if c not in frame.columns]
    if missing:
        raise SchemaError(path, missing)
    frame["error"] = frame["error"].fillna("").astype(str)
    return SweepTable(frame=frame.loc[:, list(SWEEP_COLUMNS)])


## Implementation Details ######################################################


def _check_grid(grid: Sequence[float]):
    if not len(grid):
        raise ConfigurationError("Empty threshold grid")
    bad = [tau for tau in grid if not 0.0 <= tau <= 1.0]
    if bad:
        raise ConfigurationError(f"Threshold(s) outside [0, 1]: {bad}")


def _sweep_point(panel, tau, spec, calibration, shares, purchase_shares) -> Dict[str, object]:
    try:
        result: PipelineResult = run_pipeline(
            panel,
            tau,
            spec,
            calibration=calibration,
            shares=shares,
            purchase_shares=purchase_shares,
        )
    except (ProdloomError, np.linalg.LinAlgError) as err:
        log.debug("Grid point tau=%.2f failed: %s", tau, err)
        row: Dict[str, object] = {name: float("nan") for name in SWEEP_COLUMNS}
        row.update(tau=tau, admissible=False, error=str(err))
        return row
    log.debug3("Grid point tau=%.2f done: n_obs=%d", tau, result.n_obs)
    return result.to_row()
