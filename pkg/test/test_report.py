"""
Tests for sweep reports, figure specs and tables
"""

# Standard
import os

# Third Party
import numpy as np
import pandas as pd
import pytest

# Local
from prodloom import constants
from prodloom.config import read_manifest
from prodloom.errors import ConfigurationError
from prodloom.pipeline import PipelineSpec, run_pipeline
from prodloom.report import (
    FIGURES,
    emit_report,
    emit_tables,
    outcome_table_frame,
    production_table_frame,
    read_figspec,
    write_run_outputs,
)
from prodloom.shares import MarketSizeRule
from prodloom.sweep import SWEEP_COLUMNS, SweepTable, load_sweep_csv
from test.helpers import read_bytes

## Helpers #####################################################################


def sweep_table():
    rows = []
    for tau in (0.0, 0.5, 1.0):
        row = {name: float("nan") for name in SWEEP_COLUMNS}
        row.update(tau=tau, admissible=False, error="demand: no sample", n_obs=0, n_codes=0)
        if tau > 0:
            row.update(
                alpha=0.5 * tau,
                se_alpha=0.1,
                sigma=0.4,
                se_sigma=0.05,
                one_minus_sigma=0.6,
                F_p=12.0,
                F_rs=8.0,
                n_obs=int(100 * tau),
                n_codes=int(10 * tau),
                admissible=True,
                error="",
            )
        rows.append(row)
    return SweepTable(frame=pd.DataFrame(rows, columns=list(SWEEP_COLUMNS)))


METADATA = {"mode": "estimate", "tau": "0.3"}


@pytest.fixture(scope="module")
def calibrated_run(small_synth):
    panel, truth = small_synth
    spec = PipelineSpec(market_size_rule=MarketSizeRule(market_sizes=truth.market_sizes))
    return run_pipeline(panel, 1.0, spec, calibration=(truth.params["alpha"], truth.params["sigma"]))


## Tests #######################################################################


def test_emit_report_files(tmp_path):
    """A report is sweep.csv, six figure specs and a manifest"""
    paths = emit_report(sweep_table(), METADATA, str(tmp_path))
    names = [os.path.basename(path) for path in paths]
    assert names[0] == "sweep.csv"
    assert names[-1] == "manifest.txt"
    assert names[1:-1] == [f"fig_{figure.name}.figspec" for figure in FIGURES]
    assert len(FIGURES) == 6
    manifest = read_manifest(paths[-1])
    assert manifest["mode"] == "estimate"
    assert {f"sha256.{name}" for name in names[:-1]} <= set(manifest)


def test_figspec_bands_and_gaps(tmp_path):
    """Bands are center +/- z * se and missing values are empty fields"""
    emit_report(sweep_table(), METADATA, str(tmp_path))
    header, data = read_figspec(str(tmp_path / "fig_price_coefficient.figspec"))
    assert header["figure"] == "price_coefficient"
    assert header["bands"] == "coef_p:coef_p_lower:coef_p_upper"
    assert header["reference_x"] == "0.3"
    assert header["meta.mode"] == "estimate"
    assert list(data.columns) == ["tau", "coef_p", "coef_p_lower", "coef_p_upper"]
    assert np.isnan(data["coef_p"].iloc[0])
    assert data["coef_p"].iloc[2] == pytest.approx(-0.5)
    assert data["coef_p_upper"].iloc[2] == pytest.approx(-0.5 + constants.CONFIDENCE_Z90 * 0.1)

    with open(tmp_path / "fig_price_coefficient.figspec", encoding="utf-8") as handle:
        lines = handle.read().splitlines()
    assert lines[lines.index("---") + 2] == "0,,,"


def test_within_share_figure_plots_one_minus_sigma(tmp_path):
    """The within-share coefficient is 1 - sigma"""
    emit_report(sweep_table(), METADATA, str(tmp_path))
    _, data = read_figspec(str(tmp_path / "fig_within_share_coefficient.figspec"))
    assert data["coef_rs_within"].iloc[1] == pytest.approx(0.6)


def test_regenerated_report_is_byte_identical(tmp_path):
    """Re-emitting from the written sweep.csv reproduces every file"""
    first = emit_report(sweep_table(), METADATA, str(tmp_path / "first"))
    reloaded = load_sweep_csv(first[0])
    second = emit_report(reloaded, METADATA, str(tmp_path / "second"))
    for one, two in zip(first, second):
        assert read_bytes(one) == read_bytes(two), os.path.basename(one)


def test_empty_sweep_rejected(tmp_path):
    """There is nothing to plot without rows"""
    empty = SweepTable(frame=pd.DataFrame(columns=list(SWEEP_COLUMNS)))
    with pytest.raises(ConfigurationError):
        emit_report(empty, METADATA, str(tmp_path))


def test_tables_carry_reference_rows(calibrated_run):
    """Estimated rows come first, reference rows are marked as such"""
    production = production_table_frame({"col3": calibrated_run.production})
    estimated = production[production["source"] == "estimate"]
    assert estimated["parameter"].tolist() == ["beta_L", "beta_K", "beta_M"]
    assert (estimated["se_kind"] == "analytic").all()
    reference = production[production["source"] == "reference"]
    assert len(reference) == 9
    assert (reference["note"] == constants.REFERENCE_NOTE).all()

    outcomes = outcome_table_frame({"run": calibrated_run})
    assert outcomes["statistic"].tolist()[:3] == ["gain_lower", "gain_upper", "me_1sd"]
    assert (outcomes.loc[outcomes["source"] == "reference", "note"] == constants.REFERENCE_NOTE).all()


def test_emit_tables_and_run_outputs(tmp_path, calibrated_run):
    """Table and per-stage CSVs are written for the stages that ran"""
    tables = emit_tables(str(tmp_path), {"col3": calibrated_run.production}, {"run": calibrated_run})
    assert [os.path.basename(path) for path in tables] == [
        "production_table.csv",
        "outcome_table.csv",
    ]
    outputs = [os.path.basename(path) for path in write_run_outputs(calibrated_run, str(tmp_path))]
    for name in (
        "instruments.csv",
        "summary.csv",
        "demand_estimate.csv",
        "cost_allocation.csv",
        "production_estimate.csv",
        "tfpr.csv",
        "gains.csv",
    ):
        assert name in outputs
    summary = pd.read_csv(tmp_path / "summary.csv")
    assert list(summary.columns) == list(SWEEP_COLUMNS)
