"""
Tests for the main entrypoint
"""

# Standard
from contextlib import contextmanager
import os
import sys

# Third Party
import pandas as pd
import pytest

# Local
from prodloom import constants
from prodloom.__main__ import EXIT_ESTIMATION, EXIT_OK, EXIT_VALIDATION, main
from prodloom.config import read_manifest
from prodloom.report import FIGURES
from prodloom.synth import SynthConfig
from test.helpers import OUTPUT_ROWS, read_bytes, write_csv, write_panel_files

## Helpers #####################################################################


@contextmanager
def cli_args(*args):
    """Wrapper to set the sys.argv for the enclosed context"""
    prev_argv = sys.argv
    sys.argv = ["dummy_script"] + list(args)
    yield
    sys.argv = prev_argv


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    """A synthetic panel written through the CLI"""
    out = str(tmp_path_factory.mktemp("synth"))
    with cli_args("synth", "--n-plants", "160", "--n-years", "6", "--seed", "3", "--out", out):
        assert main() == EXIT_OK
    return out


def calibration():
    config = SynthConfig()
    return f"alpha={config.alpha},sigma={config.sigma}"


@pytest.fixture(scope="module")
def bootstrap_dirs(synth_dir, tmp_path_factory):
    """Two calibrated bootstrap runs with the same configuration"""
    outs = []
    for name in ("first", "second"):
        out = str(tmp_path_factory.mktemp(f"boot_{name}"))
        with cli_args(
            "bootstrap",
            "--data",
            synth_dir,
            "--market-sizes",
            os.path.join(synth_dir, "market_size.csv"),
            "--calibrate",
            calibration(),
            "--tau",
            "1.0",
            "-B",
            "5",
            "--seed",
            "1",
            "--jobs",
            "1",
            "--out",
            out,
        ):
            assert main() == EXIT_OK
        outs.append(out)
    return outs


## Tests #######################################################################


def test_synth_writes_panel_and_manifest(synth_dir):
    """synth writes the panel files, the truth tables and a manifest"""
    for name in ("outputs.csv", "inputs.csv", "purchases.csv", "market_size.csv", "truth.csv"):
        assert os.path.exists(os.path.join(synth_dir, name))
    manifest = read_manifest(os.path.join(synth_dir, "manifest.txt"))
    assert manifest["seed"] == "3"
    assert "synth_spec_hash" in manifest
    assert "sha256.outputs.csv" in manifest


def test_ingest_validates_panel(synth_dir, tmp_path):
    """A generated panel ingests cleanly"""
    out = str(tmp_path / "clean")
    with cli_args("ingest", "--data", synth_dir, "--out", out):
        assert main() == EXIT_OK
    assert os.path.exists(os.path.join(out, "validation.txt"))
    assert os.path.exists(os.path.join(out, "outputs.csv"))
    assert os.path.exists(os.path.join(out, "manifest.txt"))


def test_ingest_writes_log_for_invalid_panel(tmp_path):
    """An orphan output row fails ingestion but still leaves the ingest log
    and the findings behind
    """
    data = tmp_path / "data"
    data.mkdir()
    write_panel_files(str(data), outputs=OUTPUT_ROWS + [("D", 2000, "10101", 1, 2)])
    out = str(tmp_path / "clean")
    with cli_args("ingest", "--data", str(data), "--out", out):
        assert main() == EXIT_VALIDATION
    log_lines = read_bytes(os.path.join(out, "ingest_log.txt")).decode("utf-8").splitlines()
    assert [line.split()[0] for line in log_lines] == [constants.LOG_ORPHAN]
    findings = read_bytes(os.path.join(out, "validation.txt")).decode("utf-8")
    assert findings.startswith(constants.FINDING_ORPHAN)
    assert "sha256.ingest_log.txt" in read_manifest(os.path.join(out, "manifest.txt"))


def test_ingest_concordance_strictness(tmp_path):
    """Unmapped codes fail by default and are dropped with --lenient-concordance"""
    data = tmp_path / "data"
    data.mkdir()
    write_panel_files(str(data))
    concordance = write_csv(
        str(data / "concordance.csv"),
        constants.CONCORDANCE_COLUMNS,
        [("10101", "10101"), ("10102", "10102")],
    )
    strict_out = str(tmp_path / "strict")
    with cli_args("ingest", "--data", str(data), "--concordance", concordance, "--out", strict_out):
        assert main() == EXIT_VALIDATION
    lenient_out = str(tmp_path / "lenient")
    with cli_args(
        "ingest",
        "--data",
        str(data),
        "--concordance",
        concordance,
        "--lenient-concordance",
        "--out",
        lenient_out,
    ):
        assert main() == EXIT_OK
    outputs = pd.read_csv(os.path.join(lenient_out, "outputs.csv"), dtype={"product_code": str})
    assert "20201" not in set(outputs["product_code"])
    log_text = read_bytes(os.path.join(lenient_out, "ingest_log.txt")).decode("utf-8")
    assert "reason=unmapped" in log_text


def test_estimate_single_threshold(synth_dir, tmp_path):
    """estimate writes its outputs and a manifest, and the exit status
    reflects the errors recorded in the summary
    """
    out = str(tmp_path / "run")
    market_sizes = os.path.join(synth_dir, "market_size.csv")
    with cli_args(
        "estimate", "--data", synth_dir, "--market-sizes", market_sizes, "--tau", "0.3", "--out", out
    ):
        code = main()
    assert code in (EXIT_OK, EXIT_ESTIMATION)
    manifest = read_manifest(os.path.join(out, "manifest.txt"))
    assert manifest["tau"] == "0.3"
    assert "sha256.summary.csv" in manifest
    summary = pd.read_csv(os.path.join(out, "summary.csv"), keep_default_na=False)
    assert (code == EXIT_OK) == (summary["error"].iloc[0] == "")


def test_tau_out_of_range(capsys, tmp_path):
    """An out-of-range threshold is a validation error with a range message"""
    with cli_args("estimate", "--tau", "1.5", "--out", str(tmp_path)):
        assert main() == EXIT_VALIDATION
    captured = capsys.readouterr()
    assert "tau" in captured.err
    assert "[0, 1]" in captured.err


def test_unknown_flag(capsys):
    """Unknown flags print usage and exit with the validation status"""
    with cli_args("estimate", "--not-a-flag"):
        with pytest.raises(SystemExit) as info:
            main()
    assert info.value.code == EXIT_VALIDATION
    assert "usage" in capsys.readouterr().err


def test_bootstrap_needs_replications(synth_dir, tmp_path):
    """bootstrap without -B is a configuration error"""
    with cli_args("bootstrap", "--data", synth_dir, "--out", str(tmp_path)):
        assert main() == EXIT_VALIDATION


def test_bootstrap_fills_every_preset(bootstrap_dirs):
    """The production table carries bootstrapped estimates for all three
    instrument menus next to the reference rows
    """
    out = bootstrap_dirs[0]
    table = pd.read_csv(os.path.join(out, "production_table.csv"), keep_default_na=False)
    estimated = table[table["source"] == "estimate"]
    assert sorted(set(estimated["preset"])) == ["col1", "col2", "col3"]
    assert (estimated["se_kind"] == "bootstrap").all()
    assert (table["source"] == "reference").any()
    for preset in ("col1", "col2", "col3"):
        assert os.path.exists(os.path.join(out, f"bootstrap_se_{preset}.csv"))
    outcomes = pd.read_csv(os.path.join(out, "outcome_table.csv"), keep_default_na=False)
    assert "run" in set(outcomes["sample"])
    manifest = read_manifest(os.path.join(out, "manifest.txt"))
    assert manifest["gmm_preset"] == "col3"
    assert "bootstrap.n_failed.col1" in manifest


def test_bootstrap_reruns_are_byte_identical(bootstrap_dirs):
    """The same manifest reproduces every output file byte for byte"""
    first, second = bootstrap_dirs
    names = sorted(name for name in os.listdir(first) if name.endswith(".csv"))
    assert names == sorted(name for name in os.listdir(second) if name.endswith(".csv"))
    for name in names:
        assert read_bytes(os.path.join(first, name)) == read_bytes(os.path.join(second, name)), name
    manifests = [read_manifest(os.path.join(out, "manifest.txt")) for out in bootstrap_dirs]
    for manifest in manifests:
        manifest.pop("out")
    assert manifests[0] == manifests[1]


def test_sweep_and_report_regeneration(synth_dir, tmp_path):
    """A calibrated sweep emits the figure specs, and report re-renders them
    byte for byte from sweep.csv
    """
    sweep_out = str(tmp_path / "sweep")
    market_sizes = os.path.join(synth_dir, "market_size.csv")
    with cli_args(
        "sweep",
        "--data",
        synth_dir,
        "--market-sizes",
        market_sizes,
        "--calibrate",
        calibration(),
        "--grid",
        "0.2:0.4:0.1",
        "--jobs",
        "1",
        "--out",
        sweep_out,
    ):
        assert main() == EXIT_OK
    sweep = pd.read_csv(os.path.join(sweep_out, "sweep.csv"))
    assert sweep["tau"].tolist() == pytest.approx([0.2, 0.3, 0.4])
    figspecs = sorted(name for name in os.listdir(sweep_out) if name.endswith(".figspec"))
    assert len(figspecs) == len(FIGURES)

    report_out = str(tmp_path / "report")
    with cli_args("report", "--sweep", os.path.join(sweep_out, "sweep.csv"), "--out", report_out):
        assert main() == EXIT_OK
    for name in figspecs:
        assert read_bytes(os.path.join(sweep_out, name)) == read_bytes(
            os.path.join(report_out, name)
        ), name


def test_report_needs_sweep(tmp_path):
    """report without --sweep is a configuration error"""
    with cli_args("report", "--out", str(tmp_path)):
        assert main() == EXIT_VALIDATION
