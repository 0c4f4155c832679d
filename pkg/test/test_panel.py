"""
Tests for panel ingestion, validation, concordance and serialization
"""

# Standard
import os

# Third Party
import pandas as pd
import pytest

# Local
from prodloom import constants
from prodloom.errors import (
    DuplicateKeyError,
    MissingMappingError,
    PanelValidationError,
    SchemaError,
    ValidationError,
)
from prodloom.panel import (
    IngestConfig,
    Panel,
    ProductCode,
    apply_concordance,
    load_panel,
    validate_panel,
    write_ingest_log,
    write_panel,
)
from test.helpers import (
    INPUT_ROWS,
    OUTPUT_ROWS,
    PURCHASE_ROWS,
    read_bytes,
    write_csv,
    write_panel_files,
)

## Helpers #####################################################################


def load(paths, config=None):
    return load_panel(paths["outputs"], paths["inputs"], paths["purchases"], config)


## Tests #######################################################################


def test_product_code_prefix():
    """The market is the 3-character prefix of the 5-character code"""
    code = ProductCode("10203")
    assert code.market3 == "102"
    assert code.nest5 == "10203"
    with pytest.raises(ValidationError):
        ProductCode("1020")


def test_load_panel_derives_columns(tmp_path):
    """A valid panel loads with market, nest, unit price and product counts"""
    panel = load(write_panel_files(str(tmp_path)))
    obs = panel.observations
    assert len(obs) == len(OUTPUT_ROWS)
    assert set(obs["market3"]) == {"101", "202"}
    assert (obs["nest5"] == obs["product_code"]).all()
    assert obs["unit_price"].tolist()[0] == pytest.approx(2.0)
    assert panel.product_counts[("A", 2000)] == 2
    assert panel.product_counts[("C", 2001)] == 1
    assert panel.sector_tags == {
        "A": constants.SECTOR_MACHINERY,
        "B": constants.SECTOR_OTHER,
        "C": constants.SECTOR_OTHER,
    }
    assert panel.ingest_log == ()
    assert panel.years == [2000, 2001]
    assert panel.plants == ["A", "B", "C"]


def test_duplicate_key_rejected(tmp_path):
    """A repeated (plant, year, product) key fails with the offending key"""
    rows = OUTPUT_ROWS + [("A", 2000, "10101", 1, 2)]
    paths = write_panel_files(str(tmp_path), outputs=rows)
    with pytest.raises(DuplicateKeyError) as info:
        load(paths)
    assert ("A", "2000", "10101") in [tuple(str(p) for p in key) for key in info.value.keys]
    assert "DUP A 2000 10101" in str(info.value)


def test_malformed_header_rejected(tmp_path):
    """A missing column is a schema error naming the column"""
    paths = write_panel_files(str(tmp_path))
    write_csv(
        paths["outputs"],
        ("plant_id", "year", "product_code", "quantity"),
        [row[:4] for row in OUTPUT_ROWS],
    )
    with pytest.raises(SchemaError) as info:
        load(paths)
    assert info.value.columns == ["revenue"]


def test_non_positive_output_dropped_and_logged(tmp_path):
    """Zero quantities are dropped with a DROP line in the ingest log"""
    rows = OUTPUT_ROWS + [("B", 2000, "10102", 0, 5)]
    panel = load(write_panel_files(str(tmp_path), outputs=rows))
    assert len(panel.observations) == len(OUTPUT_ROWS)
    assert len(panel.ingest_log) == 1
    assert panel.ingest_log[0].startswith(constants.LOG_DROP)
    assert "reason=quantity<=0" in panel.ingest_log[0]


def test_orphan_observation_fails_validation(tmp_path):
    """An output row without input totals fails with an ORPHAN finding"""
    rows = OUTPUT_ROWS + [("D", 2000, "10101", 1, 2)]
    with pytest.raises(PanelValidationError) as info:
        load(write_panel_files(str(tmp_path), outputs=rows))
    codes = {finding.code for finding in info.value.findings}
    assert constants.FINDING_ORPHAN in codes
    orphan_lines = [line for line in info.value.ingest_log if line.startswith(constants.LOG_ORPHAN)]
    assert len(orphan_lines) == 1
    assert "plant=D year=2000" in orphan_lines[0]


def test_invalid_code_alphabet(tmp_path):
    """Codes with characters outside the alphabet are reported"""
    rows = [row if row[2] != "20201" else row[:2] + ("2020X",) + row[3:] for row in OUTPUT_ROWS]
    with pytest.raises(PanelValidationError) as info:
        load(write_panel_files(str(tmp_path), outputs=rows))
    assert {finding.code for finding in info.value.findings} == {constants.FINDING_CODE}
    panel = load(
        write_panel_files(str(tmp_path), outputs=rows),
        IngestConfig(code_alphabet="0123456789X"),
    )
    assert "2020X" in set(panel.observations["product_code"])


def test_conflicting_sector_tags(tmp_path):
    """A plant tagged with two sectors is rejected"""
    rows = [
        row if row[:2] != ("A", 2001) else row[:5] + (constants.SECTOR_OTHER,) for row in INPUT_ROWS
    ]
    with pytest.raises(ValidationError):
        load(write_panel_files(str(tmp_path), inputs=rows))


def test_deflators_scale_values(tmp_path):
    """Revenue and purchase values are divided by the year deflator"""
    paths = write_panel_files(str(tmp_path))
    panel = load(paths, IngestConfig(deflators={2000: 1.0, 2001: 2.0}))
    obs = panel.observations.set_index(["plant_id", "year", "product_code"])
    assert obs.loc[("A", 2001, "10101"), "revenue"] == pytest.approx(12.0)
    assert obs.loc[("A", 2000, "10101"), "revenue"] == pytest.approx(20.0)
    pur = panel.purchases.set_index(["plant_id", "year", "input_code"])
    assert pur.loc[("A", 2001, "X1"), "value"] == pytest.approx(16.5)
    with pytest.raises(ValidationError):
        load(paths, IngestConfig(deflators={2000: 1.0}))


def test_validate_is_pure_and_clean(tmp_path):
    """A loaded panel validates without findings, repeatedly"""
    panel = load(write_panel_files(str(tmp_path)))
    first = validate_panel(panel)
    second = validate_panel(panel)
    assert first.ok and second.ok
    assert len(first) == 0


def test_validate_reports_price_identity():
    """A unit price that does not reproduce revenue is a PRICE finding"""
    obs = [dict(zip(constants.OUTPUT_COLUMNS, row)) for row in OUTPUT_ROWS]
    inputs = [dict(zip(constants.INPUT_COLUMNS, row)) for row in INPUT_ROWS]
    purchases = [dict(zip(constants.PURCHASE_COLUMNS, row)) for row in PURCHASE_ROWS]
    panel = Panel.build(pd.DataFrame(obs), pd.DataFrame(inputs), pd.DataFrame(purchases))
    panel.observations.loc[0, "unit_price"] = 3.0
    report = validate_panel(panel)
    assert [finding.code for finding in report] == [constants.FINDING_PRICE]


def test_concordance_merges_collisions(tmp_path):
    """Many-to-one mappings sum quantity and revenue within a plant-year"""
    panel = load(write_panel_files(str(tmp_path)))
    mapping = {"10101": "10100", "10102": "10100", "20201": "20200"}
    merged = apply_concordance(panel, mapping)
    obs = merged.observations.set_index(["plant_id", "year", "product_code"])
    assert obs.loc[("A", 2000, "10100"), "quantity"] == pytest.approx(15.0)
    assert obs.loc[("A", 2000, "10100"), "revenue"] == pytest.approx(35.0)
    assert obs.loc[("A", 2000, "10100"), "unit_price"] == pytest.approx(35.0 / 15.0)
    assert merged.product_counts[("A", 2000)] == 1
    assert validate_panel(merged).ok


def test_concordance_identity_is_noop(tmp_path):
    """An identity concordance leaves the panel unchanged"""
    panel = load(write_panel_files(str(tmp_path)))
    codes = set(panel.observations["product_code"])
    same = apply_concordance(panel, {code: code for code in codes})
    assert same.equals(panel)


def test_concordance_missing_code(tmp_path):
    """Unmapped codes fail in strict mode and are dropped otherwise"""
    panel = load(write_panel_files(str(tmp_path)))
    mapping = {"10101": "10101", "10102": "10102"}
    with pytest.raises(MissingMappingError) as info:
        apply_concordance(panel, mapping)
    assert info.value.codes == ["20201"]
    lenient = apply_concordance(panel, mapping, IngestConfig(strict_concordance=False))
    assert "20201" not in set(lenient.observations["product_code"])
    assert any("reason=unmapped" in line for line in lenient.ingest_log)


def test_concordance_from_csv(tmp_path):
    """A concordance file is read like the in-memory map"""
    panel = load(write_panel_files(str(tmp_path)))
    path = write_csv(
        os.path.join(str(tmp_path), "concordance.csv"),
        constants.CONCORDANCE_COLUMNS,
        [("10101", "10101"), ("10102", "10101"), ("20201", "20201")],
    )
    merged = apply_concordance(panel, path)
    assert merged.product_counts[("A", 2000)] == 1


def test_write_panel_round_trip(tmp_path):
    """Writing then loading reproduces the panel and the written bytes"""
    panel = load(write_panel_files(str(tmp_path)))
    first = write_panel(panel, str(tmp_path / "first"))
    reloaded = load(first)
    assert reloaded.equals(panel)
    second = write_panel(reloaded, str(tmp_path / "second"))
    for key in first:
        assert read_bytes(first[key]) == read_bytes(second[key])


def test_write_ingest_log(tmp_path):
    """The ingest log is written one line per entry"""
    rows = OUTPUT_ROWS + [("B", 2000, "10102", 1, 0)]
    panel = load(write_panel_files(str(tmp_path), outputs=rows))
    path = str(tmp_path / "ingest_log.txt")
    write_ingest_log(panel.ingest_log, path)
    lines = read_bytes(path).decode("utf-8").splitlines()
    assert len(lines) == 1
    assert lines[0].startswith("DROP outputs")
