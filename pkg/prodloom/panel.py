"""
Ingestion, validation and normalization of the plant-product panel: output
records, plant input totals and input-purchase line items.
"""

# Standard
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Tuple, Union
import os

# Third Party
import numpy as np
import pandas as pd

# Local
from . import constants
from .errors import (
    DuplicateKeyError,
    MissingMappingError,
    PanelValidationError,
    SchemaError,
    ValidationError,
)
from .log import log

## Types #######################################################################


@dataclass(frozen=True)
class ProductCode:
    """A 5-character product code with its 3-character market prefix"""

    code5: str

    def __post_init__(self):
        if len(self.code5) != constants.CODE_LENGTH:
            raise ValidationError(
                f"Product code {self.code5!r} must have {constants.CODE_LENGTH} characters"
            )

    @property
    def market3(self) -> str:
        return self.code5[: constants.MARKET_LENGTH]

    @property
    def nest5(self) -> str:
        return self.code5


@dataclass(frozen=True)
class IngestConfig:
    """Options controlling ingestion

    Attributes:
        code_alphabet:  str
            Characters allowed in product codes
        deflators:  Optional[Mapping[int, float]]
            Per-year deflator; revenue and purchase values are divided by it
        strict_concordance:  bool
            Fail on codes missing from a concordance instead of dropping them
    """

    code_alphabet: str = constants.DEFAULT_CODE_ALPHABET
    deflators: Optional[Mapping[int, float]] = None
    strict_concordance: bool = True


@dataclass(frozen=True)
class Finding:
    """One violated invariant"""

    code: str
    table: str
    row: int
    message: str

    def __str__(self) -> str:
        return f"{self.code} {self.table} row={self.row} {self.message}"


@dataclass(frozen=True)
class ValidationReport:
    findings: Tuple[Finding, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.findings

    def __len__(self) -> int:
        return len(self.findings)

    def __iter__(self):
        return iter(self.findings)

    def by_code(self, code: str) -> List[Finding]:
        return [finding for finding in self.findings if finding.code == code]


@dataclass(frozen=True, eq=False)
class Panel:
    """Immutable analysis panel. The frames are owned by the panel and must be
    treated as read-only by callers.
    """

    observations: pd.DataFrame
    inputs: pd.DataFrame
    purchases: pd.DataFrame
    sector_tags: Mapping[str, str]
    product_counts: Mapping[Tuple[str, int], int]
    ingest_log: Tuple[str, ...] = field(default=())

    @classmethod
    def build(
        cls,
        observations: pd.DataFrame,
        inputs: pd.DataFrame,
        purchases: pd.DataFrame,
        ingest_log: Iterable[str] = (),
    ) -> "Panel":
        """Normalize raw frames into a Panel: derived columns, canonical types
        and canonical row order
        """
        obs = observations.loc[:, list(constants.OUTPUT_COLUMNS)].copy()
        obs["plant_id"] = obs["plant_id"].astype(str)
        obs["product_code"] = obs["product_code"].astype(str)
        obs["year"] = obs["year"].astype(int)
        obs["quantity"] = obs["quantity"].astype(float)
        obs["revenue"] = obs["revenue"].astype(float)
        obs["market3"] = obs["product_code"].str[: constants.MARKET_LENGTH]
        obs["nest5"] = obs["product_code"]
        obs["unit_price"] = obs["revenue"] / obs["quantity"]
        obs = obs.sort_values(["plant_id", "year", "product_code"]).reset_index(drop=True)

        inp = inputs.loc[:, list(constants.INPUT_COLUMNS)].copy()
        inp["plant_id"] = inp["plant_id"].astype(str)
        inp["year"] = inp["year"].astype(int)
        for column in ("labor", "capital", "materials"):
            inp[column] = inp[column].astype(float)
        inp["sector"] = inp["sector"].astype(str)
        inp = inp.sort_values(["plant_id", "year"]).reset_index(drop=True)

        pur = purchases.loc[:, list(constants.PURCHASE_COLUMNS)].copy()
        pur["plant_id"] = pur["plant_id"].astype(str)
        pur["input_code"] = pur["input_code"].astype(str)
        pur["year"] = pur["year"].astype(int)
        pur["quantity"] = pur["quantity"].astype(float)
        pur["value"] = pur["value"].astype(float)
        pur["unit_value"] = pur["value"] / pur["quantity"]
        pur = pur.sort_values(["plant_id", "year", "input_code"]).reset_index(drop=True)

        sector_tags = _sector_tags(inp)
        counts = obs.groupby(["plant_id", "year"])["nest5"].nunique()
        product_counts = {key: int(val) for key, val in counts.items()}
        return cls(
            observations=obs,
            inputs=inp,
            purchases=pur,
            sector_tags=sector_tags,
            product_counts=product_counts,
            ingest_log=tuple(ingest_log),
        )

    @property
    def years(self) -> List[int]:
        return sorted(self.observations["year"].unique().tolist())

    @property
    def plants(self) -> List[str]:
        return sorted(self.observations["plant_id"].unique().tolist())

    def product_count_frame(self) -> pd.DataFrame:
        """(plant_id, year, n_products) as a frame"""
        return pd.DataFrame(
            [(plant, year, n) for (plant, year), n in sorted(self.product_counts.items())],
            columns=["plant_id", "year", "n_products"],
        )

    def equals(self, other: "Panel") -> bool:
        """Content equality of the three tables"""
        return (
            self.observations.equals(other.observations)
            and self.inputs.equals(other.inputs)
            and self.purchases.equals(other.purchases)
        )


## Public ######################################################################


def load_panel(
    output_path: str,
    inputs_path: str,
    purchases_path: str,
    config: Optional[IngestConfig] = None,
) -> Panel:
    """Read the three CSV files into a validated Panel

    Args:
        output_path:  str
            outputs.csv: plant_id,year,product_code,quantity,revenue
        inputs_path:  str
            inputs.csv: plant_id,year,labor,capital,materials,sector
        purchases_path:  str
            purchases.csv: plant_id,year,input_code,quantity,value
        config:  Optional[IngestConfig]
            Ingestion options

    Returns:
        panel:  Panel
            The panel; rows with non-positive quantity or revenue are dropped
            and reported in panel.ingest_log with the DROP prefix
    """
    config = config or IngestConfig()
    ingest_log: List[str] = []

    outputs = _read_csv(output_path, constants.OUTPUT_COLUMNS, ("plant_id", "product_code"))
    inputs = _read_csv(inputs_path, constants.INPUT_COLUMNS, ("plant_id", "sector"))
    purchases = _read_csv(purchases_path, constants.PURCHASE_COLUMNS, ("plant_id", "input_code"))

    _check_duplicates(outputs, ["plant_id", "year", "product_code"], output_path)
    _check_duplicates(inputs, ["plant_id", "year"], inputs_path)
    _check_duplicates(purchases, ["plant_id", "year", "input_code"], purchases_path)

    bad_out = (outputs["quantity"] <= 0) | (outputs["revenue"] <= 0)
    for idx, row in outputs[bad_out].iterrows():
        reason = "quantity<=0" if row["quantity"] <= 0 else "revenue<=0"
        ingest_log.append(
            f"{constants.LOG_DROP} outputs line={idx + 2} plant={row['plant_id']} "
            f"year={row['year']} product={row['product_code']} reason={reason}"
        )
    outputs = outputs[~bad_out]

    bad_pur = (purchases["quantity"] <= 0) | (purchases["value"] < 0)
    for idx, row in purchases[bad_pur].iterrows():
        reason = "quantity<=0" if row["quantity"] <= 0 else "value<0"
        ingest_log.append(
            f"{constants.LOG_DROP} purchases line={idx + 2} plant={row['plant_id']} "
            f"year={row['year']} input={row['input_code']} reason={reason}"
        )
    purchases = purchases[~bad_pur]

    if config.deflators:
        outputs, purchases = _deflate(outputs, purchases, config.deflators)

    panel = Panel.build(outputs, inputs, purchases, ingest_log)
    report = validate_panel(panel, config)
    if not report.ok:
        for finding in report.by_code(constants.FINDING_ORPHAN):
            ingest_log.append(
                f"{constants.LOG_ORPHAN} {finding.table} row={finding.row} {finding.message}"
            )
        raise PanelValidationError(report.findings, ingest_log)
    log.info(
        "Loaded panel: %d observations, %d input rows, %d purchases (%d dropped)",
        len(panel.observations),
        len(panel.inputs),
        len(panel.purchases),
        len(ingest_log),
    )
    return panel


def apply_concordance(
    panel: Panel,
    mapping: Union[str, Mapping[str, str]],
    config: Optional[IngestConfig] = None,
) -> Panel:
    """Rewrite product codes through a code map, merging many-to-one
    collisions within a plant-year

    Args:
        panel:  Panel
            Source panel
        mapping:  Union[str, Mapping[str, str]]
            concordance.csv path (source_code,target_code) or an in-memory map
        config:  Optional[IngestConfig]
            Ingestion options; with strict_concordance unmapped codes raise
            MissingMappingError instead of dropping the affected rows

    Returns:
        panel:  Panel
            Panel in the target code scheme. Merged rows sum quantity and
            revenue and recompute the unit price.
    """
    if isinstance(mapping, str):
        frame = _read_csv(mapping, constants.CONCORDANCE_COLUMNS, constants.CONCORDANCE_COLUMNS)
        _check_duplicates(frame, ["source_code"], mapping)
        mapping = dict(zip(frame["source_code"], frame["target_code"]))
    mapping = {str(src): str(dst) for src, dst in mapping.items()}

    obs = panel.observations
    codes = obs["product_code"]
    unmapped = sorted(set(codes) - set(mapping))
    ingest_log = list(panel.ingest_log)
    if unmapped:
        if (config or IngestConfig()).strict_concordance:
            raise MissingMappingError(unmapped)
        dropped = obs[codes.isin(unmapped)]
        for idx, row in dropped.iterrows():
            ingest_log.append(
                f"{constants.LOG_DROP} outputs row={idx} plant={row['plant_id']} "
                f"year={row['year']} product={row['product_code']} reason=unmapped"
            )
        obs = obs[~codes.isin(unmapped)]

    remapped = obs.assign(product_code=obs["product_code"].map(mapping))
    merged = remapped.groupby(["plant_id", "year", "product_code"], as_index=False)[
        ["quantity", "revenue"]
    ].sum()
    n_merged = len(remapped) - len(merged)
    if n_merged:
        log.info("Concordance merged %d colliding product rows", n_merged)
    return Panel.build(merged, panel.inputs, panel.purchases, ingest_log)


def validate_panel(panel: Panel, config: Optional[IngestConfig] = None) -> ValidationReport:
    """Check every panel invariant and report violations with row references.
    Never raises.
    """
    config = config or IngestConfig()
    findings: List[Finding] = []
    obs = panel.observations
    inp = panel.inputs
    pur = panel.purchases

    # Product codes
    alphabet = set(config.code_alphabet)
    for idx, code in obs["product_code"].items():
        if len(code) != constants.CODE_LENGTH or not set(code) <= alphabet:
            findings.append(
                Finding(constants.FINDING_CODE, "observations", idx, f"invalid product code {code!r}")
            )

    # Output positivity and price identity
    for idx, row in obs.iterrows():
        if not (row["quantity"] > 0 and row["revenue"] > 0):
            findings.append(
                Finding(
                    constants.FINDING_POSITIVITY,
                    "observations",
                    idx,
                    f"plant={row['plant_id']} year={row['year']} non-positive quantity or revenue",
                )
            )
            continue
        implied = row["unit_price"] * row["quantity"]
        if abs(implied - row["revenue"]) > constants.PRICE_REL_TOL * abs(row["revenue"]):
            findings.append(
                Finding(constants.FINDING_PRICE, "observations", idx, "unit_price * quantity != revenue")
            )

    # Orphans and input positivity
    input_keys = {(plant, year): idx for idx, plant, year in zip(inp.index, inp["plant_id"], inp["year"])}
    used_inputs = set()
    for idx, plant, year in zip(obs.index, obs["plant_id"], obs["year"]):
        key = (plant, year)
        if key not in input_keys:
            findings.append(
                Finding(
                    constants.FINDING_ORPHAN,
                    "observations",
                    idx,
                    f"plant={plant} year={year} has no input totals",
                )
            )
        else:
            used_inputs.add(input_keys[key])
    for idx in sorted(used_inputs):
        row = inp.loc[idx]
        for column in ("labor", "capital", "materials"):
            if not row[column] > 0:
                findings.append(
                    Finding(
                        constants.FINDING_POSITIVITY,
                        "inputs",
                        idx,
                        f"plant={row['plant_id']} year={row['year']} {column}={row[column]}",
                    )
                )

    # Purchases
    for idx, row in pur.iterrows():
        if not (row["quantity"] > 0 and row["value"] >= 0 and np.isfinite(row["unit_value"])):
            findings.append(
                Finding(constants.FINDING_POSITIVITY, "purchases", idx, "invalid quantity or value")
            )
        if row["plant_id"] not in panel.sector_tags:
            findings.append(
                Finding(
                    constants.FINDING_SECTOR,
                    "purchases",
                    idx,
                    f"plant={row['plant_id']} has no sector tag",
                )
            )
    for plant, sector in sorted(panel.sector_tags.items()):
        if sector not in constants.SECTORS:
            findings.append(
                Finding(constants.FINDING_SECTOR, "inputs", -1, f"plant={plant} sector={sector!r}")
            )

    # Product counts
    counts = obs.groupby(["plant_id", "year"])["nest5"].nunique()
    expected = {key: int(val) for key, val in counts.items()}
    if expected != dict(panel.product_counts):
        findings.append(
            Finding(constants.FINDING_COUNT, "observations", -1, "product_counts inconsistent")
        )

    if findings:
        log.debug("Panel validation found %d issue(s)", len(findings))
    return ValidationReport(tuple(findings))


def write_panel(panel: Panel, outdir: str) -> Dict[str, str]:
    """Serialize the panel as canonical CSV files (outputs.csv, inputs.csv,
    purchases.csv) and return their paths
    """
    os.makedirs(outdir, exist_ok=True)
    paths = {
        "outputs": os.path.join(outdir, "outputs.csv"),
        "inputs": os.path.join(outdir, "inputs.csv"),
        "purchases": os.path.join(outdir, "purchases.csv"),
    }
    _write(panel.observations, constants.OUTPUT_COLUMNS, paths["outputs"])
    _write(panel.inputs, constants.INPUT_COLUMNS, paths["inputs"])
    _write(panel.purchases, constants.PURCHASE_COLUMNS, paths["purchases"])
    return paths


def write_ingest_log(ingest_log: Iterable[str], path: str):
    """One entry per line, prefixed with DROP or ORPHAN"""
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for line in ingest_log:
            handle.write(line + "\n")


## Implementation Details ######################################################


def _read_csv(path: str, required: Iterable[str], text_columns: Iterable[str]) -> pd.DataFrame:
    """Read a CSV with a header check; text columns stay strings, everything
    else becomes numeric
    """
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    frame.columns = [column.strip() for column in frame.columns]
    missing = [column for column in required if column not in frame.columns]
    if missing:
        raise SchemaError(path, missing)
    extra = [column for column in frame.columns if column not in required]
    if extra:
        log.debug("Ignoring extra columns in %s: %s", path, extra)
    frame = frame.loc[:, list(required)]
    for column in required:
        if column in text_columns:
            frame[column] = frame[column].str.strip()
            continue
        converted = pd.to_numeric(frame[column], errors="coerce")
        if converted.isna().any():
            line = int(np.flatnonzero(converted.isna().to_numpy())[0]) + 2
            raise ValidationError(f"Non-numeric value in column '{column}' of {path} (line {line})")
        frame[column] = converted
    if "year" in frame.columns:
        frame["year"] = frame["year"].astype(int)
    return frame


def _check_duplicates(frame: pd.DataFrame, key: List[str], path: str):
    dup = frame.duplicated(subset=key, keep=False)
    if dup.any():
        offenders = {tuple(row) for row in frame.loc[dup, key].itertuples(index=False)}
        raise DuplicateKeyError(path, offenders)


def _deflate(
    outputs: pd.DataFrame, purchases: pd.DataFrame, deflators: Mapping[int, float]
) -> Tuple[pd.DataFrame, pd.DataFrame]:
    missing = sorted(
        (set(outputs["year"]) | set(purchases["year"])) - set(int(year) for year in deflators)
    )
    if missing:
        raise ValidationError(f"No deflator for year(s): {missing}")
    factor = {int(year): float(val) for year, val in deflators.items()}
    outputs = outputs.assign(revenue=outputs["revenue"] / outputs["year"].map(factor))
    purchases = purchases.assign(value=purchases["value"] / purchases["year"].map(factor))
    return outputs, purchases


def _sector_tags(inputs: pd.DataFrame) -> Dict[str, str]:
    tags = inputs.groupby("plant_id")["sector"].unique()
    conflicting = sorted(plant for plant, vals in tags.items() if len(vals) > 1)
    if conflicting:
        raise ValidationError(f"Conflicting sector tags for plant(s): {conflicting}")
    return {plant: str(vals[0]) for plant, vals in tags.items()}


def _write(frame: pd.DataFrame, columns: Iterable[str], path: str):
    frame.loc[:, list(columns)].to_csv(
        path, index=False, float_format="%.17g", lineterminator="\n", encoding="utf-8"
    )
