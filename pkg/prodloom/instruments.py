"""
Input-price-growth instruments under the downstream purchase-share exclusion
rule. Input codes whose purchase value comes predominantly from machinery
producers (share above the threshold tau) are excluded before averaging price
growth over reference plants in each nest.
"""

# Standard
from dataclasses import asdict, dataclass
from typing import Dict, FrozenSet, List, Mapping, Optional
import hashlib
import json

# Third Party
import numpy as np
import pandas as pd

# Local
from . import constants
from .errors import ConfigurationError, ValidationError
from .log import log
from .panel import Panel

REFERENCE_SINGLE_PRODUCT = "single_product"
REFERENCE_NON_MACHINERY = "non_machinery"
WEIGHTING_UNWEIGHTED = "unweighted"
WEIGHTING_VALUE = "value"

## Types #######################################################################


@dataclass(frozen=True)
class InstrumentConfig:
    """Options for the price-growth instrument

    Attributes:
        reference:  str
            Reference plants: single_product or non_machinery
        weighting:  str
            unweighted or value (purchase value at t) at both aggregation levels
        min_contributors:  int
            Minimum number of (plant, input_code) growth terms per nest-year
        pooled_shares:  bool
            Compute machinery purchase shares over all years pooled
    """

    reference: str = REFERENCE_SINGLE_PRODUCT
    weighting: str = WEIGHTING_UNWEIGHTED
    min_contributors: int = constants.DEFAULT_MIN_CONTRIBUTORS
    pooled_shares: bool = False

    def __post_init__(self):
        if self.reference not in (REFERENCE_SINGLE_PRODUCT, REFERENCE_NON_MACHINERY):
            raise ConfigurationError(f"Unknown reference plant rule: {self.reference}")
        if self.weighting not in (WEIGHTING_UNWEIGHTED, WEIGHTING_VALUE):
            raise ConfigurationError(f"Unknown weighting: {self.weighting}")
        if self.min_contributors < 1:
            raise ConfigurationError("min_contributors must be at least 1")

    def spec_hash(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:12]


@dataclass(frozen=True, eq=False)
class PurchaseShareTable:
    """input_code, year, machinery_share, total_value"""

    frame: pd.DataFrame

    def shares(self, year: int) -> Dict[str, float]:
        rows = self.frame[self.frame["year"] == year]
        return dict(zip(rows["input_code"], rows["machinery_share"]))


@dataclass(frozen=True)
class RetainedCodeSet:
    tau: float
    codes_by_year: Mapping[int, FrozenSet[str]]

    def codes(self, year: int) -> FrozenSet[str]:
        return self.codes_by_year.get(year, frozenset())

    def __len__(self) -> int:
        return sum(len(codes) for codes in self.codes_by_year.values())

    def issubset(self, other: "RetainedCodeSet") -> bool:
        return all(codes <= other.codes(year) for year, codes in self.codes_by_year.items())


@dataclass(frozen=True, eq=False)
class InstrumentTable:
    """nest5, year, Z, n_contributing"""

    frame: pd.DataFrame
    tau: float

    def __len__(self) -> int:
        return len(self.frame)

    def with_lag(self) -> pd.DataFrame:
        """nest5, year, Z, Z_lag for nest-years where both t and t-1 exist"""
        current = self.frame.loc[:, ["nest5", "year", "Z"]]
        lagged = current.assign(year=current["year"] + 1).rename(columns={"Z": "Z_lag"})
        return current.merge(lagged, on=["nest5", "year"], how="inner")

    def to_csv(self, path: str):
        self.frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


## Public ######################################################################


def compute_purchase_shares(
    purchases: pd.DataFrame,
    sector_tags: Mapping[str, str],
    pooled: bool = False,
) -> PurchaseShareTable:
    """Machinery-sector share of each input code's total purchase value

    Args:
        purchases:  pd.DataFrame
            Purchase line items (plant_id, year, input_code, value, ...)
        sector_tags:  Mapping[str, str]
            plant_id -> machinery / non-machinery
        pooled:  bool
            Pool the value sums over all years (the share is then repeated on
            every year the code is purchased)

    Returns:
        table:  PurchaseShareTable
            Codes with zero total value in a year are omitted
    """
    untagged = sorted(set(purchases["plant_id"]) - set(sector_tags))
    if untagged:
        raise ValidationError(f"No sector tag for purchasing plant(s): {untagged}")
    frame = purchases.loc[:, ["plant_id", "year", "input_code", "value"]].copy()
    frame["machinery_value"] = np.where(
        frame["plant_id"].map(sector_tags) == constants.SECTOR_MACHINERY, frame["value"], 0.0
    )
    keys = ["input_code"] if pooled else ["input_code", "year"]
    sums = frame.groupby(keys, as_index=False)[["value", "machinery_value"]].sum()
    sums = sums[sums["value"] > 0]
    sums["machinery_share"] = (sums["machinery_value"] / sums["value"]).clip(0.0, 1.0)
    sums = sums.rename(columns={"value": "total_value"})
    if pooled:
        years = frame.loc[:, ["input_code", "year"]].drop_duplicates()
        sums = years.merge(sums, on="input_code", how="inner")
    table = sums.loc[:, ["input_code", "year", "machinery_share", "total_value"]]
    table = table.sort_values(["year", "input_code"]).reset_index(drop=True)
    log.debug2("Purchase shares for %d code-years (pooled=%s)", len(table), pooled)
    return PurchaseShareTable(table)


def filter_input_codes(table: PurchaseShareTable, tau: float) -> RetainedCodeSet:
    """Codes whose machinery purchase share does not exceed tau, per year"""
    if not 0.0 <= tau <= 1.0:
        raise ConfigurationError(f"Threshold tau must lie in [0, 1] (got {tau})")
    kept = table.frame[table.frame["machinery_share"] <= tau]
    codes_by_year = {
        int(year): frozenset(group["input_code"]) for year, group in kept.groupby("year")
    }
    log.debug2("tau=%.2f retains %d code-years", tau, len(kept))
    return RetainedCodeSet(tau=tau, codes_by_year=codes_by_year)


def build_price_growth_iv(
    panel: Panel,
    retained: RetainedCodeSet,
    config: Optional[InstrumentConfig] = None,
) -> InstrumentTable:
    """Average log input-price growth facing the reference plants of each nest

    Per-plant growth is the mean over retained codes of the year-on-year change
    in log unit value of the same plant-code. The nest instrument is the mean
    of per-plant growth over reference plants producing the nest at t.

    Args:
        panel:  Panel
            Source panel
        retained:  RetainedCodeSet
            Codes allowed to contribute, by year t
        config:  Optional[InstrumentConfig]
            Reference plants, weighting and min_contributors

    Returns:
        instruments:  InstrumentTable
            nest5, year, Z, n_contributing, ordered by (nest5, year)
    """
    config = config or InstrumentConfig()
    growth = _code_growth(panel.purchases, retained)
    empty = pd.DataFrame(
        {
            "nest5": pd.Series(dtype=object),
            "year": pd.Series(dtype="int64"),
            "Z": pd.Series(dtype=float),
            "n_contributing": pd.Series(dtype="int64"),
        }
    )
    if growth.empty:
        log.warning("No retained input-price growth terms at tau=%.2f", retained.tau)
        return InstrumentTable(empty, retained.tau)

    value_weighted = config.weighting == WEIGHTING_VALUE
    growth["weight"] = growth["value"] if value_weighted else 1.0
    plant_growth = _weighted_mean(growth, ["plant_id", "year"], "growth")
    plant_growth = plant_growth.rename(columns={"n": "n_terms"})

    reference = _reference_plants(panel, config.reference)
    merged = reference.merge(plant_growth, on=["plant_id", "year"], how="inner")
    if merged.empty:
        return InstrumentTable(empty, retained.tau)
    merged["weight"] = merged["value"] if value_weighted else 1.0
    nest = _weighted_mean(merged, ["nest5", "year"], "growth", count="n_terms")
    nest = nest.rename(columns={"growth": "Z", "n_terms": "n_contributing"})
    nest["n_contributing"] = nest["n_contributing"].astype(int)
    kept = nest[nest["n_contributing"] >= config.min_contributors]
    if len(kept) < len(nest):
        log.debug("Dropped %d nest-years below min_contributors", len(nest) - len(kept))
    frame = (
        kept.loc[:, ["nest5", "year", "Z", "n_contributing"]]
        .sort_values(["nest5", "year"])
        .reset_index(drop=True)
    )
    log.debug("Instrument table at tau=%.2f: %d nest-years", retained.tau, len(frame))
    return InstrumentTable(frame, retained.tau)


## Implementation Details ######################################################


def _code_growth(purchases: pd.DataFrame, retained: RetainedCodeSet) -> pd.DataFrame:
    """Per (plant, code, t) log unit-value growth for codes retained at t"""
    current = purchases.loc[:, ["plant_id", "year", "input_code", "unit_value", "value"]]
    previous = current.loc[:, ["plant_id", "year", "input_code", "unit_value"]].assign(
        year=current["year"] + 1
    )
    paired = current.merge(
        previous, on=["plant_id", "year", "input_code"], suffixes=("", "_prev")
    )
    paired = paired[(paired["unit_value"] > 0) & (paired["unit_value_prev"] > 0)]
    keep = np.array(
        [code in retained.codes(year) for code, year in zip(paired["input_code"], paired["year"])],
        dtype=bool,
    )
    paired = paired[keep].copy()
    paired["growth"] = np.log(paired["unit_value"]) - np.log(paired["unit_value_prev"])
    return paired.reset_index(drop=True)


def _weighted_mean(
    frame: pd.DataFrame, keys: List[str], column: str, count: Optional[str] = None
) -> pd.DataFrame:
    """Weighted mean of `column` by `keys`, with the summed purchase value and
    a term count (row count, or the sum of `count` when given)
    """
    work = frame.assign(_wx=frame["weight"] * frame[column], _n=frame[count] if count else 1)
    sums = work.groupby(keys, as_index=False)[["_wx", "weight", "value", "_n"]].sum()
    sums[column] = sums["_wx"] / sums["weight"]
    return sums.rename(columns={"_n": count or "n"}).drop(columns=["_wx", "weight"])


def _reference_plants(panel: Panel, rule: str) -> pd.DataFrame:
    """(plant_id, year, nest5) triples of reference plants"""
    obs = panel.observations.loc[:, ["plant_id", "year", "nest5"]].drop_duplicates()
    if rule == REFERENCE_SINGLE_PRODUCT:
        counts = np.array(
            [panel.product_counts[key] for key in zip(obs["plant_id"], obs["year"])]
        )
        return obs[counts == 1].reset_index(drop=True)
    sectors = obs["plant_id"].map(panel.sector_tags)
    return obs[sectors.to_numpy() == constants.SECTOR_OTHER].reset_index(drop=True)
