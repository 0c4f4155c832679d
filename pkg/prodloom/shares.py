"""
Log revenue shares of the nested logit: market share rs_j, within-nest share
rs_within and the outside-good share rs_0 for every observation.
"""

# Standard
from dataclasses import dataclass
from typing import Optional
import hashlib

# Third Party
import numpy as np
import pandas as pd

# Local
from . import constants
from .errors import ConfigurationError, SchemaError, ValidationError
from .log import log
from .panel import Panel

SHARE_COLUMNS = (
    "plant_id",
    "year",
    "product_code",
    "market3",
    "nest5",
    "revenue",
    "quantity",
    "unit_price",
    "market_size",
    "rs_j",
    "rs_within",
    "rs_0",
    "log_price",
    "nest_count",
)


@dataclass(frozen=True, eq=False)
class MarketSizeRule:
    """How the market size I_h,t is set

    Attributes:
        kappa:  float
            Multiplier on inside revenue of the market-year (must exceed 1)
        market_sizes:  Optional[pd.DataFrame]
            Explicit market3, year, market_size table; overrides kappa
    """

    kappa: float = constants.DEFAULT_KAPPA
    market_sizes: Optional[pd.DataFrame] = None

    def __post_init__(self):
        if self.market_sizes is None and not self.kappa > 1:
            raise ConfigurationError(
                f"Market size multiplier kappa must exceed 1 (got {self.kappa})"
            )

    @classmethod
    def from_csv(cls, path: str) -> "MarketSizeRule":
        """Load an explicit market_size.csv (market3,year,market_size)"""
        frame = pd.read_csv(path, dtype={"market3": str}, keep_default_na=False)
        missing = [c for c in constants.MARKET_SIZE_COLUMNS if c not in frame.columns]
        if missing:
            raise SchemaError(path, missing)
        frame = frame.loc[:, list(constants.MARKET_SIZE_COLUMNS)]
        frame["year"] = frame["year"].astype(int)
        frame["market_size"] = frame["market_size"].astype(float)
        return cls(market_sizes=frame)

    @property
    def label(self) -> str:
        if self.market_sizes is not None:
            return "explicit"
        return f"kappa={self.kappa:g}"

    def spec_hash(self) -> str:
        if self.market_sizes is None:
            payload = self.label
        else:
            payload = self.market_sizes.sort_values(["market3", "year"]).to_csv(
                index=False, float_format="%.17g", lineterminator="\n"
            )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:12]

    def rescaled(self, reference: pd.DataFrame, current: pd.DataFrame) -> "MarketSizeRule":
        """Explicit sizes scaled by current / reference inside revenue of each
        market-year, which keeps every outside share where it was. A kappa rule
        comes back unchanged.

        Args:
            reference:  pd.DataFrame
                market3, year, revenue of the panel the sizes belong to
            current:  pd.DataFrame
                market3, year, revenue of the panel to share out
        """
        if self.market_sizes is None:
            return self
        keys = ["market3", "year"]
        both = current.merge(reference, on=keys, suffixes=("", "_reference")).set_index(keys)
        factor = both["revenue"] / both["revenue_reference"]
        sizes = self.market_sizes.set_index(keys)["market_size"]
        scaled = sizes * factor.reindex(sizes.index).fillna(1.0).to_numpy()
        return MarketSizeRule(kappa=self.kappa, market_sizes=scaled.reset_index())


@dataclass(frozen=True, eq=False)
class ShareTable:
    """One row per observation, ordered by (market, year, plant, product)"""

    frame: pd.DataFrame
    rule_label: str

    def __len__(self) -> int:
        return len(self.frame)


def market_revenue(panel: Panel) -> pd.DataFrame:
    """Inside revenue per market-year"""
    return panel.observations.groupby(["market3", "year"], as_index=False)["revenue"].sum()


def compute_revenue_shares(
    panel: Panel,
    market_size_rule: Optional[MarketSizeRule] = None,
) -> ShareTable:
    """Build the share variables for every observation of the panel

    Args:
        panel:  Panel
            Source panel
        market_size_rule:  Optional[MarketSizeRule]
            Market size construction; defaults to kappa = 2

    Returns:
        shares:  ShareTable
            rs_j = ln(R_j / I_h), rs_within = ln(R_j / Lambda_g),
            rs_0 = ln(R_0 / I_h) with R_0 = I_h - inside revenue
    """
    rule = market_size_rule or MarketSizeRule()
    obs = panel.observations
    frame = obs.loc[
        :,
        ["plant_id", "year", "product_code", "market3", "nest5", "revenue", "quantity", "unit_price"],
    ].copy()
    inside = frame.groupby(["market3", "year"])["revenue"].transform("sum")
    nest_revenue = frame.groupby(["nest5", "year"])["revenue"].transform("sum")
    nest_size = frame.groupby(["nest5", "year"])["revenue"].transform("size")
    if (inside <= 0).any():
        raise ValidationError("Market-year cell with non-positive inside revenue")

    if rule.market_sizes is None:
        market_size = rule.kappa * inside
        rs_0 = np.full(len(frame), np.log((rule.kappa - 1.0) / rule.kappa))
    else:
        sizes = rule.market_sizes.set_index(["market3", "year"])["market_size"]
        keys = pd.MultiIndex.from_arrays([frame["market3"], frame["year"]])
        market_size = pd.Series(sizes.reindex(keys).to_numpy(), index=frame.index)
        if market_size.isna().any():
            missing = sorted(
                set(zip(frame.loc[market_size.isna(), "market3"], frame.loc[market_size.isna(), "year"]))
            )
            raise ValidationError(f"No market size for market-year(s): {missing}")
        outside = market_size - inside
        if (outside <= 0).any():
            raise ConfigurationError("Explicit market size does not exceed inside revenue")
        rs_0 = (np.log(outside) - np.log(market_size)).to_numpy()

    log_revenue = np.log(frame["revenue"].to_numpy())
    frame["market_size"] = np.asarray(market_size, dtype=float)
    frame["rs_j"] = log_revenue - np.log(frame["market_size"].to_numpy())
    frame["rs_within"] = log_revenue - np.log(nest_revenue.to_numpy())
    frame["rs_0"] = rs_0
    frame["log_price"] = np.log(frame["unit_price"].to_numpy())
    frame["nest_count"] = np.log(nest_size.to_numpy().astype(float))
    frame = frame.sort_values(["market3", "year", "plant_id", "product_code"]).reset_index(drop=True)
    log.debug(
        "Computed shares for %d observations in %d market-years (%s)",
        len(frame),
        frame.groupby(["market3", "year"]).ngroups,
        rule.label,
    )
    return ShareTable(frame=frame.loc[:, list(SHARE_COLUMNS)], rule_label=rule.label)
