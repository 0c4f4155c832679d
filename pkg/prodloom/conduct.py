"""
Bertrand-Nash conduct: share derivatives of the nested logit, marginal-cost
recovery by inverting each plant's first-order conditions, and the input
allocation shares S_j = mc_j Y_j / sum_k mc_k Y_k.

With mu_j = -alpha p_j + eta_j and p the log price,

    d ln s_j / d mu_k = 1{j=k} / sigma - ((1 - sigma) / sigma) s_{k|g} 1{g(k)=g(j)} - s_k

and the plant maximizing sum_j (P_j - mc_j) s_j I / P_j over its log prices
satisfies (J_plant - diag(s_plant)) nu = -s_plant for the Lerner vector nu,
where J[k][j] = d s_j / d p_k.
"""

# Standard
from dataclasses import dataclass, field
from typing import Dict, Hashable, Optional, Sequence, Tuple, Union

# Third Party
import numpy as np
import pandas as pd

# Local
from . import constants
from .demand import DemandEstimate, is_admissible
from .errors import ConductInversionError, ConfigurationError, SingularityError
from .log import log
from .shares import ShareTable

# Condition number above which a plant block counts as singular
MAX_BLOCK_CONDITION = 1e12

## Types #######################################################################


@dataclass(frozen=True, eq=False)
class MarketShares:
    """Inside shares of one market-year with their nest labels

    Attributes:
        shares:  np.ndarray
            (n,) market shares s_j
        nests:  np.ndarray
            (n,) nest label per product
        within:  Optional[np.ndarray]
            (n,) within-nest shares; computed from `shares` when omitted
        labels:  Optional[Sequence[Hashable]]
            Product identifiers
    """

    shares: np.ndarray
    nests: np.ndarray
    within: Optional[np.ndarray] = None
    labels: Optional[Sequence[Hashable]] = None
    market: Optional[str] = None
    year: Optional[int] = None

    def within_shares(self) -> np.ndarray:
        if self.within is not None:
            return np.asarray(self.within, dtype=float)
        shares = np.asarray(self.shares, dtype=float)
        totals = pd.Series(shares).groupby(np.asarray(self.nests)).transform("sum")
        return shares / totals.to_numpy()


@dataclass(frozen=True, eq=False)
class ShareJacobian:
    """matrix[k][j] = d s_j / d p_k for one market-year"""

    matrix: np.ndarray
    shares: np.ndarray
    labels: Tuple[Hashable, ...]
    market: Optional[str] = None
    year: Optional[int] = None


@dataclass(frozen=True, eq=False)
class CostAllocation:
    """plant_id, year, product_code, mc, lerner, S, flag (plus quantity and
    unit_price) with per-block solver residuals
    """

    frame: pd.DataFrame
    block_residuals: pd.DataFrame = field(default_factory=pd.DataFrame)

    @property
    def n_flagged(self) -> int:
        return int((self.frame["flag"] != constants.FLAG_OK).sum())

    def to_csv(self, path: str):
        self.frame.loc[
            :, ["plant_id", "year", "product_code", "mc", "lerner", "S", "flag"]
        ].to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


## Public ######################################################################


def share_derivatives(
    alpha: float,
    sigma: float,
    market_shares: MarketShares,
) -> ShareJacobian:
    """Analytic derivative of the nested-logit market shares with respect to
    log prices

    Args:
        alpha:  float
            Price coefficient (> 0)
        sigma:  float
            Nest parameter in (0, 1)
        market_shares:  MarketShares
            Shares and nest labels of one market-year

    Returns:
        jacobian:  ShareJacobian
            J[k][j] = s_j * d ln s_j / d p_k
    """
    if not is_admissible(alpha, sigma):
        raise ConfigurationError(
            f"Share derivatives need alpha > 0 and 0 < sigma < 1 (got {alpha}, {sigma})"
        )
    shares = np.asarray(market_shares.shares, dtype=float)
    nests = np.asarray(market_shares.nests)
    within = market_shares.within_shares()
    outside = 1.0 - shares.sum()
    if (shares <= 0).any() or (shares >= 1).any() or not outside > 0:
        raise SingularityError(
            f"Boundary shares in market {market_shares.market} year {market_shares.year}"
        )
    same_nest = nests[:, None] == nests[None, :]
    # dlog[k, j] = d ln s_j / d mu_k
    dlog = -((1.0 - sigma) / sigma) * within[:, None] * same_nest - shares[:, None]
    dlog[np.diag_indices_from(dlog)] += 1.0 / sigma
    matrix = -alpha * dlog * shares[None, :]
    labels = tuple(market_shares.labels) if market_shares.labels is not None else tuple(range(len(shares)))
    return ShareJacobian(
        matrix=matrix,
        shares=shares,
        labels=labels,
        market=market_shares.market,
        year=market_shares.year,
    )


def solve_lerner(
    jacobian: np.ndarray,
    shares: np.ndarray,
    owners: np.ndarray,
    year: Optional[int] = None,
    market: Optional[str] = None,
) -> Tuple[np.ndarray, Dict[Hashable, float]]:
    """Solve (J_plant - diag(s_plant)) nu = -s_plant for every owner

    Returns:
        nu:  np.ndarray
            (n,) Lerner indices
        residuals:  Dict[Hashable, float]
            max |(J_b - diag s_b) nu_b + s_b| per owner
    """
    owners = np.asarray(owners)
    nu = np.empty(len(shares))
    residuals: Dict[Hashable, float] = {}
    codes, uniques = pd.factorize(owners)
    sizes = np.bincount(codes, minlength=len(uniques))
    single = sizes[codes] == 1
    if single.any():
        idx = np.flatnonzero(single)
        denom = jacobian[idx, idx] - shares[idx]
        if (denom == 0).any():
            bad = idx[denom == 0][0]
            raise ConductInversionError(str(owners[bad]), year, market)
        nu[idx] = -shares[idx] / denom
        for i in idx:
            residuals[owners[i]] = 0.0
    for code in np.flatnonzero(sizes > 1):
        idx = np.flatnonzero(codes == code)
        block = jacobian[np.ix_(idx, idx)] - np.diag(shares[idx])
        if np.linalg.cond(block) > MAX_BLOCK_CONDITION:
            raise ConductInversionError(str(uniques[code]), year, market)
        nu[idx] = np.linalg.solve(block, -shares[idx])
        residuals[uniques[code]] = float(np.max(np.abs(block @ nu[idx] + shares[idx])))
    return nu, residuals


def recover_marginal_costs(
    jacobian: ShareJacobian,
    prices: np.ndarray,
    shares: np.ndarray,
    plant_ownership: Sequence[Hashable],
) -> pd.DataFrame:
    """Marginal costs implied by Bertrand-Nash pricing

    Args:
        jacobian:  ShareJacobian
            Share derivatives of the market-year
        prices:  np.ndarray
            (n,) price levels P_j
        shares:  np.ndarray
            (n,) market shares
        plant_ownership:  Sequence[Hashable]
            (n,) owning plant of each product; each plant's products form one
            pricing block

    Returns:
        costs:  pd.DataFrame
            label, plant_id, mc = P (1 - nu), lerner = nu, flag, residual.
            Rows with nu outside (0, 1) are kept and flagged.
    """
    shares = np.asarray(shares, dtype=float)
    prices = np.asarray(prices, dtype=float)
    owners = np.asarray(plant_ownership)
    nu, residuals = solve_lerner(jacobian.matrix, shares, owners, jacobian.year, jacobian.market)
    outside = (nu <= 0) | (nu >= 1)
    if outside.any():
        log.warning(
            "%d Lerner indices outside (0, 1) in market %s year %s",
            int(outside.sum()),
            jacobian.market,
            jacobian.year,
        )
    return pd.DataFrame(
        {
            "label": list(jacobian.labels),
            "plant_id": owners,
            "mc": prices * (1.0 - nu),
            "lerner": nu,
            "flag": np.where(outside, constants.FLAG_LERNER_RANGE, constants.FLAG_OK),
            "residual": [residuals[owner] for owner in owners],
        }
    )


def input_allocation_shares(costs: pd.DataFrame) -> pd.DataFrame:
    """S_j = mc_j Y_j / sum over the plant-year of mc_k Y_k

    Args:
        costs:  pd.DataFrame
            plant_id, year, mc, quantity (plus any other columns)

    Returns:
        costs:  pd.DataFrame
            Copy with an S column. Plant-years with a non-positive mc get NaN.
    """
    out = costs.copy()
    cost_value = out["mc"] * out["quantity"]
    total = cost_value.groupby([out["plant_id"], out["year"]]).transform("sum")
    valid = (out["mc"] > 0).groupby([out["plant_id"], out["year"]]).transform("all")
    out["S"] = np.where(valid, cost_value / total, np.nan)
    return out


def compute_cost_allocations(
    shares: ShareTable,
    demand: Union[DemandEstimate, Tuple[float, float]],
) -> CostAllocation:
    """Share derivatives, marginal costs and allocation shares for every
    market-year of a share table

    Args:
        shares:  ShareTable
            Observed shares and prices
        demand:  Union[DemandEstimate, Tuple[float, float]]
            Estimated or calibrated (alpha, sigma)

    Returns:
        allocation:  CostAllocation
            One row per observation and one residual row per plant block
    """
    alpha, sigma = (demand.alpha, demand.sigma) if isinstance(demand, DemandEstimate) else demand
    pieces = []
    block_rows = []
    for (market, year), group in shares.frame.groupby(["market3", "year"], sort=True):
        market_shares = MarketShares(
            shares=np.exp(group["rs_j"].to_numpy()),
            nests=group["nest5"].to_numpy(),
            within=np.exp(group["rs_within"].to_numpy()),
            labels=list(group["product_code"]),
            market=market,
            year=int(year),
        )
        jac = share_derivatives(alpha, sigma, market_shares)
        costs = recover_marginal_costs(
            jac, group["unit_price"].to_numpy(), market_shares.shares, group["plant_id"].to_numpy()
        )
        costs = costs.rename(columns={"label": "product_code"})
        costs["year"] = int(year)
        costs["quantity"] = group["quantity"].to_numpy()
        costs["unit_price"] = group["unit_price"].to_numpy()
        pieces.append(costs)
        for plant, residual in costs.groupby("plant_id")["residual"].max().items():
            block_rows.append((plant, int(year), market, residual))
        log.debug4("Conduct inversion for market %s year %s: %d products", market, year, len(group))

    frame = pd.concat(pieces, ignore_index=True)
    frame = input_allocation_shares(frame)
    invalid = frame["S"].isna()
    frame.loc[invalid & (frame["flag"] == constants.FLAG_OK), "flag"] = constants.FLAG_LERNER_RANGE
    frame = frame.loc[
        :, ["plant_id", "year", "product_code", "mc", "lerner", "S", "flag", "quantity", "unit_price"]
    ]
    frame = frame.sort_values(["plant_id", "year", "product_code"]).reset_index(drop=True)
    blocks = pd.DataFrame(block_rows, columns=["plant_id", "year", "market3", "residual"])
    log.debug(
        "Recovered marginal costs for %d products (%d flagged, max block residual %.2e)",
        len(frame),
        int((frame["flag"] != constants.FLAG_OK).sum()),
        blocks["residual"].max() if len(blocks) else 0.0,
    )
    return CostAllocation(frame=frame, block_residuals=blocks)
