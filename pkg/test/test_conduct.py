"""
Tests for the share derivatives and the marginal-cost recovery
"""

# Third Party
import numpy as np
import pandas as pd
import pytest

# Local
from prodloom import constants
from prodloom.conduct import (
    MarketShares,
    compute_cost_allocations,
    input_allocation_shares,
    recover_marginal_costs,
    share_derivatives,
)
from prodloom.demand import DemandEstimate
from prodloom.errors import ConfigurationError, SingularityError
from prodloom.shares import MarketSizeRule, compute_revenue_shares
from prodloom.synth import nested_share_map, solve_price_equilibrium

## Helpers #####################################################################

ALPHA = 0.8
SIGMA = 0.35
NESTS = np.array(["a", "a", "a", "b", "b"])
OWNERS = np.array(["P1", "P1", "P2", "P2", "P3"])
ETA = np.array([0.2, -0.1, 0.4, 0.0, 0.3])
LOG_PRICES = np.array([0.5, 0.3, 0.8, 0.1, 0.6])


def market_shares(log_prices=LOG_PRICES):
    shares, within, _ = nested_share_map(log_prices, ETA, ALPHA, SIGMA, NESTS)
    return MarketShares(shares=shares, nests=NESTS, within=within)


def random_market(seed):
    """Demand parameters, 1-3 nests of 1-5 products, plants owning 1-5
    products each, appeals, log prices and marginal costs
    """
    rng = np.random.default_rng(seed)
    sizes = rng.integers(1, 6, size=int(rng.integers(1, 4)))
    nests = np.repeat([f"n{g}" for g in range(len(sizes))], sizes)
    n = len(nests)
    owners = np.empty(n, dtype="<U4")
    order = rng.permutation(n)
    start = 0
    while start < n:
        size = int(rng.integers(1, 6))
        owners[order[start : start + size]] = f"P{start}"
        start += size
    return {
        "alpha": rng.uniform(0.3, 1.5),
        "sigma": rng.uniform(0.2, 0.8),
        "nests": nests,
        "owners": owners,
        "eta": rng.normal(0.0, 0.5, n),
        "log_prices": rng.normal(0.5, 0.3, n),
        "mc": rng.lognormal(0.0, 0.3, n),
    }


## Tests #######################################################################


def test_jacobian_matches_finite_differences():
    """The analytic derivative agrees with central differences"""
    jac = share_derivatives(ALPHA, SIGMA, market_shares()).matrix
    step = 1e-6
    for k in range(len(LOG_PRICES)):
        up = LOG_PRICES.copy()
        down = LOG_PRICES.copy()
        up[k] += step
        down[k] -= step
        numeric = (market_shares(up).shares - market_shares(down).shares) / (2 * step)
        np.testing.assert_allclose(jac[k], numeric, rtol=1e-6, atol=1e-10)


def test_within_shares_computed_when_missing():
    """Without explicit within shares they come from the market shares"""
    full = market_shares()
    bare = MarketShares(shares=full.shares, nests=NESTS)
    np.testing.assert_allclose(bare.within_shares(), full.within, rtol=1e-12)


def test_single_product_lerner_closed_form():
    """A single-product plant has nu = 1 / (1 + alpha * d ln s / d mu)"""
    shares = market_shares()
    jac = share_derivatives(ALPHA, SIGMA, shares)
    prices = np.exp(LOG_PRICES)
    costs = recover_marginal_costs(jac, prices, shares.shares, OWNERS)
    s, w = shares.shares[4], shares.within[4]
    own = 1 / SIGMA - (1 - SIGMA) / SIGMA * w - s
    assert costs["lerner"].iloc[4] == pytest.approx(1 / (1 + ALPHA * own), rel=1e-10)
    assert costs["mc"].iloc[4] == pytest.approx(prices[4] * (1 - costs["lerner"].iloc[4]))
    assert (costs["flag"] == constants.FLAG_OK).all()
    assert costs["residual"].max() < 1e-10


def test_round_trip_with_equilibrium_prices():
    """Costs recovered from equilibrium prices equal the costs that set them"""
    mc = np.array([1.2, 0.9, 1.5, 0.7, 1.1])
    log_prices = solve_price_equilibrium(mc, ETA, ALPHA, SIGMA, NESTS, OWNERS)
    shares = market_shares(log_prices)
    jac = share_derivatives(ALPHA, SIGMA, shares)
    costs = recover_marginal_costs(jac, np.exp(log_prices), shares.shares, OWNERS)
    np.testing.assert_allclose(costs["mc"], mc, rtol=1e-8)
    assert ((costs["lerner"] > 0) & (costs["lerner"] < 1)).all()


@pytest.mark.parametrize("seed", range(100))
def test_random_jacobian_matches_finite_differences(seed):
    """Analytic derivatives agree with central differences across random
    parameters and nest sizes
    """
    market = random_market(seed)
    args = (market["eta"], market["alpha"], market["sigma"], market["nests"])

    def shares_at(log_prices):
        return nested_share_map(log_prices, *args)[0]

    shares, within, _ = nested_share_map(market["log_prices"], *args)
    jac = share_derivatives(
        market["alpha"], market["sigma"], MarketShares(shares=shares, nests=market["nests"], within=within)
    ).matrix
    step = 1e-6
    for k in range(len(shares)):
        up = market["log_prices"].copy()
        down = market["log_prices"].copy()
        up[k] += step
        down[k] -= step
        numeric = (shares_at(up) - shares_at(down)) / (2 * step)
        np.testing.assert_allclose(jac[k], numeric, rtol=1e-5, atol=1e-9)


@pytest.mark.parametrize("seed", range(100))
def test_random_round_trip_with_equilibrium_prices(seed):
    """Random multi-product plants: costs recovered from equilibrium prices
    equal the costs that set them
    """
    market = random_market(seed)
    alpha, sigma, nests, owners = market["alpha"], market["sigma"], market["nests"], market["owners"]
    log_prices = solve_price_equilibrium(market["mc"], market["eta"], alpha, sigma, nests, owners)
    shares, within, _ = nested_share_map(log_prices, market["eta"], alpha, sigma, nests)
    jac = share_derivatives(alpha, sigma, MarketShares(shares=shares, nests=nests, within=within))
    costs = recover_marginal_costs(jac, np.exp(log_prices), shares, owners)
    np.testing.assert_allclose(costs["mc"], market["mc"], rtol=1e-8)
    assert ((costs["lerner"] > 0) & (costs["lerner"] < 1)).all()
    assert (costs["flag"] == constants.FLAG_OK).all()
    assert costs["residual"].max() < 1e-8


def test_boundary_and_inadmissible_parameters():
    """Shares at the boundary are singular, bad (alpha, sigma) is a config error"""
    with pytest.raises(SingularityError):
        share_derivatives(ALPHA, SIGMA, MarketShares(np.array([0.6, 0.4]), np.array(["a", "b"])))
    with pytest.raises(ConfigurationError):
        share_derivatives(0.0, SIGMA, market_shares())
    with pytest.raises(ConfigurationError):
        share_derivatives(ALPHA, 1.0, market_shares())


def test_allocation_shares_sum_to_one():
    """S sums to one per plant-year and a non-positive cost voids the plant-year"""
    costs = pd.DataFrame(
        {
            "plant_id": ["A", "A", "B", "B"],
            "year": [2000, 2000, 2000, 2000],
            "mc": [1.0, 2.0, 1.0, -1.0],
            "quantity": [3.0, 1.0, 1.0, 1.0],
        }
    )
    out = input_allocation_shares(costs)
    assert out["S"].iloc[:2].tolist() == pytest.approx([0.6, 0.4])
    assert out["S"].iloc[2:].isna().all()


def test_synthetic_costs_recovered(small_synth):
    """With the true demand parameters the generator's costs come back"""
    panel, truth = small_synth
    shares = compute_revenue_shares(panel, MarketSizeRule(market_sizes=truth.market_sizes))
    allocation = compute_cost_allocations(
        shares, DemandEstimate.calibrated(truth.params["alpha"], truth.params["sigma"])
    )
    merged = allocation.frame.merge(truth.frame, on=["plant_id", "year", "product_code"])
    assert len(merged) == len(allocation.frame) == len(truth.frame)
    np.testing.assert_allclose(merged["mc_x"], merged["mc_y"], rtol=1e-6)
    np.testing.assert_allclose(merged["S_x"], merged["S_y"], rtol=1e-6)
    np.testing.assert_allclose(merged["lerner_x"], merged["lerner_y"], rtol=1e-5, atol=1e-9)
    totals = allocation.frame.groupby(["plant_id", "year"])["S"].sum()
    np.testing.assert_allclose(totals.to_numpy(), 1.0, atol=1e-12)
    assert allocation.n_flagged == 0
    assert allocation.block_residuals["residual"].max() < 1e-8


def test_tuple_demand_matches_estimate(small_synth):
    """(alpha, sigma) tuples and estimates give the same allocation"""
    panel, _ = small_synth
    shares = compute_revenue_shares(panel)
    first = compute_cost_allocations(shares, (0.5, 0.4))
    second = compute_cost_allocations(shares, DemandEstimate.calibrated(0.5, 0.4))
    pd.testing.assert_frame_equal(first.frame, second.frame)
