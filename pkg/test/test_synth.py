"""
Tests for the synthetic panel generator
"""

# Standard
import os

# Third Party
import numpy as np
import pandas as pd
import pytest

# Local
from prodloom import constants
from prodloom.errors import ConfigurationError, EquilibriumError
from prodloom.panel import load_panel, validate_panel
from prodloom.synth import (
    SynthConfig,
    generate_synthetic,
    nested_log_shares,
    nested_share_map,
    solve_price_equilibrium,
    write_synthetic,
)

## Tests #######################################################################


def test_share_map_closed_form():
    """Shares follow the nested-logit formula and add up with the outside good"""
    log_prices = np.array([0.1, 0.4, -0.2])
    eta = np.array([0.3, 0.0, 0.5])
    nests = ["a", "a", "b"]
    alpha, sigma = 0.7, 0.5
    shares, within, outside = nested_share_map(log_prices, eta, alpha, sigma, nests)

    mu = -alpha * log_prices + eta
    d_a = np.exp(mu[0] / sigma) + np.exp(mu[1] / sigma)
    d_b = np.exp(mu[2] / sigma)
    denom = 1 + d_a**sigma + d_b**sigma
    assert within[0] == pytest.approx(np.exp(mu[0] / sigma) / d_a)
    assert within[2] == pytest.approx(1.0)
    assert shares[0] == pytest.approx(within[0] * d_a**sigma / denom)
    assert outside == pytest.approx(1 / denom)
    assert shares.sum() + outside == pytest.approx(1.0)

    log_s, log_within, log_outside = nested_log_shares(log_prices, eta, alpha, sigma, nests)
    np.testing.assert_allclose(np.exp(log_s), shares)
    np.testing.assert_allclose(log_s - log_outside, mu + (1 - sigma) * log_within)


def test_share_map_rejects_bad_parameters():
    """The share map needs admissible demand"""
    with pytest.raises(ConfigurationError):
        nested_share_map(np.zeros(2), np.zeros(2), 0.5, 1.5, ["a", "a"])


def test_equilibrium_iteration_limit():
    """Running out of iterations is an equilibrium error"""
    with pytest.raises(EquilibriumError):
        solve_price_equilibrium(
            np.ones(3), np.zeros(3), 0.5, 0.4, ["a", "a", "b"], ["x", "y", "z"], max_iter=1
        )


def test_generator_is_deterministic():
    """The same seed gives the same panel, another seed does not"""
    config = SynthConfig(n_plants=30, n_years=3, n_other_plants=4)
    first, truth = generate_synthetic(config, seed=2)
    second, _ = generate_synthetic(config, seed=2)
    third, _ = generate_synthetic(config, seed=3)
    assert first.equals(second)
    assert not first.equals(third)
    assert truth.params["seed"] == 2


def test_synthetic_panel_is_valid(small_synth):
    """Generated panels pass validation and every plant-year makes something"""
    panel, truth = small_synth
    assert validate_panel(panel).ok
    assert len(truth.frame) == len(panel.observations)
    assert (truth.frame["lerner"] > 0).all() and (truth.frame["lerner"] < 1).all()
    counts = panel.product_count_frame()
    assert (counts["n_products"] >= 1).all()
    tags = set(panel.sector_tags.values())
    assert tags == {constants.SECTOR_MACHINERY, constants.SECTOR_OTHER}


def test_products_are_dropped_not_added(small_synth):
    """Plants only lose products over time"""
    panel, _ = small_synth
    obs = panel.observations
    first_year = obs["year"].min()
    initial = set(zip(obs.loc[obs["year"] == first_year, "plant_id"], obs.loc[obs["year"] == first_year, "product_code"]))
    later = set(zip(obs["plant_id"], obs["product_code"]))
    assert later == initial
    counts = panel.product_count_frame().sort_values(["plant_id", "year"])
    assert (counts.groupby("plant_id")["n_products"].diff().dropna() <= 0).all()


def test_no_drops_when_rate_is_zero():
    """With drop_rate 0 every product lives through the panel"""
    config = SynthConfig(n_plants=20, n_years=3, n_other_plants=4, drop_rate=0.0)
    panel, _ = generate_synthetic(config, seed=1)
    per_year = panel.observations.groupby("year").size()
    assert per_year.nunique() == 1


def test_bad_config():
    """Out-of-range generator settings are configuration errors"""
    for kwargs in (
        {"alpha": -1.0},
        {"sigma": 1.0},
        {"rho": 2.0},
        {"drop_rate": 1.0},
        {"n_plants": 0},
        {"n_other_plants": 1},
        {"beta_K": 0.0},
    ):
        with pytest.raises(ConfigurationError):
            SynthConfig(**kwargs)


def test_spec_hash():
    """The config hash tracks every field"""
    assert SynthConfig().spec_hash() == SynthConfig().spec_hash()
    assert SynthConfig().spec_hash() != SynthConfig(rho=0.0).spec_hash()


def test_write_synthetic_round_trip(tmp_path):
    """Written files load back into the same panel plus truth tables"""
    panel, truth = generate_synthetic(SynthConfig(n_plants=20, n_years=3, n_other_plants=4), seed=4)
    paths = write_synthetic(panel, truth, str(tmp_path))
    reloaded = load_panel(paths["outputs"], paths["inputs"], paths["purchases"])
    assert reloaded.equals(panel)
    sizes = pd.read_csv(paths["market_size"], dtype={"market3": str})
    assert list(sizes.columns) == list(constants.MARKET_SIZE_COLUMNS)
    assert os.path.exists(paths["truth"])
