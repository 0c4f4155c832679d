"""
Tests for the purchase-share filter and the price-growth instrument
"""

# Third Party
import numpy as np
import pytest

# Local
from prodloom.errors import ConfigurationError, ValidationError
from prodloom.instruments import (
    REFERENCE_NON_MACHINERY,
    WEIGHTING_VALUE,
    InstrumentConfig,
    build_price_growth_iv,
    compute_purchase_shares,
    filter_input_codes,
)
from prodloom.panel import load_panel
from test.helpers import write_panel_files

## Helpers #####################################################################


@pytest.fixture
def panel(tmp_path):
    paths = write_panel_files(str(tmp_path))
    return load_panel(paths["outputs"], paths["inputs"], paths["purchases"])


def z_values(table):
    return {(row.nest5, row.year): row.Z for row in table.frame.itertuples()}


## Tests #######################################################################


def test_purchase_shares(panel):
    """Machinery shares are the machinery value over total code value"""
    table = compute_purchase_shares(panel.purchases, panel.sector_tags)
    assert table.shares(2000) == pytest.approx({"X1": 30 / 45, "X2": 0.0})
    assert table.shares(2001) == pytest.approx({"X1": 33 / 49, "X2": 0.0})


def test_pooled_purchase_shares(panel):
    """Pooled shares use all years and repeat on every purchase year"""
    table = compute_purchase_shares(panel.purchases, panel.sector_tags, pooled=True)
    assert table.shares(2000)["X1"] == pytest.approx(63 / 94)
    assert table.shares(2001)["X1"] == pytest.approx(63 / 94)


def test_untagged_purchaser_rejected(panel):
    """Every purchasing plant needs a sector tag"""
    tags = {"A": panel.sector_tags["A"], "B": panel.sector_tags["B"]}
    with pytest.raises(ValidationError):
        compute_purchase_shares(panel.purchases, tags)


def test_threshold_filter(panel):
    """Codes above tau are excluded, tau outside [0, 1] is rejected"""
    table = compute_purchase_shares(panel.purchases, panel.sector_tags)
    low = filter_input_codes(table, 0.5)
    high = filter_input_codes(table, 1.0)
    assert low.codes(2001) == frozenset({"X2"})
    assert high.codes(2001) == frozenset({"X1", "X2"})
    assert low.issubset(high) and not high.issubset(low)
    assert len(filter_input_codes(table, 0.0)) == 2
    for tau in (-0.01, 1.5):
        with pytest.raises(ConfigurationError):
            filter_input_codes(table, tau)


def test_instrument_values(panel):
    """Z is the mean log unit-value growth of the nest's reference plants"""
    table = compute_purchase_shares(panel.purchases, panel.sector_tags)
    only_x2 = build_price_growth_iv(panel, filter_input_codes(table, 0.5))
    assert z_values(only_x2) == pytest.approx({("20201", 2001): np.log(1.25)})

    both = build_price_growth_iv(panel, filter_input_codes(table, 1.0))
    assert z_values(both) == pytest.approx(
        {("10101", 2001): np.log(16 / 15), ("20201", 2001): np.log(1.25)}
    )
    assert both.frame["n_contributing"].tolist() == [1, 1]


def test_multi_product_plant_is_not_a_reference(panel):
    """Plant A makes two products, so it never contributes under the default rule"""
    table = compute_purchase_shares(panel.purchases, panel.sector_tags)
    retained = filter_input_codes(table, 1.0)
    instruments = build_price_growth_iv(panel, retained)
    assert ("10102", 2001) not in z_values(instruments)
    # The non-machinery rule also excludes A
    other = build_price_growth_iv(
        panel, retained, InstrumentConfig(reference=REFERENCE_NON_MACHINERY)
    )
    assert z_values(other) == pytest.approx(z_values(instruments))


def test_min_contributors_drops_thin_nests(panel):
    """Nest-years with too few growth terms are left out"""
    table = compute_purchase_shares(panel.purchases, panel.sector_tags)
    retained = filter_input_codes(table, 1.0)
    instruments = build_price_growth_iv(panel, retained, InstrumentConfig(min_contributors=2))
    assert len(instruments) == 0


def test_value_weighting_with_one_term_matches_unweighted(panel):
    """With a single term per plant the weighting does not change Z"""
    table = compute_purchase_shares(panel.purchases, panel.sector_tags)
    retained = filter_input_codes(table, 1.0)
    plain = build_price_growth_iv(panel, retained)
    weighted = build_price_growth_iv(panel, retained, InstrumentConfig(weighting=WEIGHTING_VALUE))
    assert z_values(weighted) == pytest.approx(z_values(plain))


def test_with_lag_needs_consecutive_years(panel):
    """With only one growth year there is no lagged instrument"""
    table = compute_purchase_shares(panel.purchases, panel.sector_tags)
    instruments = build_price_growth_iv(panel, filter_input_codes(table, 1.0))
    assert instruments.with_lag().empty


def test_bad_instrument_config():
    """Unknown options are configuration errors"""
    with pytest.raises(ConfigurationError):
        InstrumentConfig(reference="everyone")
    with pytest.raises(ConfigurationError):
        InstrumentConfig(weighting="squared")
    with pytest.raises(ConfigurationError):
        InstrumentConfig(min_contributors=0)


def test_retained_sets_grow_with_tau(small_synth):
    """Raising tau never removes codes or instrumented nest-years"""
    panel, _ = small_synth
    table = compute_purchase_shares(panel.purchases, panel.sector_tags)
    previous_codes = None
    previous_rows = -1
    for tau in np.linspace(0.0, 1.0, 11):
        retained = filter_input_codes(table, float(tau))
        instruments = build_price_growth_iv(panel, retained)
        if previous_codes is not None:
            assert previous_codes.issubset(retained)
        assert len(instruments) >= previous_rows
        previous_codes, previous_rows = retained, len(instruments)
    assert previous_rows > 0


def test_synthetic_machinery_shares_match_targets(small_synth):
    """Where machinery plants buy a code, other buyers top up its value so
    that the machinery share hits the code target
    """
    panel, truth = small_synth
    table = compute_purchase_shares(panel.purchases, panel.sector_tags)
    merged = table.frame.merge(truth.input_codes, on="input_code", suffixes=("", "_target"))
    merged = merged[merged["machinery_share"] > 0]
    assert len(merged) > 0
    np.testing.assert_allclose(
        merged["machinery_share"], merged["machinery_share_target"], rtol=1e-9
    )
