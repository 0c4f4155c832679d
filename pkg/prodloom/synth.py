"""
Synthetic data with known parameters.

Share map: exponentiating the demand equation

    ln s_j - ln s_0 = (1 - sigma) ln s_{j|g} + mu_j,   mu_j = -alpha p_j + eta_j

and imposing that within-nest shares sum to one gives the unique closed form

    s_{j|g} = exp(mu_j / sigma) / D_g,   D_g = sum_{k in g} exp(mu_k / sigma)
    s_0 = 1 / (1 + sum_g D_g^sigma),     s_j = s_{j|g} * s_0 * D_g^sigma

which is evaluated in log space with per-nest logsumexp.

Generator: plants own 1-5 products (5-digit nests inside 3-digit markets).
Log marginal cost is a plant cost level (including nest input-price growth at
t and t-1) minus product productivity. Prices are the Bertrand-Nash
equilibrium of each market-year, outputs follow from shares and the market
size, and plant materials are pinned so that the production function holds
with the allocation shares implied by the true marginal costs.
"""

# Standard
from dataclasses import asdict, dataclass
from typing import Dict, Hashable, Optional, Sequence, Tuple
import hashlib
import json
import os

# Third Party
import numpy as np
import pandas as pd
import scipy.special

# Local
from . import constants
from .conduct import MarketShares, share_derivatives, solve_lerner
from .demand import is_admissible
from .errors import ConfigurationError, EquilibriumError
from .log import log
from .panel import Panel, write_panel

EQUILIBRIUM_TOL = 1e-12
EQUILIBRIUM_MAX_ITER = 10000
LERNER_CLIP = 1e-9

## Types #######################################################################


@dataclass(frozen=True)
class SynthConfig:
    """Parameters of the synthetic data-generating process

    Attributes:
        rho:  float
            Endogeneity knob: correlation between appeal eta and the plant
            cost level (excluding the input-price component)
        gamma:  float
            Loading of log marginal cost on nest input-price growth
        demand_feedback:  float
            Loading of input-price growth on the nest's mean appeal, scaled by
            the code's machinery purchase share
        drop_rate:  float
            Per-year probability that a product of a multi-product plant is
            discontinued
    """

    n_plants: int = 500
    n_years: int = 8
    first_year: int = 2000
    n_markets: int = 6
    nests_per_market: int = 5
    products_per_plant: Tuple[float, ...] = (0.55, 0.25, 0.12, 0.05, 0.03)
    alpha: float = 0.5
    sigma: float = 0.4
    beta_L: float = 0.6
    beta_K: float = 0.2
    beta_M: float = 0.2
    appeal_mean: float = 0.0
    eta_sd: float = 0.5
    rho: float = 0.5
    omega_sd: float = 0.3
    omega_within_sd: float = 0.0
    psi_sd: float = 0.2
    gamma: float = 1.0
    cost_shock_sd: float = 0.3
    codes_per_nest: int = 4
    n_other_plants: int = 40
    demand_feedback: float = 0.0
    drop_rate: float = 0.05
    market_size: float = 1e5
    nest_popularity_sd: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not is_admissible(self.alpha, self.sigma):
            raise ConfigurationError("SynthConfig needs alpha > 0 and 0 < sigma < 1")
        if min(self.beta_L, self.beta_K, self.beta_M) <= 0:
            raise ConfigurationError("SynthConfig needs positive production coefficients")
        if not -1 <= self.rho <= 1:
            raise ConfigurationError("rho must lie in [-1, 1]")
        if not 0 <= self.drop_rate < 1:
            raise ConfigurationError("drop_rate must lie in [0, 1)")
        if self.n_plants < 1 or self.n_years < 1 or self.n_markets < 1 or self.nests_per_market < 1:
            raise ConfigurationError("SynthConfig sizes must be positive")
        if self.codes_per_nest < 1 or self.n_other_plants < 2:
            raise ConfigurationError("Need at least one code per nest and two other plants")
        if not self.products_per_plant or min(self.products_per_plant) < 0:
            raise ConfigurationError("products_per_plant must be a probability vector")

    @property
    def beta(self) -> Tuple[float, float, float]:
        return (self.beta_L, self.beta_K, self.beta_M)

    def spec_hash(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:12]


@dataclass(frozen=True, eq=False)
class SynthTruth:
    """Per-observation truth (eta, omega, mc, log_price, share, within_share,
    outside_share, lerner, S) plus the parameters and market sizes
    """

    frame: pd.DataFrame
    market_sizes: pd.DataFrame
    input_codes: pd.DataFrame
    params: Dict[str, float]


## Public ######################################################################


def nested_share_map(
    log_prices: np.ndarray,
    eta: np.ndarray,
    alpha: float,
    sigma: float,
    nests: Sequence[Hashable],
) -> Tuple[np.ndarray, np.ndarray, float]:
    """Closed-form nested-logit shares of one market

    Returns:
        shares:  np.ndarray
            s_j
        within:  np.ndarray
            s_{j|g}
        outside:  float
            s_0
    """
    log_s, log_within, log_outside = nested_log_shares(log_prices, eta, alpha, sigma, nests)
    return np.exp(log_s), np.exp(log_within), float(np.exp(log_outside))


def nested_log_shares(
    log_prices: np.ndarray,
    eta: np.ndarray,
    alpha: float,
    sigma: float,
    nests: Sequence[Hashable],
) -> Tuple[np.ndarray, np.ndarray, float]:
    """Log version of nested_share_map"""
    if not is_admissible(alpha, sigma):
        raise ConfigurationError(f"Share map needs alpha > 0 and 0 < sigma < 1 (got {alpha}, {sigma})")
    mu = -alpha * np.asarray(log_prices, dtype=float) + np.asarray(eta, dtype=float)
    codes, uniques = pd.factorize(np.asarray(nests))
    scaled = mu / sigma
    log_d = np.array([scipy.special.logsumexp(scaled[codes == g]) for g in range(len(uniques))])
    log_within = scaled - log_d[codes]
    log_outside = -scipy.special.logsumexp(np.concatenate([[0.0], sigma * log_d]))
    log_s = log_within + sigma * log_d[codes] + log_outside
    return log_s, log_within, float(log_outside)


def solve_price_equilibrium(
    mc: np.ndarray,
    eta: np.ndarray,
    alpha: float,
    sigma: float,
    nests: Sequence[Hashable],
    owners: Sequence[Hashable],
    tol: float = EQUILIBRIUM_TOL,
    max_iter: int = EQUILIBRIUM_MAX_ITER,
) -> np.ndarray:
    """Bertrand-Nash log prices of one market by damped fixed-point iteration
    on the Lerner indices

    Args:
        mc:  np.ndarray
            (n,) marginal costs (> 0)
        eta:  np.ndarray
            (n,) appeals
        alpha, sigma:  float
            Demand parameters
        nests:  Sequence[Hashable]
            (n,) nest labels
        owners:  Sequence[Hashable]
            (n,) owning plant per product

    Returns:
        log_prices:  np.ndarray
            p with max |p_new - p| < tol at termination
    """
    mc = np.asarray(mc, dtype=float)
    if (mc <= 0).any():
        raise ConfigurationError("Marginal costs must be positive")
    log_mc = np.log(mc)
    nests = np.asarray(nests)
    owners = np.asarray(owners)
    p = log_mc + np.log(2.0)
    damping = 1.0
    last = np.inf
    for iteration in range(1, max_iter + 1):
        shares, within, _ = nested_share_map(p, eta, alpha, sigma, nests)
        jac = share_derivatives(alpha, sigma, MarketShares(shares=shares, nests=nests, within=within))
        nu, _ = solve_lerner(jac.matrix, shares, owners)
        target = log_mc - np.log(1.0 - np.clip(nu, LERNER_CLIP, 1.0 - LERNER_CLIP))
        step = target - p
        residual = float(np.max(np.abs(step)))
        log.debug4("Equilibrium iteration %d: max |dp| = %.3e", iteration, residual)
        if residual < tol:
            return target
        if residual > last:
            damping = max(damping / 2.0, 0.05)
        last = residual
        p = p + damping * step
    raise EquilibriumError(max_iter, last)


def generate_synthetic(
    config: Optional[SynthConfig] = None,
    seed: Optional[int] = None,
) -> Tuple[Panel, SynthTruth]:
    """Simulate a panel with known demand, cost and production parameters

    Args:
        config:  Optional[SynthConfig]
            Generator parameters
        seed:  Optional[int]
            Overrides config.seed

    Returns:
        panel:  Panel
            Same schema as an ingested panel
        truth:  SynthTruth
            Per-observation truth and the parameter vector
    """
    config = config or SynthConfig()
    seed = config.seed if seed is None else seed
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(6)]
    rng_struct, rng_cost, rng_demand, rng_inputs, rng_purchase, rng_drop = streams
    years = config.first_year + np.arange(config.n_years)

    # Market structure
    markets = [f"{801 + h:03d}" for h in range(config.n_markets)]
    nests = [f"{market}{11 + g:02d}" for market in markets for g in range(config.nests_per_market)]
    popularity = rng_struct.lognormal(0.0, config.nest_popularity_sd, len(nests))
    popularity /= popularity.sum()
    probs = np.asarray(config.products_per_plant, dtype=float)
    probs /= probs.sum()
    plant_ids = [f"P{i:04d}" for i in range(config.n_plants)]
    n_products = rng_struct.choice(np.arange(1, len(probs) + 1), size=config.n_plants, p=probs)
    n_products = np.minimum(n_products, len(nests))
    product_plant, product_nest = [], []
    for i, plant in enumerate(plant_ids):
        chosen = rng_struct.choice(len(nests), size=n_products[i], replace=False, p=popularity)
        for g in sorted(chosen):
            product_plant.append(i)
            product_nest.append(g)
    product_plant = np.array(product_plant)
    product_nest = np.array(product_nest)
    active = _activity(product_plant, config, rng_drop)
    log.debug(
        "Synthetic structure: %d plants, %d products, %d nests", config.n_plants, len(product_plant), len(nests)
    )

    # Plant cost levels, productivity and appeal
    psi = rng_cost.normal(0.0, config.psi_sd, config.n_plants)
    omega_plant = rng_cost.normal(0.0, config.omega_sd * np.sqrt(0.7), config.n_plants)
    omega_year = rng_cost.normal(0.0, config.omega_sd * np.sqrt(0.3), (config.n_plants, config.n_years))
    omega_bar = omega_plant[:, None] + omega_year
    omega = omega_bar[product_plant] + config.omega_within_sd * rng_cost.normal(
        size=(len(product_plant), config.n_years)
    )
    cost_index = (psi[:, None] - omega_bar) / np.sqrt(config.psi_sd**2 + config.omega_sd**2)
    xi = rng_demand.normal(size=(len(nests), config.n_years))
    idio = rng_demand.normal(size=(len(product_plant), config.n_years))
    eta = config.appeal_mean + config.eta_sd * (
        config.rho * cost_index[product_plant]
        + np.sqrt(1.0 - config.rho**2) * (xi[product_nest] + idio) / np.sqrt(2.0)
    )

    # Input codes and their price paths
    codes = _input_codes(nests, config, rng_cost)
    eta_bar = np.zeros((len(nests), config.n_years))
    for g in range(len(nests)):
        members = product_nest == g
        for t in range(config.n_years):
            alive = members & active[:, t]
            eta_bar[g, t] = eta[alive, t].mean() if alive.any() else 0.0
    shocks = rng_cost.normal(0.0, config.cost_shock_sd, (len(codes), config.n_years))
    growth = shocks + config.demand_feedback * codes["machinery_share"].to_numpy()[:, None] * eta_bar[
        codes["nest_index"].to_numpy()
    ]
    growth[:, 0] = shocks[:, 0]
    log_uv = rng_cost.normal(0.0, 0.5, len(codes))[:, None] + np.cumsum(growth, axis=1)
    nest_growth = np.vstack(
        [growth[codes["nest_index"].to_numpy() == g].mean(axis=0) for g in range(len(nests))]
    )
    nest_shift = nest_growth + np.hstack([np.zeros((len(nests), 1)), nest_growth[:, :-1]])

    cost_level = np.empty((config.n_plants, config.n_years))
    for t in range(config.n_years):
        shift = pd.Series(nest_shift[product_nest[active[:, t]], t]).groupby(
            product_plant[active[:, t]]
        ).mean()
        cost_level[:, t] = psi
        cost_level[shift.index.to_numpy(), t] += config.gamma * shift.to_numpy()
    log_mc = cost_level[product_plant] - omega

    # Equilibrium by market-year
    market_of_nest = np.array([nest[: constants.MARKET_LENGTH] for nest in nests])
    product_market = market_of_nest[product_nest]
    log_price = np.full(log_mc.shape, np.nan)
    share = np.full(log_mc.shape, np.nan)
    within = np.full(log_mc.shape, np.nan)
    outside = np.full(log_mc.shape, np.nan)
    lerner = np.full(log_mc.shape, np.nan)
    size_rows = []
    for t, year in enumerate(years):
        for market in markets:
            idx = np.flatnonzero((product_market == market) & active[:, t])
            if not len(idx):
                continue
            owners = product_plant[idx]
            labels = product_nest[idx]
            p = solve_price_equilibrium(
                np.exp(log_mc[idx, t]), eta[idx, t], config.alpha, config.sigma, labels, owners
            )
            s, sw, s0 = nested_share_map(p, eta[idx, t], config.alpha, config.sigma, labels)
            jac = share_derivatives(config.alpha, config.sigma, MarketShares(shares=s, nests=labels, within=sw))
            nu, _ = solve_lerner(jac.matrix, s, owners)
            log_price[idx, t] = p
            share[idx, t] = s
            within[idx, t] = sw
            outside[idx, t] = s0
            lerner[idx, t] = nu
            size_rows.append((market, int(year), config.market_size))
        log.debug2("Solved equilibria for year %d", year)

    # Outputs, allocation shares and plant inputs
    revenue = share * config.market_size
    quantity = revenue / np.exp(log_price)
    cost_value = np.exp(log_mc) * quantity
    obs = pd.DataFrame(
        {
            "product": np.repeat(np.arange(len(product_plant)), config.n_years),
            "t": np.tile(np.arange(config.n_years), len(product_plant)),
        }
    )
    obs = obs[active[obs["product"].to_numpy(), obs["t"].to_numpy()]].reset_index(drop=True)
    prod, t_idx = obs["product"].to_numpy(), obs["t"].to_numpy()
    plant_idx = product_plant[prod]
    obs["plant"] = plant_idx
    obs["plant_id"] = np.array(plant_ids)[plant_idx]
    obs["year"] = years[t_idx]
    obs["product_code"] = np.array(nests)[product_nest[prod]]
    obs["quantity"] = quantity[prod, t_idx]
    obs["revenue"] = revenue[prod, t_idx]
    obs["cost_value"] = cost_value[prod, t_idx]
    obs["S"] = obs["cost_value"] / obs.groupby(["plant", "t"])["cost_value"].transform("sum")

    log_l = rng_inputs.normal(3.0, 0.5, config.n_plants)[:, None] + rng_inputs.normal(
        0.0, 0.1, (config.n_plants, config.n_years)
    )
    log_k = rng_inputs.normal(4.0, 0.7, config.n_plants)[:, None] + rng_inputs.normal(
        0.0, 0.1, (config.n_plants, config.n_years)
    )
    beta_sum = config.beta_L + config.beta_K + config.beta_M
    obs["ln_l"] = log_l[plant_idx, t_idx]
    obs["ln_k"] = log_k[plant_idx, t_idx]
    obs["omega_draw"] = omega[prod, t_idx]
    obs["net_output"] = np.log(obs["quantity"]) - beta_sum * np.log(obs["S"])
    plant_mean = obs.groupby(["plant", "t"])[["net_output", "omega_draw"]].transform("mean")
    obs["ln_m"] = (
        plant_mean["net_output"]
        - config.beta_L * obs["ln_l"]
        - config.beta_K * obs["ln_k"]
        - plant_mean["omega_draw"]
    ) / config.beta_M
    obs["omega"] = (
        np.log(obs["quantity"])
        - config.beta_L * (np.log(obs["S"]) + obs["ln_l"])
        - config.beta_K * (np.log(obs["S"]) + obs["ln_k"])
        - config.beta_M * (np.log(obs["S"]) + obs["ln_m"])
    )

    inputs = (
        obs.groupby(["plant_id", "year"], as_index=False)[["ln_l", "ln_k", "ln_m"]]
        .first()
        .assign(
            labor=lambda f: np.exp(f["ln_l"]),
            capital=lambda f: np.exp(f["ln_k"]),
            materials=lambda f: np.exp(f["ln_m"]),
            sector=constants.SECTOR_MACHINERY,
        )
    )
    purchases, other_inputs = _purchases(obs, codes, log_uv, years, config, rng_purchase)
    inputs = pd.concat(
        [inputs.loc[:, list(constants.INPUT_COLUMNS)], other_inputs], ignore_index=True
    )

    panel = Panel.build(
        obs.loc[:, ["plant_id", "year", "product_code", "quantity", "revenue"]],
        inputs,
        purchases,
    )
    truth_frame = pd.DataFrame(
        {
            "plant_id": obs["plant_id"],
            "year": obs["year"],
            "product_code": obs["product_code"],
            "eta": eta[prod, t_idx],
            "omega": obs["omega"],
            "mc": np.exp(log_mc[prod, t_idx]),
            "log_price": log_price[prod, t_idx],
            "share": share[prod, t_idx],
            "within_share": within[prod, t_idx],
            "outside_share": outside[prod, t_idx],
            "lerner": lerner[prod, t_idx],
            "S": obs["S"],
        }
    ).sort_values(["plant_id", "year", "product_code"]).reset_index(drop=True)
    market_sizes = pd.DataFrame(size_rows, columns=list(constants.MARKET_SIZE_COLUMNS))
    truth = SynthTruth(
        frame=truth_frame,
        market_sizes=market_sizes,
        input_codes=codes.loc[:, ["input_code", "nest5", "machinery_share"]],
        params={
            "alpha": config.alpha,
            "sigma": config.sigma,
            "beta_L": config.beta_L,
            "beta_K": config.beta_K,
            "beta_M": config.beta_M,
            "rho": config.rho,
            "seed": seed,
        },
    )
    log.info(
        "Generated synthetic panel: %d observations, %d purchases (seed %d)",
        len(panel.observations),
        len(panel.purchases),
        seed,
    )
    return panel, truth


def write_synthetic(panel: Panel, truth: SynthTruth, outdir: str) -> Dict[str, str]:
    """Write the panel CSVs plus market_size.csv and truth.csv"""
    paths = write_panel(panel, outdir)
    paths["market_size"] = os.path.join(outdir, "market_size.csv")
    paths["truth"] = os.path.join(outdir, "truth.csv")
    truth.market_sizes.to_csv(
        paths["market_size"], index=False, float_format="%.17g", lineterminator="\n"
    )
    truth.frame.to_csv(paths["truth"], index=False, float_format="%.17g", lineterminator="\n")
    return paths


## Implementation Details ######################################################


def _activity(product_plant: np.ndarray, config: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    """(n_products, n_years) mask; multi-product plants drop products at
    drop_rate and always keep at least one
    """
    active = np.ones((len(product_plant), config.n_years), dtype=bool)
    draws = rng.random((len(product_plant), config.n_years))
    for t in range(1, config.n_years):
        active[:, t] = active[:, t - 1]
        if config.drop_rate <= 0:
            continue
        for plant in np.unique(product_plant):
            idx = np.flatnonzero((product_plant == plant) & active[:, t - 1])
            if len(idx) < 2:
                continue
            dropped = draws[idx, t] < config.drop_rate
            if dropped.all():
                dropped[np.argmax(draws[idx, t])] = False
            active[idx[dropped], t] = False
    return active


def _input_codes(nests: Sequence[str], config: SynthConfig, rng: np.random.Generator) -> pd.DataFrame:
    rows = []
    for g, nest in enumerate(nests):
        for c in range(config.codes_per_nest):
            rows.append((f"C{nest}{c}", nest, g))
    codes = pd.DataFrame(rows, columns=["input_code", "nest5", "nest_index"])
    codes["machinery_share"] = rng.uniform(0.02, 0.98, len(codes))
    codes["buyer_a"] = rng.integers(0, config.n_other_plants, len(codes))
    codes["buyer_b"] = (codes["buyer_a"] + 1 + rng.integers(0, config.n_other_plants - 1, len(codes))) % (
        config.n_other_plants
    )
    return codes


def _purchases(
    obs: pd.DataFrame,
    codes: pd.DataFrame,
    log_uv: np.ndarray,
    years: np.ndarray,
    config: SynthConfig,
    rng: np.random.Generator,
) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """Machinery plants buy every code of their active nests; two
    non-machinery buyers per code top up value so that the code's machinery
    share equals its target
    """
    plant_factor = rng.normal(0.0, 0.1, (config.n_plants, len(codes)))
    other_factor = rng.normal(0.0, 0.1, (config.n_other_plants, len(codes)))
    code_index = {nest: np.flatnonzero(codes["nest5"].to_numpy() == nest) for nest in codes["nest5"].unique()}
    year_index = {int(year): t for t, year in enumerate(years)}

    buys = obs.loc[:, ["plant", "plant_id", "year", "product_code"]].drop_duplicates()
    rows = []
    for plant, plant_id, year, nest in buys.itertuples(index=False):
        t = year_index[int(year)]
        for c in code_index[nest]:
            qty = float(np.exp(rng.normal(2.0, 0.3)))
            unit_value = float(np.exp(log_uv[c, t] + plant_factor[plant, c]))
            rows.append((plant_id, int(year), codes.at[c, "input_code"], qty, qty * unit_value, c))
    machinery = pd.DataFrame(rows, columns=["plant_id", "year", "input_code", "quantity", "value", "code"])
    machinery_value = machinery.groupby(["code", "year"])["value"].sum()

    other_ids = [f"N{o:03d}" for o in range(config.n_other_plants)]
    rows = []
    for c in range(len(codes)):
        target = codes.at[c, "machinery_share"]
        for year in years:
            base = machinery_value.get((c, int(year)), 0.0)
            if base > 0:
                total_other = base * (1.0 - target) / target
            else:
                total_other = float(np.exp(rng.normal(3.0, 0.3)))
            t = year_index[int(year)]
            for buyer in (codes.at[c, "buyer_a"], codes.at[c, "buyer_b"]):
                value = total_other / 2.0
                unit_value = float(np.exp(log_uv[c, t] + other_factor[buyer, c]))
                rows.append((other_ids[buyer], int(year), codes.at[c, "input_code"], value / unit_value, value))
    other = pd.DataFrame(rows, columns=["plant_id", "year", "input_code", "quantity", "value"])
    other = other.groupby(["plant_id", "year", "input_code"], as_index=False)[["quantity", "value"]].sum()

    purchases = pd.concat(
        [machinery.loc[:, list(constants.PURCHASE_COLUMNS)], other], ignore_index=True
    )
    other_plants = other.loc[:, ["plant_id", "year"]].drop_duplicates().reset_index(drop=True)
    other_inputs = other_plants.assign(
        labor=np.exp(rng.normal(3.0, 0.5, len(other_plants))),
        capital=np.exp(rng.normal(4.0, 0.5, len(other_plants))),
        materials=np.exp(rng.normal(4.0, 0.5, len(other_plants))),
        sector=constants.SECTOR_OTHER,
    )
    return purchases, other_inputs
