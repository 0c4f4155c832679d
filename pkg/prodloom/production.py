"""
Product-level production function y = beta_L l + beta_K k + beta_M m + omega
with product inputs built by applying the allocation share S to each plant
input, estimated by two-step linear GMM with plant-clustered weighting and
plant block-bootstrap inference.
"""

# Standard
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple
import hashlib
import json

# Third Party
import joblib as jbl
import numpy as np
import pandas as pd

# Local
from . import constants, regression
from .conduct import CostAllocation
from .demand import DemandEstimate, is_admissible
from .errors import (
    BootstrapDegeneracyError,
    ConfigurationError,
    EstimationError,
    IdentificationError,
    JoinError,
    ProdloomError,
    SingularDesignError,
)
from .instruments import InstrumentTable
from .log import log
from .panel import Panel

# Condition number above which the moment covariance is ridge-repaired
MAX_WEIGHT_CONDITION = 1e12
RIDGE_SCALE = 1e-8
MODE_NONPARAMETRIC = "nonparametric"
MODE_SEMIPARAMETRIC = "semi-parametric"
BOOTSTRAP_MODES = (MODE_NONPARAMETRIC, MODE_SEMIPARAMETRIC)

## Types #######################################################################


@dataclass(frozen=True)
class MomentSpec:
    """Moment conditions of the production GMM

    Attributes:
        regressors:  Tuple[str, ...]
            Input columns with a coefficient
        self_instrumented:  Tuple[str, ...]
            Regressors that serve as their own instruments
        instruments:  Tuple[str, ...]
            Excluded instruments (Z, Z_lag, m_lag)
        constant:  bool
            Include an intercept (regressor and instrument)
        fixed_effects:  Tuple[str, ...]
            Categorical columns entered as dummies in both blocks
        preset:  str
            Label of the named instrument menu, if any
    """

    regressors: Tuple[str, ...] = ("l", "k", "m")
    self_instrumented: Tuple[str, ...] = ("l", "k")
    instruments: Tuple[str, ...] = ("Z", "Z_lag")
    constant: bool = True
    fixed_effects: Tuple[str, ...] = ()
    cluster: str = "plant_id"
    preset: str = "col3"

    def __post_init__(self):
        unknown = [name for name in self.self_instrumented if name not in self.regressors]
        if unknown:
            raise ConfigurationError(f"Self-instrumented column(s) not among regressors: {unknown}")

    @property
    def instrument_columns(self) -> Tuple[str, ...]:
        return tuple(self.self_instrumented) + tuple(self.instruments)

    def spec_hash(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:12]


PRESETS: Dict[str, MomentSpec] = {
    "col1": MomentSpec(instruments=("Z", "Z_lag", "m_lag"), preset="col1"),
    "col2": MomentSpec(instruments=("m_lag",), preset="col2"),
    "col3": MomentSpec(instruments=("Z", "Z_lag"), preset="col3"),
}


def moment_preset(name: str, **overrides) -> MomentSpec:
    """Named instrument menu, optionally with field overrides"""
    if name not in PRESETS:
        raise ConfigurationError(f"Unknown GMM preset '{name}' (choose from {sorted(PRESETS)})")
    return replace(PRESETS[name], **overrides) if overrides else PRESETS[name]


@dataclass(frozen=True, eq=False)
class ProductInputTable:
    """plant_id, year, product_code, nest5, y, l, k, m, S, ln_revenue, m_lag
    and optionally Z, Z_lag
    """

    frame: pd.DataFrame

    def __len__(self) -> int:
        return len(self.frame)


@dataclass(frozen=True, eq=False)
class ProductionEstimate:
    beta_L: float
    beta_K: float
    beta_M: float
    coef: np.ndarray
    names: Tuple[str, ...]
    vcov_analytic: np.ndarray
    weight: np.ndarray
    n_obs: int
    J_stat: float = float("nan")
    J_df: int = 0
    ridge: float = 0.0
    se_bootstrap: Optional[Dict[str, float]] = None
    spec_hash: str = ""
    preset: str = ""

    @property
    def beta(self) -> np.ndarray:
        return np.array([self.beta_L, self.beta_K, self.beta_M])

    @property
    def se_analytic(self) -> Dict[str, float]:
        return dict(zip(self.names, np.sqrt(np.diag(self.vcov_analytic))))

    def with_bootstrap(self, se: Mapping[str, float]) -> "ProductionEstimate":
        return replace(self, se_bootstrap=dict(se))

    def to_row(self) -> Dict[str, object]:
        se = self.se_analytic
        row = {
            "preset": self.preset,
            "beta_L": self.beta_L,
            "beta_K": self.beta_K,
            "beta_M": self.beta_M,
            "se_L": se.get("l", float("nan")),
            "se_K": se.get("k", float("nan")),
            "se_M": se.get("m", float("nan")),
            "J_stat": self.J_stat,
            "J_df": self.J_df,
            "n_obs": self.n_obs,
            "ridge": self.ridge,
            "spec_hash": self.spec_hash,
        }
        if self.se_bootstrap:
            row.update({f"boot_se_{key}": val for key, val in sorted(self.se_bootstrap.items())})
        return row


@dataclass(frozen=True, eq=False)
class BootstrapResult:
    """SE table (parameter, estimate, se) and the per-replication draws
    (replication, parameter, value)
    """

    se: pd.DataFrame
    draws: pd.DataFrame
    n_failed: int
    n_total: int
    mode: str
    seed: int

    def se_map(self) -> Dict[str, float]:
        return dict(zip(self.se["parameter"], self.se["se"]))


## Public ######################################################################


def build_product_inputs(panel: Panel, allocations: CostAllocation) -> ProductInputTable:
    """Apply each product's allocation share to the plant's input totals

    Args:
        panel:  Panel
            Source panel (quantities, revenues, input totals)
        allocations:  CostAllocation
            S per plant-year-product

    Returns:
        table:  ProductInputTable
            y = ln q, l = ln(S L), k = ln(S K), m = ln(S M) and m_lag, the
            same plant-product's m at t-1. Plant-years whose allocation is
            undefined (non-positive mc) are left out.
    """
    keys = ["plant_id", "year", "product_code"]
    obs = panel.observations.loc[:, keys + ["nest5", "market3", "quantity", "revenue"]]
    alloc = allocations.frame.loc[:, keys + ["S"]]
    merged = obs.merge(alloc, on=keys, how="left", indicator=True)
    missing = merged["_merge"] != "both"
    if missing.any():
        plant_years = set(zip(merged.loc[missing, "plant_id"], merged.loc[missing, "year"]))
        raise JoinError("allocation rows", plant_years)
    merged = merged.drop(columns="_merge")
    undefined = merged["S"].isna().groupby([merged["plant_id"], merged["year"]]).transform("any")
    if undefined.any():
        log.warning(
            "Excluding %d observations from plant-years with undefined allocation shares",
            int(undefined.sum()),
        )
        merged = merged[~undefined]

    inputs = panel.inputs.loc[:, ["plant_id", "year", "labor", "capital", "materials"]]
    merged = merged.merge(inputs, on=["plant_id", "year"], how="left")
    if merged["labor"].isna().any():
        plant_years = set(
            zip(merged.loc[merged["labor"].isna(), "plant_id"], merged.loc[merged["labor"].isna(), "year"])
        )
        raise JoinError("input totals", plant_years)

    log_s = np.log(merged["S"].to_numpy())
    frame = merged.loc[:, keys + ["nest5", "market3", "S"]].copy()
    frame["y"] = np.log(merged["quantity"].to_numpy())
    frame["l"] = log_s + np.log(merged["labor"].to_numpy())
    frame["k"] = log_s + np.log(merged["capital"].to_numpy())
    frame["m"] = log_s + np.log(merged["materials"].to_numpy())
    frame["ln_revenue"] = np.log(merged["revenue"].to_numpy())
    lagged = frame.loc[:, ["plant_id", "year", "product_code", "m"]].assign(
        year=frame["year"] + 1
    ).rename(columns={"m": "m_lag"})
    frame = frame.merge(lagged, on=keys, how="left")
    frame = frame.sort_values(keys).reset_index(drop=True)
    log.debug("Built product inputs for %d observations", len(frame))
    return ProductInputTable(frame)


def attach_instruments(table: ProductInputTable, instruments: InstrumentTable) -> ProductInputTable:
    """Add Z and Z_lag by nest-year (missing where the instrument is absent)"""
    frame = table.frame.drop(columns=[c for c in ("Z", "Z_lag") if c in table.frame.columns])
    frame = frame.merge(instruments.with_lag(), on=["nest5", "year"], how="left")
    return ProductInputTable(frame.sort_values(["plant_id", "year", "product_code"]).reset_index(drop=True))


def estimate_gmm(data: ProductInputTable, spec: Optional[MomentSpec] = None) -> ProductionEstimate:
    """Two-step linear GMM

    Args:
        data:  ProductInputTable
            Product inputs with the instrument columns the spec names
        spec:  Optional[MomentSpec]
            Moment conditions; defaults to the col3 preset

    Returns:
        estimate:  ProductionEstimate
            Coefficients, analytic covariance (G' S^-1 G)^-1 / n with S
            clustered by plant, Hansen J when over-identified
    """
    spec = spec or PRESETS["col3"]
    y, x, z, x_names, z_names, sample = _gmm_arrays(data, spec)
    n = len(y)
    if z.shape[1] < x.shape[1]:
        raise IdentificationError(
            f"{z.shape[1]} instrument(s) for {x.shape[1]} parameter(s) in GMM preset {spec.preset}"
        )
    regression.require_full_rank(z, z_names, "GMM instrument matrix")
    regression.require_full_rank(x, x_names, "GMM regressor matrix")

    # Step 1: 2SLS weighting
    w1 = _inverse(z.T @ z / n, z_names, "GMM instrument cross-product")
    coef1 = _linear_gmm(y, x, z, w1, x_names)
    u1 = y - x @ coef1

    # Step 2: plant-clustered optimal weighting
    s_mat, ridge = _moment_covariance(z, u1, sample[spec.cluster].to_numpy(), n)
    w2 = _inverse(s_mat, z_names, "GMM moment covariance")
    coef = _linear_gmm(y, x, z, w2, x_names)
    u2 = y - x @ coef
    g_mat = z.T @ x / n
    vcov = _inverse(g_mat.T @ w2 @ g_mat, x_names, "GMM information matrix") / n
    vcov = (vcov + vcov.T) / 2

    j_df = z.shape[1] - x.shape[1]
    j_stat = float("nan")
    if j_df > 0:
        g_bar = z.T @ u2 / n
        j_stat = float(n * g_bar @ w2 @ g_bar)
    named = dict(zip(x_names, coef))
    est = ProductionEstimate(
        beta_L=float(named.get("l", np.nan)),
        beta_K=float(named.get("k", np.nan)),
        beta_M=float(named.get("m", np.nan)),
        coef=coef,
        names=tuple(x_names),
        vcov_analytic=vcov,
        weight=w2,
        n_obs=n,
        J_stat=j_stat,
        J_df=j_df,
        ridge=ridge,
        spec_hash=spec.spec_hash(),
        preset=spec.preset,
    )
    log.info(
        "GMM %s: beta=(%.4f, %.4f, %.4f) n=%d J=%.3f",
        spec.preset,
        est.beta_L,
        est.beta_K,
        est.beta_M,
        n,
        j_stat,
    )
    return est


def estimate_presets(
    data: ProductInputTable,
    base: Optional[MomentSpec] = None,
    names: Optional[Sequence[str]] = None,
) -> Dict[str, ProductionEstimate]:
    """Estimate every named instrument menu on the same product inputs

    Args:
        data:  ProductInputTable
            Product inputs with Z, Z_lag and m_lag attached
        base:  Optional[MomentSpec]
            Source of the constant, fixed-effect and cluster settings shared
            by all presets
        names:  Optional[Sequence[str]]
            Presets to run (all of PRESETS by default)

    Returns:
        estimates:  Dict[str, ProductionEstimate]
            Keyed by preset name; presets that cannot be identified on this
            sample are left out with a warning
    """
    base = base or PRESETS["col3"]
    estimates = {}
    for name in sorted(names or PRESETS):
        spec = preset_like(base, name)
        try:
            estimates[name] = estimate_gmm(data, spec)
        except EstimationError as err:
            log.warning("GMM preset %s skipped: %s", name, err)
    return estimates


def preset_like(base: MomentSpec, name: str) -> MomentSpec:
    """Preset `name` with the constant, fixed effects and cluster of `base`"""
    return moment_preset(
        name, constant=base.constant, fixed_effects=base.fixed_effects, cluster=base.cluster
    )


def gmm_objective(
    data: ProductInputTable,
    spec: MomentSpec,
    coef: np.ndarray,
    weight: np.ndarray,
) -> float:
    """n * gbar(coef)' W gbar(coef) on the estimation sample of `spec`"""
    y, x, z, _, _, _ = _gmm_arrays(data, spec)
    g_bar = z.T @ (y - x @ np.asarray(coef, dtype=float)) / len(y)
    return float(len(y) * g_bar @ weight @ g_bar)


def resample_plants(panel: Panel, draws: Sequence[str]) -> Panel:
    """Panel made of the drawn plants, each copy relabelled so repeated draws
    are distinct plants. Plants without output rows (other purchasers) are
    kept as they are.
    """
    producing = set(panel.observations["plant_id"])
    obs_parts, input_parts, purchase_parts = [], [], []
    by_plant_obs = dict(tuple(panel.observations.groupby("plant_id")))
    by_plant_inputs = dict(tuple(panel.inputs.groupby("plant_id")))
    by_plant_purchases = dict(tuple(panel.purchases.groupby("plant_id")))
    for position, plant in enumerate(draws):
        label = f"{plant}~{position:05d}"
        obs_parts.append(by_plant_obs[plant].assign(plant_id=label))
        if plant in by_plant_inputs:
            input_parts.append(by_plant_inputs[plant].assign(plant_id=label))
        if plant in by_plant_purchases:
            purchase_parts.append(by_plant_purchases[plant].assign(plant_id=label))
    others_inputs = panel.inputs[~panel.inputs["plant_id"].isin(producing)]
    others_purchases = panel.purchases[~panel.purchases["plant_id"].isin(producing)]
    return Panel.build(
        pd.concat(obs_parts, ignore_index=True),
        pd.concat(input_parts + [others_inputs], ignore_index=True),
        pd.concat(purchase_parts + [others_purchases], ignore_index=True),
    )


def block_bootstrap(
    panel: Panel,
    pipeline: Callable[[Panel, Optional[Tuple[float, float]]], Mapping[str, float]],
    B: int,
    seed: int,
    mode: str = MODE_NONPARAMETRIC,
    demand: Optional[DemandEstimate] = None,
    n_jobs: int = 1,
    replication_seeds: Optional[Sequence[int]] = None,
) -> BootstrapResult:
    """Plant block bootstrap of a replayable estimation closure

    Args:
        panel:  Panel
            Estimation panel
        pipeline:  Callable
            pipeline(panel, demand_params) -> {parameter: value}. demand_params
            is None in nonparametric mode and a drawn (alpha, sigma) in
            semi-parametric mode.
        B:  int
            Number of replications (>= 2)
        seed:  int
            Root seed; replication r uses the r-th spawned child stream
        mode:  str
            nonparametric or semi-parametric
        demand:  Optional[DemandEstimate]
            Point estimate and vcov for semi-parametric draws
        n_jobs:  int
            joblib worker count
        replication_seeds:  Optional[Sequence[int]]
            Explicit per-replication seeds (overrides spawning from `seed`)

    Returns:
        result:  BootstrapResult
            SE = standard deviation (ddof=1) over successful replications
    """
    if B < 2:
        raise ConfigurationError("Bootstrap needs B >= 2")
    if mode not in BOOTSTRAP_MODES:
        raise ConfigurationError(f"Unknown bootstrap mode '{mode}'")
    if mode == MODE_SEMIPARAMETRIC and demand is None:
        raise ConfigurationError("Semi-parametric bootstrap needs a demand estimate")
    if replication_seeds is not None:
        if len(replication_seeds) != B:
            raise ConfigurationError("replication_seeds must have B entries")
        streams = [np.random.SeedSequence(int(s)) for s in replication_seeds]
    else:
        streams = np.random.SeedSequence(seed).spawn(B)
    plants = panel.plants
    center = None
    if demand is not None:
        center = (np.array([demand.alpha, demand.sigma]), np.asarray(demand.vcov, dtype=float))

    log.info("Running %d %s bootstrap replications (seed %s, %d jobs)", B, mode, seed, n_jobs)
    outcomes = jbl.Parallel(n_jobs=n_jobs)(
        jbl.delayed(_replicate)(panel, plants, pipeline, stream, mode, center, rep)
        for rep, stream in enumerate(streams)
    )

    rows: List[Tuple[int, str, float]] = []
    n_failed = 0
    for rep, outcome in enumerate(outcomes):
        if outcome is None:
            n_failed += 1
            continue
        for name, value in sorted(outcome.items()):
            rows.append((rep, name, float(value)))
    if n_failed > constants.MAX_BOOTSTRAP_FAILURE_RATE * B or B - n_failed < 2:
        raise BootstrapDegeneracyError(n_failed, B)
    if n_failed:
        log.warning("Skipped %d of %d bootstrap replications", n_failed, B)
    draws = pd.DataFrame(rows, columns=["replication", "parameter", "value"])
    summary = draws.groupby("parameter")["value"].agg(
        mean="mean", se=lambda v: float(np.std(v, ddof=1)), n_ok="size"
    )
    se = summary.reset_index().sort_values("parameter").reset_index(drop=True)
    return BootstrapResult(se=se, draws=draws, n_failed=n_failed, n_total=B, mode=mode, seed=seed)


## Implementation Details ######################################################


def _gmm_arrays(data: ProductInputTable, spec: MomentSpec):
    needed = list(dict.fromkeys(list(spec.regressors) + list(spec.instrument_columns)))
    missing = [c for c in needed + list(spec.fixed_effects) if c not in data.frame.columns]
    if missing:
        raise JoinError("product-input column(s)", [(name,) for name in missing])
    sample = data.frame.dropna(subset=needed).reset_index(drop=True)
    if sample.empty:
        raise IdentificationError(f"No complete observations for GMM preset {spec.preset}")
    exog, exog_names = regression.dummy_matrix(sample, spec.fixed_effects, constant=spec.constant)
    x = np.hstack([sample.loc[:, list(spec.regressors)].to_numpy(dtype=float), exog])
    z = np.hstack([sample.loc[:, list(spec.instrument_columns)].to_numpy(dtype=float), exog])
    y = sample["y"].to_numpy(dtype=float)
    x_names = list(spec.regressors) + exog_names
    z_names = list(spec.instrument_columns) + exog_names
    return y, x, z, x_names, z_names, sample


def _linear_gmm(
    y: np.ndarray, x: np.ndarray, z: np.ndarray, weight: np.ndarray, names: Sequence[str]
) -> np.ndarray:
    zx = z.T @ x
    zy = z.T @ y
    try:
        return np.linalg.solve(zx.T @ weight @ zx, zx.T @ weight @ zy)
    except np.linalg.LinAlgError as err:
        raise SingularDesignError(names, "GMM normal equations") from err


def _inverse(matrix: np.ndarray, names: Sequence[str], context: str) -> np.ndarray:
    try:
        return np.linalg.inv(matrix)
    except np.linalg.LinAlgError as err:
        raise SingularDesignError(names, context) from err


def _moment_covariance(
    z: np.ndarray, resid: np.ndarray, clusters: np.ndarray, n: int
) -> Tuple[np.ndarray, float]:
    """Plant-clustered moment covariance, ridge-repaired when near singular"""
    scores = z * resid[:, None]
    codes, uniques = pd.factorize(pd.Series(clusters), sort=True)
    sums = np.zeros((len(uniques), z.shape[1]))
    np.add.at(sums, codes, scores)
    s_mat = sums.T @ sums / n
    ridge = 0.0
    if np.linalg.cond(s_mat) > MAX_WEIGHT_CONDITION:
        ridge = RIDGE_SCALE * max(np.trace(s_mat) / s_mat.shape[0], np.finfo(float).tiny)
        log.warning("Moment covariance near singular; adding ridge %.3e", ridge)
        s_mat = s_mat + ridge * np.eye(s_mat.shape[0])
    return s_mat, ridge


def _replicate(
    panel: Panel,
    plants: Sequence[str],
    pipeline: Callable,
    stream: np.random.SeedSequence,
    mode: str,
    center: Optional[Tuple[np.ndarray, np.ndarray]],
    rep: int,
) -> Optional[Mapping[str, float]]:
    rng = np.random.default_rng(stream)
    draws = rng.choice(np.asarray(plants), size=len(plants), replace=True)
    demand_params = None
    if mode == MODE_SEMIPARAMETRIC:
        mean, cov = center
        alpha, sigma = rng.multivariate_normal(mean, cov)
        if not is_admissible(alpha, sigma):
            log.debug2("Replication %d: inadmissible draw (%.4f, %.4f)", rep, alpha, sigma)
            return None
        demand_params = (float(alpha), float(sigma))
    try:
        resampled = resample_plants(panel, list(draws))
        return dict(pipeline(resampled, demand_params))
    except (ProdloomError, np.linalg.LinAlgError) as err:
        log.debug2("Replication %d failed: %s", rep, err)
        return None
