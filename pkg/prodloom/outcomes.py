"""
Downstream outcomes: product-level TFPR, plant-level efficiency-gain bounds
from dropping the lowest-TFPR product, and the product-discontinuation probit
with its 1-SD marginal effect.
"""

# Standard
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple, Union
import hashlib
import json

# Third Party
import numpy as np
import pandas as pd
import scipy.special
import scipy.stats

# Local
from . import constants, regression
from .conduct import CostAllocation
from .errors import (
    ConfigurationError,
    ConvergenceError,
    SeparationError,
    SingularDesignError,
    UndefinedStatisticError,
)
from .log import log
from .panel import Panel
from .production import ProductInputTable, ProductionEstimate

ME_AT_MEANS = "at_means"
ME_AVERAGE = "average"
GAIN_RULE = "lower=proportional reallocation; upper=reallocation to max-tfpr product"
# Largest absolute index value before the probit counts as diverging
DIVERGENCE_BOUND = 30.0
# Newton steps below this (relative to the coefficients) are rounding noise
STEP_FLOOR = 1e-14

## Types #######################################################################


@dataclass(frozen=True, eq=False)
class TfprTable:
    """plant_id, year, product_code, tfpr, tfpr_z"""

    frame: pd.DataFrame
    mean: float
    sd: float

    def to_csv(self, path: str):
        self.frame.loc[:, ["plant_id", "year", "product_code", "tfpr", "tfpr_z"]].to_csv(
            path, index=False, float_format="%.17g", lineterminator="\n"
        )


@dataclass(frozen=True)
class ProbitSpec:
    """Probit design

    Attributes:
        controls:  Tuple[str, ...]
            Control columns of the drop sample
        year_effects:  bool
            Add year dummies (first year omitted)
        me_kind:  str
            at_means or average
    """

    controls: Tuple[str, ...] = ("log_plant_revenue", "n_products")
    year_effects: bool = True
    cluster: str = "plant_id"
    max_iter: int = 200
    tol: float = 1e-10
    me_kind: str = ME_AT_MEANS

    def __post_init__(self):
        if self.me_kind not in (ME_AT_MEANS, ME_AVERAGE):
            raise ConfigurationError(f"Unknown marginal-effect kind '{self.me_kind}'")

    def spec_hash(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:12]


@dataclass(frozen=True, eq=False)
class ProbitResult:
    coefficients: pd.Series
    vcov: np.ndarray
    design: np.ndarray
    outcome: np.ndarray
    loglik: float
    iterations: int
    trace: List[float] = field(default_factory=list)
    marginal_effect_1sd: float = float("nan")
    me_se: float = float("nan")
    me_kind: str = ME_AT_MEANS
    psd_repaired: bool = False

    @property
    def names(self) -> List[str]:
        return list(self.coefficients.index)

    @property
    def means(self) -> np.ndarray:
        return self.design.mean(axis=0)

    @property
    def n_obs(self) -> int:
        return len(self.outcome)

    def predict(self, design: Optional[np.ndarray] = None) -> np.ndarray:
        design = self.design if design is None else design
        return scipy.stats.norm.cdf(design @ self.coefficients.to_numpy())


## Public ######################################################################


def compute_tfpr(
    product_inputs: ProductInputTable,
    beta: Union[ProductionEstimate, Sequence[float]],
) -> TfprTable:
    """tfpr = ln revenue - beta_L l - beta_K k - beta_M m, standardized over the
    whole table with the population standard deviation
    """
    if isinstance(beta, ProductionEstimate):
        beta = beta.beta
    beta = np.asarray(beta, dtype=float)
    if not np.isfinite(beta).all():
        raise ConfigurationError("TFPR needs finite production coefficients")
    frame = product_inputs.frame
    tfpr = frame["ln_revenue"].to_numpy() - frame.loc[:, ["l", "k", "m"]].to_numpy() @ beta
    mean = float(np.mean(tfpr))
    sd = float(np.std(tfpr))
    if not sd > 0:
        raise UndefinedStatisticError("TFPR has zero dispersion; standardization undefined")
    out = frame.loc[:, ["plant_id", "year", "product_code"]].copy()
    out["tfpr"] = tfpr
    out["tfpr_z"] = (tfpr - mean) / sd
    return TfprTable(frame=out, mean=mean, sd=sd)


def gain_bounds(tfpr: np.ndarray, shares: np.ndarray) -> Tuple[float, float, int]:
    """Lower and upper gain (percent) of one plant-year from dropping its
    lowest-TFPR product

    Returns:
        gain_lower:  float
            Dropped share reallocated proportionally to the remaining products
        gain_upper:  float
            Dropped share reallocated to the remaining product with max tfpr
        dropped:  int
            Position of the dropped product
    """
    tfpr = np.asarray(tfpr, dtype=float)
    shares = np.asarray(shares, dtype=float)
    level = np.exp(tfpr)
    omega = float(shares @ level)
    dropped = int(np.argmin(tfpr))
    keep = np.arange(len(tfpr)) != dropped
    remaining = float(shares[keep] @ level[keep])
    lower = remaining / (1.0 - shares[dropped])
    upper = remaining + shares[dropped] * float(level[keep].max())
    return 100.0 * (lower / omega - 1.0), 100.0 * (upper / omega - 1.0), dropped


def efficiency_gain_bounds(tfpr: TfprTable, allocations: CostAllocation) -> pd.DataFrame:
    """Gain bounds for every plant-year with 2-10 products

    Returns:
        gains:  pd.DataFrame
            plant_id, year, n_products, dropped_product, gain_lower, gain_upper
    """
    keys = ["plant_id", "year", "product_code"]
    merged = tfpr.frame.merge(allocations.frame.loc[:, keys + ["S"]], on=keys, how="inner")
    rows = []
    for (plant, year), group in merged.groupby(["plant_id", "year"], sort=True):
        n_products = len(group)
        if not constants.GAIN_MIN_PRODUCTS <= n_products <= constants.GAIN_MAX_PRODUCTS:
            continue
        lower, upper, dropped = gain_bounds(group["tfpr"].to_numpy(), group["S"].to_numpy())
        rows.append((plant, year, n_products, group["product_code"].iloc[dropped], lower, upper))
    gains = pd.DataFrame(
        rows,
        columns=["plant_id", "year", "n_products", "dropped_product", "gain_lower", "gain_upper"],
    )
    log.debug("Gain bounds for %d plant-years", len(gains))
    return gains


def summarize_gains(gains: pd.DataFrame) -> Tuple[float, float]:
    """Mean lower and upper bound over plant-years (NaN when empty)"""
    if gains.empty:
        return float("nan"), float("nan")
    return float(gains["gain_lower"].mean()), float(gains["gain_upper"].mean())


def build_drop_sample(tfpr: TfprTable, panel: Panel) -> pd.DataFrame:
    """Product-years whose plant is observed at t+1, with the outcome
    dropped = product absent from the plant's t+1 portfolio

    Returns:
        sample:  pd.DataFrame
            plant_id, year, product_code, dropped, tfpr_z, log_plant_revenue,
            n_products
    """
    obs = panel.observations
    keys = ["plant_id", "year", "product_code"]
    plant_years = set(zip(obs["plant_id"], obs["year"]))
    products = set(zip(obs["plant_id"], obs["year"], obs["product_code"]))
    frame = tfpr.frame.loc[:, keys + ["tfpr_z"]].copy()
    survives = np.array(
        [(p, y + 1) in plant_years for p, y in zip(frame["plant_id"], frame["year"])], dtype=bool
    )
    frame = frame[survives].copy()
    frame["dropped"] = [
        0.0 if (p, y + 1, c) in products else 1.0
        for p, y, c in zip(frame["plant_id"], frame["year"], frame["product_code"])
    ]
    revenue = obs.groupby(["plant_id", "year"])["revenue"].sum().rename("plant_revenue").reset_index()
    frame = frame.merge(revenue, on=["plant_id", "year"], how="left")
    frame["log_plant_revenue"] = np.log(frame.pop("plant_revenue"))
    frame["n_products"] = [
        panel.product_counts[(p, y)] for p, y in zip(frame["plant_id"], frame["year"])
    ]
    return frame.sort_values(keys).reset_index(drop=True)


def probit_product_drop(
    sample: pd.DataFrame,
    spec: Optional[ProbitSpec] = None,
) -> ProbitResult:
    """Maximum-likelihood probit of `dropped` on tfpr_z and controls

    Damped Newton iterations (step halving until the log-likelihood does not
    decrease) until the norm of the summed score falls below spec.tol, or
    until the Newton step is lost in rounding. The covariance is the
    plant-clustered sandwich.

    Args:
        sample:  pd.DataFrame
            Output of build_drop_sample (or any frame with the same columns)
        spec:  Optional[ProbitSpec]
            Controls, year effects and convergence settings

    Returns:
        result:  ProbitResult
            Coefficients, clustered vcov and the 1-SD marginal effect
    """
    spec = spec or ProbitSpec()
    y = sample["dropped"].to_numpy(dtype=float)
    x, names = _probit_design(sample, spec)
    _check_separation(y, x, names)
    regression.require_full_rank(x, names, "probit design")

    n = len(y)
    beta = np.zeros(x.shape[1])
    loglik = _loglik(y, x, beta)
    trace = [loglik]
    for iteration in range(1, spec.max_iter + 1):
        score, hessian = _score_hessian(y, x, beta)
        if np.linalg.norm(score) < spec.tol:
            break
        step = _newton_step(hessian, score, names)
        if np.max(np.abs(step)) <= STEP_FLOOR * (1.0 + np.max(np.abs(beta))):
            log.debug3("Probit stopped at rounding: |score| = %.3e", np.linalg.norm(score))
            break
        scale = 1.0
        for _ in range(60):
            candidate = beta + scale * step
            cand_ll = _loglik(y, x, candidate)
            if np.isfinite(cand_ll) and cand_ll >= loglik:
                break
            scale /= 2.0
        else:
            raise ConvergenceError("Probit line search failed", trace)
        beta, loglik = candidate, cand_ll
        trace.append(loglik)
        log.debug4("Probit iteration %d: loglik %.10f step scale %g", iteration, loglik, scale)
        if np.max(np.abs(x @ beta)) > DIVERGENCE_BOUND:
            worst = names[int(np.argmax(np.abs(beta[1:]))) + 1] if len(beta) > 1 else names[0]
            raise SeparationError(worst)
    else:
        score, _ = _score_hessian(y, x, beta)
        if np.linalg.norm(score) >= spec.tol:
            raise ConvergenceError(
                f"Probit did not converge in {spec.max_iter} iterations", trace
            )

    score_i = _scores(y, x, beta)
    _, hessian = _score_hessian(y, x, beta)
    bread = _newton_step(hessian, np.eye(len(beta)), names)
    meat, n_clusters = regression.cluster_meat(score_i, sample[spec.cluster].to_numpy())
    vcov, repaired = regression.sandwich(bread, meat)
    result = ProbitResult(
        coefficients=pd.Series(beta, index=names),
        vcov=vcov,
        design=x,
        outcome=y,
        loglik=loglik,
        iterations=len(trace) - 1,
        trace=trace,
        me_kind=spec.me_kind,
        psd_repaired=repaired,
    )
    me, me_se = marginal_effect_1sd(result, kind=spec.me_kind)
    log.info(
        "Probit: n=%d clusters=%d tfpr_z coef %.4f, 1-SD ME %.3f (%.3f) pp [%s]",
        n,
        n_clusters,
        beta[names.index("tfpr_z")],
        me,
        me_se,
        spec.me_kind,
    )
    return replace(result, marginal_effect_1sd=me, me_se=me_se)


def marginal_effect_1sd(
    probit: ProbitResult,
    sample_means: Optional[np.ndarray] = None,
    kind: str = ME_AT_MEANS,
) -> Tuple[float, float]:
    """Percentage-point change in the drop probability from lowering tfpr_z by
    one standard deviation, with a delta-method standard error

    Args:
        probit:  ProbitResult
            Fitted probit
        sample_means:  Optional[np.ndarray]
            Covariate means for the at-means effect (default: design means)
        kind:  str
            at_means or average (mean of the individual effects)

    Returns:
        me:  float
        se:  float
    """
    beta = probit.coefficients.to_numpy()
    shift = np.zeros_like(beta)
    shift[probit.names.index("tfpr_z")] = 1.0
    if kind == ME_AT_MEANS:
        xbar = probit.means if sample_means is None else np.asarray(sample_means, dtype=float)
        index = float(xbar @ beta)
        lowered = index - float(shift @ beta)
        me = 100.0 * (scipy.stats.norm.cdf(lowered) - scipy.stats.norm.cdf(index))
        grad = 100.0 * (
            scipy.stats.norm.pdf(lowered) * (xbar - shift) - scipy.stats.norm.pdf(index) * xbar
        )
    elif kind == ME_AVERAGE:
        design = probit.design
        index = design @ beta
        lowered = index - float(shift @ beta)
        me = 100.0 * float(np.mean(scipy.stats.norm.cdf(lowered) - scipy.stats.norm.cdf(index)))
        grad = 100.0 * (
            (scipy.stats.norm.pdf(lowered)[:, None] * (design - shift)).mean(axis=0)
            - (scipy.stats.norm.pdf(index)[:, None] * design).mean(axis=0)
        )
    else:
        raise ConfigurationError(f"Unknown marginal-effect kind '{kind}'")
    se = float(np.sqrt(max(grad @ probit.vcov @ grad, 0.0)))
    return float(me), se


## Implementation Details ######################################################


def _probit_design(sample: pd.DataFrame, spec: ProbitSpec) -> Tuple[np.ndarray, List[str]]:
    columns = ["tfpr_z"] + list(spec.controls)
    missing = [c for c in columns if c not in sample.columns]
    if missing:
        raise ConfigurationError(f"Probit sample lacks column(s): {missing}")
    blocks = [np.ones((len(sample), 1)), sample.loc[:, columns].to_numpy(dtype=float)]
    names = ["const"] + columns
    if spec.year_effects:
        dummies, dummy_names = regression.dummy_matrix(sample, ["year"], constant=False)
        blocks.append(dummies)
        names += dummy_names
    return np.hstack(blocks), names


def _check_separation(y: np.ndarray, x: np.ndarray, names: Sequence[str]):
    if y.min() == y.max():
        raise SeparationError("outcome")
    for j, name in enumerate(names):
        column = x[:, j]
        values = np.unique(column)
        if name == "const" or len(values) != 2 or not set(values) <= {0.0, 1.0}:
            continue
        for level in (0.0, 1.0):
            outcome = y[column == level]
            if len(outcome) and outcome.min() == outcome.max():
                raise SeparationError(name)


def _loglik(y: np.ndarray, x: np.ndarray, beta: np.ndarray) -> float:
    q = 2.0 * y - 1.0
    return float(np.sum(scipy.special.log_ndtr(q * (x @ beta))))


def _mills(y: np.ndarray, x: np.ndarray, beta: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    q = 2.0 * y - 1.0
    index = x @ beta
    arg = q * index
    lam = q * np.exp(scipy.stats.norm.logpdf(arg) - scipy.special.log_ndtr(arg))
    return lam, index


def _scores(y: np.ndarray, x: np.ndarray, beta: np.ndarray) -> np.ndarray:
    lam, _ = _mills(y, x, beta)
    return x * lam[:, None]


def _score_hessian(y: np.ndarray, x: np.ndarray, beta: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    lam, index = _mills(y, x, beta)
    score = x.T @ lam
    weights = lam * (lam + index)
    hessian = -(x * weights[:, None]).T @ x
    return score, hessian


def _newton_step(hessian: np.ndarray, rhs: np.ndarray, names: Sequence[str]) -> np.ndarray:
    """(-H)^-1 rhs"""
    try:
        return np.linalg.solve(-hessian, rhs)
    except np.linalg.LinAlgError as err:
        raise SingularDesignError(names, "probit information matrix") from err
