"""
Nested-logit demand estimation. The estimating equation is

    rs_j - rs_0 = (1 - sigma) * rs_within - alpha * p + FE + eta

with the log price p and the within-nest share rs_within endogenous and
instrumented by the nest-level input-price growth (Z_t, Z_t-1). Fixed effects
and controls are partialled out before the two-stage projection.
"""

# Standard
from dataclasses import asdict, dataclass, field
from typing import Dict, Optional, Sequence, Tuple
import hashlib
import json

# Third Party
import numpy as np
import pandas as pd

# Local
from . import regression
from .errors import (
    ConfigurationError,
    IdentificationError,
    JoinError,
    SingularDesignError,
    UndefinedStatisticError,
)
from .instruments import InstrumentTable
from .log import log
from .shares import ShareTable

ENDOGENOUS = ("log_price", "rs_within")
METHOD_2SLS = "2sls"
METHOD_OLS = "ols"
METHOD_CALIBRATED = "calibrated"

## Types #######################################################################


@dataclass(frozen=True)
class DemandSpec:
    """Estimating-equation options

    Attributes:
        fixed_effects:  Tuple[str, ...]
            Categorical columns absorbed as dummies (a constant is always
            included)
        instruments:  Tuple[str, ...]
            Excluded instruments from the instrument table (Z, Z_lag)
        extra_instruments:  Tuple[str, ...]
            Additional excluded instruments taken from the share table
            (nest_count)
        controls:  Tuple[str, ...]
            Exogenous controls taken from the share table
        cluster:  Tuple[str, ...]
            One or two cluster dimensions
    """

    fixed_effects: Tuple[str, ...] = ("year", "market3")
    instruments: Tuple[str, ...] = ("Z", "Z_lag")
    extra_instruments: Tuple[str, ...] = ()
    controls: Tuple[str, ...] = ()
    cluster: Tuple[str, ...] = ("plant_id", "product_code")

    def __post_init__(self):
        if not 1 <= len(self.cluster) <= 2:
            raise ConfigurationError("cluster must name one or two columns")
        for name in self.instruments:
            if name not in ("Z", "Z_lag"):
                raise ConfigurationError(f"Unknown instrument-table column: {name}")

    @property
    def excluded(self) -> Tuple[str, ...]:
        return tuple(self.instruments) + tuple(self.extra_instruments)

    def spec_hash(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:12]


@dataclass(frozen=True, eq=False)
class IVDesign:
    """Regression matrices with the exogenous block already partialled out

    Attributes:
        y:  np.ndarray
            (n,) dependent variable
        endog:  np.ndarray
            (n, m) endogenous regressors
        excluded:  np.ndarray
            (n, k) excluded instruments
        absorbed_rank:  int
            Rank of the partialled-out exogenous block
    """

    y: np.ndarray
    endog: np.ndarray
    excluded: np.ndarray
    absorbed_rank: int
    endog_names: Tuple[str, ...]
    excluded_names: Tuple[str, ...]

    @classmethod
    def build(
        cls,
        y: np.ndarray,
        endog: np.ndarray,
        excluded: np.ndarray,
        exog: Optional[np.ndarray] = None,
        endog_names: Optional[Sequence[str]] = None,
        excluded_names: Optional[Sequence[str]] = None,
    ) -> "IVDesign":
        """Partial `exog` (default: a constant) out of every block"""
        y = np.asarray(y, dtype=float)
        endog = np.asarray(endog, dtype=float).reshape(len(y), -1)
        excluded = np.asarray(excluded, dtype=float).reshape(len(y), -1)
        if exog is None:
            exog = np.ones((len(y), 1))
        (y_r, endog_r, excluded_r), rank = regression.absorb(exog, y, endog, excluded)
        return cls(
            y=y_r,
            endog=endog_r,
            excluded=excluded_r,
            absorbed_rank=rank,
            endog_names=tuple(endog_names or [f"x{i}" for i in range(endog.shape[1])]),
            excluded_names=tuple(excluded_names or [f"z{i}" for i in range(excluded.shape[1])]),
        )

    @property
    def n_obs(self) -> int:
        return len(self.y)


@dataclass(frozen=True, eq=False)
class DemandEstimate:
    """Demand parameters with inference. vcov is the covariance of
    (alpha, sigma), which equals that of the (log_price, rs_within)
    coefficients since both maps are negations.
    """

    alpha: float
    sigma: float
    se_alpha: float
    se_sigma: float
    vcov: np.ndarray
    F_p: float = float("nan")
    F_rs: float = float("nan")
    n_obs: int = 0
    method: str = METHOD_2SLS
    residuals: Optional[pd.DataFrame] = None
    psd_repaired: bool = False
    spec_hash: str = ""
    cluster_counts: Dict[str, int] = field(default_factory=dict)

    @property
    def one_minus_sigma(self) -> float:
        return 1.0 - self.sigma

    @property
    def admissible(self) -> bool:
        return is_admissible(self.alpha, self.sigma)

    @classmethod
    def calibrated(
        cls, alpha: float, sigma: float, vcov: Optional[np.ndarray] = None
    ) -> "DemandEstimate":
        """Fixed (alpha, sigma), optionally with a covariance for
        semi-parametric draws
        """
        if vcov is None:
            vcov = np.zeros((2, 2))
            se = (float("nan"), float("nan"))
        else:
            vcov = np.asarray(vcov, dtype=float)
            se = tuple(np.sqrt(np.diag(vcov)))
        return cls(
            alpha=float(alpha),
            sigma=float(sigma),
            se_alpha=float(se[0]),
            se_sigma=float(se[1]),
            vcov=vcov,
            method=METHOD_CALIBRATED,
        )

    def to_row(self) -> Dict[str, object]:
        return {
            "method": self.method,
            "alpha": self.alpha,
            "sigma": self.sigma,
            "one_minus_sigma": self.one_minus_sigma,
            "se_alpha": self.se_alpha,
            "se_sigma": self.se_sigma,
            "cov_alpha_sigma": float(self.vcov[0, 1]),
            "F_p": self.F_p,
            "F_rs": self.F_rs,
            "n_obs": self.n_obs,
            "admissible": self.admissible,
            "psd_repaired": self.psd_repaired,
            "spec_hash": self.spec_hash,
        }


## Public ######################################################################


def is_admissible(alpha: float, sigma: float) -> bool:
    return bool(alpha > 0 and 0 < sigma < 1)


def check_admissibility(est: DemandEstimate) -> bool:
    """True iff alpha > 0 and 0 < sigma < 1"""
    return is_admissible(est.alpha, est.sigma)


def assemble_demand_design(
    shares: ShareTable,
    instruments: InstrumentTable,
    spec: DemandSpec,
) -> Tuple[IVDesign, pd.DataFrame]:
    """Merge shares with (Z_t, Z_t-1) by nest-year and partial out the fixed
    effects and controls

    Returns:
        design:  IVDesign
            The partialled regression matrices
        sample:  pd.DataFrame
            The estimation sample, aligned with the design rows
    """
    if len(spec.excluded) < len(ENDOGENOUS):
        raise IdentificationError(
            f"{len(spec.excluded)} excluded instrument(s) for {len(ENDOGENOUS)} endogenous regressors"
        )
    sample = shares.frame.merge(instruments.with_lag(), on=["nest5", "year"], how="inner")
    missing = [c for c in spec.extra_instruments + spec.controls if c not in sample.columns]
    if missing:
        raise JoinError("share-table column(s)", [(name,) for name in missing])
    sample = sample.sort_values(["market3", "year", "plant_id", "product_code"]).reset_index(drop=True)
    if sample.empty:
        raise IdentificationError("No observations have both Z_t and Z_t-1")

    exog, exog_names = _exogenous_block(sample, spec)
    y = (sample["rs_j"] - sample["rs_0"]).to_numpy()
    endog = sample.loc[:, list(ENDOGENOUS)].to_numpy(dtype=float)
    excluded = sample.loc[:, list(spec.excluded)].to_numpy(dtype=float)
    design = IVDesign.build(y, endog, excluded, exog, ENDOGENOUS, spec.excluded)
    regression.require_full_rank(
        np.hstack([design.endog, design.excluded]),
        list(ENDOGENOUS) + list(spec.excluded),
        "demand design after absorbing fixed effects",
    )
    log.debug2(
        "Demand design: %d obs, %d exogenous columns (rank %d), instruments %s",
        design.n_obs,
        len(exog_names),
        design.absorbed_rank,
        spec.excluded,
    )
    return design, sample


def estimate_demand_2sls(
    shares: ShareTable,
    instruments: InstrumentTable,
    spec: Optional[DemandSpec] = None,
) -> DemandEstimate:
    """Two-stage least squares on the nested-logit estimating equation

    Args:
        shares:  ShareTable
            Share variables per observation
        instruments:  InstrumentTable
            Nest-year instrument values; Z_t-1 is merged from the prior year
        spec:  Optional[DemandSpec]
            Fixed effects, instruments, controls, clustering

    Returns:
        estimate:  DemandEstimate
            alpha = -coefficient on log_price, sigma = 1 - coefficient on
            rs_within, two-way clustered covariance, SW first-stage F and the
            structural residual eta per observation
    """
    spec = spec or DemandSpec()
    design, sample = assemble_demand_design(shares, instruments, spec)
    coef, resid, xhat, bread_inv = _two_sls(design)
    vcov, repaired, counts = _clustered_vcov(xhat, resid, bread_inv, sample, spec.cluster)
    f_stats = sw_first_stage_f(design)
    est = _make_estimate(
        coef, vcov, repaired, counts, sample, resid, design.n_obs, METHOD_2SLS, spec, f_stats
    )
    log.info(
        "2SLS demand at tau=%.2f: alpha=%.4f (%.4f) sigma=%.4f (%.4f) F=(%.2f, %.2f) n=%d",
        instruments.tau,
        est.alpha,
        est.se_alpha,
        est.sigma,
        est.se_sigma,
        est.F_p,
        est.F_rs,
        est.n_obs,
    )
    return est


def estimate_demand_ols(
    shares: ShareTable,
    spec: Optional[DemandSpec] = None,
    instruments: Optional[InstrumentTable] = None,
) -> DemandEstimate:
    """Least squares on the same equation, treating p and rs_within as
    exogenous. With an instrument table the sample is restricted to the
    observations the 2SLS estimator would use.
    """
    spec = spec or DemandSpec()
    if instruments is not None:
        _, sample = assemble_demand_design(shares, instruments, spec)
    else:
        sample = shares.frame.sort_values(
            ["market3", "year", "plant_id", "product_code"]
        ).reset_index(drop=True)
    exog, _ = _exogenous_block(sample, spec)
    y = (sample["rs_j"] - sample["rs_0"]).to_numpy()
    endog = sample.loc[:, list(ENDOGENOUS)].to_numpy(dtype=float)
    (y_r, x_r), _ = regression.absorb(exog, y, endog)
    regression.require_full_rank(x_r, list(ENDOGENOUS), "least-squares demand design")
    coef, resid = regression.ols(y_r, x_r)
    try:
        bread_inv = np.linalg.inv(x_r.T @ x_r)
    except np.linalg.LinAlgError as err:
        raise SingularDesignError(list(ENDOGENOUS), "least-squares demand design") from err
    vcov, repaired, counts = _clustered_vcov(x_r, resid, bread_inv, sample, spec.cluster)
    est = _make_estimate(coef, vcov, repaired, counts, sample, resid, len(y), METHOD_OLS, spec, None)
    log.debug("OLS demand: alpha=%.4f sigma=%.4f n=%d", est.alpha, est.sigma, est.n_obs)
    return est


def sw_first_stage_f(design: IVDesign) -> Tuple[float, ...]:
    """Sanderson-Windmeijer conditional first-stage F for each endogenous
    regressor

    For x_e, the other endogenous regressors are removed by a 2SLS regression
    of x_e on them using the excluded instruments; the residual is then
    regressed on the excluded instruments and the F statistic uses
    k - m + 1 numerator degrees of freedom. With one endogenous regressor this
    is the ordinary first-stage F.

    Returns:
        f_stats:  Tuple[float, ...]
            One statistic per endogenous column, in design order
    """
    n, m = design.endog.shape
    k = design.excluded.shape[1]
    df_num = k - m + 1
    df_den = n - design.absorbed_rank - k
    if df_num <= 0 or df_den <= 0:
        raise UndefinedStatisticError(
            f"SW F undefined: numerator dof {df_num}, denominator dof {df_den}"
        )
    z = design.excluded
    zz_inv = np.linalg.pinv(z.T @ z)
    projector = z @ zz_inv
    stats = []
    for e in range(m):
        target = design.endog[:, e]
        others = np.delete(design.endog, e, axis=1)
        if others.shape[1]:
            others_hat = projector @ (z.T @ others)
            delta = np.linalg.lstsq(others_hat, target, rcond=None)[0]
            eps = target - others @ delta
        else:
            eps = target
        rss_r = float(eps @ eps)
        rss_u = regression.rss(eps, z)
        f_stat = ((rss_r - rss_u) / df_num) / (rss_u / df_den)
        stats.append(max(f_stat, 0.0))
        log.debug3("SW F for %s: %.4f", design.endog_names[e], f_stat)
    return tuple(stats)


## Implementation Details ######################################################


def _exogenous_block(sample: pd.DataFrame, spec: DemandSpec) -> Tuple[np.ndarray, list]:
    dummies, names = regression.dummy_matrix(sample, spec.fixed_effects, constant=True)
    if spec.controls:
        controls = sample.loc[:, list(spec.controls)].to_numpy(dtype=float)
        dummies = np.hstack([dummies, controls])
        names = names + list(spec.controls)
    return dummies, names


def _two_sls(design: IVDesign) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Coefficients, residuals, first-stage fitted regressors and the inverse
    of xhat' xhat
    """
    z = design.excluded
    first, _ = regression.ols(design.endog, z)
    xhat = z @ first
    gram = xhat.T @ xhat
    try:
        bread_inv = np.linalg.inv(gram)
    except np.linalg.LinAlgError as err:
        raise SingularDesignError(list(design.endog_names), "first-stage projection") from err
    coef = bread_inv @ (xhat.T @ design.y)
    resid = design.y - design.endog @ coef
    return coef, resid, xhat, bread_inv


def _clustered_vcov(
    regressors: np.ndarray,
    resid: np.ndarray,
    bread_inv: np.ndarray,
    sample: pd.DataFrame,
    cluster: Sequence[str],
) -> Tuple[np.ndarray, bool, Dict[str, int]]:
    scores = regressors * resid[:, None]
    if len(cluster) == 2:
        meat, counts = regression.two_way_cluster_meat(
            scores, sample[cluster[0]].to_numpy(), sample[cluster[1]].to_numpy()
        )
    else:
        meat, n_groups = regression.cluster_meat(scores, sample[cluster[0]].to_numpy())
        counts = {"first": n_groups}
    vcov, repaired = regression.sandwich(bread_inv, meat)
    return vcov, repaired, counts


def _make_estimate(
    coef: np.ndarray,
    vcov: np.ndarray,
    repaired: bool,
    counts: Dict[str, int],
    sample: pd.DataFrame,
    resid: np.ndarray,
    n_obs: int,
    method: str,
    spec: DemandSpec,
    f_stats: Optional[Tuple[float, ...]],
) -> DemandEstimate:
    se = np.sqrt(np.diag(vcov))
    residuals = sample.loc[:, ["plant_id", "year", "product_code"]].assign(eta=resid)
    return DemandEstimate(
        alpha=float(-coef[0]),
        sigma=float(1.0 - coef[1]),
        se_alpha=float(se[0]),
        se_sigma=float(se[1]),
        vcov=vcov,
        F_p=float(f_stats[0]) if f_stats else float("nan"),
        F_rs=float(f_stats[1]) if f_stats else float("nan"),
        n_obs=int(n_obs),
        method=method,
        residuals=residuals,
        psd_repaired=repaired,
        spec_hash=spec.spec_hash(),
        cluster_counts=counts,
    )
