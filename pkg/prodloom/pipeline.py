"""
Single-threshold end-to-end run: shares, instruments, demand, conduct,
production and outcomes for one value of tau. The sweep, the bootstrap and
the CLI all go through run_pipeline so that every number they report can be
reproduced by a standalone call.
"""

# Standard
from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Tuple
import hashlib

# Third Party
import numpy as np
import pandas as pd

# Local
from .conduct import CostAllocation, compute_cost_allocations
from .demand import DemandEstimate, DemandSpec, estimate_demand_2sls, is_admissible
from .errors import ConfigurationError, EstimationError
from .instruments import (
    InstrumentConfig,
    InstrumentTable,
    PurchaseShareTable,
    build_price_growth_iv,
    compute_purchase_shares,
    filter_input_codes,
)
from .log import log
from .outcomes import (
    ProbitResult,
    ProbitSpec,
    TfprTable,
    build_drop_sample,
    compute_tfpr,
    efficiency_gain_bounds,
    probit_product_drop,
    summarize_gains,
)
from .panel import Panel
from .production import (
    MomentSpec,
    ProductInputTable,
    ProductionEstimate,
    attach_instruments,
    build_product_inputs,
    estimate_gmm,
    moment_preset,
)
from .shares import MarketSizeRule, ShareTable, compute_revenue_shares, market_revenue

# Parameters a bootstrap replay reports
REPLAY_PARAMETERS = ("beta_L", "beta_K", "beta_M", "gain_lower", "gain_upper", "me_1sd")

## Types #######################################################################


@dataclass(frozen=True, eq=False)
class PipelineSpec:
    """Every option of a single-threshold run

    Attributes:
        market_size_rule:  MarketSizeRule
            kappa multiplier or explicit market sizes
        instrument:  InstrumentConfig
            Reference plants, weighting, pooling
        demand:  DemandSpec
            Estimating-equation options
        moments:  MomentSpec
            GMM instrument menu
        probit:  ProbitSpec
            Probit design and marginal-effect kind
        run_outcomes:  bool
            Compute TFPR, gain bounds and the probit
    """

    market_size_rule: MarketSizeRule = field(default_factory=MarketSizeRule)
    instrument: InstrumentConfig = field(default_factory=InstrumentConfig)
    demand: DemandSpec = field(default_factory=DemandSpec)
    moments: MomentSpec = field(default_factory=lambda: moment_preset("col3"))
    probit: ProbitSpec = field(default_factory=ProbitSpec)
    run_outcomes: bool = True

    def spec_hashes(self) -> Dict[str, str]:
        return {
            "market_size_rule": self.market_size_rule.spec_hash(),
            "instrument": self.instrument.spec_hash(),
            "demand": self.demand.spec_hash(),
            "moments": self.moments.spec_hash(),
            "probit": self.probit.spec_hash(),
        }

    def spec_hash(self) -> str:
        payload = ";".join(f"{key}={val}" for key, val in sorted(self.spec_hashes().items()))
        payload += f";run_outcomes={self.run_outcomes}"
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:12]


@dataclass(frozen=True, eq=False)
class PipelineResult:
    """Everything a single-threshold run produced. Stages after a failure or
    after inadmissible demand are None; their messages are in `errors`.
    """

    tau: float
    n_obs: int
    n_retained_codes: int
    instruments: InstrumentTable
    demand: Optional[DemandEstimate] = None
    allocations: Optional[CostAllocation] = None
    product_inputs: Optional[ProductInputTable] = None
    production: Optional[ProductionEstimate] = None
    tfpr: Optional[TfprTable] = None
    gains: Optional[pd.DataFrame] = None
    probit: Optional[ProbitResult] = None
    errors: Tuple[str, ...] = ()

    @property
    def admissible(self) -> bool:
        return self.demand is not None and self.demand.admissible

    @property
    def gain_summary(self) -> Tuple[float, float]:
        if self.gains is None:
            return float("nan"), float("nan")
        return summarize_gains(self.gains)

    def to_row(self) -> Dict[str, object]:
        """Flat record with the sweep columns"""
        nan = float("nan")
        demand = self.demand
        production = self.production
        gain_lower, gain_upper = self.gain_summary
        return {
            "tau": self.tau,
            "alpha": demand.alpha if demand else nan,
            "se_alpha": demand.se_alpha if demand else nan,
            "sigma": demand.sigma if demand else nan,
            "se_sigma": demand.se_sigma if demand else nan,
            "one_minus_sigma": demand.one_minus_sigma if demand else nan,
            "F_p": demand.F_p if demand else nan,
            "F_rs": demand.F_rs if demand else nan,
            "n_obs": self.n_obs,
            "n_codes": self.n_retained_codes,
            "admissible": self.admissible,
            "n_flagged": self.allocations.n_flagged if self.allocations else nan,
            "beta_L": production.beta_L if production else nan,
            "beta_K": production.beta_K if production else nan,
            "beta_M": production.beta_M if production else nan,
            "gain_lower": gain_lower,
            "gain_upper": gain_upper,
            "me_1sd": self.probit.marginal_effect_1sd if self.probit else nan,
            "me_se": self.probit.me_se if self.probit else nan,
            "error": "; ".join(self.errors),
        }

    def replay_values(self) -> Dict[str, float]:
        """The finite bootstrap parameters of this run"""
        row = self.to_row()
        return {
            name: float(row[name])
            for name in REPLAY_PARAMETERS
            if np.isfinite(float(row[name]))
        }


@dataclass(frozen=True, eq=False)
class PipelineReplay:
    """Picklable bootstrap closure: replay(panel, demand_params) reruns the
    pipeline at a fixed tau on a resampled panel

    demand_params (semi-parametric draws) take precedence over `calibration`;
    with neither, demand is re-estimated on the resampled panel. With
    `reference_revenue` set, explicit market sizes are rescaled to each
    resampled panel.
    """

    tau: float
    spec: PipelineSpec = field(default_factory=PipelineSpec)
    calibration: Optional[Tuple[float, float]] = None
    reference_revenue: Optional[pd.DataFrame] = None

    @classmethod
    def for_panel(
        cls,
        panel: Panel,
        tau: float,
        spec: Optional[PipelineSpec] = None,
        calibration: Optional[Tuple[float, float]] = None,
    ) -> "PipelineReplay":
        """Replay anchored to the market revenue of the estimation panel"""
        return cls(
            tau=tau,
            spec=spec or PipelineSpec(),
            calibration=calibration,
            reference_revenue=market_revenue(panel),
        )

    def __call__(
        self, panel: Panel, demand_params: Optional[Tuple[float, float]] = None
    ) -> Dict[str, float]:
        calibration = demand_params if demand_params is not None else self.calibration
        spec = self.spec
        if self.reference_revenue is not None:
            rule = spec.market_size_rule.rescaled(self.reference_revenue, market_revenue(panel))
            spec = replace(spec, market_size_rule=rule)
        result = run_pipeline(panel, self.tau, spec, calibration=calibration)
        if result.production is None:
            raise EstimationError("; ".join(result.errors) or "Replication has no production estimate")
        return result.replay_values()


## Public ######################################################################


def run_pipeline(
    panel: Panel,
    tau: float,
    spec: Optional[PipelineSpec] = None,
    calibration: Optional[Tuple[float, float]] = None,
    shares: Optional[ShareTable] = None,
    purchase_shares: Optional[PurchaseShareTable] = None,
) -> PipelineResult:
    """Run every stage at one threshold

    Args:
        panel:  Panel
            Validated panel
        tau:  float
            Purchase-share threshold in [0, 1]
        spec:  Optional[PipelineSpec]
            Stage options
        calibration:  Optional[Tuple[float, float]]
            Fixed (alpha, sigma); demand is estimated by 2SLS when omitted
        shares:  Optional[ShareTable]
            Precomputed share table (tau-independent)
        purchase_shares:  Optional[PurchaseShareTable]
            Precomputed machinery purchase shares (tau-independent)

    Returns:
        result:  PipelineResult
            Stage outputs; demand failures and downstream failures are
            recorded in result.errors
    """
    spec = spec or PipelineSpec()
    if calibration is not None and not is_admissible(*calibration):
        raise ConfigurationError(
            f"Calibrated demand needs alpha > 0 and 0 < sigma < 1 (got {calibration})"
        )
    if shares is None:
        shares = compute_revenue_shares(panel, spec.market_size_rule)
    if purchase_shares is None:
        purchase_shares = compute_purchase_shares(
            panel.purchases, panel.sector_tags, pooled=spec.instrument.pooled_shares
        )
    retained = filter_input_codes(purchase_shares, tau)
    instruments = build_price_growth_iv(panel, retained, spec.instrument)
    n_obs = _instrumented_count(shares, instruments)
    base = dict(
        tau=tau,
        n_obs=n_obs,
        n_retained_codes=len(retained),
        instruments=instruments,
    )

    try:
        if calibration is not None:
            demand = DemandEstimate.calibrated(*calibration)
        else:
            demand = estimate_demand_2sls(shares, instruments, spec.demand)
    except EstimationError as err:
        log.debug("Demand failed at tau=%.2f: %s", tau, err)
        return PipelineResult(errors=(f"demand: {err}",), **base)
    if not demand.admissible:
        log.info(
            "Inadmissible demand at tau=%.2f (alpha=%.4f, sigma=%.4f); skipping downstream stages",
            tau,
            demand.alpha,
            demand.sigma,
        )
        return PipelineResult(demand=demand, **base)

    try:
        allocations = compute_cost_allocations(shares, demand)
        product_inputs = attach_instruments(build_product_inputs(panel, allocations), instruments)
        production = estimate_gmm(product_inputs, spec.moments)
    except EstimationError as err:
        log.debug("Production failed at tau=%.2f: %s", tau, err)
        return PipelineResult(demand=demand, errors=(f"production: {err}",), **base)
    result = PipelineResult(
        demand=demand,
        allocations=allocations,
        product_inputs=product_inputs,
        production=production,
        **base,
    )
    if not spec.run_outcomes:
        return result
    return _run_outcomes(result, panel, spec.probit)


## Implementation Details ######################################################


def _instrumented_count(shares: ShareTable, instruments: InstrumentTable) -> int:
    """Observations whose nest-year has both Z_t and Z_t-1"""
    keys = instruments.with_lag().loc[:, ["nest5", "year"]]
    return int(len(shares.frame.merge(keys, on=["nest5", "year"], how="inner")))


def _run_outcomes(result: PipelineResult, panel: Panel, probit_spec: ProbitSpec) -> PipelineResult:
    errors = list(result.errors)
    try:
        tfpr = compute_tfpr(result.product_inputs, result.production)
    except EstimationError as err:
        return replace(result, errors=tuple(errors + [f"tfpr: {err}"]))
    gains = efficiency_gain_bounds(tfpr, result.allocations)
    probit = None
    try:
        probit = probit_product_drop(build_drop_sample(tfpr, panel), probit_spec)
    except EstimationError as err:
        log.debug("Probit failed at tau=%.2f: %s", result.tau, err)
        errors.append(f"probit: {err}")
    return replace(result, tfpr=tfpr, gains=gains, probit=probit, errors=tuple(errors))

