"""
prodloom: multi-product production function estimation with nested-logit
demand, Bertrand-Nash cost recovery and product-level GMM
"""

# Local
from .conduct import compute_cost_allocations, recover_marginal_costs, share_derivatives
from .demand import DemandSpec, estimate_demand_2sls, estimate_demand_ols, sw_first_stage_f
from .instruments import build_price_growth_iv, compute_purchase_shares, filter_input_codes
from .outcomes import (
    compute_tfpr,
    efficiency_gain_bounds,
    marginal_effect_1sd,
    probit_product_drop,
)
from .panel import apply_concordance, load_panel, validate_panel
from .pipeline import PipelineSpec, run_pipeline
from .production import block_bootstrap, estimate_gmm, moment_preset
from .report import emit_report, emit_tables
from .shares import MarketSizeRule, compute_revenue_shares
from .sweep import run_threshold_sweep
from .synth import SynthConfig, generate_synthetic
