"""
Shared constants across the various parts of the library
"""

# Standard
import sys

# The name of this package (prodloom)
THIS_PACKAGE = sys.modules[__name__].__package__.partition(".")[0]

# CSV schemas for the ingested files
OUTPUT_COLUMNS = ("plant_id", "year", "product_code", "quantity", "revenue")
INPUT_COLUMNS = ("plant_id", "year", "labor", "capital", "materials", "sector")
PURCHASE_COLUMNS = ("plant_id", "year", "input_code", "quantity", "value")
CONCORDANCE_COLUMNS = ("source_code", "target_code")
MARKET_SIZE_COLUMNS = ("market3", "year", "market_size")

# Product code layout
CODE_LENGTH = 5
MARKET_LENGTH = 3
DEFAULT_CODE_ALPHABET = "0123456789"

# Sector labels
SECTOR_MACHINERY = "machinery"
SECTOR_OTHER = "non-machinery"
SECTORS = (SECTOR_MACHINERY, SECTOR_OTHER)

# Ingest log prefixes
LOG_DROP = "DROP"
LOG_ORPHAN = "ORPHAN"

# Validation finding codes
FINDING_ORPHAN = "ORPHAN"
FINDING_POSITIVITY = "POSITIVITY"
FINDING_PRICE = "PRICE"
FINDING_CODE = "CODE"
FINDING_COUNT = "COUNT"
FINDING_SECTOR = "SECTOR"

# Numerical tolerances
PRICE_REL_TOL = 1e-9

# Defaults
DEFAULT_KAPPA = 2.0
DEFAULT_TAU = 0.3
DEFAULT_GRID = (0.0, 1.0, 0.01)
DEFAULT_MIN_CONTRIBUTORS = 1
MAX_BOOTSTRAP_FAILURE_RATE = 0.2
GAIN_MIN_PRODUCTS = 2
GAIN_MAX_PRODUCTS = 10
CONFIDENCE_Z90 = 1.6448536269514722

# Conduct flags
FLAG_OK = ""
FLAG_LERNER_RANGE = "lerner_out_of_range"

# Seed fallback
SEED_ENV_VAR = "PRODLOOM_SEED"

# Reference values shown next to estimates (never asserted)
REFERENCE_NOTE = "not machine-checked"
REFERENCE_PRODUCTION = {
    "col1": {"beta_L": (0.325, 0.192), "beta_K": (0.106, 0.082), "beta_M": (0.789, 0.191)},
    "col2": {"beta_L": (0.315, 0.191), "beta_K": (0.102, 0.081), "beta_M": (0.806, 0.186)},
    "col3": {"beta_L": (0.617, 0.261), "beta_K": (0.239, 0.099), "beta_M": (0.223, 0.352)},
}
REFERENCE_PRODUCTION_NOBS = 3620
REFERENCE_OUTCOMES = {
    "2000-2007": {"gain_lower": 8.82, "gain_upper": 61.60, "me_1sd": (6.65, 2.20)},
    "2010-2019": {"gain_lower": 1.13, "gain_upper": 67.13, "me_1sd": (9.22, 1.53)},
    "2000-2019": {"gain_lower": 9.94, "gain_upper": 65.59, "me_1sd": (7.96, 2.08)},
}
