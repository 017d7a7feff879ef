"""
Numeric constants and defaults shared across modules
"""

# Relative asymmetry allowed in a covariance estimate
SYMMETRY_TOL = 1e-10

# Smallest eigenvalue may dip to -PSD_TOL * largest
PSD_TOL = 1e-8

# lambda_m - lambda_{m+1} must exceed SPECTRAL_GAP_TOL * lambda_1 for unique projectors
SPECTRAL_GAP_TOL = 1e-10

# Eigenvalues below PINV_REL_TOL * largest are treated as zero
PINV_REL_TOL = 1e-9

# Largest admissible condition number of gamma_hat for Lambda3
MAX_CONDITION = 1e12

# Weights below ZERO_WEIGHT_TOL * max weight are dropped from a weighted chi-squared law
ZERO_WEIGHT_TOL = 1e-12

# Above this pH the sandwich is applied blockwise instead of through a dense Kronecker product
DENSE_KRON_LIMIT = 400

# Weighted chi-squared Monte Carlo
DEFAULT_MC_DRAWS = 200_000
DEFAULT_MC_SEED = 20_240_917
MC_CHUNK = 50_000

# Alternating least squares for the fixed-rank weighted projection
DEFAULT_MAX_OUTER_ITERATIONS = 500
DEFAULT_OBJECTIVE_TOLERANCE = 1e-10
DEFAULT_RESTARTS = 2
DEFAULT_RESTART_SEED = 0

# Bootstrap
DEFAULT_BOOTSTRAP_REPLICATES = 1000
DEFAULT_ALPHA = 0.05
MAX_REPLICATE_FAILURE_RATE = 0.01

# Campaigns
MAX_CELL_FAILURE_RATE = 0.02

# SIR simulation defaults, (p, H) = (6, 5)
DEFAULT_P = 6
DEFAULT_H = 5
# Law of the SIR bootstrap weights
DEFAULT_WEIGHT_LAW = "rademacher"

# Magnitude of the tie-breaking perturbation, relative to lambda_1
TIE_PERTURBATION = 1e-8

# CSV float format (17 significant digits)
FLOAT_FORMAT = "%.17g"
