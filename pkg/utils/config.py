# config.py
# Configuration settings for the scale-hyperprior image codec
#
# Everything here is a desk-scale default. Full-scale values from the
# original training protocol are noted next to each setting so they can be
# restored with a settings file:
#
#   python main.py --settings my_settings.json train ...
#
# where my_settings.json contains e.g. {"CROP_SIZE": 256, "DEFAULT_N": 128}
#

# ═══════════════════════════════════════════════════════════════════════════
# ARCHITECTURE
# ═══════════════════════════════════════════════════════════════════════════
DEFAULT_N = 32  # internal filter count (full scale: 128 / 192)
DEFAULT_M = 48  # bottleneck filter count (full scale: 192 / 320)
DEFAULT_MODEL_KIND = "hyperprior"  # Options: "factorized", "hyperprior"
DEFAULT_DISTORTION = "mse"  # Options: "mse", "ms-ssim"

# GDN reparameterization
GDN_BETA_MIN = 1e-6
GDN_GAMMA_INIT = 0.1
REPARAM_OFFSET = 2 ** -18

# ═══════════════════════════════════════════════════════════════════════════
# ENTROPY MODELS
# ═══════════════════════════════════════════════════════════════════════════
DENSITY_FILTERS = (3, 3, 3)  # r_1..r_{K-1}, K = len + 1 = 4
DENSITY_INIT_SCALE = 10.0  # initial density ~ logistic with this scale
SIGMA_MIN = 1e-2  # lower bound on predicted scales
LIKELIHOOD_FLOOR = 2 ** -32  # PMF values are clamped here before logs

# ═══════════════════════════════════════════════════════════════════════════
# ENTROPY CODER
# ═══════════════════════════════════════════════════════════════════════════
TAIL_MASS = 2 ** -20  # max PMF mass left outside a symbol range
PROBABILITY_BITS = 16  # probabilities are p / 2**16, p in [1, 2**16 - 1]
MAX_RANGE_BITS = 24  # hard cap on bits per symbol

# ═══════════════════════════════════════════════════════════════════════════
# TRAINING
# ═══════════════════════════════════════════════════════════════════════════
CROP_SIZE = 64  # full scale: 256
BATCH_SIZE = 8
LEARNING_RATE = 1e-4
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
DEFAULT_STEPS = 20000
CHECKPOINT_EVERY = 1000
LAMBDA_GRID = (0.001, 0.003, 0.01, 0.03, 0.1)
DOWNSAMPLE_RANGE = (1.0, 2.0)  # randomized on-load downsampling factor

# Distortion is weighted per pixel against bits per pixel. Squared error is
# measured on [0,1] pixels, so it is rescaled to the 8-bit range.
DISTORTION_SCALE = {
    "mse": 255.0 ** 2,
    "ms-ssim": 1000.0,
}

# Batch assembly worker pool. None = physical core count (psutil).
NUM_BATCH_WORKERS = None
PREFETCH_BATCHES = 4

# Density fitting (fit-density command)
DENSITY_FIT_LEARNING_RATE = 1e-2
DENSITY_FIT_STEPS = 4000
DENSITY_FIT_TRACE_EVERY = 250
DENSITY_FIT_MIN_SAMPLES = 1000

# ═══════════════════════════════════════════════════════════════════════════
# CODEC / EVALUATION
# ═══════════════════════════════════════════════════════════════════════════
CONTAINER_MAGIC = b"BMSH"
CONTAINER_VERSION = 1
CHECKPOINT_MAGIC = b"BMCK"
CHECKPOINT_VERSION = 1
MAX_IMAGE_SIDE = 1 << 15
PSNR_CAP_DB = 99.0

# MS-SSIM constants (Gaussian window and published per-scale weights)
MS_SSIM_WINDOW = 11
MS_SSIM_SIGMA = 1.5
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
MS_SSIM_K = (0.01, 0.03)

# Rates (bpp) used when aggregating MS-SSIM curves over equal rates
RATE_AGGREGATION_POINTS = (0.125, 0.25, 0.375, 0.5, 0.75, 1.0, 1.5)

# Extra checks on every forward pass (finite activations)
DEBUG_CHECKS = False


def apply_settings(settings: dict) -> None:
    """Override module-level settings from a configuration dictionary."""
    module_globals = globals()
    for key, value in settings.items():
        if key not in module_globals or key.startswith("_") or callable(module_globals[key]):
            raise KeyError(f"Unknown setting: {key}")
        current = module_globals[key]
        if isinstance(current, tuple) and isinstance(value, list):
            value = tuple(value)
        if isinstance(current, bytes) and isinstance(value, str):
            value = value.encode("ascii")
        module_globals[key] = value
