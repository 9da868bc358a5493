"""Constants for the gllmm_codec package."""

# Network defaults
DEFAULT_LATENT_CHANNELS = 128
SUPPORTED_LATENT_CHANNELS = (128, 256)
DEFAULT_MIXTURE_COUNTS = (3, 3, 3)  # (K, M, N): gaussian, laplacian, logistic
DEFAULT_CRM_STAGES = 2
SUPPORTED_CRM_STAGES = (1, 2, 3)  # 1 is the plain residual block baseline
DEFAULT_Y_ALPHABET = (-128, 127)
DEFAULT_Z_ALPHABET = (-128, 127)
DEFAULT_LAMBDA = 0.015

LEAKY_RELU_SLOPE = 0.01
GDN_FLOOR = 1e-6
SCALE_FLOOR = 1e-9
CONTEXT_KERNEL = 5
TRANSFORM_KERNEL = 3
DOWNSAMPLE_FACTOR = 16  # g_a
HYPER_DOWNSAMPLE_FACTOR = 4  # h_a, relative to y
PAD_MULTIPLE = DOWNSAMPLE_FACTOR * HYPER_DOWNSAMPLE_FACTOR

# Entropy model
FAMILIES = ("gaussian", "laplacian", "logistic")
PMF_FLOOR = 2.0**-16
PRECISION_BITS = 16
TOTAL_FREQUENCY = 1 << PRECISION_BITS
CLAMP_WARNING_RATE = 0.1

# Ablation configurations, named after the families they mix.
FAMILY_CONFIGS = {
    "GMM": {"counts": (3, 0, 0)},
    "LapMM": {"counts": (0, 3, 0)},
    "LoMM": {"counts": (0, 0, 3)},
    "GLaMM": {"counts": (3, 3, 0)},
    "GLoMM": {"counts": (3, 0, 3)},
    "GLLMM": {"counts": (3, 3, 3)},
}
DEFAULT_ABLATION_FAMILIES = ["GMM", "GLaMM", "GLoMM", "GLLMM"]

# Symbol sources for the ablation. Every source is rounded to integers.
SOURCE_GENERATORS = {
    "gaussian": {
        "components": [{"family": "gaussian", "loc": 0.0, "scale": 3.0, "weight": 1.0}],
    },
    "laplacian": {
        "components": [{"family": "laplacian", "loc": 0.0, "scale": 2.0, "weight": 1.0}],
    },
    "logistic": {
        "components": [{"family": "logistic", "loc": 0.0, "scale": 2.0, "weight": 1.0}],
    },
    "mixed": {
        "components": [
            {"family": "gaussian", "loc": 0.0, "scale": 1.0, "weight": 1 / 3},
            {"family": "laplacian", "loc": 0.0, "scale": 10.0, "weight": 1 / 3},
            {"family": "logistic", "loc": 0.0, "scale": 3.0, "weight": 1 / 3},
        ],
    },
}

# Fitting defaults
DEFAULT_RESTARTS = 5
DEFAULT_MAX_ITERATIONS = 500
DEFAULT_STEP_SIZE = 0.05
DEFAULT_TOLERANCE = 1e-7
DEFAULT_FIT_SEED = 0
MIN_FIT_SAMPLES = 100
FIT_METHODS = ("l-bfgs-b", "adam")

# Rate-distortion settings
MSE_LAMBDAS = (0.0016, 0.0032, 0.0075, 0.015, 0.023, 0.03, 0.045)
MSSSIM_LAMBDAS = (12.0, 40.0, 80.0, 120.0)
DISTORTION_METRICS = ("mse", "ms-ssim")
DB_CAP = 100.0
MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
MSSSIM_WINDOW = 11
MSSSIM_SIGMA = 1.5
MSSSIM_K1 = 0.01
MSSSIM_K2 = 0.03

# File formats
WEIGHT_MAGIC = b"GLWS"
WEIGHT_VERSION = 1
DTYPE_REAL32 = 0
BITSTREAM_MAGIC = b"GLLC"
BITSTREAM_VERSION = 1
SAMPLE_DTYPE = "<i4"

CSV_CURVE_HEADER = [
    "image",
    "lambda",
    "filters",
    "bpp",
    "psnr_db",
    "msssim",
    "msssim_db",
    "enc_ms",
    "dec_ms",
]
CSV_ABLATION_HEADER = ["family", "K", "M", "N", "bits_per_symbol", "n_samples", "seed"]
IMAGE_SUFFIXES = (".png",)

# CLI exit codes
EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA_ERROR = 2


def default_filters(lmbda, metric="mse"):
    """Return the filter count used for a lambda slot.

    The lower rate points use 128 filters, the rest 256.
    """
    if metric == "ms-ssim":
        lower = sorted(MSSSIM_LAMBDAS)[:2]
    else:
        lower = sorted(MSE_LAMBDAS)[:3]
    return 128 if lmbda <= max(lower) else 256
