import os
from pathlib import Path
from dotenv import load_dotenv
from errors import ConfigurationError

# Load environment variables from .env file
env_path = Path(__file__).parent.parent / '.env'
load_dotenv(dotenv_path=env_path)

# Base directories
BASE_DIR = Path(__file__).parent.parent
OUTPUT_DIR = Path(os.getenv('BENCHMARK_OUTPUT_DIR', BASE_DIR / 'output'))

# Worker pool size for Monte Carlo plans (--threads overrides)
DEFAULT_THREADS = int(os.getenv('BENCHMARK_THREADS', '1'))

# Test defaults
DEFAULT_ALPHA = 0.05
DEFAULT_PI = 2 / 3
DEFAULT_KERNEL = 'laplacian'
DEFAULT_KERNEL_SCALE = 1.0
DEFAULT_FUNCTION_CLASS = 'small-mlp'
DEFAULT_EPOCHS = 6000
DEFAULT_BOOTSTRAP = 500

# Lower-bound search defaults
DEFAULT_GRID_STEPS = 13
DEFAULT_REFINE_ITERS = 6
DEFAULT_RESTARTS = 3

# Desk-scale simulation defaults
DEFAULT_N_OBS = 20000
DEFAULT_N_RCT = 2000
DEFAULT_MAX_BIAS = 60.0
DEFAULT_BIASED_FRACTION = 0.44
DEFAULT_POLY_COEFF_STD = 5.0
BASE_TREATMENT_EFFECT = 30.0

# Allowed share of failed replications before a plan is marked failed
MAX_FAILED_FRACTION = 0.05

# Function classes G and their optimizer settings
FUNCTION_CLASSES = {
    'constant': {
        'architecture': 'constant',
        'widths': [],
        'learning_rate': 0.1,
    },
    'linear': {
        'architecture': 'linear',
        'widths': [],
        'learning_rate': 0.1,
    },
    'small-mlp': {
        'architecture': 'mlp',
        'widths': [10],
        'learning_rate': 0.1,
    },
    'large-mlp': {
        'architecture': 'mlp',
        'widths': [100, 50, 10, 5],
        'learning_rate': 0.01,  # Larger network needs smaller steps
    },
}

# Scenario 2 subgroup biases as multiples of max_bias.
# Keys are (newbie, mens, channel); the twelve values sum to exactly 0.
SCENARIO2_MULTIPLIERS = {
    (0, 0, 'multichannel'): 1.0,
    (0, 0, 'phone'): -0.5,
    (0, 0, 'web'): 0.25,
    (0, 1, 'multichannel'): -0.75,
    (0, 1, 'phone'): 0.5,
    (0, 1, 'web'): -0.25,
    (1, 0, 'multichannel'): 0.75,
    (1, 0, 'phone'): -0.6,
    (1, 0, 'web'): 0.35,
    (1, 1, 'multichannel'): -0.4,
    (1, 1, 'phone'): 0.15,
    (1, 1, 'web'): -0.5,
}


def get_function_class(name=DEFAULT_FUNCTION_CLASS):
    """Get the architecture and optimizer settings for a function class name"""
    if name not in FUNCTION_CLASSES:
        raise ConfigurationError(
            f"Unknown function class '{name}'. Choose from: {', '.join(FUNCTION_CLASSES)}"
        )
    return dict(FUNCTION_CLASSES[name])
