"""Constants for MCNF Tools"""

# Manifold kinds and the number of size parameters in their spec strings
MANIFOLD_KINDS = {
    'sphere': 1,
    'so': 1,
    'u': 1,
    'su': 1,
    'stiefel': 2,
    'spd': 1,
    'euclid': 1,
}

MANIFOLD_NAMES = {
    'sphere': 'Hypersphere S^n',
    'so': 'Special orthogonal group SO(n)',
    'u': 'Unitary group U(n)',
    'su': 'Special unitary group SU(n)',
    'stiefel': 'Stiefel manifold V_m(R^n)',
    'spd': 'Symmetric positive definite matrices Sym+(n)',
    'euclid': 'Euclidean space R^d (test fixture)',
}

# Target families and the manifold kinds they live on
TARGET_FAMILIES = {
    'vmf': ('sphere',),
    'langevin': ('so', 'stiefel'),
    'unitary_trace': ('u', 'su'),
    'wishart': ('spd',),
    'conjugation_invariant': ('su',),
    'base': tuple(MANIFOLD_KINDS),
}

# Coefficient presets for the conjugation invariant density on SU(3)
CONJUGATION_PRESETS = {
    'c1': (0.17, -0.65, 1.22),
    'c2': (0.98, -0.63, -0.21),
}

# Fixed SPD mixture centers, divided by beta before use
SPD_CENTERS = {
    2: [
        [[1.0, 0.0], [0.0, 2.0]],
        [[2.0, 0.0], [0.0, 1.0]],
        [[1.0, 1.0], [1.0, 2.0]],
        [[2.0, -1.0], [-1.0, 1.0]],
    ],
    3: [
        [[2.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        [[1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 1.0]],
        [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 2.0]],
        [[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 2.0]],
    ],
}

# SPD base density: Wishart with scale (SPD_BASE_SCALE / beta) * I
SPD_BASE_SCALE = 5.0
SPD_DEFAULT_BETA = 20.0

# Coefficient network: hidden width = HIDDEN_FACTOR * m_gen, two hidden layers
HIDDEN_FACTOR = 5
HIDDEN_LAYERS = 2
OUTPUT_INIT_SCALE = 0.01

# Numerical thresholds
QR_RANK_TOL = 1e-12
SPD_PIVOT_MIN = 1e-10
RETRACT_TRUST_RADIUS = 0.1
RETRACT_SKIP_TOL = 1e-13
VELOCITY_CONSTRAINT_TOL = 1e-6

# Dormand-Prince step control
STEP_SAFETY = 0.9
STEP_FACTOR_MIN = 0.2
STEP_FACTOR_MAX = 5.0

# Training defaults
DEFAULT_BATCH_SIZE = 512
DEFAULT_LEARNING_RATE = 5e-4
DEFAULT_TRAIN_STEPS = 5000
DEFAULT_EVAL_SAMPLES = 200000
DEFAULT_CHUNK_SIZE = 128
MAX_DROP_FRACTION = 0.1

# RNG stream tags, combined with the run seed in numpy SeedSequences
STREAM_INIT = 1
STREAM_CENTERS = 2
STREAM_TRAIN = 3
STREAM_EVAL = 4

# Output files written by the CLI
CHECKPOINT_FILE = 'checkpoint.bin'
TRAIN_LOG_FILE = 'train_log.csv'
EVAL_FILE = 'eval.json'
CENTERS_FILE = 'centers.json'
SAMPLES_FILE = 'samples.csv'
CONFIG_ECHO_FILE = 'config.toml'

TRAIN_LOG_COLUMNS = ['step', 'loss', 'wall_ms', 'n_ode_steps_mean']
