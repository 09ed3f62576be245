"""
HGC constants

Constants for the hyperspectral graph clustering pipeline
"""

# Container format.
CUBE_HEADER_SUFFIX = ".hgc.json"
CUBE_PAYLOAD_SUFFIX = ".hgc.bin"
CUBE_DTYPE = "f32le"
LABELS_TEXT_SUFFIX = ".labels.txt"
LABELS_PGM_SUFFIX = ".pgm"
HEADER_KEYS = ("width", "height", "bands", "dtype", "payload")

# Working filenames.
NAME_LOGFILE = "hgc.log"
NAME_MANIFEST = "manifest.json"
NAME_PCA_MODEL = "pca_model.json"
NAME_REDUCED = "reduced.npy"
NAME_SEGMENTATION = "segmentation.npz"
NAME_SEGMENTATION_GRID = "segmentation.labels.txt"
NAME_SEGMENTATION_OVERLAY = "segmentation.ppm"
NAME_SPLIT = "split.json"
NAME_NODE_LABELS = "node_labels.npz"
NAME_GRAPH = "graph.npz"
NAME_GRAPH_EDGES = "graph.edges.txt"
NAME_GRAPH_ATTRIBUTES = "graph.attributes.txt"
NAME_PARTITION = "partition.txt"
SUBGRAPH_DIR = "subgraphs"
SUBGRAPH_FILENAME = "subgraph_{:03d}.npz"
NAME_CHECKPOINT = "model.npz"
NAME_HISTORY = "history.csv"
NAME_PREDICTION = "prediction.npy"
NAME_CLASSIFICATION_MAP = "classification.ppm"
NAME_METRICS_JSON = "metrics.json"
NAME_METRICS_TEXT = "metrics.txt"
NAME_SWEEP_CSV = "sweep_summary.csv"
NAME_SWEEP_JSON = "sweep_summary.json"
NAME_SWEEP_TEXT = "sweep_summary.txt"
TEMP_SUFFIX = ".tmp"

# Stages, in pipeline order.
STAGES = ("pca", "segment", "graph", "partition", "train", "predict", "eval")

# Environment.
ENV_THREADS = "HGC_THREADS"

# Checkpoints.
CHECKPOINT_VERSION = 1

# Run configuration defaults.
DEFAULT_PCA_DIM = 30
DEFAULT_COMPACTNESS = 1.0
DEFAULT_SLIC_ITERS = 10
DEFAULT_O = 2
DEFAULT_K = 5
DEFAULT_C = 5
DEFAULT_HIDDEN_UNITS = 64
DEFAULT_CONV_DIM = 128
DEFAULT_EPOCHS = 400
DEFAULT_LEARNING_RATE = 0.005
DEFAULT_SEED = 0
DEFAULT_PER_CLASS = 30
DEFAULT_PER_CLASS_SMALL = 15
DEFAULT_VAL_FRACTION = 0.1
DEFAULT_BALANCE_EPS = 0.1
DEFAULT_SWEEP_SEEDS = 10

# Superpixel count heuristic: one superpixel per this many pixels, capped.
PIXELS_PER_SUPERPIXEL = 14
MAX_SUPERPIXELS = 2000

# Training.
STEPS_PER_CLUSTER = 5
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8

# Partitioning.
MIN_COARSE_NODES = 40
COARSE_NODES_PER_PART = 8
MAX_FM_PASSES = 10
INITIAL_BISECTION_TRIES = 4

# PCA.
JACOBI_TOLERANCE = 1e-10
JACOBI_MAX_SWEEPS = 100

# Dataset presets: graph hyper-parameters and class names.
PRESETS = {
    "indian_pines": {
        "o": 2,
        "k": 5,
        "c": 5,
        "class_names": [
            "Alfalfa",
            "Corn-notill",
            "Corn-mintill",
            "Corn",
            "Grass-pasture",
            "Grass-trees",
            "Grass-pasture-mowed",
            "Hay-windrowed",
            "Oats",
            "Soybean-notill",
            "Soybean-mintill",
            "Soybean-clean",
            "Wheat",
            "Woods",
            "Buildings-grass-trees-drives",
            "Stone-steel-towers",
        ],
    },
    "pavia_university": {
        "o": 2,
        "k": 2,
        "c": 7,
        "class_names": [
            "Asphalt",
            "Meadows",
            "Gravel",
            "Trees",
            "Painted metal sheets",
            "Bare soil",
            "Bitumen",
            "Self-blocking bricks",
            "Shadows",
        ],
    },
    "salinas": {
        "o": 2,
        "k": 9,
        "c": 5,
        "class_names": [
            "Brocoli green weeds 1",
            "Brocoli green weeds 2",
            "Fallow",
            "Fallow rough plow",
            "Fallow smooth",
            "Stubble",
            "Celery",
            "Grapes untrained",
            "Soil vinyard develop",
            "Corn senesced green weeds",
            "Lettuce romaine 4wk",
            "Lettuce romaine 5wk",
            "Lettuce romaine 6wk",
            "Lettuce romaine 7wk",
            "Vinyard untrained",
            "Vinyard vertical trellis",
        ],
    },
}

# Classification map colours for class ids 1..16; 0 (unlabeled) is black.
UNLABELED_RGB = (0, 0, 0)
DEFAULT_PALETTE = {
    1: (255, 0, 0),
    2: (0, 255, 0),
    3: (0, 0, 255),
    4: (255, 255, 0),
    5: (0, 255, 255),
    6: (255, 0, 255),
    7: (192, 192, 192),
    8: (128, 128, 128),
    9: (128, 0, 0),
    10: (128, 128, 0),
    11: (0, 128, 0),
    12: (128, 0, 128),
    13: (0, 128, 128),
    14: (0, 0, 128),
    15: (255, 165, 0),
    16: (255, 215, 180),
}
BOUNDARY_RGB = (255, 0, 0)

# Synthetic dataset.
SYNTHETIC_NAME = "synthetic"
SYNTHETIC_WIDTH = 20
SYNTHETIC_HEIGHT = 20
SYNTHETIC_BANDS = 8
SYNTHETIC_CLASSES = 4
SYNTHETIC_NOISE = 0.01
