import os
from dotenv import load_dotenv

load_dotenv()


def _int_or_none(value: str):
    value = value.strip()
    return int(value) if value else None


# Logging
LOG_LEVEL = os.getenv("DIFT_LOG_LEVEL", "INFO")

# Patch / Architecture Configuration
PATCH_SIZE = int(os.getenv("DIFT_PATCH_SIZE", "35"))
BORDER = _int_or_none(os.getenv("DIFT_BORDER", ""))  # empty -> floor(patch/2)
OUT_CHANNELS = int(os.getenv("DIFT_OUT_CHANNELS", "3"))
DROPOUT = float(os.getenv("DIFT_DROPOUT", "0.0"))

# Target Score Configuration (piecewise distance profile)
D_INNER = float(os.getenv("DIFT_D_INNER", "20"))
D_OUTER = float(os.getenv("DIFT_D_OUTER", "40"))
S_KNEE = float(os.getenv("DIFT_S_KNEE", "0.25"))

# Training Configuration
LR = float(os.getenv("DIFT_LR", "0.05"))
MOMENTUM = float(os.getenv("DIFT_MOMENTUM", "0.9"))
BATCHES = int(os.getenv("DIFT_BATCHES", "2000"))
BATCHSIZE = int(os.getenv("DIFT_BATCHSIZE", "32"))
TRAIN_LOG_EVERY = int(os.getenv("DIFT_TRAIN_LOG_EVERY", "1"))

# Boundary / Saccade Configuration
BOUNDARY_WINDOW = int(os.getenv("DIFT_BOUNDARY_WINDOW", "15"))
MIN_CONTRAST = int(os.getenv("DIFT_MIN_CONTRAST", "8"))
MIN_CHAIN_LENGTH = int(os.getenv("DIFT_MIN_CHAIN_LENGTH", "4"))
SACCADE_STRIDE = int(os.getenv("DIFT_SACCADE_STRIDE", "5"))
CLIMB_STEPS = [int(s) for s in os.getenv("DIFT_CLIMB_STEPS", "4,2,1").split(",") if s.strip()]
CLIMB_MAX_ITERS = int(os.getenv("DIFT_CLIMB_MAX_ITERS", "50"))
START_MIN_SCORE = float(os.getenv("DIFT_START_MIN_SCORE", "0.05"))
PRUNE_SLACK = float(os.getenv("DIFT_PRUNE_SLACK", "5"))

# Detection Configuration
DETECT_THRESHOLD = float(os.getenv("DIFT_DETECT_THRESHOLD", "0.5"))
NMS_RADIUS = float(os.getenv("DIFT_NMS_RADIUS", "20"))
AGREEMENT_RADIUS = float(os.getenv("DIFT_AGREEMENT_RADIUS", "5"))

# Inference Throughput
HEATMAP_CHUNK_ROWS = int(os.getenv("DIFT_HEATMAP_CHUNK_ROWS", "16"))  # rows of patch centers per dense chunk
THREADS = int(os.getenv("DIFT_THREADS", "1"))  # 1 keeps benchmark timings comparable

# Synthetic Data Configuration
SYNTH_WIDTH = int(os.getenv("DIFT_SYNTH_WIDTH", "178"))
SYNTH_HEIGHT = int(os.getenv("DIFT_SYNTH_HEIGHT", "218"))
LANDMARKS_FILENAME = os.getenv("DIFT_LANDMARKS_FILENAME", "landmarks.txt")
