from typing import Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .config import (
    AGREEMENT_RADIUS,
    BATCHES,
    BATCHSIZE,
    BORDER,
    BOUNDARY_WINDOW,
    CLIMB_MAX_ITERS,
    CLIMB_STEPS,
    D_INNER,
    D_OUTER,
    DETECT_THRESHOLD,
    DROPOUT,
    LR,
    MIN_CHAIN_LENGTH,
    MIN_CONTRAST,
    MOMENTUM,
    NMS_RADIUS,
    OUT_CHANNELS,
    PATCH_SIZE,
    PRUNE_SLACK,
    S_KNEE,
    SACCADE_STRIDE,
    START_MIN_SCORE,
    SYNTH_HEIGHT,
    SYNTH_WIDTH,
)

DEFAULT_CHANNEL_NAMES = ("eyes", "nose", "mouth_corners")


class ScoreParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    d_inner: float = D_INNER
    d_outer: float = D_OUTER
    s_knee: float = S_KNEE

    @model_validator(mode="after")
    def _check_breakpoints(self):
        if not 0 < self.d_inner < self.d_outer:
            raise ValueError(f"need 0 < d_inner < d_outer, got {self.d_inner}, {self.d_outer}")
        if not 0 < self.s_knee < 1:
            raise ValueError(f"need 0 < s_knee < 1, got {self.s_knee}")
        return self


class PatchSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    size: int = PATCH_SIZE
    border: Optional[int] = BORDER  # None -> floor(size/2)

    @model_validator(mode="before")
    @classmethod
    def _default_border(cls, data):
        if isinstance(data, dict) and data.get("border", BORDER) is None:
            data = {**data, "border": int(data.get("size", PATCH_SIZE)) // 2}
        return data

    @field_validator("size")
    @classmethod
    def _odd_size(cls, v: int) -> int:
        if v < 1 or v % 2 == 0:
            raise ValueError(f"patch size must be odd and positive, got {v}")
        return v

    @model_validator(mode="after")
    def _border_contains_patch(self):
        if self.border < self.half:
            raise ValueError(f"border {self.border} is smaller than half the patch ({self.half})")
        return self

    @property
    def half(self) -> int:
        return self.size // 2


class ArchConfig(BaseModel):
    """Layer sizes of the patch scorer; dense sizes derive from patch_size."""

    model_config = ConfigDict(frozen=True)

    patch_size: int = PATCH_SIZE
    out_channels: int = Field(default=OUT_CHANNELS, ge=1)
    dropout: float = DROPOUT
    in_channels: int = 3
    conv1_out: int = 9
    conv1_kernel: int = 16
    conv2_out: int = 18
    conv2_kernel: int = 11
    row_width: int = 50
    hidden: Tuple[int, ...] = (256, 64, 16)

    @model_validator(mode="after")
    def _check_shapes(self):
        if not 0 <= self.dropout < 1:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.conv2_side < 1:
            raise ValueError(
                f"patch size {self.patch_size} is too small for kernels "
                f"{self.conv1_kernel} and {self.conv2_kernel}"
            )
        sizes = (self.in_channels, self.conv1_out, self.conv2_out, self.row_width, *self.hidden)
        if min(sizes) < 1:
            raise ValueError("all layer sizes must be positive")
        return self

    @property
    def conv1_side(self) -> int:
        return self.patch_size - self.conv1_kernel + 1

    @property
    def conv2_side(self) -> int:
        return self.conv1_side - self.conv2_kernel + 1

    @property
    def spatial(self) -> int:
        return self.conv2_side * self.conv2_side

    @property
    def flat(self) -> int:
        return self.conv2_out * self.row_width


class BoundaryParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    window: int = Field(default=BOUNDARY_WINDOW, ge=1)
    min_contrast: int = Field(default=MIN_CONTRAST, ge=0, le=255)
    min_chain_length: int = Field(default=MIN_CHAIN_LENGTH, ge=1)
    stride: int = Field(default=SACCADE_STRIDE, ge=1)


class ClimbParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    steps: Tuple[int, ...] = tuple(CLIMB_STEPS)
    max_iters: int = Field(default=CLIMB_MAX_ITERS, ge=1)

    @field_validator("steps")
    @classmethod
    def _positive_steps(cls, v):
        if not v or min(v) < 1:
            raise ValueError(f"step schedule must be non-empty and positive, got {v}")
        return v


class DetectParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    threshold: float = DETECT_THRESHOLD
    nms_radius: float = Field(default=NMS_RADIUS, ge=0)
    start_min_score: float = START_MIN_SCORE
    prune: bool = True
    prune_slack: float = Field(default=PRUNE_SLACK, ge=0)
    climb: ClimbParams = ClimbParams()
    boundary: BoundaryParams = BoundaryParams()
    score: ScoreParams = ScoreParams()  # profile used to turn start scores into distances
    agreement_radius: float = AGREEMENT_RADIUS


class TrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    seed: int
    batches: int = Field(default=BATCHES, ge=0)
    batchsize: int = Field(default=BATCHSIZE, ge=1)
    lr: float = Field(default=LR, ge=0)
    momentum: float = MOMENTUM
    patch: PatchSpec = PatchSpec()
    score: ScoreParams = ScoreParams()
    sampling: Literal["uniform", "saccade"] = "uniform"
    boundary: BoundaryParams = BoundaryParams()

    @field_validator("momentum")
    @classmethod
    def _momentum_range(cls, v: float) -> float:
        if not 0 <= v < 1:
            raise ValueError(f"momentum must be in [0, 1), got {v}")
        return v


class SynthSpec(BaseModel):
    """Layout of a synthetic labeled scene: one feature class per channel."""

    model_config = ConfigDict(frozen=True)

    width: int = SYNTH_WIDTH
    height: int = SYNTH_HEIGHT
    channel_names: Tuple[str, ...] = DEFAULT_CHANNEL_NAMES
    counts: Tuple[int, ...] = (2, 1, 2)
    radius: Tuple[int, int] = (5, 8)  # feature radius range, ~10-16 px across
    margin: int = 25  # keep centers this far from the image edge
    min_separation: float = 2 * D_OUTER  # between features of different channels
    min_same_channel: float = 36.0
    rect_count: Tuple[int, int] = (55, 70)
    rect_size: Tuple[int, int] = (8, 30)
    noise: int = 3
    max_attempts: int = 1000

    @model_validator(mode="after")
    def _check_layout(self):
        if len(self.counts) != len(self.channel_names):
            raise ValueError("counts and channel_names must have the same length")
        if len(self.counts) > 3:
            raise ValueError("at most three feature classes can be rendered")
        if self.width <= 2 * self.margin or self.height <= 2 * self.margin:
            raise ValueError(f"{self.width}x{self.height} image leaves no room inside margin {self.margin}")
        return self
