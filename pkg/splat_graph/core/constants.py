from enum import Enum, IntEnum


class SourceTag(IntEnum):
    BACKGROUND = 0
    RIGID = 1
    ARTICULATED = 2
    DEFORMABLE = 3


class NodeKind(str, Enum):
    RIGID = 'rigid'
    ARTICULATED = 'articulated'
    DEFORMABLE = 'deformable'

    @property
    def source_tag(self) -> SourceTag:
        return {
            NodeKind.RIGID: SourceTag.RIGID,
            NodeKind.ARTICULATED: SourceTag.ARTICULATED,
            NodeKind.DEFORMABLE: SourceTag.DEFORMABLE,
        }[self]


class PoseProvenance(IntEnum):
    DETECTED = 0
    INTERPOLATED = 1
    OPTIMIZED = 2


class RegionClass(IntEnum):
    """Semantic mask labels"""
    NONE = 0
    HUMAN = 1
    VEHICLE = 2
    OTHER = 3


# Tracklet labels per node kind
RIGID_LABELS = ('vehicle', 'car', 'truck', 'bus')
HUMAN_LABELS = ('pedestrian', 'human')
DEFORMABLE_LABELS = ('cyclist', 'other')

LABEL_REGIONS = {
    **{label: RegionClass.VEHICLE for label in RIGID_LABELS},
    **{label: RegionClass.HUMAN for label in HUMAN_LABELS},
    **{label: RegionClass.OTHER for label in DEFORMABLE_LABELS},
}

# Rasterizer
TILE_SIZE = 16
LOW_PASS_FILTER = 0.3  # px^2
ALPHA_MAX = 0.99
ALPHA_MIN = 1.0 / 255.0
FOOTPRINT_SIGMAS = 3.0
MIN_COV_DET = 1e-12
MIN_DEPTH_OPACITY = 1e-4

# Losses and metrics
MIN_LOSS_DEPTH = 0.1  # meters
OPACITY_EPS = 1e-6
PSNR_CAP = 100.0
MIN_MSE = 1e-10
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
DYNAMIC_MASK_THRESHOLD = 0.5
MOVING_SPEED_THRESHOLD = 0.5  # m/s

# Initialisation
TESSELLATION_OPACITY = 0.1
NVS_STRIDE = 10

CHECKPOINT_SUFFIX = '.ckpt'
METRICS_HEADER = (
    'step', 'split',
    'full_psnr', 'full_ssim',
    'human_psnr', 'human_ssim',
    'vehicle_psnr', 'vehicle_ssim',
)
