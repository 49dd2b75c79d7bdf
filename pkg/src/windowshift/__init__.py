"""CT viewing-window preprocessing and window-shift intensity augmentation.

The toolkit covers the full path from calibrated volumes to training-ready
slices: volume I/O, dataset foreground statistics, base-window derivation,
window-shift and baseline intensity augmentations, segmentation metrics,
and synthetic phantoms that serve as ground truth for all of it.
"""

from .augment import (
    AugmentationPolicy,
    AugmentationSpec,
    additive_brightness,
    apply_policy,
    contrast,
    equivalent_brightness_range,
    gamma,
    gamma_inverse,
    load_policy,
    make_nnunet_policy,
    make_window_shift_policy,
    multiplicative_brightness,
    replay,
    save_policy,
)
from .errors import (
    CalibrationError,
    DimensionMismatchError,
    GeometryError,
    MalformedHeaderError,
    MissingClassError,
    SchemaError,
    StageContractError,
    UnsupportedDatatypeError,
    VolumeIOError,
    WindowshiftError,
)
from .metrics import (
    ContrastReport,
    DiceReport,
    dice,
    evaluate_dice,
    identify_difficult,
    mean_hu_difference,
)
from .phantom import PhantomSpec, PhantomTruth, generate, generate_cohort, write_cohort
from .rng import slice_stream
from .stats import (
    ForegroundStats,
    ViewingWindow,
    WindowShiftPolicy,
    derive_base_window,
    derive_shift_bounds,
    load_stats_document,
    normalization_params,
    save_stats,
)
from .volume_io import (
    AttenuationCalibration,
    HuVolume,
    SegmentationMask,
    export_slices,
    hu_from_attenuation,
    read_volume,
    write_mask,
    write_volume,
)
from .windowing import (
    PreprocessedSlice,
    apply_window,
    preprocess_inference,
    rescale_unit,
    sample_window_level,
    z_normalize,
)

__version__ = "0.1.0"
