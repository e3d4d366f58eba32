"""Physically-based homogeneous fog rendering for depth-annotated images."""

from .airlight import Aggregation, AirlightConfig, dark_channel, estimate_airlight
from .errors import (
    ConfigError,
    DataError,
    FogError,
    FormatError,
    InputError,
    ParameterError,
    ShapeError,
)
from .geometry import (
    CameraIntrinsics,
    DepthCodec,
    DepthCodecSpec,
    DepthMap,
    DistanceMap,
    HoleFill,
    HolePolicy,
    decode_depth,
    encode_float32_raster,
    encode_scaled_u16,
    fill_holes,
    planar_to_radial,
)
from .optics import (
    CANONICAL_BETAS,
    CANONICAL_VISIBILITIES_M,
    FOG_BETA_MIN,
    MOR_CONTRAST,
    BlendSpace,
    ColorTriple,
    FogClass,
    FogParams,
    apply_fog,
    beta_from_mor,
    mor_from_beta,
    srgb_decode,
    srgb_encode,
    transmittance,
    validate_fog_beta,
)
from .pipeline import (
    DatasetManifest,
    FrameRecord,
    RunReport,
    filter_manifest,
    process_batch,
    process_frame,
    read_manifest,
    summarize_run,
    write_manifest,
)
from .raster_io import ColorRaster, LabelRaster, copy_annotations, read_image, write_image

__version__ = "0.1.0"
