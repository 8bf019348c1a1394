"""Drill-hole surface reconstruction from catheter OCT pullbacks.

The usual flow is::

    geom = build_phantom(PhantomModel.random(seed=0))
    stack, truth = simulate_oct(geom, AcquisitionConfig())
    flat = SliceUndistorter().fit(stack).transform(stack)
    surface = SurfaceExtractor().transform(flat)
    mask, threshold = segment(surface, "depth")
    report = jaccard(mask, truth.pattern_mask)
"""

from .acquisition import AcquisitionConfig, GroundTruth, NoiseConfig, SineModel, simulate_oct
from .config import PipelineConfig, load_config
from .endo_stitch import Panorama, PanoramaStitcher, normalized_cross_correlation, stitch, unroll_frame
from .endoscope import AnnulusFrame, simulate_endo_frames
from .exceptions import (
    ConfigurationError, DegenerateInputError, FitRejectedError, FormatError, InsufficientDataError,
    NoBorderCandidatesError, OctdsError, PixelRangeError, StackIOError, ValidationError,
)
from .phantom import PhantomGeometry, PhantomModel, Pocket, build_phantom
from .raw_io import BScanPolar, VolumeStack, read_stack, write_stack
from .segmetrics import LiThreshold, MetricsReport, PatternMask, jaccard, li_threshold, segment
from .surface import HollowCylinderVolume, SurfaceExtractor, SurfaceMap, build_volume, extract_depth
from .undistort import (
    BinarizeParams, EnhanceParams, FitReport, RansacParams, RansacSineRegressor, SliceUndistorter,
    binarize_border, enhance, fit_sine, unwarp,
)

__version__ = "0.1.0"
