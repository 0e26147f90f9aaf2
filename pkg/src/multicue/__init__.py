"""Multimodal RGB-D template matching for diffuse, transparent and composite
tabletop objects.

The pipeline: stabilize a short frame window, transform the frame through four
cue channels (intensity gradients, surface normals, unavailable-depth contours,
crossmodally filtered specular highlights), quantize and spread the cues into
bit-coded response maps, and slide bin-indexed templates over them.  Matched
features are backprojected through scanline-filled depth to a 3D centroid.
"""

from .config import MatchConfig, load_config, save_config
from .cues import (Channel, MODALITIES, ModalityChannel, NormalMap, OrientationMap,
                   crossmodal_specular_filter, depth_normals, extruded_normals,
                   intensity_gradients, mask_contour_orientations, merge_normal_maps,
                   nan_mask, specular_candidates)
from .errors import (ConfigMismatchError, DatabaseFormatError, DimensionMismatchError,
                     EmptyAccumulatorError, EmptyTemplateError, FrameFormatError,
                     LocalizationError, MulticueError, SceneSpecError,
                     UnavailableDepthError)
from .frames import (CameraIntrinsics, Point3D, RGBDFrame, backproject,
                     load_frame, load_intrinsics, luminance, save_frame)
from .localize import (ObjectLocation, locate, scanline_depth_fill,
                       statistical_outlier_filter)
from .matching import (Detection, bench_full_comparison, detect, detect_with_maps,
                       non_max_suppress, score, score_image)
from .responses import (FrameMaps, QuantizedMap, ResponseStack, SpreadMap,
                        build_frame_maps, build_response_maps, normal_lut,
                        orientation_lut, quantize_normal, quantize_normal_map,
                        quantize_orientation, quantize_orientation_map, spread)
from .scenes import (GroundTruth, GroundTruthObject, LightSpec, NoiseSpec,
                     ObjectSpec, SceneSpec, TableSpec, load_scene_spec, render,
                     rotate_views, save_scene_spec, write_scene)
from .stabilize import (FrameAccumulator, stabilize, stabilize_windows,
                        unstable_fraction)
from .templates import (Feature, Template, TemplateDB, View, extract_template,
                        is_duplicate, load_db, save_db, train_from_views)

__version__ = "0.1.0"
