"""treebench: synthetic orchard capture simulation and 3D tree reconstruction evaluation.

A numpy/scipy library covering the non-learned geometry of a row-scanning
phenotyping pipeline: procedural apple trees with exact ground truth,
simulated stereo-equivalent depth capture, background removal, rigid
registration, point-cloud metrics, structural trait extraction, and scale
retrieval, plus a pluggable boundary for external reconstruction backends.
"""

from .backends import DegradeSpec, ReconResult, ingest_external, oracle_backend
from .camsim import (NoiseSpec, RowSpec, degrade_depth, make_ground_plane,
                     mono_from_depth, plan_trajectory, render_depth,
                     render_mono_reldepth, render_scene)
from .errors import (ConfigError, DegradationError, EmptySegmentationError,
                     IngestError, InputError, RegistrationError, SkeletonError,
                     TraitUnavailable)
from .geom import (CameraIntrinsics, DepthMap, NNIndex, PointCloud, Pose,
                   VoxelGrid, ZED_EQUIVALENT, downsample, merge_clouds,
                   project, unproject, voxelize)
from .metrics import ErrorStats, GeomMetrics, chamfer_l2, error_stats, geom_metrics, jsd, throughput_ratio
from .pipeline import (BackendSpec, DatasetSpec, EvalReport, ExperimentConfig,
                       SceneSpec, make_tables, run_pipeline, write_tables)
from .qsm import QsmParams, count_branches, extract_skeleton, extract_traits, trunk_diameter, tree_height
from .registration import IcpParams, IcpReport, RigidTransform, apply_transform, crop_box, icp_align
from .scaling import ScaleResult, apply_scale, scale_factor
from .segmentation import (FrameBundle, SegConfig, SegMask, cluster_filter,
                           distance_filter, ground_mask, segment_tree, sky_mask)
from .skeleton import SkeletonGraph, TraitReport
from .treegen import (TreeModel, TreeParams, TriMesh, generate_tree,
                      merge_meshes, random_params, sample_surface)

__version__ = "0.1.0"
