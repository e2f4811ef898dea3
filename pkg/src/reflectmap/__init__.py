"""Reflective-surface detection, global plane mapping and point classification
for dual-return LiDAR scans."""

from .geometry import (BoundaryHull, Plane, PlaneKind, Pose, convex_hull_2d,
                       fit_plane_ransac, hull_overlap_ratio, merge_hulls,
                       mirror_points, point_in_hull, polygon_area,
                       project_to_hull_frame, ray_plane_intersection,
                       transform_plane)
from .ingest import (GroundTruthLabels, OrganizedCloud, Return, Trajectory,
                     load_dual_scan, load_labels, load_trajectory,
                     organize_points)
from .detect import (DetectConfig, DetectedPlane, DualReturnMask,
                     detect_dual_return, detect_reflective_planes,
                     extract_ground_plane, extract_ordinary_planes,
                     find_intensity_peaks, fit_reflective_planes)
from .register import (MatchThresholds, PlaneMatch, RegisterConfig,
                       RegistrationResult, gauss_newton_refine, match_planes,
                       ransac_match_filter, register_frames, rotation_svd,
                       translation_lsq)
from .planemap import (GlobalPlaneMap, MapConfig, MapPlane, load_map,
                       match_to_map, prune_map, save_map,
                       scan_to_map_optimize, update_map)
from .classify import (ClassifyConfig, LabeledCloud, PointLabel,
                       classify_cloud, filtered_cloud, mirror_back,
                       partition_by_planes, resolve_behind)
from .sim import (Candidate, Material, Scene, SensorModel, Surface,
                  render_scan, render_sequence, select_dual_returns,
                  trace_beam)
from .evaluate import (ConfusionMatrix, RemovalMetrics, iou, precision_recall,
                       removal_metrics)
from .config import PipelineConfig, load_config

__version__ = "0.1.0"
