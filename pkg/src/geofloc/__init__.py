"""Floorplan localization engine and 3D geometric prior mining toolkit.

Submodules:

* :mod:`geofloc.geom` -- pinhole cameras, rigid poses, frustums
* :mod:`geofloc.floorplan` -- occupancy grids, SE(2) poses, ray scans
* :mod:`geofloc.mining` -- depth-based correspondence mining and frustum chunks
* :mod:`geofloc.contrastive` -- PointInfoNCE loss and gradient
* :mod:`geofloc.obsmodel` -- depth-hypothesis distributions, fusion, FLoc loss
* :mod:`geofloc.histogram_filter` -- single-frame scoring and Bayes tracking
* :mod:`geofloc.sim` -- procedural floorplans, trajectories, RGB-D frames
* :mod:`geofloc.metrics`, :mod:`geofloc.experiment`, :mod:`geofloc.cli`
"""

from .errors import *  # noqa: F401,F403
from .floorplan import FREE, OCCUPIED, UNKNOWN, OccupancyGrid, Pose2, RayScan, raycast, render_scan
from .geom import CameraIntrinsics, Frustum, PointCloud, RigidPose3, depth_to_cloud, frustum_of, unproject
from .histogram_filter import FilterParams, MotionDelta, PosteriorGrid, single_frame_localize, track
from .metrics import LocalizationRecord, MetricReport, rmse, success_rate
from .obsmodel import DepthDistribution, expected_scan, floc_loss, fuse, upsample_rays
from .contrastive import FeatureMap, point_info_nce, point_info_nce_grad
from .mining import crop_frustum_chunk, find_correspondences, mine_pairs
from .sim import ScenarioSpec, gen_floorplan, gen_scenario

__version__ = "0.1.0"
