"""Relative pose between two robots from the people both of them see."""
from .errors import PosekitError
from .geometry import CameraModel, RigidTransform, StereoRig
from .keypoints import KeypointSet, extract_boxes, parse_keypoints
from .pnp import PnpProblem, RansacConfig, solve_pnp_ransac
from .refine import Correspondence, RefineConfig, refine_all
from .reid import Association, ReidConfig, associate
from .sfm import reconstruct_two_view
from .ssim import ssim_map, ssim_window
from .sync import StampedItem, SyncBuffer, SyncConfig

__version__ = "0.1.0"
