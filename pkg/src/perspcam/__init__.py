"""Perspective camera recovery for close-range human silhouettes."""

from .body_model import BodyModel, Mesh, load_model, make_default_model, save_model, synthesize
from .errors import (BehindCameraError, DegenerateGeometryError, EmptySilhouetteError,
                     InvalidArgumentError, ModelFormatError, PerspcamError, SolverDivergedError)
from .losses import LossWeights, l_depth, l_joint, l_pose, l_shape, l_vert, total_loss
from .metrics import (EvalPair, MetricReport, e_f, e_inv_tz, e_tz, e_txy, evaluate_dataset, miou,
                      mpjpe, pa_mpjpe, pve)
from .projection import (OrthographicCamera, PerspectiveCamera, Translation, distortion_magnitude,
                         project_orthographic, project_perspective, zolly_heuristic_focal)
from .rasterizer import SilhouetteMask, gaussian_smooth, objective, rasterize, soft_iou
from .scenegen import GenConfig, SceneRecord, generate_dataset, read_manifest
from .solver import CameraSolveConfig, CameraSolveResult, refine_tz, solve_camera

__version__ = "0.1.0"
