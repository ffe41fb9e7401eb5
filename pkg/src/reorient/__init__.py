"""Depth-image based 3D object reorientation.

Synthetic depth-image pair generation with known relative rotations,
pluggable rotation estimators (oracle / ICP / tiny learned regressor), and
a slerp-based proportional controller that drives an object to a goal
orientation seen only through a depth image.
"""

from .controller import (
    ControllerConfig,
    ControllerTrace,
    SimEnvironment,
    evaluate_controller,
    run_controller,
)
from .dataset import (
    DatasetManifest,
    DatasetRecord,
    GenerationConfig,
    generate_dataset,
    generate_record,
    read_dataset,
    split_train_test,
)
from .estimators import (
    IcpConfig,
    IcpEstimator,
    OracleEstimator,
    RotationEstimate,
    icp_predict,
    oracle_predict,
)
from .losses import LossResult, hybrid_loss, mean_angle_loss, shapematch_loss, surrogate_loss
from .mesh import (
    PointCloud,
    TriangleMesh,
    chamfer_distance,
    load_obj,
    rotate_cloud,
    sample_vertices,
    symmetry_score,
)
from .regressor import (
    RegressorEstimator,
    RegressorModel,
    TrainConfig,
    init_regressor,
    load_model,
    regressor_forward,
    save_model,
    train,
)
from .render import (
    CameraModel,
    DepthImage,
    RandomizationConfig,
    dropout_pixels,
    load_depth_image,
    occlude_rectangle,
    render_depth,
    save_depth_image,
    to_point_cloud,
)
from .rotation import (
    IDENTITY,
    UnitQuaternion,
    angle_between,
    canonicalize,
    normalize,
    quat_to_angle,
    rotation_axis,
    rotation_difference,
    sample_constrained,
    sample_uniform_so3,
    slerp,
    to_matrix,
)

__version__ = "0.1.0"
