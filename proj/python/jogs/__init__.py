"""Gaussian splatting with LK3D camera-pose refinement.

Images are float arrays of shape (H, W, 3) with values in [0, 1]. A Gaussian
cloud is a dict of arrays: ``positions`` (N, 3), ``log_scales`` (N, 3),
``rotations`` (N, 4, quaternion w x y z), ``opacity_logits`` (N,) and
``colors`` (N, 3).
"""

from ._core import (
    CameraIntrinsics,
    CameraPose,
    EulerAngles,
    JogsError,
    compute_ate,
    compute_psnr,
    compute_rpe,
    compute_ssim,
    euler_to_rotation,
    export_cloud_ply,
    generate_synthetic_scene,
    import_cloud_ply,
    photometric_loss,
    project,
    projection_jacobian,
    refine_pose,
    render,
    rotation_jacobians,
    rotation_to_euler,
    run_pipeline,
    run_sfm,
)

__all__ = [
    "CameraIntrinsics",
    "CameraPose",
    "EulerAngles",
    "JogsError",
    "compute_ate",
    "compute_psnr",
    "compute_rpe",
    "compute_ssim",
    "euler_to_rotation",
    "export_cloud_ply",
    "generate_synthetic_scene",
    "import_cloud_ply",
    "photometric_loss",
    "project",
    "projection_jacobian",
    "refine_pose",
    "render",
    "rotation_jacobians",
    "rotation_to_euler",
    "run_pipeline",
    "run_sfm",
]
