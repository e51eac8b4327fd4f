"""Gaussian primitives: parameters, activations, 3D covariance, camera projection.

A scene is a cloud of anisotropic 3D Gaussians. Each one stores raw
(pre-activation) parameters: position, log-scales, logit-opacity, an
unnormalized rotation quaternion, and raw color coefficients. Activations are
applied on use (exp / sigmoid / clamp), so optimizer steps stay unconstrained.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

NEAR_PLANE = 0.01       # camera-space z cull threshold, scene units
COV2D_REG = 0.3         # px^2 added to the projected covariance diagonal


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def logit(p: float) -> float:
    return math.log(p / (1.0 - p))


def quat_to_rotation(q: np.ndarray) -> np.ndarray:
    """Rotation matrix from a (possibly unnormalized) wxyz quaternion."""
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q)
    if norm == 0.0 or not np.isfinite(norm):
        raise ValueError("quaternion must have nonzero finite norm")
    w, x, y, z = q / norm
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def color_dim(sh_degree: int) -> int:
    return 3 * (sh_degree + 1) ** 2


@dataclass
class Gaussian:
    """One splat's raw parameters (activations applied on use)."""

    position: np.ndarray      # (3,) world position
    log_scale: np.ndarray     # (3,) exp() gives per-axis stddev
    alpha_raw: float          # sigmoid() gives opacity
    quat: np.ndarray          # (4,) wxyz, normalized on use
    color: np.ndarray         # (3*(d+1)^2,), first 3 are the RGB base band


@dataclass
class CameraPose:
    """Pinhole camera: rigid world-to-camera transform plus intrinsics."""

    world_to_camera: np.ndarray  # (4, 4)
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def validate(self) -> None:
        R = self.world_to_camera[:3, :3]
        if np.max(np.abs(R @ R.T - np.eye(3))) >= 1e-5:
            raise ValueError("world_to_camera rotation block is not orthonormal")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be >= 1")

    def center(self) -> np.ndarray:
        """Camera position in world coordinates."""
        R = self.world_to_camera[:3, :3]
        t = self.world_to_camera[:3, 3]
        return -R.T @ t


@dataclass
class Splat2D:
    """A Gaussian projected to screen space, ready for rasterization."""

    mu2d: np.ndarray        # (2,) pixel coordinates
    cov2d: np.ndarray       # (2, 2) symmetric, px^2
    depth: float            # camera-space z
    color: np.ndarray       # (3,) in [0, 1]
    opacity: float          # in (0, 1)
    source_index: int


def build_covariance(log_scale: np.ndarray, quat: np.ndarray) -> np.ndarray:
    """3D covariance R diag(exp(log_scale))^2 R^T. Symmetric PSD by construction."""
    R = quat_to_rotation(quat)
    M = R * np.exp(np.asarray(log_scale, dtype=np.float64))[None, :]
    return M @ M.T


def activate(g: Gaussian) -> tuple[float, np.ndarray, np.ndarray]:
    """(opacity, scales, rgb) after sigmoid / exp / clamp activations."""
    opacity = float(sigmoid(g.alpha_raw))
    scales = np.exp(np.asarray(g.log_scale, dtype=np.float64))
    rgb = np.clip(np.asarray(g.color, dtype=np.float64)[:3], 0.0, 1.0)
    return opacity, scales, rgb


def project_gaussian(g: Gaussian, pose: CameraPose) -> Splat2D | None:
    """EWA projection of one Gaussian; None when culled by the near plane.

    The projection Jacobian is linearized at the Gaussian mean. The projected
    covariance gets COV2D_REG added to its diagonal so sub-pixel splats stay
    renderable.
    """
    pose.validate()
    W = pose.world_to_camera[:3, :3]
    t = W @ np.asarray(g.position, dtype=np.float64) + pose.world_to_camera[:3, 3]
    tx, ty, tz = t
    if tz <= NEAR_PLANE:
        return None
    mu2d = np.array([pose.fx * tx / tz + pose.cx, pose.fy * ty / tz + pose.cy])
    J = np.array([
        [pose.fx / tz, 0.0, -pose.fx * tx / tz ** 2],
        [0.0, pose.fy / tz, -pose.fy * ty / tz ** 2],
    ])
    cov3d = build_covariance(g.log_scale, g.quat)
    cov2d = J @ W @ cov3d @ W.T @ J.T + COV2D_REG * np.eye(2)
    opacity, _, rgb = activate(g)
    return Splat2D(mu2d=mu2d, cov2d=cov2d, depth=float(tz), color=rgb,
                   opacity=opacity, source_index=0)


@dataclass
class RenderStats:
    """Buffer sizes observed in the most recent render (feeds the memory model)."""

    width: int = 0
    height: int = 0
    tile_index_entries: int = 0


@dataclass
class AdamState:
    """First/second moment accumulators per parameter array, one shared step count."""

    m_position: np.ndarray
    v_position: np.ndarray
    m_log_scale: np.ndarray
    v_log_scale: np.ndarray
    m_alpha_raw: np.ndarray
    v_alpha_raw: np.ndarray
    m_quat: np.ndarray
    v_quat: np.ndarray
    m_color: np.ndarray
    v_color: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n: int, cdim: int) -> "AdamState":
        return cls(
            m_position=np.zeros((n, 3)), v_position=np.zeros((n, 3)),
            m_log_scale=np.zeros((n, 3)), v_log_scale=np.zeros((n, 3)),
            m_alpha_raw=np.zeros(n), v_alpha_raw=np.zeros(n),
            m_quat=np.zeros((n, 4)), v_quat=np.zeros((n, 4)),
            m_color=np.zeros((n, cdim)), v_color=np.zeros((n, cdim)),
        )

    def arrays(self) -> list[np.ndarray]:
        return [self.m_position, self.v_position, self.m_log_scale, self.v_log_scale,
                self.m_alpha_raw, self.v_alpha_raw, self.m_quat, self.v_quat,
                self.m_color, self.v_color]


@dataclass
class DensifyStats:
    """Running densification statistics between density-control events."""

    grad_norm_sum: np.ndarray   # (N,) summed view-space positional gradient norms
    views_seen: np.ndarray      # (N,) number of views the Gaussian participated in

    @classmethod
    def zeros(cls, n: int) -> "DensifyStats":
        return cls(grad_norm_sum=np.zeros(n), views_seen=np.zeros(n, dtype=np.int64))


class GaussianCloud:
    """Struct-of-arrays collection of Gaussians plus optimizer/densify state.

    Per-Gaussian rows across all arrays stay aligned: mutating methods resize
    the optimizer moments and densification statistics together with the
    parameters. Mutation is owned by the trainer (single writer); reads are
    safe from anywhere.
    """

    def __init__(self, position, log_scale, alpha_raw, quat, color, sh_degree: int = 0):
        self.position = np.ascontiguousarray(position, dtype=np.float64)
        self.log_scale = np.ascontiguousarray(log_scale, dtype=np.float64)
        self.alpha_raw = np.ascontiguousarray(alpha_raw, dtype=np.float64)
        self.quat = np.ascontiguousarray(quat, dtype=np.float64)
        self.color = np.ascontiguousarray(color, dtype=np.float64)
        self.sh_degree = int(sh_degree)
        n = len(self.position)
        if not (len(self.log_scale) == len(self.alpha_raw) == len(self.quat)
                == len(self.color) == n):
            raise ValueError("parameter arrays disagree on Gaussian count")
        if self.color.shape[1] != color_dim(self.sh_degree):
            raise ValueError("color array width does not match SH degree")
        self.opt = AdamState.zeros(n, self.color.shape[1])
        self.densify = DensifyStats.zeros(n)
        self.render_stats = RenderStats()

    def __len__(self) -> int:
        return len(self.position)

    @classmethod
    def empty(cls, sh_degree: int = 0) -> "GaussianCloud":
        cdim = color_dim(sh_degree)
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0),
                   np.zeros((0, 4)), np.zeros((0, cdim)), sh_degree)

    @classmethod
    def from_gaussians(cls, gaussians: list[Gaussian], sh_degree: int = 0) -> "GaussianCloud":
        if not gaussians:
            return cls.empty(sh_degree)
        return cls(
            np.stack([g.position for g in gaussians]),
            np.stack([g.log_scale for g in gaussians]),
            np.array([g.alpha_raw for g in gaussians], dtype=np.float64),
            np.stack([g.quat for g in gaussians]),
            np.stack([np.asarray(g.color, dtype=np.float64) for g in gaussians]),
            sh_degree,
        )

    def gaussian(self, i: int) -> Gaussian:
        return Gaussian(position=self.position[i].copy(),
                        log_scale=self.log_scale[i].copy(),
                        alpha_raw=float(self.alpha_raw[i]),
                        quat=self.quat[i].copy(),
                        color=self.color[i].copy())

    def param_arrays(self) -> list[np.ndarray]:
        return [self.position, self.log_scale, self.alpha_raw, self.quat, self.color]

    def opacities(self) -> np.ndarray:
        return sigmoid(self.alpha_raw)

    def keep(self, mask: np.ndarray) -> None:
        """Drop Gaussians where mask is False, keeping all side arrays aligned."""
        self.position = self.position[mask]
        self.log_scale = self.log_scale[mask]
        self.alpha_raw = self.alpha_raw[mask]
        self.quat = self.quat[mask]
        self.color = self.color[mask]
        for name in ("m_position", "v_position", "m_log_scale", "v_log_scale",
                     "m_alpha_raw", "v_alpha_raw", "m_quat", "v_quat",
                     "m_color", "v_color"):
            setattr(self.opt, name, getattr(self.opt, name)[mask])
        self.densify.grad_norm_sum = self.densify.grad_norm_sum[mask]
        self.densify.views_seen = self.densify.views_seen[mask]

    def append(self, position, log_scale, alpha_raw, quat, color) -> None:
        """Append new Gaussians with zeroed optimizer moments and densify stats."""
        k = len(position)
        self.position = np.concatenate([self.position, position])
        self.log_scale = np.concatenate([self.log_scale, log_scale])
        self.alpha_raw = np.concatenate([self.alpha_raw, alpha_raw])
        self.quat = np.concatenate([self.quat, quat])
        self.color = np.concatenate([self.color, color])
        for name in ("m_position", "v_position", "m_log_scale", "v_log_scale",
                     "m_alpha_raw", "v_alpha_raw", "m_quat", "v_quat",
                     "m_color", "v_color"):
            arr = getattr(self.opt, name)
            pad_shape = (k,) + arr.shape[1:]
            setattr(self.opt, name, np.concatenate([arr, np.zeros(pad_shape)]))
        self.densify.grad_norm_sum = np.concatenate([self.densify.grad_norm_sum, np.zeros(k)])
        self.densify.views_seen = np.concatenate([self.densify.views_seen,
                                                  np.zeros(k, dtype=np.int64)])

    def reset_densify_stats(self) -> None:
        self.densify = DensifyStats.zeros(len(self))


def project_cloud(cloud: GaussianCloud, pose: CameraPose):
    """Vectorized projection of a whole cloud.

    Returns (valid, mu2d, cov2d_packed, depth, color, opacity) where
    cov2d_packed holds (a, b, c) of [[a, b], [b, c]] per Gaussian. Rows with
    valid == False (near-plane culled) carry unspecified values.
    """
    n = len(cloud)
    W = pose.world_to_camera[:3, :3]
    tvec = pose.world_to_camera[:3, 3]
    t = cloud.position @ W.T + tvec
    valid = t[:, 2] > NEAR_PLANE
    tz = np.where(valid, t[:, 2], 1.0)
    tx, ty = t[:, 0], t[:, 1]

    mu2d = np.empty((n, 2))
    mu2d[:, 0] = pose.fx * tx / tz + pose.cx
    mu2d[:, 1] = pose.fy * ty / tz + pose.cy

    # camera-space covariance V = W Sigma W^T with Sigma = (R S)(R S)^T
    sig = np.exp(cloud.log_scale)
    R = rotations_from_quats(cloud.quat)
    M = R * sig[:, None, :]
    WM = np.einsum("ij,njk->nik", W, M)
    V = WM @ np.transpose(WM, (0, 2, 1))

    J = np.zeros((n, 2, 3))
    J[:, 0, 0] = pose.fx / tz
    J[:, 0, 2] = -pose.fx * tx / tz ** 2
    J[:, 1, 1] = pose.fy / tz
    J[:, 1, 2] = -pose.fy * ty / tz ** 2
    cov = J @ V @ np.transpose(J, (0, 2, 1))
    cov2d = np.empty((n, 3))
    cov2d[:, 0] = cov[:, 0, 0] + COV2D_REG
    cov2d[:, 1] = cov[:, 0, 1]
    cov2d[:, 2] = cov[:, 1, 1] + COV2D_REG

    color = np.clip(cloud.color[:, :3], 0.0, 1.0)
    opacity = sigmoid(cloud.alpha_raw)
    return valid, mu2d, cov2d, t[:, 2].copy(), color, opacity


def rotations_from_quats(quats: np.ndarray) -> np.ndarray:
    """(N, 4) wxyz quaternions -> (N, 3, 3) rotation matrices, normalizing first."""
    norm = np.linalg.norm(quats, axis=1)
    if np.any(norm == 0.0) or not np.all(np.isfinite(norm)):
        raise ValueError("quaternion must have nonzero finite norm")
    q = quats / norm[:, None]
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    R = np.empty((len(quats), 3, 3))
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R
