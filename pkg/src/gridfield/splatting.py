"""Screen-space projection of 3D Gaussians, feature compositing, and training.

Geometry (positions, covariances, opacities) is fixed; only the 3-channel
per-Gaussian feature is trainable.  Rendering composites depth-sorted 2D
splats front to back:

    F = sum_i f_i * a_i * prod_{j<i} (1 - a_j)

with a_i the opacity-weighted 2D Gaussian. Pixel centers sit at integer
coordinates; (x, y) = (column, row).

The training loss mixes mean absolute error with a structural
dissimilarity term over supervised pixels, and its gradient with respect
to the rendered map is analytic (finite-difference checked in the tests).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import kernels
from .errors import ContractViolation, DomainError, TrainingDiverged
from .scene_data import Camera, FeatureMap, GaussianCloud, TrainConfig

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class RenderConfig:
    tile: int = 16  # tile edge in pixels
    alpha_cutoff: float = 1.0 / 255.0  # minimum per-splat contribution
    dilation: float = 0.3  # low-pass covariance dilation, pixels^2
    transmittance_floor: float = 1e-4  # early-stop threshold

    def __post_init__(self):
        if self.tile < 1:
            raise DomainError("tile must be >= 1")
        if not (0.0 < self.alpha_cutoff < 1.0):
            raise DomainError("alpha_cutoff must lie in (0, 1)")


@dataclass
class Splat2D:
    mean2d: np.ndarray  # (2,) pixel coordinates
    cov2d: np.ndarray  # (2, 2) symmetric positive definite, pixels^2
    depth: float
    gaussian_id: int


def quat_to_rotation(q: np.ndarray) -> np.ndarray:
    """(..., 4) unit quaternions (w, x, y, z) to (..., 3, 3) rotation matrices."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def _project_arrays(
    cloud: GaussianCloud, cam: Camera, width: int, height: int, cfg: RenderConfig
) -> tuple[np.ndarray, ...]:
    """Vectorized projection of every Gaussian; returns only the survivors.

    Output arrays are ordered by original Gaussian index; callers sort by
    depth.  Culls behind-the-near-plane Gaussians and splats whose 3-sigma
    disc misses the image.
    """
    if not np.all(np.isfinite(cam.world_to_camera)):
        raise DomainError("camera transform has non-finite entries")
    n = len(cloud)
    if n == 0:
        empty = np.empty(0)
        return (empty.reshape(0, 2), empty.reshape(0, 3), empty, empty, np.empty((0, 4), np.int64), np.empty(0, np.int64))

    R_cam = cam.rotation
    t_cam = cloud.positions @ R_cam.T + cam.translation
    depth = t_cam[:, 2]
    keep = depth > cam.near

    tx, ty, tz = t_cam[:, 0], t_cam[:, 1], t_cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        mx = cam.fx * tx / tz + cam.cx
        my = cam.fy * ty / tz + cam.cy

    R3 = quat_to_rotation(cloud.rotations)
    # Sigma_3d = R diag(s^2) R^T, then 2D covariance J W Sigma W^T J^T
    S2 = cloud.scales**2
    sigma3 = np.einsum("nij,nj,nkj->nik", R3, S2, R3)

    inv_z = np.where(keep, 1.0 / np.where(keep, tz, 1.0), 0.0)
    J = np.zeros((n, 2, 3), dtype=np.float64)
    J[:, 0, 0] = cam.fx * inv_z
    J[:, 0, 2] = -cam.fx * tx * inv_z**2
    J[:, 1, 1] = cam.fy * inv_z
    J[:, 1, 2] = -cam.fy * ty * inv_z**2
    M = J @ R_cam[None, :, :]
    cov2 = np.einsum("nij,njk,nlk->nil", M, sigma3, M)
    cov2[:, 0, 0] += cfg.dilation
    cov2[:, 1, 1] += cfg.dilation

    a, b, c = cov2[:, 0, 0], cov2[:, 0, 1], cov2[:, 1, 1]
    half_tr = 0.5 * (a + c)
    disc = np.sqrt(np.maximum(half_tr**2 - (a * c - b * b), 0.0))
    lam_max = half_tr + disc
    radius = 3.0 * np.sqrt(np.maximum(lam_max, 0.0))

    inside = (
        (mx + radius >= 0.0)
        & (mx - radius <= width - 1.0)
        & (my + radius >= 0.0)
        & (my - radius <= height - 1.0)
    )
    keep = keep & inside & np.isfinite(mx) & np.isfinite(my)

    det = a * c - b * b
    keep = keep & (det > 0.0)
    ids = np.nonzero(keep)[0]
    if ids.size == 0:
        empty = np.empty(0)
        return (empty.reshape(0, 2), empty.reshape(0, 3), empty, empty, np.empty((0, 4), np.int64), np.empty(0, np.int64))

    inv_det = 1.0 / det[ids]
    inv_cov = np.stack([c[ids] * inv_det, -b[ids] * inv_det, a[ids] * inv_det], axis=1)

    x0 = np.maximum(np.floor(mx[ids] - radius[ids]), 0.0).astype(np.int64)
    x1 = np.minimum(np.ceil(mx[ids] + radius[ids]), width - 1.0).astype(np.int64)
    y0 = np.maximum(np.floor(my[ids] - radius[ids]), 0.0).astype(np.int64)
    y1 = np.minimum(np.ceil(my[ids] + radius[ids]), height - 1.0).astype(np.int64)
    bbox = np.stack([x0, y0, x1, y1], axis=1)

    means2d = np.stack([mx[ids], my[ids]], axis=1)
    return means2d, inv_cov, depth[ids], cloud.opacities[ids], bbox, ids


def project_gaussian(
    cloud: GaussianCloud, index: int, cam: Camera, width: int, height: int, cfg: RenderConfig | None = None
) -> Splat2D | None:
    """Project one Gaussian; ``None`` means culled (behind camera or off-image)."""
    cfg = cfg or RenderConfig()
    one = GaussianCloud(
        cloud.positions[index : index + 1],
        cloud.scales[index : index + 1],
        cloud.rotations[index : index + 1],
        cloud.opacities[index : index + 1],
        cloud.features[index : index + 1],
    )
    means, inv_cov, depth, _, _, ids = _project_arrays(one, cam, width, height, cfg)
    if ids.size == 0:
        return None
    ia, ib, ic = inv_cov[0]
    det_inv = ia * ic - ib * ib
    cov = np.array([[ic, -ib], [-ib, ia]]) / det_inv
    return Splat2D(mean2d=means[0], cov2d=cov, depth=float(depth[0]), gaussian_id=index)


def _sorted_splats(cloud, cam, width, height, cfg):
    means, inv_cov, depth, opac, bbox, ids = _project_arrays(cloud, cam, width, height, cfg)
    order = np.lexsort((ids, depth))  # front to back, ties by Gaussian id
    return means[order], inv_cov[order], depth[order], opac[order], bbox[order], ids[order]


def composite_pixel(
    alphas,
    feats,
    depths=None,
    cfg: RenderConfig | None = None,
) -> np.ndarray:
    """Blend one pixel's front-to-back (a_i, f_i) list into a feature value.

    ``depths``, when given, is checked for front-to-back order; a strictly
    decreasing step raises :class:`ContractViolation`.
    """
    cfg = cfg or RenderConfig()
    alphas = np.asarray(alphas, dtype=np.float64)
    feats = np.asarray(feats, dtype=np.float64).reshape(-1, 3)
    if np.any(alphas < 0.0) or np.any(alphas >= 1.0):
        raise DomainError("alphas must lie in [0, 1)")
    if depths is not None:
        depths = np.asarray(depths, dtype=np.float64)
        if np.any(np.diff(depths) < 0):
            raise ContractViolation("splats not sorted front to back (decreasing depth)")
    out = np.zeros(3, dtype=np.float64)
    T = 1.0
    for a, f in zip(alphas, feats):
        if T < cfg.transmittance_floor:
            break
        a = min(a, 0.99)
        if a < cfg.alpha_cutoff:
            continue
        out += (a * T) * f
        T *= 1.0 - a
    return out


def render_feature_map(
    cloud: GaussianCloud,
    cam: Camera,
    width: int,
    height: int,
    cfg: RenderConfig | None = None,
    view: int | None = None,
) -> FeatureMap:
    """Render the per-pixel composited feature image for one camera."""
    out, _ = render_with_transmittance(cloud, cam, width, height, cfg)
    return FeatureMap(data=out, view=view)


def render_with_transmittance(
    cloud: GaussianCloud, cam: Camera, width: int, height: int, cfg: RenderConfig | None = None
) -> tuple[np.ndarray, np.ndarray]:
    cfg = cfg or RenderConfig()
    means, inv_cov, _, opac, bbox, ids = _sorted_splats(cloud, cam, width, height, cfg)
    return kernels.forward(
        means, inv_cov, opac, cloud.features[ids], bbox,
        height, width, cfg.tile, cfg.alpha_cutoff, cfg.transmittance_floor,
    )


def backward_features(
    cloud: GaussianCloud,
    cam: Camera,
    width: int,
    height: int,
    pixel_grads: np.ndarray,
    cfg: RenderConfig | None = None,
) -> np.ndarray:
    """d(loss)/d(feature) per Gaussian, given per-pixel gradients.

    The compositing weights are recomputed from the fixed geometry;
    features enter the render linearly, so the weight of splat i at pixel
    p is exactly its gradient coefficient.
    """
    cfg = cfg or RenderConfig()
    pixel_grads = np.asarray(pixel_grads, dtype=np.float64)
    if pixel_grads.shape != (height, width, 3):
        raise ContractViolation(
            f"pixel gradient shape {pixel_grads.shape} does not match render {(height, width, 3)}"
        )
    means, inv_cov, _, opac, bbox, ids = _sorted_splats(cloud, cam, width, height, cfg)
    return kernels.backward(
        means, inv_cov, opac, bbox, ids, len(cloud), pixel_grads,
        height, width, cfg.tile, cfg.alpha_cutoff, cfg.transmittance_floor,
    )


# ---------------------------------------------------------------------------
# Loss: (1 - lam) * L1 + lam * (1 - mean SSIM), over covered pixels only.
# ---------------------------------------------------------------------------


def _gaussian_kernel_1d() -> np.ndarray:
    half = SSIM_WINDOW // 2
    xs = np.arange(SSIM_WINDOW, dtype=np.float64) - half
    g = np.exp(-(xs**2) / (2.0 * SSIM_SIGMA**2))
    return g / g.sum()


_G1D = _gaussian_kernel_1d()
_HALF = SSIM_WINDOW // 2


def _corr_valid(img: np.ndarray) -> np.ndarray:
    tmp = ndimage.correlate1d(img, _G1D, axis=0, mode="constant")
    tmp = ndimage.correlate1d(tmp, _G1D, axis=1, mode="constant")
    return tmp[_HALF:-_HALF, _HALF:-_HALF]


def _conv_full(img: np.ndarray) -> np.ndarray:
    return _corr_valid(np.pad(img, 2 * _HALF))


@dataclass
class FeatureLoss:
    loss: float
    grad: np.ndarray  # (H, W, 3) d(loss)/d(render)
    l1: float
    dssim: float


def feature_loss(render, target, coverage, lam: float) -> FeatureLoss:
    """Supervised-pixel loss and its analytic per-pixel gradient.

    Structural similarity uses an 11x11 Gaussian window (sigma 1.5) with
    unit dynamic range, evaluated on full windows only; uncovered pixels
    are treated as already matching the target so they contribute neither
    signal nor gradient.
    """
    render = render.data if isinstance(render, FeatureMap) else np.asarray(render, dtype=np.float64)
    target = target.data if isinstance(target, FeatureMap) else np.asarray(target, dtype=np.float64)
    coverage = np.asarray(coverage, dtype=bool)
    if render.shape != target.shape or coverage.shape != render.shape[:2]:
        raise DomainError(
            f"shape mismatch: render {render.shape}, target {target.shape}, coverage {coverage.shape}"
        )
    n_cov = int(coverage.sum())
    if n_cov == 0:
        raise DomainError("no supervised pixels")
    if not (0.0 <= lam <= 1.0):
        raise DomainError("lam must lie in [0, 1]")

    diff = render - target
    l1 = float(np.abs(diff[coverage]).sum() / (n_cov * 3))
    grad_l1 = np.where(coverage[:, :, None], np.sign(diff), 0.0) / (n_cov * 3)

    h, w = coverage.shape
    grad_dssim = np.zeros_like(render)
    dssim = 0.0
    if h >= SSIM_WINDOW and w >= SSIM_WINDOW:
        valid_cov = coverage[_HALF : h - _HALF, _HALF : w - _HALF]
        n_vc = int(valid_cov.sum())
        if n_vc > 0:
            x_full = np.where(coverage[:, :, None], render, target)
            ssim_sum = 0.0
            upstream = -valid_cov.astype(np.float64) / (3.0 * n_vc)
            for ch in range(3):
                x = x_full[:, :, ch]
                y = target[:, :, ch]
                mx, my = _corr_valid(x), _corr_valid(y)
                mxx, myy, mxy = _corr_valid(x * x), _corr_valid(y * y), _corr_valid(x * y)
                a1 = 2.0 * mx * my + SSIM_C1
                b1 = mx * mx + my * my + SSIM_C1
                a2 = 2.0 * (mxy - mx * my) + SSIM_C2
                b2 = (mxx - mx * mx) + (myy - my * my) + SSIM_C2
                denom = b1 * b2
                s = a1 * a2 / denom
                ssim_sum += float(s[valid_cov].sum())

                ds_dmx = 2.0 * my * (a2 - a1) / denom - 2.0 * mx * a1 * a2 * (b2 - b1) / denom**2
                ds_dmxx = -a1 * a2 / (b1 * b2 * b2)
                ds_dmxy = 2.0 * a1 / denom
                g = (
                    _conv_full(upstream * ds_dmx)
                    + 2.0 * x * _conv_full(upstream * ds_dmxx)
                    + y * _conv_full(upstream * ds_dmxy)
                )
                grad_dssim[:, :, ch] = np.where(coverage, g, 0.0)
            dssim = 1.0 - ssim_sum / (3.0 * n_vc)

    loss = (1.0 - lam) * l1 + lam * dssim
    grad = (1.0 - lam) * grad_l1 + lam * grad_dssim
    return FeatureLoss(loss=loss, grad=grad, l1=l1, dssim=dssim)


def train_features(
    cloud: GaussianCloud,
    cameras: list[Camera],
    targets: list[np.ndarray],
    coverages: list[np.ndarray],
    width: int,
    height: int,
    cfg: TrainConfig | None = None,
    render_cfg: RenderConfig | None = None,
) -> tuple[GaussianCloud, list[float]]:
    """Optimize per-Gaussian features against baked target maps.

    Views are visited in seeded round-robin epochs (a fresh permutation of
    the view list per epoch).  Updates follow the adaptive-moment rule
    (beta1 0.9, beta2 0.999, eps 1e-8) on the features alone, clamped to
    [0, 1] after every step.  Deterministic for a fixed seed.
    """
    cfg = cfg or TrainConfig()
    render_cfg = render_cfg or RenderConfig()
    if not (len(cameras) == len(targets) == len(coverages)) or not cameras:
        raise DomainError("need matching non-empty camera/target/coverage lists")
    trained = cloud.copy()
    history: list[float] = []
    if cfg.iterations == 0:
        return trained, history

    rng = np.random.default_rng(cfg.seed)
    schedule = np.concatenate(
        [rng.permutation(len(cameras)) for _ in range(-(-cfg.iterations // len(cameras)))]
    )[: cfg.iterations]

    m = np.zeros_like(trained.features)
    v = np.zeros_like(trained.features)
    for it, t in enumerate(schedule):
        out, _ = render_with_transmittance(trained, cameras[t], width, height, render_cfg)
        fl = feature_loss(out, targets[t], coverages[t], cfg.lam)
        if not np.isfinite(fl.loss):
            raise TrainingDiverged(it)
        history.append(fl.loss)
        g = backward_features(trained, cameras[t], width, height, fl.grad, render_cfg)

        m = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * g
        v = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * g * g
        m_hat = m / (1.0 - ADAM_BETA1 ** (it + 1))
        v_hat = v / (1.0 - ADAM_BETA2 ** (it + 1))
        trained.features -= cfg.step_size * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        np.clip(trained.features, 0.0, 1.0, out=trained.features)
    return trained, history
