"""Hot rasterization kernels with selectable backends.

Two implementations of the same per-pixel compositing contract:

* ``numba`` -- @njit-compiled tile-binned loops (default when numba imports)
* ``numpy`` -- vectorized per-splat reference path

Select with the ``GRIDFIELD_KERNELS`` environment variable or
:func:`use_backend`.  Both backends are strictly sequential and
deterministic; they agree to float rounding (not bit-for-bit, since the
scalar and vector ``exp`` may differ in the last ulp).

Kernel contract (shared by both backends), for splats already sorted
front to back:

* a splat contributes to pixel p only when p lies inside its pixel bbox
* alpha = min(opacity * exp(-0.5 * d^T C^-1 d), 0.99)
* contributions with alpha < alpha_cutoff are skipped entirely
* a pixel stops accepting contributions once its transmittance drops
  below t_floor
"""

from __future__ import annotations

import os
import warnings

_VALID = ("numba", "numpy")
_impl = None
_name = None


def _load(name: str):
    if name == "numpy":
        from . import _numpy_backend as impl
    elif name == "numba":
        from . import _numba_backend as impl
    else:
        raise ValueError(f"unknown kernel backend {name!r}; expected one of {_VALID}")
    return impl


def _default_name() -> str:
    raw = os.environ.get("GRIDFIELD_KERNELS", "").strip().lower()
    if raw:
        if raw not in _VALID:
            raise ValueError(f"GRIDFIELD_KERNELS={raw!r}; expected one of {_VALID}")
        return raw
    try:
        import numba  # noqa: F401

        return "numba"
    except ImportError:
        warnings.warn("numba unavailable, falling back to numpy kernels", stacklevel=2)
        return "numpy"


def use_backend(name: str) -> str:
    """Switch the active backend; returns the previously active name."""
    global _impl, _name
    prev = active_backend()
    _impl = _load(name)
    _name = name
    return prev


def active_backend() -> str:
    global _impl, _name
    if _impl is None:
        name = _default_name()
        _impl = _load(name)
        _name = name
    return _name


def forward(means, inv_cov, opacities, feats, bboxes, h, w, tile, alpha_cutoff, t_floor):
    """Composite sorted splats; returns (feature image (h, w, 3), transmittance (h, w))."""
    active_backend()
    return _impl.forward(means, inv_cov, opacities, feats, bboxes, h, w, tile, alpha_cutoff, t_floor)


def backward(means, inv_cov, opacities, bboxes, gauss_ids, n_gaussians, pixel_grad, h, w, tile, alpha_cutoff, t_floor):
    """Accumulate d(loss)/d(feature) per Gaussian from per-pixel gradients."""
    active_backend()
    return _impl.backward(
        means, inv_cov, opacities, bboxes, gauss_ids, n_gaussians, pixel_grad, h, w, tile, alpha_cutoff, t_floor
    )
