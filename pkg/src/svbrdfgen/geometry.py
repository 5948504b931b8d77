"""Conversions between normal maps and height fields.

Coordinate conventions used throughout the package:

* array index ``i`` is the image row, ``j`` the column;
* world x points along +columns, world y along -rows (row 0 is the top
  of the exemplar and has the largest y), world z points out of the
  surface toward the camera;
* heights are in exemplar-size units; a map of resolution H spans one
  exemplar, so the default pixel size is 1/H.

``normals_to_height`` solves the least-squares system "gradient of h
matches the slopes implied by the normals" under Neumann boundary
conditions. Slopes live on a staggered half-pixel grid (forward
differences), which makes the cosine-transform solve the exact discrete
least-squares solution rather than an approximation: a constant tilted
normal integrates to a perfect planar ramp up to floating-point rounding.
"""

from __future__ import annotations

import warnings

import numpy as np
from scipy import fft as sfft

SLOPE_LIMIT = 20.0  # |dh/dx| cap; matches a normal z floor of ~0.05
NZ_FLOOR = 0.05


def height_to_normals(height: np.ndarray, pixel_size: float | None = None) -> np.ndarray:
    """Central-difference normals of a height field; unit length, z > 0."""
    height = np.asarray(height, dtype=np.float64)
    if pixel_size is None:
        pixel_size = 1.0 / height.shape[0]
    d_row, d_col = np.gradient(height, pixel_size)
    # world x = +col, world y = -row
    nx = -d_col
    ny = d_row
    n = np.stack([nx, ny, np.ones_like(nx)], axis=2)
    return n / np.linalg.norm(n, axis=2, keepdims=True)


def normals_to_height(
    normal: np.ndarray,
    pixel_size: float | None = None,
    slope_limit: float = SLOPE_LIMIT,
) -> np.ndarray:
    """Integrate a normal map into a zero-mean height field.

    Returns the least-squares height whose staggered forward-difference
    gradients match the per-pixel slopes -nx/nz, -ny/nz (clamped to
    ``slope_limit``), solved directly with a type-II cosine transform.
    A z below 0.05 anywhere is clamped before the slope division.
    """
    normal = np.asarray(normal, dtype=np.float64)
    if normal.ndim != 3 or normal.shape[2] != 3:
        raise ValueError(f"normal map must have shape (H, W, 3), got {normal.shape}")
    h_res, w_res = normal.shape[:2]
    if pixel_size is None:
        pixel_size = 1.0 / h_res
    grazing = int((normal[:, :, 2] < NZ_FLOOR).sum())
    if grazing:
        warnings.warn(
            f"normals_to_height: clamped {grazing} grazing normals (z < {NZ_FLOOR})",
            RuntimeWarning,
            stacklevel=2,
        )
    nz = np.maximum(normal[:, :, 2], NZ_FLOOR)
    p = np.clip(-normal[:, :, 0] / nz, -slope_limit, slope_limit)  # dh/dx
    q = np.clip(-normal[:, :, 1] / nz, -slope_limit, slope_limit)  # dh/dy

    # Slopes in row/col index space (world y = -row flips the sign of q).
    s_col = p * pixel_size
    s_row = -q * pixel_size

    # Stagger to half-pixel positions and form the normal-equation RHS
    # rhs = Dcol^T s_col + Drow^T s_row for forward-difference operators D.
    sx = 0.5 * (s_col[:, :-1] + s_col[:, 1:])
    sy = 0.5 * (s_row[:-1, :] + s_row[1:, :])
    rhs = np.zeros((h_res, w_res))
    rhs[:, :-1] -= sx
    rhs[:, 1:] += sx
    rhs[:-1, :] -= sy
    rhs[1:, :] += sy

    # D^T D is the 1-D Neumann Laplacian, diagonal in the DCT-II basis with
    # eigenvalues 2 - 2 cos(pi k / N).
    lam_row = 2.0 - 2.0 * np.cos(np.pi * np.arange(h_res) / h_res)
    lam_col = 2.0 - 2.0 * np.cos(np.pi * np.arange(w_res) / w_res)
    denom = lam_row[:, None] + lam_col[None, :]
    denom[0, 0] = 1.0  # the DC mode is fixed below instead

    rhs_hat = sfft.dctn(rhs, type=2, norm="ortho")
    z_hat = rhs_hat / denom
    z_hat[0, 0] = 0.0
    height = sfft.idctn(z_hat, type=2, norm="ortho")
    return height - height.mean()
