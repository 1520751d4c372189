"""Indicator-function (Poisson) surface reconstruction on a regular grid.

The oriented normals are splatted onto a staggered grid, smoothed, and the
divergence drives a Dirichlet Poisson problem for the indicator. The linear
system is solved by conjugate gradients preconditioned with the exact
sine-transform inverse of the same 7-point Laplacian, then the isosurface at
the mean indicator over the input samples is extracted.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import fft, ndimage
from scipy.spatial import cKDTree

from ..core import LeafAreaError, PointCloud, TriangleMesh
from .grid import grid_frame, trilinear_sample, trilinear_splat
from .mcubes import marching_cubes

log = logging.getLogger(__name__)

MIN_DEPTH, MAX_DEPTH = 8, 15


class SolverError(LeafAreaError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (relative residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class PoissonInfo:
    resolution: int
    iterations: int
    residual: float
    iso: float
    approx: bool  # grid coarser than 2**depth


def _laplacian(x: np.ndarray, h: float) -> np.ndarray:
    """7-point Laplacian with zero Dirichlet values outside the array."""
    out = -6.0 * x
    out[1:] += x[:-1]
    out[:-1] += x[1:]
    out[:, 1:] += x[:, :-1]
    out[:, :-1] += x[:, 1:]
    out[:, :, 1:] += x[:, :, :-1]
    out[:, :, :-1] += x[:, :, 1:]
    return out / (h * h)


class _DstInverse:
    def __init__(self, shape, h):
        lam = np.zeros(shape)
        for axis, n in enumerate(shape):
            k = np.arange(1, n + 1)
            e = (2.0 * np.cos(np.pi * k / (n + 1)) - 2.0) / (h * h)
            sh = [1, 1, 1]
            sh[axis] = n
            lam = lam + e.reshape(sh)
        self.lam = lam

    def __call__(self, r):
        c = fft.dstn(r, type=1)
        c /= self.lam
        return fft.idstn(c, type=1)


def solve_poisson(rhs: np.ndarray, h: float, tol: float = 1e-6, max_iter: int = 200):
    """Preconditioned CG for lap(x) = rhs with zero Dirichlet boundary."""
    A = lambda x: -_laplacian(x, h)  # noqa: E731 - SPD operator
    b = -rhs
    M = _DstInverse(rhs.shape, h)
    bnorm = float(np.linalg.norm(b))
    x = np.zeros_like(b)
    if bnorm == 0:
        return x, 0, 0.0
    r = b.copy()
    z = -M(r)
    p = z.copy()
    rz = float(np.vdot(r, z))
    res = 1.0
    for it in range(1, max_iter + 1):
        Ap = A(p)
        alpha = rz / float(np.vdot(p, Ap))
        x += alpha * p
        r -= alpha * Ap
        res = float(np.linalg.norm(r)) / bnorm
        if res < tol:
            return x, it, res
        z = -M(r)
        rz_new = float(np.vdot(r, z))
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError(f"conjugate gradients did not converge in {max_iter} iterations", res)


def poisson_reconstruct(
    cloud: PointCloud,
    depth: int = 8,
    grid_cap: int = 256,
    cg_tol: float = 1e-6,
    cg_max_iter: int = 200,
    return_info: bool = False,
):
    """Watertight surface from an oriented cloud; normals must point outward.

    The grid has ``min(2**depth, grid_cap)`` nodes along the longest padded
    axis, so depths above log2(grid_cap) are approximated (flagged in info).
    """
    if cloud.normals is None:
        raise ValueError("poisson reconstruction needs per-point normals")
    if int(depth) != depth or not MIN_DEPTH <= depth <= MAX_DEPTH:
        raise ValueError(f"depth must be an integer in [{MIN_DEPTH}, {MAX_DEPTH}], got {depth}")
    if len(cloud) < 4:
        raise ValueError("poisson reconstruction needs at least 4 points")
    res = int(min(2 ** depth, grid_cap))
    pts = cloud.points
    extent = float(np.ptp(pts, axis=0).max())

    # per-sample area and smoothing width from the local spacing
    k = min(8, len(pts) - 1)
    dist, _ = cKDTree(pts).query(pts, k=k + 1)
    area = np.pi * dist[:, -1] ** 2 / k
    spacing = float(np.median(np.sqrt(area)))

    pad_len = 0.1 * extent + 3.0 * spacing
    lo = pts.min(0) - pad_len
    hi = pts.max(0) + pad_len
    origin, h, dims = grid_frame(np.vstack([lo, hi]), res, 1)
    sigma = max(1.0, spacing / h)

    # staggered components: V_d lives at nodes shifted by +h/2 along axis d
    div = np.zeros(dims)
    for d in range(3):
        shift = np.zeros(3)
        shift[d] = 0.5 * h
        comp = trilinear_splat(pts, area * cloud.normals[:, d], origin + shift, h, dims)
        comp = ndimage.gaussian_filter(comp, sigma, mode="constant", truncate=3.0)
        # divergence at node i from faces at i - 1/2 and i + 1/2
        lower = np.zeros(dims)
        sl_dst = [slice(None)] * 3
        sl_src = [slice(None)] * 3
        sl_dst[d] = slice(1, None)
        sl_src[d] = slice(None, -1)
        lower[tuple(sl_dst)] = comp[tuple(sl_src)]
        div += (comp - lower) / h
        del comp, lower
    div /= h ** 3  # weights -> density per unit volume

    # gradient of the indicator points inward: lap(chi) = -div(V)
    chi, iters, resid = solve_poisson(-div, h, tol=cg_tol, max_iter=cg_max_iter)
    del div
    iso = float(np.mean(trilinear_sample(chi, pts, origin, h)))
    mesh = marching_cubes(chi, iso, origin=origin, spacing=h)
    info = PoissonInfo(res, iters, resid, iso, approx=2 ** depth > grid_cap)
    log.debug("poisson: grid %s, %d CG iterations, residual %.2e", dims, iters, resid)
    return (mesh, info) if return_info else mesh
