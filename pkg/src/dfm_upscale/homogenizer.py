"""Equivalent conductivity of blocks and domains.

The anisotropy problem solves two Darcy problems with linear boundary heads
and fits a symmetric tensor to the volume-averaged gradients and velocities.
The aquifer problem measures horizontal equivalent conductivity from the
total outflow. Overlapping half-step block grids tile the extended domain;
per-block tensors are bilinearly interpolated onto a coarse raster.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .dfm_solver import (FlowSolution, aquifer_bc, discretize, linear_head,
                         solve_darcy)
from .frac_geom import DEFAULT_CONSTANTS, FractureNetwork
from .geometry import Rect, clip_segment
from .random_field import Grid, TensorField


@dataclass
class EquivalentTensor:
    kxx: float
    kxy: float
    kyy: float
    block_id: int = -1
    residual: float = 0.0

    @property
    def positive_definite(self) -> bool:
        return self.kxx > 0 and self.kyy > 0 and \
            self.kxx * self.kyy - self.kxy ** 2 > 0

    def as_array(self) -> np.ndarray:
        return np.array([self.kxx, self.kxy, self.kyy])

    def as_matrix(self) -> np.ndarray:
        return np.array([[self.kxx, self.kxy], [self.kxy, self.kyy]])


@dataclass
class BlockGrid:
    original: Rect     # Omega_o
    extended: Rect     # inflated by half a block per side
    block_size: float
    centers_x: np.ndarray
    centers_y: np.ndarray

    @property
    def n_per_axis(self) -> int:
        return len(self.centers_x)

    @property
    def n_blocks(self) -> int:
        return self.n_per_axis ** 2

    def block_rect(self, i: int, j: int) -> Rect:
        half = 0.5 * self.block_size
        return Rect(self.centers_x[i] - half, self.centers_y[j] - half,
                    self.centers_x[i] + half, self.centers_y[j] + half)

    def blocks(self):
        """Row-major (id, i, j, rect) iterator over block centers."""
        bid = 0
        for j in range(self.n_per_axis):
            for i in range(self.n_per_axis):
                yield bid, i, j, self.block_rect(i, j)
                bid += 1


def build_block_grid(side: float, block_size: float,
                     tol: float = 1e-6) -> BlockGrid:
    """Overlapping blocks with step block_size/2 over (0, side)^2; corner
    block centers coincide with the corners of the original domain."""
    ratio = 2.0 * side / block_size
    n2 = round(ratio)
    if n2 < 1 or abs(ratio - n2) > tol * max(1.0, ratio):
        raise ValueError(
            f"2*side/block_size = {ratio} is not an integer; adjust config")
    l_eff = 2.0 * side / n2
    centers = 0.5 * l_eff * np.arange(n2 + 1)
    half = 0.5 * l_eff
    return BlockGrid(
        original=Rect(0.0, 0.0, side, side),
        extended=Rect(-half, -half, side + half, side + half),
        block_size=l_eff, centers_x=centers, centers_y=centers)


def clip_network(network: FractureNetwork | None, rect: Rect,
                 length_threshold: float | None = None) -> FractureNetwork:
    """Fractures intersecting rect (optionally only those below the length
    threshold), re-rooted on the rect as their domain. Geometry keeps the
    original infinite extent; the solver clips again."""
    fracs = []
    if network is not None:
        for fr in network.fractures:
            if length_threshold is not None and fr.length >= length_threshold:
                continue
            if clip_segment(*fr.endpoints, rect) is not None:
                fracs.append(fr)
    return FractureNetwork(
        fractures=fracs, domain=rect,
        density=network.density if network else 0.0,
        seed=network.seed if network else 0,
        spec=network.spec if network else None,
        aperture_ratio=network.aperture_ratio if network else None,
        constants=network.constants if network else DEFAULT_CONSTANTS)


def _weighted_averages(sol: FlowSolution):
    """Measure-and-cross-section weighted mean gradient and velocity."""
    sys_ = sol.system
    w_m = sys_.tri_area  # matrix cross-section is 1
    w_f = sys_.frac_len * sys_.frac_aperture
    total = w_m.sum() + w_f.sum()
    grad = (w_m @ sol.tri_grad + (w_f @ sol.frac_grad
                                  if len(w_f) else 0.0)) / total
    vel = (w_m @ sol.tri_vel + (w_f @ sol.frac_vel
                                if len(w_f) else 0.0)) / total
    return np.asarray(grad), np.asarray(vel)


def anisotropy_tensor(field: TensorField, network: FractureNetwork | None,
                      block: Rect, resolution: int,
                      block_id: int = -1) -> EquivalentTensor:
    """Fit the equivalent symmetric tensor from two linear-head solves."""
    system = discretize(field, network, block, resolution, resolution)
    rows = []
    rhs = []
    for direction in ("x", "y"):
        sol = solve_darcy(system, linear_head(direction))
        g, u = _weighted_averages(sol)
        rows.append([g[0], g[1], 0.0])
        rows.append([0.0, g[0], g[1]])
        rhs.extend([u[0], u[1]])
    a = -np.asarray(rows)
    b = np.asarray(rhs)
    k, res, _, _ = np.linalg.lstsq(a, b, rcond=None)
    residual = float(np.sqrt(res[0])) if len(res) else \
        float(np.linalg.norm(a @ k - b))
    return EquivalentTensor(kxx=float(k[0]), kxy=float(k[1]),
                            kyy=float(k[2]), block_id=block_id,
                            residual=residual)


def aquifer_kx(field: TensorField, network: FractureNetwork | None,
               domain: Rect, resolution: int, head: float):
    """Total horizontal outflow Y and equivalent horizontal conductivity."""
    if head <= 0.0:
        raise ValueError("head must be positive")
    system = discretize(field, network, domain, resolution, resolution)
    sol = solve_darcy(system, aquifer_bc(head))
    outflow = sol.boundary_flux["right"]
    k_x = outflow * domain.width / (head * domain.height)
    return float(outflow), float(k_x)


def project_spd(tensor: EquivalentTensor,
                floor_fraction: float = 1e-14) -> EquivalentTensor:
    """Clamp eigenvalues to a small positive floor relative to the trace."""
    m = tensor.as_matrix()
    vals, vecs = np.linalg.eigh(m)
    floor = floor_fraction * max(abs(np.trace(m)), 1e-300)
    clamped = np.maximum(vals, floor)
    fixed = vecs @ np.diag(clamped) @ vecs.T
    return EquivalentTensor(kxx=float(fixed[0, 0]), kxy=float(fixed[0, 1]),
                            kyy=float(fixed[1, 1]), block_id=tensor.block_id,
                            residual=tensor.residual)


def numeric_backend(resolution: int):
    """Per-block equivalent tensor via the embedded solver."""

    def run(field, clipped, block, block_id):
        return anisotropy_tensor(field, clipped, block, resolution,
                                 block_id=block_id)

    return run


def upscale_domain(field: TensorField, network: FractureNetwork | None,
                   grid: BlockGrid, backend,
                   length_threshold: float | None = None,
                   coarse_resolution: int | None = None):
    """Homogenize every block and interpolate block-center tensors onto the
    coarse raster of the original domain.

    backend(field, clipped_network, block_rect, block_id) -> EquivalentTensor.
    Returns (coarse TensorField, list of per-block EquivalentTensor,
    non-SPD projection count).
    """
    n = grid.n_per_axis
    comp = np.zeros((3, n, n))
    tensors = []
    projected = 0
    for bid, i, j, rect in grid.blocks():
        clipped = clip_network(network, rect, length_threshold)
        eq = backend(field, clipped, rect, bid)
        if not eq.positive_definite:
            eq = project_spd(eq)
            projected += 1
        tensors.append(eq)
        comp[0, i, j] = eq.kxx
        comp[1, i, j] = eq.kxy
        comp[2, i, j] = eq.kyy

    nc = coarse_resolution or n
    side = grid.original.width
    cell = side / nc
    centers = cell * (np.arange(nc) + 0.5)
    step = 0.5 * grid.block_size
    # bilinear interpolation from the block-center lattice, per component
    f = np.clip(centers / step, 0.0, n - 1.0)
    i0 = np.minimum(f.astype(int), n - 2)
    w = f - i0
    out = np.zeros((3, nc, nc))
    for c in range(3):
        g = comp[c]
        gx = g[i0] * (1 - w)[:, None] + g[i0 + 1] * w[:, None]
        out[c] = gx[:, i0] * (1 - w)[None, :] + gx[:, i0 + 1] * w[None, :]
    coarse = TensorField(Grid(nc, nc, cell, (0.0, 0.0)),
                         out[0], out[1], out[2],
                         metadata={"block_size": grid.block_size,
                                   "length_threshold": length_threshold})
    return coarse, tensors, projected


def write_block_csv(grid: BlockGrid, tensors, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["block_id", "cx", "cy", "k_xx", "k_xy", "k_yy",
                    "pd_flag", "residual"])
        for (bid, i, j, _), eq in zip(grid.blocks(), tensors):
            w.writerow([bid, repr(float(grid.centers_x[i])),
                        repr(float(grid.centers_y[j])),
                        repr(eq.kxx), repr(eq.kxy), repr(eq.kyy),
                        int(eq.positive_definite), repr(eq.residual)])
