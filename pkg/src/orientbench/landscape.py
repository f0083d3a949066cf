"""Grid evaluation of orientation losses over the (sin, cos) plane.

For a single-step head and a fixed ground-truth angle, evaluates one of
the loss surfaces on a square grid, locates its local and global minima,
and exports the surface as CSV and as an ASCII portable graymap where
darker pixels mean lower loss.

The default smooth-L1 threshold here is 0.02 rather than the training
default of 1: a wide quadratic zone flattens the secondary basin of the
full+half surface until its local minimum drifts toward the origin,
whereas a near-L1 profile keeps the two basins pinned at the true and
flipped targets that the surfaces are meant to exhibit.
"""

from __future__ import annotations

import numpy as np

from . import losses

LOSS_NAMES = ("full", "full_plus_half", "min_full_flipped", "min_plus_half")

DEFAULT_BETA = 0.02


def loss_grid(loss: str, gt_theta_rad: float = 0.0, lo: float = -1.5,
              hi: float = 1.5, step: float = 0.01, beta: float = DEFAULT_BETA):
    """Evaluate a named loss over the (sin, cos) grid.

    Returns (axis, grid) with grid[i, j] the loss at sin=axis[i],
    cos=axis[j].
    """
    if loss not in LOSS_NAMES:
        raise ValueError(f"unknown landscape loss {loss!r}; expected one of {LOSS_NAMES}")
    if not lo < hi or step <= 0:
        raise ValueError("bad grid range")
    n = int(round((hi - lo) / step)) + 1
    axis = lo + step * np.arange(n)
    axis[np.abs(axis) < step * 1e-9] = 0.0

    s = axis[:, None, None]          # (n, 1, 1)
    c = axis[None, :, None]          # (1, n, 1)
    theta = np.full((1, 1, 1), gt_theta_rad)
    s, c = np.broadcast_arrays(s, c)

    full = losses.full_loss_value(s, c, theta, beta)
    if loss == "full":
        grid = full
    elif loss == "full_plus_half":
        s2, c2 = losses.half_params_from_full(s, c)
        grid = full + losses.half_loss_value(s2, c2, theta, beta)
    else:
        flipped = losses.flipped_loss_value(s, c, theta, beta)
        grid = np.minimum(full, flipped)
        if loss == "min_plus_half":
            s2, c2 = losses.half_params_from_full(s, c)
            grid = grid + losses.half_loss_value(s2, c2, theta, beta)
    return axis, grid


def local_minima(axis: np.ndarray, grid: np.ndarray):
    """Grid points strictly below all 8 neighbours, as (s, c, value) rows."""
    padded = np.full((grid.shape[0] + 2, grid.shape[1] + 2), np.inf)
    padded[1:-1, 1:-1] = grid
    is_min = np.ones_like(grid, dtype=bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            neighbor = padded[1 + di:padded.shape[0] - 1 + di,
                              1 + dj:padded.shape[1] - 1 + dj]
            is_min &= grid < neighbor
    out = []
    for i, j in zip(*np.nonzero(is_min)):
        out.append((float(axis[i]), float(axis[j]), float(grid[i, j])))
    return out


def global_minima(axis: np.ndarray, grid: np.ndarray, atol: float = 1e-12):
    """Grid points whose value is within ``atol`` of the grid minimum."""
    vmin = float(grid.min())
    out = []
    for i, j in zip(*np.nonzero(grid <= vmin + atol)):
        out.append((float(axis[i]), float(axis[j]), float(grid[i, j])))
    return out


def write_grid_csv(path, axis: np.ndarray, grid: np.ndarray) -> None:
    """Rows of `s,c,loss`, s-major."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("s,c,loss\n")
        for i, s in enumerate(axis):
            for j, c in enumerate(axis):
                fh.write(f"{s:.9g},{c:.9g},{grid[i, j]:.9g}\n")


def write_pgm(path, grid: np.ndarray) -> None:
    """ASCII portable graymap of the surface; darker means lower loss.

    Image rows run from high cos (top) to low cos, columns from low sin
    to high sin, matching a plot of the (sin, cos) plane.
    """
    vmin, vmax = float(grid.min()), float(grid.max())
    span = vmax - vmin if vmax > vmin else 1.0
    gray = np.rint((grid - vmin) / span * 255.0).astype(int)
    image = gray.T[::-1, :]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("P2\n")
        fh.write(f"{image.shape[1]} {image.shape[0]}\n255\n")
        for row in image:
            fh.write(" ".join(str(v) for v in row) + "\n")
