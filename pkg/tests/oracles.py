"""Independent reference computations used across the test suite."""
import numpy as np

from steercnn.reps import window_cells


def burnside_orbits(group, s):
    """Orbit count of cells under H, by counting fixed points."""
    cells = window_cells(group.n, s)
    fixed = [np.all(cells @ group.point_map(h).T == cells, axis=1).sum() for h in range(group.order)]
    return sum(fixed) // group.order


def hom_dim_oracle(pi, rho):
    """dim Hom_H(pi, rho) = mean_h chi_pi(h^-1) chi_rho(h): trace of the averaging projector."""
    g = pi.group
    chi_pi = np.trace(pi.matrices, axis1=1, axis2=2)
    chi_rho = np.trace(rho.matrices, axis1=1, axis2=2)
    return int(round(float(chi_pi[list(g.inv_table)] @ chi_rho) / g.order))


def transform_cells_direct(data, group, h):
    """out[h y] = data[y] on a centered cube, computed point by point."""
    n, w = group.n, data.shape[-1]
    c = (w - 1) // 2
    out = np.zeros_like(data)
    m = group.point_map(h)
    for idx in np.ndindex(*(w,) * n):
        y = np.array(idx) - c
        hy = tuple(m @ y + c)
        out[(...,) + hy] = data[(...,) + idx]
    return out
