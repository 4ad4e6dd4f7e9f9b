"""Box-domain lattices, grid functions, pair-weight assembly, the discrete
nonlocal operator and energy, and nonlocal tails.

Nodes cover the closed domain box plus a collar of explicit exterior nodes.
Beyond the collar, functions take a prescribed constant out to a truncation
box, and the kernel mass outside the truncation box is accounted for by an
analytic radial remainder.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import KernelSpec, Params, psi_values, sphere_area
from .measure import Measure

__all__ = [
    "Lattice",
    "GridFunction",
    "PairWeights",
    "build_lattice",
    "assemble_weights",
    "nodal_masses",
    "tail",
    "apply_operator",
    "energy",
]

_PAIR_CHUNK = 2 ** 22  # cap on temporary pair-matrix entries per block


class Lattice:
    """Uniform node lattice over a box domain with an exterior collar."""

    def __init__(self, box_origin, box_extent, h: float, collar: int,
                 trunc_factor: float = 4.0):
        self.box_origin = np.asarray(box_origin, dtype=float)
        self.box_extent = np.asarray(box_extent, dtype=float)
        self.h = float(h)
        self.collar = int(collar)
        self.ndim = len(self.box_origin)
        if self.collar < 2:
            raise ValueError("collar width must be at least 2 cells")
        if np.any(self.box_extent <= 0.0) or self.h <= 0.0:
            raise ValueError("degenerate box")
        cells = np.floor(self.box_extent / self.h + 1e-9).astype(int)
        if np.any(cells + 1 < 4):
            raise ValueError("lattice too coarse: need at least 4 nodes per axis inside the box")
        self.interior_shape = tuple(int(c) + 1 for c in cells)
        self.node_shape = tuple(s + 2 * self.collar for s in self.interior_shape)
        self.node_origin = self.box_origin - self.collar * self.h

        axes = [self.node_origin[k] + np.arange(self.node_shape[k]) * self.h
                for k in range(self.ndim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        self.nodes = np.stack([m.ravel() for m in mesh], axis=-1)
        eps = 1e-9 * self.h
        inside = np.all((self.nodes >= self.box_origin - eps)
                        & (self.nodes <= self.box_origin + self.box_extent + eps), axis=1)
        self.interior_mask = inside
        self.interior_idx = np.flatnonzero(inside)
        self.collar_idx = np.flatnonzero(~inside)

        diam = float(np.linalg.norm(self.box_extent))
        self.diameter = diam
        center = self.box_origin + 0.5 * self.box_extent
        half = 0.5 * trunc_factor * diam
        self.trunc_lo = center - half
        self.trunc_hi = center + half
        node_lo = self.nodes.min(axis=0) - 0.5 * self.h
        node_hi = self.nodes.max(axis=0) + 0.5 * self.h
        if np.any(self.trunc_lo > node_lo) or np.any(self.trunc_hi < node_hi):
            raise ValueError("truncation box does not contain the node region; "
                             "increase trunc_factor")
        self._far_centers = None

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def node_index(self, x) -> int:
        """Index of the node nearest to x (row-major order)."""
        x = np.asarray(x, dtype=float)
        idx = np.rint((x - self.node_origin) / self.h).astype(int)
        idx = np.clip(idx, 0, np.array(self.node_shape) - 1)
        return int(np.ravel_multi_index(tuple(idx), self.node_shape))

    def boundary_distance(self, x) -> float:
        """Distance from x to the boundary of the domain box."""
        x = np.asarray(x, dtype=float)
        lo = x - self.box_origin
        hi = self.box_origin + self.box_extent - x
        return float(min(np.min(lo), np.min(hi)))

    def far_cell_centers(self) -> np.ndarray:
        """Centers of constant-region cells between the node region and the
        truncation box (cached)."""
        if self._far_centers is not None:
            return self._far_centers
        lo_idx = np.ceil((self.trunc_lo - self.node_origin) / self.h - 0.5).astype(int)
        hi_idx = np.floor((self.trunc_hi - self.node_origin) / self.h + 0.5).astype(int)
        axes = [np.arange(lo_idx[k], hi_idx[k] + 1) for k in range(self.ndim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        idx = np.stack([m.ravel() for m in mesh], axis=-1)
        in_nodes = np.all((idx >= 0) & (idx < np.array(self.node_shape)), axis=1)
        centers = self.node_origin + idx[~in_nodes] * self.h
        keep = np.all((centers >= self.trunc_lo) & (centers <= self.trunc_hi), axis=1)
        self._far_centers = centers[keep]
        return self._far_centers

    def trunc_ball_radius(self, x) -> float:
        """Inscribed-sphere distance from x to the truncation box boundary."""
        x = np.asarray(x, dtype=float)
        return float(min(np.min(x - self.trunc_lo), np.min(self.trunc_hi - x)))

    # row-major node ordering makes these keys deterministic
    def signature(self):
        return (tuple(self.box_origin), tuple(self.box_extent), self.h, self.collar,
                tuple(self.trunc_lo), tuple(self.trunc_hi))


def build_lattice(box, h: float, collar: int = 2, trunc_factor: float = 4.0) -> Lattice:
    """Build a lattice for box = (origin, extent)."""
    origin, extent = box
    return Lattice(origin, extent, h, collar, trunc_factor)


class GridFunction:
    """Nodal values on a lattice plus a constant beyond the truncation box."""

    def __init__(self, lattice: Lattice, values=None, exterior_const: float = 0.0):
        self.lattice = lattice
        if values is None:
            values = np.zeros(lattice.n_nodes)
        self.values = np.asarray(values, dtype=float).ravel().copy()
        if len(self.values) != lattice.n_nodes:
            raise ValueError("value count does not match the lattice")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid function values must be finite")
        self.exterior_const = float(exterior_const)

    @staticmethod
    def from_callable(lattice: Lattice, fn: Callable, exterior_const: float = 0.0,
                      where: str = "all") -> "GridFunction":
        vals = np.array([fn(x) for x in lattice.nodes], dtype=float)
        if where == "collar":
            out = np.full(lattice.n_nodes, 0.0)
            out[lattice.collar_idx] = vals[lattice.collar_idx]
            vals = out
        return GridFunction(lattice, vals, exterior_const)

    @staticmethod
    def constant(lattice: Lattice, c: float) -> "GridFunction":
        return GridFunction(lattice, np.full(lattice.n_nodes, float(c)), exterior_const=c)

    def copy(self) -> "GridFunction":
        return GridFunction(self.lattice, self.values.copy(), self.exterior_const)

    def interior_values(self) -> np.ndarray:
        return self.values[self.lattice.interior_idx]

    def value_at(self, x) -> float:
        return float(self.values[self.lattice.node_index(x)])

    def scaled(self, factor: float) -> "GridFunction":
        return GridFunction(self.lattice, factor * self.values, factor * self.exterior_const)

    def shifted(self, c: float) -> "GridFunction":
        return GridFunction(self.lattice, self.values + c, self.exterior_const + c)


@dataclass
class PairWeights:
    """Pair quadrature weights and per-node exterior weights for a lattice."""

    lattice: Lattice
    w: np.ndarray          # (N, N) symmetric, zero diagonal
    ext: np.ndarray        # (N,) exterior weight, zero at collar nodes
    row_sums: np.ndarray = field(init=False)

    def __post_init__(self):
        self.row_sums = self.w.sum(axis=1)


def assemble_weights(lat: Lattice, kspec: KernelSpec, prm: Params) -> PairWeights:
    """Assemble node-pair weights K(x_i,x_j) h^(2n) and exterior weights.

    Adjacent node pairs (Chebyshev index distance one, diagonals included)
    are averaged over 4-per-axis subcell center pairs, which controls the
    dominant near-field quadrature error of the singular kernel.  Exterior
    weights sum constant-region cells out to the truncation box and close
    with the inscribed-sphere radial remainder.
    """
    nodes = lat.nodes
    N = len(nodes)
    ndim = lat.ndim
    if N * N > 3.2e8:
        raise MemoryError(f"pair-weight matrix with {N} nodes is too large")
    h = lat.h
    hn = h ** ndim

    w = np.empty((N, N))
    adj_rows, adj_cols = [], []
    block = max(1, _PAIR_CHUNK // N)
    for i0 in range(0, N, block):
        i1 = min(i0 + block, N)
        diffs = nodes[i0:i1, None, :] - nodes[None, :, :]
        dist = np.linalg.norm(diffs, axis=-1)
        if kspec.is_radial_kernel:
            with np.errstate(divide="ignore"):
                w[i0:i1] = kspec.kernel_of_dist(dist) * hn * hn
        else:
            xi = np.repeat(nodes[i0:i1], N, axis=0)
            yj = np.tile(nodes, (i1 - i0, 1))
            w[i0:i1] = kspec.kernel_sym(xi, yj).reshape(i1 - i0, N) * hn * hn
        steps = np.max(np.abs(np.rint(diffs / h)), axis=-1)
        bi, bj = np.nonzero(steps == 1)
        adj_rows.append(bi + i0)
        adj_cols.append(bj)
    np.fill_diagonal(w, 0.0)

    # adjacent pairs: subcell-averaged quadrature
    ii = np.concatenate(adj_rows) if adj_rows else np.zeros(0, dtype=int)
    jj = np.concatenate(adj_cols) if adj_cols else np.zeros(0, dtype=int)
    upper = ii < jj
    ii, jj = ii[upper], jj[upper]
    if len(ii):
        sub = ((np.arange(4) + 0.5) / 4.0 - 0.5) * h
        mesh = np.meshgrid(*([sub] * ndim), indexing="ij")
        offsets = np.stack([m.ravel() for m in mesh], axis=-1)  # (4^n, ndim)
        xi = nodes[ii][:, None, None, :] + offsets[None, :, None, :]
        yj = nodes[jj][:, None, None, :] + offsets[None, None, :, :]
        if kspec.is_radial_kernel:
            dd = np.linalg.norm(xi - yj, axis=-1)
            kv = kspec.kernel_of_dist(dd)
        else:
            shape = xi.shape[:-1]
            kv = kspec.kernel_sym(xi.reshape(-1, ndim), yj.reshape(-1, ndim)).reshape(shape)
        avg = kv.mean(axis=(1, 2)) * hn * hn
        w[ii, jj] = avg
        w[jj, ii] = avg

    # exterior weights: h^n times the kernel integral over the constant
    # region (far cells out to the truncation box, then the radial remainder)
    ext = np.zeros(N)
    far = lat.far_cell_centers()
    int_idx = lat.interior_idx
    if len(far):
        block = max(1, _PAIR_CHUNK // len(far))
        for b0 in range(0, len(int_idx), block):
            sel = int_idx[b0:b0 + block]
            d = np.linalg.norm(nodes[sel][:, None, :] - far[None, :, :], axis=-1)
            if kspec.is_radial_kernel:
                kv = kspec.kernel_of_dist(d)
            else:
                xi = np.repeat(nodes[sel], len(far), axis=0)
                kv = kspec.kernel_sym(xi, np.tile(far, (len(sel), 1))).reshape(d.shape)
            ext[sel] = kv.sum(axis=1) * hn
    sp = prm.sp
    for i in int_idx:
        rho = lat.trunc_ball_radius(nodes[i])
        ext[i] += sphere_area(ndim) * rho ** (-sp) / sp
    ext *= hn
    return PairWeights(lattice=lat, w=w, ext=ext)


def nodal_masses(m, lat: Lattice) -> np.ndarray:
    """Signed measure mass carried by each node (nearest-node assignment).

    Atoms exactly on a node stay there; everything else goes to the nearest
    node, which preserves total mass exactly.  Accepts a Measure or a list of
    Measures (summed).  Mass landing on collar nodes raises: the support must
    lie inside the domain box.
    """
    measures = m if isinstance(m, (list, tuple)) else [m]
    out = np.zeros(lat.n_nodes)
    for mm in measures:
        pts, masses = mm.support_points()
        if not len(pts):
            continue
        idx = np.rint((pts - lat.node_origin) / lat.h).astype(int)
        idx = np.clip(idx, 0, np.array(lat.node_shape) - 1)
        flat = np.ravel_multi_index(tuple(idx.T), lat.node_shape)
        np.add.at(out, flat, masses)
    stray = np.abs(out[lat.collar_idx]).sum()
    if stray > 1e-12 * (1.0 + np.abs(out).sum()):
        raise ValueError("measure support extends outside the domain box")
    return out


def interpolate_values(f: GridFunction, pts) -> np.ndarray:
    """Multilinear interpolation of nodal values at arbitrary points."""
    lat = f.lattice
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    rel = (pts - lat.node_origin) / lat.h
    base = np.floor(rel).astype(int)
    base = np.clip(base, 0, np.array(lat.node_shape) - 2)
    frac = rel - base
    vals = f.values.reshape(lat.node_shape)
    out = np.zeros(len(pts))
    for corner in range(2 ** lat.ndim):
        bits = [(corner >> k) & 1 for k in range(lat.ndim)]
        weight = np.ones(len(pts))
        idx = []
        for k, b in enumerate(bits):
            weight = weight * (frac[:, k] if b else 1.0 - frac[:, k])
            idx.append(base[:, k] + b)
        out += weight * vals[tuple(idx)]
    return out


def _const_region_kernel_mass(lat: Lattice, x, prm: Params, r_min: float = 0.0) -> float:
    """Kernel mass of the constant exterior region beyond the node cells,
    excluding the ball of radius r_min around x."""
    x = np.asarray(x, dtype=float)
    far = lat.far_cell_centers()
    total = 0.0
    if len(far):
        d = np.linalg.norm(far - x, axis=1)
        keep = d > r_min
        total += float(np.sum(d[keep] ** (-(prm.n + prm.sp)))) * lat.h ** lat.ndim
    rho = max(lat.trunc_ball_radius(x), r_min)
    total += sphere_area(lat.ndim) * rho ** (-prm.sp) / prm.sp
    return total


def tail(f: GridFunction, x, r: float, prm: Params) -> float:
    """Nonlocal tail of f outside the ball of radius r around x.

    Node cells are summed with the default singular kernel (the definition’s
    kernel, regardless of the operator kernel); the constant region beyond
    the node cells contributes a closed-form remainder.
    """
    if r <= 0.0:
        raise ValueError("tail radius must be positive")
    lat = f.lattice
    x = np.asarray(x, dtype=float)
    d = np.linalg.norm(lat.nodes - x, axis=1)
    outside = d > r
    pm1 = prm.p - 1.0
    acc = float(np.sum(np.abs(f.values[outside]) ** pm1
                       * d[outside] ** (-(prm.n + prm.sp)))) * lat.h ** lat.ndim
    if f.exterior_const != 0.0:
        acc += abs(f.exterior_const) ** pm1 * _const_region_kernel_mass(lat, x, prm, r_min=r)
    return (r ** prm.sp * acc) ** (1.0 / pm1)


def apply_operator(u: GridFunction, w: PairWeights, kspec: KernelSpec) -> GridFunction:
    """Discrete nonlocal operator residual at interior nodes (nodal-mass scale).

    Value at interior node i is 2 sum_j phi(u_i - u_j) w_ij plus
    2 phi(u_i - g_ext) ext_i; linear in u when p = 2.
    """
    lat = u.lattice
    v = u.values
    int_idx = lat.interior_idx
    out = np.zeros(lat.n_nodes)
    block = max(1, _PAIR_CHUNK // lat.n_nodes)
    for b0 in range(0, len(int_idx), block):
        sel = int_idx[b0:b0 + block]
        diffs = v[sel][:, None] - v[None, :]
        out[sel] = 2.0 * np.sum(kspec.phi(diffs) * w.w[sel], axis=1)
    out[int_idx] += 2.0 * np.asarray(kspec.phi(v[int_idx] - u.exterior_const)) * w.ext[int_idx]
    return GridFunction(lat, out, exterior_const=0.0)


def energy(u: GridFunction, m: Optional[Measure], w: PairWeights,
           kspec: KernelSpec) -> float:
    """Discrete pair energy minus the measure pairing.

    Interior-interior pairs enter with both orderings, interior-collar and
    interior-constant-region pairs with the factor two of the symmetric
    double integral; collar-collar pairs are excluded.  Satisfies, for p = 2,
    energy(u) = <apply_operator(u), u>/2 - <mu, u>.
    """
    lat = u.lattice
    v = u.values
    int_idx = lat.interior_idx
    interior = lat.interior_mask
    acc = 0.0
    block = max(1, _PAIR_CHUNK // lat.n_nodes)
    for b0 in range(0, len(int_idx), block):
        sel = int_idx[b0:b0 + block]
        diffs = v[sel][:, None] - v[None, :]
        psis = psi_values(diffs, kspec) * w.w[sel]
        acc += float(np.sum(psis))
        acc += float(np.sum(psis[:, ~interior]))  # second ordering of in-out pairs
    acc += 2.0 * float(np.sum(psi_values(v[int_idx] - u.exterior_const, kspec)
                              * w.ext[int_idx]))
    if m is not None:
        mu = nodal_masses(m, lat) if not isinstance(m, np.ndarray) else m
        acc -= float(np.dot(mu, v))
    return acc
