"""Finite Radon measures: atoms plus piecewise-constant lattice densities.

A measure answers closed-ball mass queries.  Atoms are counted when their
center lies within the closed ball; density cells are counted by the
cell-center rule, so every measure behaves, for mass queries, like a finite
atomic measure supported on atom centers and cell centers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from scipy.integrate import quad

from .core import sphere_area

__all__ = [
    "DensityGrid",
    "Measure",
    "MollifierSchedule",
    "RadialMassProfile",
    "ball_mass",
    "mollify",
    "weak_limit_check",
    "measure_from_json",
    "measure_to_json",
]


@dataclass(frozen=True)
class DensityGrid:
    """Uniform raster of cells carrying piecewise-constant density values.

    Cell (i_1, ..., i_n) covers origin + [i, i+1)*h per axis and is
    represented by its center.  `values` is indexed row-major by cell.
    """

    origin: np.ndarray
    h: float
    shape: Tuple[int, ...]
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float))
        object.__setattr__(self, "shape", tuple(int(k) for k in self.shape))
        vals = np.asarray(self.values, dtype=float).reshape(self.shape)
        object.__setattr__(self, "values", vals)
        if self.h <= 0.0:
            raise ValueError("cell size h must be positive")

    @property
    def ndim(self) -> int:
        return len(self.shape)

    def cell_centers(self) -> np.ndarray:
        axes = [self.origin[k] + (np.arange(self.shape[k]) + 0.5) * self.h
                for k in range(self.ndim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def cell_volume(self) -> float:
        return self.h ** self.ndim

    def total_mass(self) -> float:
        return float(np.sum(self.values)) * self.cell_volume()


class Measure:
    """Atoms plus an optional density; immutable after construction."""

    def __init__(self, atoms: Optional[Sequence[Tuple[Sequence[float], float]]] = None,
                 density: Optional[DensityGrid] = None, sign: str = "nonnegative"):
        if sign not in ("nonnegative", "signed"):
            raise ValueError("sign must be 'nonnegative' or 'signed'")
        atoms = atoms or []
        if atoms:
            self.atom_centers = np.asarray([a[0] for a in atoms], dtype=float).reshape(len(atoms), -1)
        else:
            nd = density.ndim if density is not None else 2
            self.atom_centers = np.zeros((0, nd))
        self.atom_masses = np.asarray([a[1] for a in atoms], dtype=float)
        self.density = density
        self.sign = sign
        if not np.all(np.isfinite(self.atom_masses)):
            raise ValueError("atom masses must be finite")
        if density is not None and not np.all(np.isfinite(density.values)):
            raise ValueError("density values must be finite")
        if sign == "nonnegative":
            if np.any(self.atom_masses < 0.0):
                raise ValueError("nonnegative measure with a negative atom")
            if density is not None and np.any(density.values < 0.0):
                raise ValueError("nonnegative measure with a negative density value")
        if len(atoms) and density is not None and density.ndim != self.atom_centers.shape[1]:
            raise ValueError("atom and density dimensions disagree")

    @staticmethod
    def dirac(center, mass: float = 1.0) -> "Measure":
        sign = "nonnegative" if mass >= 0 else "signed"
        return Measure(atoms=[(center, mass)], sign=sign)

    @staticmethod
    def zero(ndim: int = 2) -> "Measure":
        m = Measure(atoms=[], sign="nonnegative")
        m._ndim_hint = ndim
        return m

    @property
    def ndim(self) -> int:
        if len(self.atom_masses):
            return self.atom_centers.shape[1]
        if self.density is not None:
            return self.density.ndim
        return getattr(self, "_ndim_hint", 2)

    def is_zero(self) -> bool:
        return (len(self.atom_masses) == 0 or np.all(self.atom_masses == 0.0)) and (
            self.density is None or np.all(self.density.values == 0.0))

    def total_mass(self) -> float:
        """Signed total mass: atoms plus density times cell volume."""
        out = float(np.sum(self.atom_masses)) if len(self.atom_masses) else 0.0
        if self.density is not None:
            out += self.density.total_mass()
        return out

    def total_variation(self) -> float:
        out = float(np.sum(np.abs(self.atom_masses))) if len(self.atom_masses) else 0.0
        if self.density is not None:
            out += float(np.sum(np.abs(self.density.values))) * self.density.cell_volume()
        return out

    def support_points(self):
        """All mass-carrying points: (points, signed masses)."""
        pts = [self.atom_centers] if len(self.atom_masses) else []
        ms = [self.atom_masses] if len(self.atom_masses) else []
        if self.density is not None:
            vals = self.density.values.ravel()
            keep = vals != 0.0
            pts.append(self.density.cell_centers()[keep])
            ms.append(vals[keep] * self.density.cell_volume())
        if not pts:
            return np.zeros((0, self.ndim)), np.zeros(0)
        return np.concatenate(pts, axis=0), np.concatenate(ms)

    def scaled(self, factor: float) -> "Measure":
        atoms = [(c, factor * m) for c, m in zip(self.atom_centers, self.atom_masses)]
        dens = None
        if self.density is not None:
            dens = DensityGrid(self.density.origin, self.density.h, self.density.shape,
                               factor * self.density.values)
        sign = self.sign if factor >= 0 else "signed"
        return Measure(atoms=atoms, density=dens, sign=sign)


class RadialMassProfile:
    """Distances and |mu| masses seen from a fixed point, atoms and cells apart.

    Total-variation ball mass at radius t is `mass_at(t)` (closed balls, so
    the query is right-continuous and nondecreasing in t).  The density value
    of the cell containing the point, if any, is kept so potential quadrature
    can close the sub-cell scale.
    """

    def __init__(self, m: Measure, x):
        x = np.asarray(x, dtype=float)
        self.x = x
        self.ndim = m.ndim
        self.cell_h = m.density.h if m.density is not None else None
        self.local_density = 0.0
        if len(m.atom_masses):
            self.atom_dists = np.linalg.norm(m.atom_centers - x, axis=1)
            self.atom_masses = np.abs(m.atom_masses)
        else:
            self.atom_dists = np.zeros(0)
            self.atom_masses = np.zeros(0)
        if m.density is not None:
            g = m.density
            vals = g.values.ravel()
            keep = vals != 0.0
            self.cell_dists = np.linalg.norm(g.cell_centers()[keep] - x, axis=1)
            self.cell_masses = np.abs(vals[keep]) * g.cell_volume()
            # value of the density cell that owns x (zero outside the raster)
            idx = np.floor((x - g.origin) / g.h).astype(int)
            if np.all(idx >= 0) and np.all(idx < np.array(g.shape)):
                self.local_density = abs(float(g.values[tuple(idx)]))
        else:
            self.cell_dists = np.zeros(0)
            self.cell_masses = np.zeros(0)
        dists = np.concatenate([self.atom_dists, self.cell_dists])
        masses = np.concatenate([self.atom_masses, self.cell_masses])
        order = np.argsort(dists, kind="stable")
        self.dists = dists[order]
        self.cum = np.cumsum(masses[order])
        self.total = float(self.cum[-1]) if len(self.cum) else 0.0

    def mass_at(self, t):
        """|mu| of the closed ball of radius t (vectorized in t)."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.dists, t, side="right")
        cum = np.concatenate([[0.0], self.cum])
        out = cum[idx]
        return out if out.ndim else float(out)

    def jump_radii(self) -> np.ndarray:
        return np.unique(self.dists)


def ball_mass(m: Measure, x, t: float) -> float:
    """Total-variation mass of the closed ball of radius t around x."""
    if t <= 0.0:
        raise ValueError("ball radius must be positive")
    return float(RadialMassProfile(m, x).mass_at(t))


def _bump(r):
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    inside = np.abs(r) < 1.0
    with np.errstate(over="ignore"):
        out[inside] = np.exp(-1.0 / (1.0 - r[inside] ** 2))
    return out


class MollifierSchedule:
    """Standard smooth unit-mass bump scaled to support radius 1/j."""

    def __init__(self, j: int, ndim: int = 2):
        if int(j) != j or j < 1:
            raise ValueError("mollifier index j must be an integer >= 1")
        self.j = int(j)
        self.ndim = int(ndim)
        raw_mass, _ = quad(lambda r: _bump(r) * r ** (self.ndim - 1), 0.0, 1.0,
                           epsabs=1e-14, epsrel=1e-13)
        self._norm = 1.0 / (sphere_area(self.ndim) * raw_mass)

    @property
    def radius(self) -> float:
        return 1.0 / self.j

    def density_at(self, z) -> np.ndarray:
        """Scaled bump rho_j(z) = j^n rho(j z) evaluated at offsets z."""
        z = np.asarray(z, dtype=float)
        r = np.linalg.norm(z, axis=-1)
        return self.j ** self.ndim * self._norm * _bump(self.j * r)


def mollify(m: Measure, sched: MollifierSchedule, lat) -> Measure:
    """Convolve a measure with the scheduled mollifier, sampled on lattice cells.

    The output is a density-only measure on cells centered at the lattice
    nodes.  Cell sampling is renormalized so the total mass matches the input
    exactly; a lattice too coarse or too small to see the mollified support
    raises.
    """
    nodes = lat.nodes
    h = lat.h
    pts, masses = m.support_points()
    if len(pts) == 0:
        vals = np.zeros(lat.node_shape)
        grid = DensityGrid(lat.node_origin - 0.5 * h, h, lat.node_shape, vals)
        return Measure(density=grid, sign=m.sign)
    lo = nodes.min(axis=0)
    hi = nodes.max(axis=0)
    if np.any(pts.min(axis=0) - sched.radius < lo - 0.5 * h) or \
            np.any(pts.max(axis=0) + sched.radius > hi + 0.5 * h):
        raise ValueError("lattice does not cover the mollified support")
    vals = np.zeros(len(nodes))
    chunk = max(1, int(2e6 / max(len(nodes), 1)))
    for k0 in range(0, len(pts), chunk):
        sel = slice(k0, k0 + chunk)
        offs = nodes[None, :, :] - pts[sel][:, None, :]
        vals += masses[sel] @ sched.density_at(offs)
    discrete = float(np.sum(vals)) * h ** lat.ndim
    target = m.total_mass()
    if discrete <= 0.0 and target != 0.0:
        raise ValueError("lattice too coarse: mollified mass not captured by any cell")
    if discrete != 0.0:
        vals *= target / discrete
    grid = DensityGrid(lat.node_origin - 0.5 * h, h, lat.node_shape,
                       vals.reshape(lat.node_shape))
    return Measure(density=grid, sign=m.sign)


def weak_limit_check(seq: Sequence[Measure], limit: Measure,
                     balls: Sequence[Tuple[Sequence[float], float]],
                     tol: float = 1e-6) -> dict:
    """Upper-semicontinuity check of ball masses along an approximating sequence.

    For each ball, reports the largest excess of |mu_j|(B) over |mu|(B-bar)
    across the tail half of the sequence and flags excesses beyond tol.
    """
    if not len(seq):
        raise ValueError("empty sequence")
    tail = seq[len(seq) // 2:]
    rows = []
    for x, t in balls:
        lim = ball_mass(limit, x, t) if not limit.is_zero() else 0.0
        tail_masses = [ball_mass(mj, x, t) if not mj.is_zero() else 0.0 for mj in tail]
        excess = max(mm - lim for mm in tail_masses)
        rows.append({"x": list(np.asarray(x, dtype=float)), "t": float(t),
                     "limit_mass": lim, "max_excess": float(excess),
                     "violates": bool(excess > tol)})
    return {"balls": rows, "tol": tol, "passed": not any(r["violates"] for r in rows)}


def measure_from_json(source) -> Measure:
    """Load a measure from a JSON file path, JSON string, or parsed dict."""
    if isinstance(source, dict):
        obj = source
    else:
        text = str(source)
        if text.lstrip().startswith("{"):
            obj = json.loads(text)
        else:
            with open(text) as f:
                obj = json.load(f)
    atoms = [(a["x"], float(a["mass"])) for a in obj.get("atoms", [])]
    density = None
    if "density" in obj and obj["density"] is not None:
        d = obj["density"]
        density = DensityGrid(np.asarray(d["origin"], dtype=float), float(d["h"]),
                              tuple(d["shape"]), np.asarray(d["values"], dtype=float))
    return Measure(atoms=atoms, density=density, sign=obj.get("sign", "nonnegative"))


def measure_to_json(m: Measure) -> dict:
    out = {"sign": m.sign}
    if len(m.atom_masses):
        out["atoms"] = [{"x": list(c), "mass": float(v)}
                        for c, v in zip(m.atom_centers, m.atom_masses)]
    if m.density is not None:
        out["density"] = {
            "origin": list(m.density.origin),
            "h": m.density.h,
            "shape": list(m.density.shape),
            "values": [float(v) for v in m.density.values.ravel()],
        }
    return out
