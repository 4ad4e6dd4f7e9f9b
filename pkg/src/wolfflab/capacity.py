"""Discretized Orlicz capacities with Riesz or Bessel kernels, capacity
condition checkers, and the Wolff/capacity cross-consistency probe.

The capacity program min sum P(f) h^n subject to (kernel * f) >= 1 on the
target nodes, f >= 0, is solved by multiplicative dual updates with
geometric step decay; a feasible primal iterate is maintained by scaling,
and for power integrands the Fenchel dual provides a lower-bound
certificate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import Params, ReactionSpec, reaction_conjugate
from .grid import Lattice
from .measure import DensityGrid, Measure, ball_mass
from .potential import _bessel_radial_many, _riesz_kernel_vals, frac_max, wolff

__all__ = [
    "CapacityProblem",
    "CapacityValue",
    "orlicz_capacity",
    "capacity_program",
    "capacity_condition",
    "maximal_smallness",
    "wolff_capacity_equiv_probe",
]


@dataclass
class CapacityProblem:
    """Target node set, kernel choice, and integrand for a capacity program."""

    lat: Lattice
    target_idx: np.ndarray
    kernel: str = "riesz"
    kernel_order: float = 1.0
    integrand: str = "power"          # "power" or "conjugate"
    q: float = 2.0
    reaction: Optional[ReactionSpec] = None
    prm: Optional[Params] = None
    support_factor: float = 3.0

    def __post_init__(self):
        self.target_idx = np.asarray(self.target_idx, dtype=int)
        if not len(self.target_idx):
            raise ValueError("target set is empty")
        if self.kernel not in ("riesz", "bessel"):
            raise ValueError("kernel must be 'riesz' or 'bessel'")
        if self.integrand == "power":
            if not self.q > 1.0:
                raise ValueError("power integrand needs q > 1")
        elif self.integrand == "conjugate":
            if self.reaction is None or self.prm is None:
                raise ValueError("conjugate integrand needs a reaction and params")
        else:
            raise ValueError("integrand must be 'power' or 'conjugate'")

    def with_target(self, target_idx) -> "CapacityProblem":
        return CapacityProblem(self.lat, np.asarray(target_idx, dtype=int),
                               self.kernel, self.kernel_order, self.integrand,
                               self.q, self.reaction, self.prm, self.support_factor)


@dataclass
class CapacityValue:
    value: float
    dual_bound: float
    gap: float
    certified: bool
    iterations: int
    f_support_cells: int


def _kernel_vals(cp: CapacityProblem, ndim: int, d: np.ndarray) -> np.ndarray:
    if cp.kernel == "riesz":
        return _riesz_kernel_vals(ndim, cp.kernel_order, d)
    return _bessel_radial_many(ndim, cp.kernel_order, d)


def _constraint_matrix(cp: CapacityProblem):
    """Kernel quadrature matrix from support cells to target nodes."""
    lat = cp.lat
    ndim = lat.ndim
    h = lat.h
    pts = lat.nodes[cp.target_idx]
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    half = max(0.5 * cp.support_factor * float(np.max(hi - lo)), 4.0 * h)
    center = 0.5 * (lo + hi)
    lo_idx = np.ceil((center - half - lat.node_origin) / h).astype(int)
    hi_idx = np.floor((center + half - lat.node_origin) / h).astype(int)
    axes = [np.arange(lo_idx[k], hi_idx[k] + 1) for k in range(ndim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    cells = lat.node_origin + np.stack([mm.ravel() for mm in mesh], axis=-1) * h

    d = np.linalg.norm(pts[:, None, :] - cells[None, :, :], axis=-1)
    with np.errstate(divide="ignore"):
        a = np.where(d > 0.0, _kernel_vals(cp, ndim, np.maximum(d, 1e-300)), 0.0) * h ** ndim
    near = d < 2.0 * h
    if np.any(near):
        sub = ((np.arange(4) + 0.5) / 4.0 - 0.5) * h
        smesh = np.meshgrid(*([sub] * ndim), indexing="ij")
        offsets = np.stack([mm.ravel() for mm in smesh], axis=-1)
        ei, cj = np.nonzero(near)
        subpts = cells[cj][:, None, :] + offsets[None, :, :]
        dd = np.linalg.norm(subpts - pts[ei][:, None, :], axis=-1)
        kv = _kernel_vals(cp, ndim, dd.ravel()).reshape(dd.shape)
        a[ei, cj] = kv.mean(axis=1) * h ** ndim
    return a, cells


class _PowerIntegrand:
    def __init__(self, q: float, hn: float):
        self.q = q
        self.hn = hn

    def pointwise_argmin(self, c):
        return np.maximum(c / (self.q * self.hn), 0.0) ** (1.0 / (self.q - 1.0))

    def primal(self, f):
        return self.hn * float(np.sum(f ** self.q))

    def conjugate_sum(self, c):
        f = self.pointwise_argmin(c)
        return float(np.sum(c * f)) * (self.q - 1.0) / self.q


class _TabulatedIntegrand:
    """Piecewise-linear conjugate-growth integrand with slope inversion."""

    def __init__(self, reaction: ReactionSpec, prm: Params, hn: float,
                 t_max: float = 1e4, num: int = 1200):
        self.hn = hn
        self.ts = np.concatenate([[0.0], np.geomspace(1e-8, t_max, num)])
        self.ps = np.array([reaction_conjugate(reaction, prm, t) for t in self.ts])
        slopes = np.diff(self.ps) / np.diff(self.ts)
        self.slopes = np.maximum.accumulate(slopes)

    def pointwise_argmin(self, c):
        idx = np.searchsorted(self.slopes, np.asarray(c, dtype=float) / self.hn)
        idx = np.minimum(idx, len(self.ts) - 1)
        return self.ts[idx]

    def primal(self, f):
        return self.hn * float(np.sum(np.interp(f, self.ts, self.ps)))

    def conjugate_sum(self, c):
        return math.nan


def capacity_program(cp: CapacityProblem, tol: float = 1e-3,
                     max_iter: int = 10000) -> CapacityValue:
    """Solve the discretized capacity program.

    Dual variables get multiplicative updates lam *= exp(eta*(1 - A f)) with
    geometrically decaying eta; the best feasible primal (after scaling f up
    to restore the constraints) is reported.  For power integrands the run
    stops early once the primal sits within tol of the dual lower bound.
    """
    a, cells = _constraint_matrix(cp)
    hn = cp.lat.h ** cp.lat.ndim
    if cp.integrand == "power":
        integ = _PowerIntegrand(cp.q, hn)
    else:
        integ = _TabulatedIntegrand(cp.reaction, cp.prm, hn)

    col = a.sum(axis=0)

    def feas_gap(alpha):
        f = integ.pointwise_argmin(alpha * col)
        return float(np.min(a @ f)) - 1.0

    alpha_lo, alpha_hi = 1.0, 1.0
    for _ in range(200):
        if feas_gap(alpha_lo) <= 0.0:
            break
        alpha_lo *= 0.5
    for _ in range(200):
        if feas_gap(alpha_hi) >= 0.0:
            break
        alpha_hi *= 2.0
    for _ in range(80):
        mid = math.sqrt(alpha_lo * alpha_hi)
        if feas_gap(mid) >= 0.0:
            alpha_hi = mid
        else:
            alpha_lo = mid
    lam = np.full(a.shape[0], alpha_hi)

    best_primal = math.inf
    best_dual = 0.0
    eta = 1.0
    decay = 1.0 - 5.0 / max_iter
    certified = False
    it = 0
    for it in range(1, max_iter + 1):
        c = a.T @ lam
        f = integ.pointwise_argmin(c)
        af = a @ f
        if cp.integrand == "power":
            dual = float(np.sum(lam)) - integ.conjugate_sum(c)
            best_dual = max(best_dual, dual)
        mfeas = float(np.min(af))
        if mfeas > 0.0:
            primal = integ.primal(f / mfeas)
            if primal < best_primal:
                best_primal = primal
        if cp.integrand == "power" and best_dual > 0.0:
            if best_primal - best_dual <= tol * best_primal:
                certified = True
                break
        lam = lam * np.exp(eta * (1.0 - af))
        eta *= decay
    gap = (best_primal - best_dual) / best_primal if best_primal > 0.0 else math.nan
    return CapacityValue(value=best_primal, dual_bound=best_dual,
                         gap=float(gap), certified=certified,
                         iterations=it, f_support_cells=len(cells))


def orlicz_capacity(cp: CapacityProblem, tol: float = 1e-3) -> float:
    """Best feasible value of the discretized capacity program."""
    return capacity_program(cp, tol).value


def _set_node_idx(lat: Lattice, spec: dict) -> np.ndarray:
    if "ball" in spec:
        x, r = spec["ball"]
        d = np.linalg.norm(lat.nodes - np.asarray(x, dtype=float), axis=1)
        return np.flatnonzero(d <= r)
    if "box" in spec:
        lo, hi = (np.asarray(v, dtype=float) for v in spec["box"])
        inside = np.all((lat.nodes >= lo) & (lat.nodes <= hi), axis=1)
        return np.flatnonzero(inside)
    raise ValueError("set spec must contain 'ball' or 'box'")


def _set_mass(m: Measure, spec: dict) -> float:
    if "ball" in spec:
        x, r = spec["ball"]
        return ball_mass(m, x, r) if not m.is_zero() else 0.0
    lo, hi = (np.asarray(v, dtype=float) for v in spec["box"])
    pts, masses = m.support_points()
    if not len(pts):
        return 0.0
    inside = np.all((pts >= lo) & (pts <= hi), axis=1)
    return float(np.sum(np.abs(masses[inside])))


def capacity_condition(m: Measure, base: CapacityProblem, sets: Sequence[dict],
                       delta: float, tol: float = 1e-3) -> dict:
    """Check mu(K) <= delta * cap(K) over the supplied test sets."""
    rows = []
    for spec in sets:
        idx = _set_node_idx(base.lat, spec)
        if not len(idx):
            raise ValueError("a test set contains no lattice node")
        cap = orlicz_capacity(base.with_target(idx), tol)
        mass = _set_mass(m, spec)
        ratio = mass / cap if cap > 0.0 else (math.inf if mass > 0.0 else 0.0)
        rows.append({"set": spec, "mass": mass, "capacity": cap, "ratio": ratio,
                     "nodes": int(len(idx))})
    passed = all(row["ratio"] <= delta for row in rows)
    return {"sets": rows, "delta": delta, "passed": bool(passed)}


def maximal_smallness(m: Measure, prm: Params, beta: float, T: float,
                      points) -> float:
    """Sup over the given points of the weighted fractional maximal function
    with order sp and exponent (p-1)(beta-1)/beta."""
    if beta < 1.0:
        raise ValueError("beta must be at least 1")
    eta = (prm.p - 1.0) * (beta - 1.0) / beta
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if m.is_zero():
        return 0.0
    return max(frac_max(m, x, prm, prm.sp, eta, T) for x in points)


def wolff_capacity_equiv_probe(m: Measure, gamma: float, prm: Params,
                               lat: Lattice, compacts: Sequence[dict],
                               balls: Sequence[tuple], R: Optional[float] = None,
                               quad_points: int = 40, tol: float = 1e-3) -> dict:
    """Cross-consistency constants for the capacity characterizations.

    Reports, per compact set K, the ratio of the integrated gamma-power of
    the truncated Wolff potential to the Bessel capacity of K; and per ball
    B, the ratio of the whole-space integral of the gamma-power of the Wolff
    potential of the restricted measure to the ball mass.  Constants are
    reported, not asserted.
    """
    if m.is_zero():
        return {"compact_rows": [], "ball_rows": [], "R": R}
    pts, _ = m.support_points()
    if R is None:
        R = max(1.0, float(np.max(np.linalg.norm(pts, axis=1))) * 1.001 + 1e-6)
    T = 4.0 * R
    q_cap = gamma / (gamma - prm.p + 1.0)
    hn = lat.h ** lat.ndim

    compact_rows = []
    for spec in compacts:
        idx = _set_node_idx(lat, spec)
        if not len(idx):
            continue
        wvals = np.array([wolff(m, x, prm, T, 1e-8) for x in lat.nodes[idx]])
        finite = np.isfinite(wvals)
        lhs = float(np.sum(wvals[finite] ** gamma)) * hn
        cp = CapacityProblem(lat, idx, kernel="bessel", kernel_order=prm.sp,
                             integrand="power", q=q_cap)
        cap = orlicz_capacity(cp, tol)
        compact_rows.append({"set": spec, "integral": lhs, "capacity": cap,
                             "C2": lhs / cap if cap > 0 else math.inf,
                             "skipped_singular": int(np.sum(~finite))})

    ball_rows = []
    for x, t in balls:
        restricted = _restrict_to_ball(m, x, t)
        mass = restricted.total_variation()
        if mass <= 0.0:
            continue
        rpts, _ = restricted.support_points()
        lo = rpts.min(axis=0) - T
        hi = rpts.max(axis=0) + T
        # staggered raster avoids evaluating on top of support atoms
        step = float(np.max(hi - lo)) / quad_points
        axes = [np.arange(lo[k] + 0.37 * step, hi[k], step) for k in range(lat.ndim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        qpts = np.stack([mm.ravel() for mm in mesh], axis=-1)
        wv = np.array([wolff(restricted, xq, prm, T, 1e-7) for xq in qpts])
        finite = np.isfinite(wv)
        integral = float(np.sum(wv[finite] ** gamma)) * step ** lat.ndim
        ball_rows.append({"ball": (list(np.asarray(x, dtype=float)), float(t)),
                          "integral": integral, "mass": mass,
                          "C3": integral / mass,
                          "skipped_singular": int(np.sum(~finite))})
    out = {"compact_rows": compact_rows, "ball_rows": ball_rows, "R": R}
    for key, rows in (("C2", compact_rows), ("C3", ball_rows)):
        vals = [row[key] for row in rows if math.isfinite(row[key])]
        if vals:
            out[f"{key}_spread"] = max(vals) / min(vals) if min(vals) > 0 else math.inf
    return out


def _restrict_to_ball(m: Measure, x, t: float) -> Measure:
    x = np.asarray(x, dtype=float)
    atoms = []
    if len(m.atom_masses):
        d = np.linalg.norm(m.atom_centers - x, axis=1)
        atoms = [(c, v) for c, v, dd in zip(m.atom_centers, m.atom_masses, d) if dd <= t]
    density = None
    if m.density is not None:
        g = m.density
        centers = g.cell_centers()
        keep = np.linalg.norm(centers - x, axis=1) <= t
        vals = np.where(keep.reshape(g.shape), g.values, 0.0)
        density = DensityGrid(g.origin, g.h, g.shape, vals)
    return Measure(atoms=atoms, density=density, sign=m.sign)
