"""Quadrature engines for truncated Wolff/Riesz potentials, fractional
maximal functions, and Riesz/Bessel kernel convolutions.

Ball masses of the discrete measures are step functions of the radius, so
the radial integrals are evaluated piecewise between mass breakpoints with
Gauss-Legendre nodes in log-radius, refined until the relative change drops
below the requested tolerance.  The density cell that contains the
evaluation point is closed below the cell scale by a locally uniform ramp,
which keeps potentials of densities finite at cell centers.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from scipy.integrate import quad

from .core import Params, ball_volume, log_weight
from .measure import DensityGrid, Measure, RadialMassProfile

__all__ = [
    "wolff",
    "riesz",
    "frac_max",
    "bessel_kernel",
    "kernel_potential",
    "wolff_from_profile",
    "riesz_from_profile",
    "frac_max_from_profile",
    "lebesgue_frac_max_norm",
]

_ATOM_EPS = 1e-13


class _QuadratureProfile:
    """Radial mass model combining one or more measures seen from a point.

    Atoms keep their exact distances.  Density cells within two cell widths
    of the point are replaced by a mass-conserving locally uniform ramp
    C * t^n on [0, r_match): a piecewise-constant density really is locally
    uniform at the cell scale, and the ramp removes the sub-cell lumpiness
    that would otherwise make potentials of densities diverge at cell
    centers and misbehave at truncation radii comparable to the cell size.
    """

    def __init__(self, profiles):
        if isinstance(profiles, RadialMassProfile):
            profiles = [profiles]
        self.ndim = profiles[0].ndim
        vn = ball_volume(self.ndim)
        self.atom_at_origin = False
        dist_parts, mass_parts = [], []
        self.ramps = []  # (radius, coefficient C) with mass C * t^n below radius
        for pr in profiles:
            if pr.ndim != self.ndim:
                raise ValueError("profiles live in different dimensions")
            if len(pr.atom_dists) and np.any((pr.atom_dists <= _ATOM_EPS)
                                             & (pr.atom_masses > 0.0)):
                self.atom_at_origin = True
            dist_parts.append(pr.atom_dists)
            mass_parts.append(pr.atom_masses)
            cd = pr.cell_dists
            cm = pr.cell_masses
            if pr.cell_h is not None and len(cd):
                near = cd <= 2.0 * pr.cell_h
                mass_near = float(np.sum(cm[near]))
                if mass_near > 0.0:
                    count = int(np.sum(near))
                    r_match = (count * pr.cell_h ** self.ndim / vn) ** (1.0 / self.ndim)
                    far_d = cd[~near]
                    if len(far_d):
                        r_match = min(r_match, float(np.min(far_d)) * (1.0 - 1e-12))
                    self.ramps.append((r_match, mass_near / r_match ** self.ndim))
                    cd, cm = cd[~near], cm[~near]
            dist_parts.append(cd)
            mass_parts.append(cm)
        dists = np.concatenate(dist_parts) if dist_parts else np.zeros(0)
        masses = np.concatenate(mass_parts) if mass_parts else np.zeros(0)
        order = np.argsort(dists, kind="stable")
        self.dists = dists[order]
        self.cum = np.cumsum(masses[order]) if len(order) else np.zeros(0)
        self.total = float(self.cum[-1]) if len(self.cum) else 0.0
        self.total += sum(c * r ** self.ndim for r, c in self.ramps)

    def is_null(self) -> bool:
        return self.total == 0.0 and not self.atom_at_origin

    def step_mass(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.dists, t, side="right")
        cum = np.concatenate([[0.0], self.cum])
        return cum[idx]

    def ramp_coeff(self, t: float) -> float:
        """Combined coefficient C of ramps still active at radius t."""
        return sum(c for r, c in self.ramps if t < r)

    def saturated_mass(self, t: float) -> float:
        """Steps plus the full mass of ramps already exhausted at radius t."""
        out = float(self.step_mass(t))
        out += sum(c * r ** self.ndim for r, c in self.ramps if t >= r)
        return out

    def mass_model(self, t):
        """Step mass plus the locally uniform near-field ramps (saturating)."""
        t = np.asarray(t, dtype=float)
        out = self.step_mass(t)
        for r, c in self.ramps:
            out = out + c * np.minimum(t, r) ** self.ndim
        return out


def _as_profiles(m, x):
    measures = m if isinstance(m, (list, tuple)) else [m]
    return [RadialMassProfile(mm, x) for mm in measures]


def _radial_integral(qp: _QuadratureProfile, expo: float, beta: float,
                     T: float, tol: float) -> float:
    """Integral over (0, T] of mass_model(t)^expo * t^(-beta-1) dt.

    Pieces between breakpoints are integrated with Gauss-Legendre nodes in
    log t, doubling the node count until the value settles within tol;
    step-free ramp pieces use the exact power-law form, and beta > 0 gives
    the closed-form tail beyond the last breakpoint when T is infinite.
    """
    if qp.atom_at_origin:
        return math.inf
    finite_T = math.isfinite(T)
    bps = qp.dists[qp.dists > 0.0]
    bps = np.concatenate([bps, [r for r, _ in qp.ramps]])
    if finite_T:
        bps = bps[bps < T]
    bps = np.unique(bps)
    edges = list(bps) + ([T] if finite_T else [])
    if not edges:
        return 0.0

    total = 0.0
    ne = qp.ndim * expo
    a_list, b_list = [], []
    prev = 0.0
    for edge in edges:
        if edge <= prev * (1.0 + 1e-15):
            prev = max(prev, edge)
            continue
        a, b = prev, edge
        prev = edge
        mid = math.sqrt(a * b) if a > 0.0 else 0.5 * b
        const_part = qp.saturated_mass(mid)
        coeff = qp.ramp_coeff(mid)
        if const_part == 0.0:
            if coeff > 0.0:
                # pure ramp piece: exact power-law integral
                if ne - beta <= 0.0:
                    return math.inf
                hi = b ** (ne - beta)
                lo = a ** (ne - beta) if a > 0.0 else 0.0
                total += coeff ** expo * (hi - lo) / (ne - beta)
            continue
        if a == 0.0:
            # positive constant mass cannot reach radius zero
            raise AssertionError("saturated mass at zero radius without an origin atom")
        a_list.append(a)
        b_list.append(b)

    if a_list:
        ua = np.log(np.asarray(a_list))
        ub = np.log(np.asarray(b_list))
        width_cap = 0.5 / max(abs(beta), 1.0) if abs(beta) > 1.0 else 0.5
        nsub = np.maximum(1, np.ceil((ub - ua) / width_cap).astype(int))
        widths = np.repeat((ub - ua) / nsub, nsub)
        starts = np.repeat(ua, nsub)
        offs = np.concatenate([np.arange(k) for k in nsub])
        lo = starts + offs * widths
        hi = lo + widths

        def _eval(knodes: int) -> float:
            x, w = np.polynomial.legendre.leggauss(knodes)
            mid = 0.5 * (lo + hi)
            half = 0.5 * (hi - lo)
            u = mid[:, None] + half[:, None] * x[None, :]
            t = np.exp(u)
            f = qp.mass_model(t) ** expo * t ** (-beta)
            return float(np.sum(half[:, None] * w[None, :] * f))

        val = _eval(8)
        for k in (16, 32, 64):
            nxt = _eval(k)
            done = abs(nxt - val) <= tol * max(abs(nxt), 1e-300)
            val = nxt
            if done:
                break
        total += val

    if not finite_T and qp.total > 0.0:
        if beta <= 0.0:
            return math.inf
        cands = [r for r, _ in qp.ramps]
        if len(qp.dists):
            cands.append(float(qp.dists[-1]))
        r0 = max(cands)
        total += qp.total ** expo * r0 ** (-beta) / beta
    return total


def wolff_from_profile(profile, prm: Params, T: float, tol: float = 1e-9,
                       s_order: float | None = None) -> float:
    s = prm.s if s_order is None else s_order
    if not T > 0.0:
        raise ValueError("truncation radius must be positive")
    if prm.n - s * prm.p <= 0.0:
        raise ValueError("order requires n - s*p > 0")
    qp = profile if isinstance(profile, _QuadratureProfile) else _QuadratureProfile(profile)
    if qp.is_null():
        return 0.0
    expo = 1.0 / (prm.p - 1.0)
    beta = (prm.n - s * prm.p) / (prm.p - 1.0)
    return _radial_integral(qp, expo, beta, T, tol)


def wolff(m, x, prm: Params, T: float, tol: float = 1e-9,
          s_order: float | None = None) -> float:
    """Truncated Wolff potential of m (a Measure or list of Measures) at x.

    Integrates [|mu|(B_t)/t^(n-sp)]^(1/(p-1)) dt/t over (0, T].  Returns
    math.inf when an atom sits at x or the integral diverges; T may be
    math.inf (the discrete measures are compactly supported, so the tail
    beyond the support has a closed form).
    """
    return wolff_from_profile(_QuadratureProfile(_as_profiles(m, x)), prm, T, tol, s_order)


def riesz_from_profile(profile, prm: Params, s_order: float, T: float,
                       tol: float = 1e-9) -> float:
    if not 0.0 < s_order < prm.n:
        raise ValueError("riesz order must lie in (0, n)")
    if not T > 0.0:
        raise ValueError("truncation radius must be positive")
    qp = profile if isinstance(profile, _QuadratureProfile) else _QuadratureProfile(profile)
    if qp.is_null():
        return 0.0
    return _radial_integral(qp, 1.0, prm.n - s_order, T, tol)


def riesz(m, x, prm: Params, s_order: float, T: float, tol: float = 1e-9) -> float:
    """Truncated Riesz potential: integral of |mu|(B_t)/t^(n-s) dt/t."""
    return riesz_from_profile(_QuadratureProfile(_as_profiles(m, x)), prm, s_order, T, tol)


def frac_max_from_profile(profile, prm: Params, s_order: float, eta: float,
                          T: float) -> float:
    if not T > 0.0:
        raise ValueError("truncation radius must be positive")
    if not 0.0 <= s_order <= prm.n:
        raise ValueError("maximal order must lie in [0, n]")
    qp = profile if isinstance(profile, _QuadratureProfile) else _QuadratureProfile(profile)
    if qp.atom_at_origin:
        return math.inf
    if qp.is_null():
        return 0.0
    if not math.isfinite(T):
        # beyond the support the mass is constant and the weight decays, so
        # the sup is attained no later than the last jump radius
        if s_order >= prm.n:
            return math.inf
        T = float(np.max(qp.dists)) if len(qp.dists) else max(r for r, _ in qp.ramps)

    def ratio(ts):
        ts = np.asarray(ts, dtype=float)
        hw = np.array([log_weight(eta, t) for t in ts])
        return qp.mass_model(ts) / (ts ** (prm.n - s_order) * hw)

    cands = qp.dists[(qp.dists > 0.0) & (qp.dists <= T)]
    cands = np.concatenate([cands, [T]])
    for r_eff, _ in qp.ramps:
        # ramp segment behaves like t^s/h_eta(t): right end, interior
        # critical point, and the weight kink are the only candidates
        r = min(r_eff, T)
        extra = [r]
        if eta > 0.0 and s_order > 0.0:
            t_star = math.exp(-eta / s_order)
            if t_star < r:
                extra.append(t_star)
        if 0.5 < r:
            extra.append(0.5)
        cands = np.concatenate([cands, extra])
    lo = max(float(np.min(cands)) * 1e-3, 1e-12)
    cands = np.concatenate([cands, np.geomspace(lo, T, 65)])
    cands = np.unique(cands[(cands > 0.0) & (cands <= T)])
    return float(np.max(ratio(cands)))


def frac_max(m, x, prm: Params, s_order: float, eta: float, T: float) -> float:
    """Truncated fractional maximal function sup_t |mu|(B_t)/(t^(n-s) h_eta(t)).

    Exact for pure-atom measures: the normalizing weight is nonincreasing in
    t, so the sup over each constancy interval of the ball mass sits at its
    left endpoint, i.e. at a jump radius.
    """
    return frac_max_from_profile(_QuadratureProfile(_as_profiles(m, x)), prm, s_order, eta, T)


def lebesgue_frac_max_norm(prm: Params, s_order: float, eta: float, T: float) -> float:
    """Sup over x (space-independent) of the maximal function of Lebesgue measure.

    Equals v_n * sup_{0<t<=T} t^s / h_eta(t); the sup sits at T, at 1/2, or
    at the interior critical point exp(-eta/s) of the low-t branch.
    """
    vn = ball_volume(prm.n)
    if eta == 0.0:
        return vn * T ** s_order
    cands = [T]
    if T > 0.5:
        cands.append(0.5)
    if s_order > 0:
        t_star = math.exp(-eta / s_order)
        if t_star < min(T, 0.5):
            cands.append(t_star)
    return vn * max(t ** s_order / log_weight(eta, t) for t in cands)


def bessel_kernel(prm: Params, s_order: float, x, tol: float = 1e-10) -> float:
    """Bessel kernel value at x via the subordination integral."""
    if s_order <= 0.0:
        raise ValueError("bessel order must be positive")
    r = float(np.linalg.norm(np.asarray(x, dtype=float)))
    return _bessel_radial(prm.n, s_order, r, tol)


def _bessel_radial(n: int, s_order: float, r: float, tol: float = 1e-10) -> float:
    if r == 0.0:
        if s_order <= n:
            raise ValueError("bessel kernel is singular at the origin for s <= n")
        return math.exp(math.lgamma((s_order - n) / 2.0) - math.lgamma(s_order / 2.0)) \
            / (4.0 * math.pi) ** (n / 2.0)
    c = (4.0 * math.pi) ** (-n / 2.0) / math.gamma(s_order / 2.0)
    nu = (s_order - n) / 2.0
    if r > 600.0:
        return 0.0
    # substitute t = (r/2) e^u: the subordination integrand becomes
    # exp(-r cosh u + nu u), doubly-exponentially decaying for every r > 0
    cap = math.acosh(745.0 / r) + 1.0 if r < 745.0 else 1.0

    def integrand(u):
        z = -r * math.cosh(u) + nu * u
        return math.exp(z) if z > -745.0 else 0.0

    val, _ = quad(integrand, -cap, cap, epsabs=1e-300, epsrel=tol, limit=400)
    scale = (r / 2.0) ** nu
    return c * scale * val


@lru_cache(maxsize=32)
def _bessel_table(n: int, s_order: float, lr_lo: float, lr_hi: float):
    rs = np.geomspace(math.exp(lr_lo), math.exp(lr_hi), 600)
    vals = np.array([max(_bessel_radial(n, s_order, r, 1e-10), 1e-300) for r in rs])
    return np.log(rs), np.log(vals)


def _bessel_radial_many(n: int, s_order: float, r: np.ndarray) -> np.ndarray:
    """Vectorized Bessel kernel via a cached log-log radial table."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0.0):
        raise ValueError("bessel kernel is singular at the origin")
    # round the span outward so the cache is reused across nearby calls
    lr_lo = math.floor(math.log(float(np.min(r))) * 2.0) / 2.0
    lr_hi = math.ceil(math.log(float(np.max(r))) * 2.0) / 2.0 + 0.5
    lx, ly = _bessel_table(n, s_order, lr_lo, lr_hi)
    return np.exp(np.interp(np.log(r), lx, ly))


def _riesz_kernel_vals(n: int, s_order: float, d: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", over="ignore"):
        return d ** (-(n - s_order)) / (n - s_order)


def kernel_potential(kind: str, s_order: float, f, x, prm: Params,
                     tol: float = 1e-8) -> float:
    """Convolution of the Riesz or Bessel kernel with a measure or density.

    Direct summation over atoms and cells.  Cells within 2h of x are
    subdivided 4x per axis and the kernel is averaged over subcell centers,
    which bounds the near-singularity quadrature error.  Evaluation at an
    atom with a singular kernel returns math.inf.
    """
    if kind not in ("riesz", "bessel"):
        raise ValueError("kernel kind must be 'riesz' or 'bessel'")
    if kind == "riesz" and not 0.0 < s_order < prm.n:
        raise ValueError("riesz kernel order must lie in (0, n)")
    if isinstance(f, DensityGrid):
        f = Measure(density=f, sign="signed")
    x = np.asarray(x, dtype=float)

    def kvals(d):
        d = np.asarray(d, dtype=float)
        if kind == "riesz":
            return _riesz_kernel_vals(prm.n, s_order, d)
        return _bessel_radial_many(prm.n, s_order, d)

    total = 0.0
    if len(f.atom_masses):
        d = np.linalg.norm(f.atom_centers - x, axis=1)
        at_x = (d <= _ATOM_EPS) & (f.atom_masses != 0.0)
        if np.any(at_x):
            if kind == "riesz" or s_order <= prm.n:
                return math.inf
            total += float(np.sum(f.atom_masses[at_x])) * _bessel_radial(prm.n, s_order, 0.0)
        far = d > _ATOM_EPS
        if np.any(far):
            total += float(np.sum(f.atom_masses[far] * kvals(d[far])))
    if f.density is not None:
        g = f.density
        centers = g.cell_centers()
        vals = g.values.ravel()
        d = np.linalg.norm(centers - x, axis=1)
        near = d < 2.0 * g.h
        far = ~near
        if np.any(far):
            total += float(np.sum(vals[far] * kvals(d[far]))) * g.cell_volume()
        if np.any(near):
            sub = (np.arange(4) + 0.5) / 4.0 - 0.5
            mesh = np.meshgrid(*([sub] * g.ndim), indexing="ij")
            offsets = np.stack([mm.ravel() for mm in mesh], axis=-1) * g.h
            sub_centers = centers[near][:, None, :] + offsets[None, :, :]
            dd = np.linalg.norm(sub_centers - x, axis=-1)
            kv = kvals(dd.ravel()).reshape(dd.shape)
            sub_vol = g.cell_volume() / 4 ** g.ndim
            total += float(np.sum(vals[near][:, None] * kv)) * sub_vol
    return total
