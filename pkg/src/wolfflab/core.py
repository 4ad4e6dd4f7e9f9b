"""Problem parameters, growth nonlinearities, and scalar special functions.

Everything here is a pure function of immutable inputs; the heavier modules
(potentials, grids, solvers) build on these primitives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

__all__ = [
    "Params",
    "KernelSpec",
    "ReactionSpec",
    "phi_eval",
    "psi_eval",
    "psi_values",
    "trunc_exp",
    "reaction_eval",
    "log_weight",
    "reaction_series",
    "reaction_conjugate",
    "signed_power_ratio_sup",
    "sphere_area",
    "ball_volume",
]


def sphere_area(n: int) -> float:
    """Surface measure of the unit sphere in R^n."""
    return 2.0 * math.pi ** (n / 2.0) / math.gamma(n / 2.0)


def ball_volume(n: int) -> float:
    """Volume of the unit ball in R^n."""
    return math.pi ** (n / 2.0) / math.gamma(n / 2.0 + 1.0)


@dataclass(frozen=True)
class Params:
    """Structural parameters (n, s, p, lam) and the exponents derived from them.

    Requires n >= 2, 0 < s < 1, 1 < p < n/s, lam >= 1.
    """

    n: int
    s: float
    p: float
    lam: float = 1.0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise ValueError(f"dimension n must be an integer >= 2, got {self.n}")
        if not 0.0 < self.s < 1.0:
            raise ValueError(f"fractional order s must lie in (0,1), got {self.s}")
        if not 1.0 < self.p < self.n / self.s:
            raise ValueError(f"growth exponent p must lie in (1, n/s)=(1,{self.n / self.s:g}), got {self.p}")
        if self.lam < 1.0:
            raise ValueError(f"ellipticity constant must be >= 1, got {self.lam}")

    @property
    def sp(self) -> float:
        return self.s * self.p

    @property
    def q0(self) -> float:
        """Marcinkiewicz exponent n(p-1)/(n-sp) of measure-data solutions."""
        return self.n * (self.p - 1.0) / (self.n - self.sp)

    @property
    def qbar(self) -> float:
        """Supremum n(p-1)/(n-s) of the integrability range used for approximations."""
        return self.n * (self.p - 1.0) / (self.n - self.s)


# sample points used to vet user-supplied nonlinearities and kernels
_PHI_SAMPLES = np.concatenate([
    -np.geomspace(1e-6, 50.0, 120)[::-1],
    np.geomspace(1e-6, 50.0, 120),
])


class KernelSpec:
    """Nonlinearity phi and pair kernel K, with their ellipticity band.

    The defaults are phi(t) = |t|^(p-2) t and K(x, y) = |x-y|^(-(n+sp)).
    Custom phi must be nondecreasing (checked on a sample grid): this makes
    the pair energy convex, so the discrete minimizer is unique and
    coordinate descent converges.  Custom kernels must stay within the
    lam-band of the default kernel on sampled pairs.
    """

    def __init__(self, prm: Params, phi: Optional[Callable] = None,
                 kernel: Optional[Callable] = None):
        self.prm = prm
        self.is_power_phi = phi is None
        self.is_radial_kernel = kernel is None
        self._phi = phi
        self._kernel = kernel
        if phi is not None:
            self._check_phi(phi)
        if kernel is not None:
            self._check_kernel(kernel)

    def _check_phi(self, phi):
        p, lam = self.prm.p, self.prm.lam
        t = _PHI_SAMPLES
        vals = np.asarray([phi(tt) for tt in t], dtype=float)
        prod = vals * t
        lo = np.abs(t) ** p / lam
        hi = lam * np.abs(t) ** p
        if np.any(prod < lo * (1 - 1e-9) - 1e-300) or np.any(prod > hi * (1 + 1e-9) + 1e-300):
            raise ValueError("phi violates the ellipticity band on sampled t")
        if np.any(np.diff(vals) < -1e-12 * (1 + np.abs(vals[:-1]))):
            raise ValueError("phi must be nondecreasing on sampled t")

    def _check_kernel(self, kernel):
        prm = self.prm
        rng = np.random.default_rng(0)
        x = rng.uniform(-2.0, 2.0, size=(64, prm.n))
        y = rng.uniform(-2.0, 2.0, size=(64, prm.n))
        d = np.linalg.norm(x - y, axis=-1)
        keep = d > 1e-9
        x, y, d = x[keep], y[keep], d[keep]
        vals = np.asarray(kernel(x, y), dtype=float)
        ref = d ** (-(prm.n + prm.sp))
        if np.any(vals < ref / prm.lam * (1 - 1e-9)) or np.any(vals > prm.lam * ref * (1 + 1e-9)):
            raise ValueError("kernel violates the ellipticity band on sampled pairs")

    def phi(self, t):
        """Evaluate phi elementwise; array-safe, phi(0) = 0."""
        if self.is_power_phi:
            p = self.prm.p
            t = np.asarray(t, dtype=float)
            with np.errstate(divide="ignore", invalid="ignore"):
                out = np.where(t == 0.0, 0.0, np.abs(t) ** (p - 2.0) * t)
            return out if out.ndim else float(out)
        if np.ndim(t) == 0:
            return float(self._phi(float(t)))
        return np.asarray([self._phi(float(tt)) for tt in np.ravel(t)]).reshape(np.shape(t))

    def kernel_of_dist(self, d):
        """Radial kernel value at distance d (default kernel only)."""
        if not self.is_radial_kernel:
            raise ValueError("custom kernels are not functions of distance alone")
        prm = self.prm
        d = np.asarray(d, dtype=float)
        with np.errstate(divide="ignore"):
            return d ** (-(prm.n + prm.sp))

    def kernel_sym(self, x, y):
        """Symmetrized pair kernel (K(x,y) + K(y,x))/2 on point arrays."""
        if self.is_radial_kernel:
            d = np.linalg.norm(np.asarray(x, dtype=float) - np.asarray(y, dtype=float), axis=-1)
            return self.kernel_of_dist(d)
        return 0.5 * (np.asarray(self._kernel(x, y), dtype=float)
                      + np.asarray(self._kernel(y, x), dtype=float))


@dataclass(frozen=True)
class ReactionSpec:
    """Reaction term: zero, power t^gamma, or truncated exponential H_l(a t^beta)."""

    kind: str
    gamma: float = 0.0
    l: int = 1
    a: float = 1.0
    beta: float = 1.0

    @staticmethod
    def zero() -> "ReactionSpec":
        return ReactionSpec(kind="zero")

    @staticmethod
    def power(gamma: float, prm: Optional[Params] = None) -> "ReactionSpec":
        if prm is not None and gamma <= prm.p - 1.0:
            raise ValueError(f"power reaction needs gamma > p-1 = {prm.p - 1:g}, got {gamma}")
        if gamma <= 0.0:
            raise ValueError("power reaction needs gamma > 0")
        return ReactionSpec(kind="power", gamma=gamma)

    @staticmethod
    def exponential(l: int, a: float, beta: float) -> "ReactionSpec":
        # the coupling l*beta > p-1 is a hypothesis of the existence route,
        # not of the scalar functions; solvers enforce it via check()
        if int(l) != l or l < 1:
            raise ValueError("truncation index l must be an integer >= 1")
        if a <= 0.0 or beta < 1.0:
            raise ValueError("exponential reaction needs a > 0 and beta >= 1")
        return ReactionSpec(kind="exponential", l=int(l), a=a, beta=beta)

    def check(self, prm: Params) -> None:
        """Re-validate the parameter couplings against a given Params."""
        if self.kind == "power" and self.gamma <= prm.p - 1.0:
            raise ValueError(f"gamma = {self.gamma} must exceed p-1 = {prm.p - 1:g}")
        if self.kind == "exponential" and self.l * self.beta <= prm.p - 1.0:
            raise ValueError(f"l*beta = {self.l * self.beta:g} must exceed p-1 = {prm.p - 1:g}")


def phi_eval(t: float, kspec: KernelSpec) -> float:
    """Nonlinearity phi(t); odd and nondecreasing for the default instance."""
    out = kspec.phi(t)
    return float(out)


def psi_eval(t: float, kspec: KernelSpec) -> float:
    """Antiderivative psi(t) = int_0^|t| phi; even, convex, psi(0) = 0."""
    a = abs(float(t))
    if a == 0.0:
        return 0.0
    if kspec.is_power_phi:
        return a ** kspec.prm.p / kspec.prm.p
    from scipy.integrate import quad

    val, _ = quad(kspec.phi, 0.0, a, limit=200)
    return float(val)


# Gauss-Legendre rule on (0, 1), used to vectorize psi for custom phi
_GL_X, _GL_W = np.polynomial.legendre.leggauss(32)
_GL_X01 = 0.5 * (_GL_X + 1.0)
_GL_W01 = 0.5 * _GL_W


def psi_values(t, kspec: KernelSpec):
    """Vectorized psi over an array of differences."""
    t = np.asarray(t, dtype=float)
    if kspec.is_power_phi:
        return np.abs(t) ** kspec.prm.p / kspec.prm.p
    a = np.abs(t)
    nodes = a[..., None] * _GL_X01
    return a * np.sum(_GL_W01 * kspec.phi(nodes), axis=-1)


def trunc_exp(l: int, t: float) -> float:
    """Truncated exponential e^t minus its Taylor polynomial of degree l-1.

    Computed as the tail series sum_{j>=l} t^j / j!, which avoids the
    cancellation of the subtracted form for small t.
    """
    if int(l) != l or l < 1:
        raise ValueError("l must be an integer >= 1")
    if t < 0.0:
        raise ValueError("trunc_exp is defined for t >= 0")
    if t == 0.0:
        return 0.0
    if t > 700.0:  # e^t overflows anyway; the polynomial part is negligible
        return math.inf
    log_term = l * math.log(t) - math.lgamma(l + 1.0)
    term = math.exp(log_term)
    acc = term
    j = l
    while True:
        j += 1
        term *= t / j
        acc += term
        if term < 1e-17 * acc and j > l + 4:
            return acc
        if j > l + 100000:
            return acc


def reaction_eval(r: ReactionSpec, t: float) -> float:
    """Reaction value at t >= 0; nondecreasing in t."""
    if t < 0.0:
        raise ValueError("reaction_eval expects t >= 0")
    if r.kind == "zero":
        return 0.0
    if r.kind == "power":
        return float(t) ** r.gamma
    return trunc_exp(r.l, r.a * float(t) ** r.beta)


def log_weight(eta: float, t: float) -> float:
    """Logarithmic correction weight: (-ln t)^(-eta) below 1/2, constant above."""
    if eta < 0.0:
        raise ValueError("eta must be >= 0")
    if t <= 0.0:
        raise ValueError("log_weight is defined for t > 0")
    if eta == 0.0:
        return 1.0
    if t >= 0.5:
        return math.log(2.0) ** (-eta)
    return (-math.log(t)) ** (-eta)


def reaction_series(r: ReactionSpec, prm: Params, t: float) -> float:
    """Growth series attached to an exponential reaction.

    For p = 2 this collapses to trunc_exp(l, t^beta); otherwise it is the
    series sum_{q>=l} (1/q!) (t/q)^(beta q / (p-1)).  Terms are accumulated in
    log space; truncation follows the double stopping rule (next term below
    1e-14 of the partial sum and geometric remainder below 1e-12).
    """
    if r.kind != "exponential":
        raise ValueError("reaction_series requires an exponential reaction")
    if t < 0.0:
        raise ValueError("reaction_series expects t >= 0")
    if t == 0.0:
        return 0.0
    p = prm.p
    if abs(p - 2.0) < 1e-12:
        return trunc_exp(r.l, t ** r.beta)
    expo = r.beta / (p - 1.0)
    log_t = math.log(t)
    acc = 0.0
    prev = None
    q = r.l
    while True:
        log_term = -math.lgamma(q + 1.0) + expo * q * (log_t - math.log(q))
        if log_term > 709.0:
            return math.inf
        term = math.exp(log_term)
        acc += term
        if prev is not None and term < prev:
            ratio = term / prev
            tail_bound = term * ratio / max(1.0 - ratio, 1e-16)
            if term < 1e-14 * (acc + 1e-300) and tail_bound < 1e-12:
                return acc
        prev = term
        q += 1
        if q > r.l + 200000:
            return acc


def _golden_min(f, a: float, b: float, tol: float = 1e-12, maxit: int = 200):
    """Golden-section minimization of f on [a, b]; returns (x, f(x))."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    x1 = b - invphi * (b - a)
    x2 = a + invphi * (b - a)
    f1, f2 = f(x1), f(x2)
    for _ in range(maxit):
        if b - a < tol * (1.0 + abs(a) + abs(b)):
            break
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - invphi * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + invphi * (b - a)
            f2 = f(x2)
    return (x1, f1) if f1 <= f2 else (x2, f2)


def reaction_conjugate(r: ReactionSpec, prm: Params, t: float,
                       return_argmax: bool = False):
    """Convex conjugate sup_{u>=0} (t u - reaction_series(u)).

    The sup is located by a log-spaced scan (2048 points, upper end grown
    until the objective decreases) followed by golden-section refinement.
    """
    if t < 0.0:
        raise ValueError("reaction_conjugate expects t >= 0")
    if t == 0.0:
        return (0.0, 0.0) if return_argmax else 0.0

    def neg_obj(u):
        q = reaction_series(r, prm, u)
        if math.isinf(q):
            return math.inf
        return q - t * u

    t_max = 1.0
    while neg_obj(2.0 * t_max) < neg_obj(t_max) and t_max < 1e12:
        t_max *= 2.0
    t_max *= 2.0
    grid = np.concatenate([[0.0], np.geomspace(1e-8, t_max, 2048)])
    vals = np.array([neg_obj(u) for u in grid])
    i = int(np.argmin(vals))
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, len(grid) - 1)]
    if hi <= lo:
        hi = lo + 1e-8
    u_star, neg_best = _golden_min(neg_obj, lo, hi)
    best = max(-neg_best, 0.0)
    if -neg_best < 0.0:
        u_star = 0.0
    if return_argmax:
        return best, u_star
    return best


def signed_power_ratio_sup(q: float, bound: float = 10.0, num: int = 400) -> float:
    """Scan-sup of |sgn(a)|a|^q - sgn(b)|b|^q| / |a-b|^q over [-bound, bound]^2.

    Empirical stand-in for the constant in the signed-power difference
    inequality with exponent q in (0,1); the sup stabilizes under scan
    refinement.
    """
    if not 0.0 < q < 1.0:
        raise ValueError("exponent q must lie in (0,1)")
    grid = np.linspace(-bound, bound, num)
    grid = grid[np.abs(grid) > 1e-12]
    a = grid[:, None]
    b = grid[None, :]
    mask = np.abs(a - b) > 1e-12
    sa = np.sign(a) * np.abs(a) ** q
    sb = np.sign(b) * np.abs(b) ** q
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.abs(sa - sb) / np.abs(a - b) ** q
    return float(np.max(ratio[mask]))
