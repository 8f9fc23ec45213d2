"""Single-peak approximation of discrete spectral lines.

Lines are broadened with a Gaussian kernel (intensity-weighted kernel density
estimate) and the broadened curve is fitted by one unnormalised Gaussian
``A / (sigma sqrt(2 pi)) exp(-(x - mu)^2 / (2 sigma^2))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid

from .model import GaussianPeak

KERNEL_SIGMA = 0.2  # eV
GRID_STEP = 0.005  # eV
MARGIN_SIGMAS = 5.0
MAX_ITER = 200
REL_TOL = 1e-10

_SQRT_2PI = math.sqrt(2.0 * math.pi)


class FitNotConverged(RuntimeError):
    def __init__(self, message: str, best: GaussianPeak):
        super().__init__(message)
        self.best = best


@dataclass
class SpectrumLines:
    energies: np.ndarray
    intensities: np.ndarray

    def __post_init__(self):
        self.energies = np.atleast_1d(np.asarray(self.energies, dtype=float))
        self.intensities = np.atleast_1d(np.asarray(self.intensities, dtype=float))
        if len(self.energies) == 0:
            raise ValueError("a spectrum needs at least one line")
        if self.energies.shape != self.intensities.shape:
            raise ValueError("energies and intensities differ in length")
        if not np.all(np.isfinite(self.energies)):
            raise ValueError("non-finite line energy")
        if np.any(self.intensities < 0):
            raise ValueError("line intensities must be non-negative")

    @classmethod
    def from_pairs(cls, pairs) -> "SpectrumLines":
        pairs = list(pairs)
        if not pairs:
            raise ValueError("a spectrum needs at least one line")
        e, i = zip(*pairs)
        return cls(np.array(e), np.array(i))


@dataclass
class BroadenedSpectrum:
    grid: np.ndarray
    values: np.ndarray

    @property
    def step(self) -> float:
        return float(self.grid[1] - self.grid[0])


def energy_grid(lines: SpectrumLines, kernel_sigma=KERNEL_SIGMA, step=GRID_STEP) -> np.ndarray:
    lo = lines.energies.min() - MARGIN_SIGMAS * kernel_sigma
    hi = lines.energies.max() + MARGIN_SIGMAS * kernel_sigma
    n = int(math.ceil((hi - lo) / step - 1e-9)) + 1
    return lo + step * np.arange(n)


def broaden(
    lines: SpectrumLines,
    kernel_sigma: float = KERNEL_SIGMA,
    grid: np.ndarray | None = None,
    step: float = GRID_STEP,
    weighted: bool = True,
) -> BroadenedSpectrum:
    """Sum of Gaussian densities centred on the lines.

    ``weighted=False`` gives the plain kernel density estimate (unit weight
    per line).
    """
    if grid is None:
        grid = energy_grid(lines, kernel_sigma, step)
    w = lines.intensities if weighted else np.ones_like(lines.intensities)
    u = (grid[:, None] - lines.energies[None, :]) / kernel_sigma
    dens = np.exp(-0.5 * u * u) / (kernel_sigma * _SQRT_2PI)
    return BroadenedSpectrum(np.asarray(grid, float), dens @ w)


def gaussian(x, mu, sigma, amp):
    return amp / (sigma * _SQRT_2PI) * np.exp(-0.5 * ((x - mu) / sigma) ** 2)


def _jacobian(x, mu, sigma, amp):
    u = (x - mu) / sigma
    g = gaussian(x, mu, sigma, amp)
    return np.stack([g * u / sigma, g * (u * u - 1.0) / sigma, g / amp if amp else g * 0], axis=1)


def moment_guess(spec: BroadenedSpectrum) -> tuple[float, float, float]:
    x, f = spec.grid, np.clip(spec.values, 0.0, None)
    mass = trapezoid(f, x)
    if not mass > 0:
        raise ValueError("spectrum has no positive mass")
    mu = trapezoid(x * f, x) / mass
    sigma = math.sqrt(max(trapezoid((x - mu) ** 2 * f, x) / mass, (x[1] - x[0]) ** 2))
    return float(mu), float(sigma), float(mass)


def peak_guesses(spec: BroadenedSpectrum) -> list[tuple[float, float, float]]:
    """One start per local maximum: its position, half-width and matching area."""
    x, f = spec.grid, spec.values
    inner = np.flatnonzero((f[1:-1] > f[:-2]) & (f[1:-1] >= f[2:])) + 1
    out = []
    for i in inner:
        half = f[i] / 2.0
        lo, hi = i, i
        while lo > 0 and f[lo] > half:
            lo -= 1
        while hi < len(f) - 1 and f[hi] > half:
            hi += 1
        sigma = max((x[hi] - x[lo]) / (2.0 * math.sqrt(2.0 * math.log(2.0))), x[1] - x[0])
        out.append((float(x[i]), float(sigma), float(f[i] * sigma * _SQRT_2PI)))
    return out


def _levenberg(x, f, theta, max_iter, rel_tol):
    """(theta, rss, iterations, converged) from one starting point."""
    theta = np.array(theta, dtype=float)
    r = gaussian(x, *theta) - f
    cost = float(r @ r)
    lam = 1e-3
    converged = cost == 0.0
    it = 0
    while not converged and it < max_iter:
        it += 1
        J = _jacobian(x, *theta)
        JtJ = J.T @ J
        grad = J.T @ r
        while True:
            A = JtJ + lam * np.diag(np.diag(JtJ))
            try:
                delta = -np.linalg.solve(A, grad)
            except np.linalg.LinAlgError:
                lam *= 10.0
                if lam > 1e16:
                    break
                continue
            trial = theta + delta
            if trial[1] > 0 and np.all(np.isfinite(trial)):
                r_t = gaussian(x, *trial) - f
                c_t = float(r_t @ r_t)
                if c_t <= cost:
                    break
            lam *= 10.0
            if lam > 1e16:
                break
        if lam > 1e16:
            # no descent direction left: the current point is a minimum to precision
            converged = True
            break
        change = (cost - c_t) / cost if cost > 0 else 0.0
        theta, r, cost = trial, r_t, c_t
        lam = max(lam / 10.0, 1e-12)
        if change < rel_tol or cost == 0.0:
            converged = True
    if converged:
        theta, cost = _polish(x, f, theta, cost)
    return theta, cost, it, converged


def _gradient(x, f, theta):
    return _jacobian(x, *theta).T @ (gaussian(x, *theta) - f)


def _polish(x, f, theta, cost, max_steps=10):
    """Newton steps on the gradient of the residual.

    Near the minimum the residual only changes at second order, so comparing
    residuals cannot resolve the parameters beyond about 1e-8, and plain
    Gauss-Newton converges slowly when the residual is large.  The Hessian
    here includes the residual curvature, by central differences of the
    analytic gradient.
    """
    g = _gradient(x, f, theta)
    for _ in range(max_steps):
        h = 1e-6 * np.maximum(np.abs(theta), 1e-3)
        H = np.empty((3, 3))
        for k in range(3):
            e = np.zeros(3)
            e[k] = h[k]
            H[:, k] = (_gradient(x, f, theta + e) - _gradient(x, f, theta - e)) / (2 * h[k])
        try:
            trial = theta - np.linalg.solve(0.5 * (H + H.T), g)
        except np.linalg.LinAlgError:
            break
        if not (trial[1] > 0 and np.all(np.isfinite(trial))):
            break
        g_t = _gradient(x, f, trial)
        if np.linalg.norm(g_t) >= np.linalg.norm(g):
            break
        theta, g = trial, g_t
    r = gaussian(x, *theta) - f
    return theta, float(r @ r)


def fit_single_gaussian(
    spec: BroadenedSpectrum, max_iter: int = MAX_ITER, rel_tol: float = REL_TOL, info: bool = False
):
    """Least-squares Gaussian fit by Gauss-Newton with Levenberg damping.

    A multi-modal curve has several local minima, so the damped iteration is
    run from the curve's moments and from every local maximum; the lowest
    residual wins.  Each run stops when the relative change of the residual
    sum of squares falls below ``rel_tol``, then a few undamped steps refine
    the parameters.  ``FitNotConverged`` (carrying the
    best iterate) is raised when the winning run hit ``max_iter``.  With
    ``info=True`` returns ``(peak, rss, iterations)``.
    """
    # work in units where the grid starts at 0 and the curve peaks at 1, so
    # shifted or rescaled inputs see the same arithmetic
    x0, scale = float(spec.grid[0]), float(np.max(np.abs(spec.values)))
    if not scale > 0:
        raise ValueError("spectrum has no positive mass")
    unit = BroadenedSpectrum(spec.grid - x0, spec.values / scale)
    starts = [moment_guess(unit)] + peak_guesses(unit)
    runs = [_levenberg(unit.grid, unit.values, s, max_iter, rel_tol) for s in starts]
    theta, cost, it, converged = min(runs, key=lambda run: run[1])
    cost *= scale * scale
    mu, sigma, amp = float(theta[0]) + x0, float(theta[1]), float(max(theta[2], 0.0)) * scale
    peak = GaussianPeak(mu, sigma, amp)
    if not converged:
        raise FitNotConverged(f"no convergence after {max_iter} iterations", peak)
    return (peak, cost, it) if info else peak


def residual(spec: BroadenedSpectrum, peak: GaussianPeak) -> float:
    r = gaussian(spec.grid, peak.mu, peak.sigma, peak.A) - spec.values
    return float(r @ r)


def single_peak(lines: SpectrumLines, **kw) -> GaussianPeak:
    return fit_single_gaussian(broaden(lines, **kw))
