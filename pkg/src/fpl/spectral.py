"""Frequency diagnostics.

Two frequency units appear in this package. The LFP solvers use angular
frequency ``xi`` with kernel ``exp(-i x.xi)``. The diagnostics here follow
the usual discrete-transform habit of cycles: ``F(k) = (1/n) sum v_i
exp(-2 pi i k p_i)``, so ``xi = 2 pi k`` when projections are in raw
coordinates. Use :func:`cycles_to_angular` / :func:`angular_to_cycles` at
module boundaries.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from fpl.core import FrequencyLattice, GammaSpec, gamma_eval
from fpl.errors import DegenerateGeometryError, DomainError

__all__ = [
    "SpectralProfile",
    "ConvergenceCurves",
    "BoundReport",
    "ScalingScenario",
    "ScalingReport",
    "cycles_to_angular",
    "angular_to_cycles",
    "first_principal_direction",
    "nudft",
    "nudft_vectors",
    "convergence_per_frequency",
    "fp_energy_sampled",
    "generalization_bound",
    "error_vs_n_scaling",
    "tapered_grid",
    "grid_transform",
]


def cycles_to_angular(k):
    return 2 * np.pi * np.asarray(k, dtype=np.float64)


def angular_to_cycles(xi):
    return np.asarray(xi, dtype=np.float64) / (2 * np.pi)


def _points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    return pts[:, None] if pts.ndim == 1 else pts


# ---------------------------------------------------------------------------
# principal direction and NUDFT
# ---------------------------------------------------------------------------


def first_principal_direction(points) -> np.ndarray:
    """Top eigenvector of the centered covariance.

    The sign is fixed so that the largest-magnitude component is positive.
    """
    pts = _points(points)
    if pts.shape[0] < 2:
        raise DegenerateGeometryError("need at least two points for a principal direction")
    centered = pts - pts.mean(axis=0)
    cov = centered.T @ centered / (pts.shape[0] - 1)
    lam, vecs = np.linalg.eigh(cov)
    if lam[-1] <= 0 or not np.isfinite(lam[-1]):
        raise DegenerateGeometryError("points have zero covariance")
    v = vecs[:, -1]
    if v[np.argmax(np.abs(v))] < 0:
        v = -v
    return v / np.linalg.norm(v)


@dataclass
class SpectralProfile:
    frequencies: np.ndarray
    amplitudes: np.ndarray
    phases: np.ndarray
    provenance: str = ""
    coefficients: np.ndarray | None = field(default=None, repr=False)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("k,amplitude,phase\n")
            for k, a, p in zip(self.frequencies, self.amplitudes, self.phases):
                fh.write(f"{float(k)!r},{float(a)!r},{float(p)!r}\n")

    def peak(self) -> float:
        return float(self.frequencies[int(np.argmax(self.amplitudes))])


def project(points, direction, rescale: bool = True, ref=None) -> np.ndarray:
    """Projections on ``direction``; with ``rescale`` they are mapped affinely
    onto [0, 1] using the extent of ``ref`` (defaults to the points)."""
    pts = _points(points)
    direction = np.asarray(direction, dtype=np.float64).reshape(-1)
    if abs(np.linalg.norm(direction) - 1) > 1e-9:
        raise DomainError("direction must be a unit vector")
    p = pts @ direction
    if rescale:
        r = p if ref is None else _points(ref) @ direction
        lo, hi = r.min(), r.max()
        p = (p - lo) / (hi - lo) if hi > lo else p - lo
    return p


def nudft(points, values, direction, k_grid, *, rescale: bool = True, ref=None,
          provenance: str = "") -> SpectralProfile:
    """``F(k) = (1/n) sum_i v_i exp(-2 pi i k p_i)`` along ``direction``.

    With ``rescale`` the projections are mapped onto [0, 1], so ``k`` counts
    cycles per data extent; otherwise ``k`` is in cycles per unit length.
    """
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    p = project(points, direction, rescale, ref)
    if p.shape[0] != values.shape[0]:
        raise DomainError("points and values differ in length")
    k = np.asarray(k_grid, dtype=np.float64).reshape(-1)
    F = np.exp(-2j * np.pi * np.outer(k, p)) @ values / values.shape[0]
    return SpectralProfile(frequencies=k, amplitudes=np.abs(F), phases=np.angle(F),
                           provenance=provenance, coefficients=F)


def nudft_vectors(points, values, k_vectors) -> np.ndarray:
    """Full d-dimensional transform ``(1/n) sum v_i exp(-2 pi i k.x_i)``."""
    pts = _points(points)
    kv = np.atleast_2d(np.asarray(k_vectors, dtype=np.float64))
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    return np.exp(-2j * np.pi * (kv @ pts.T)) @ values / values.shape[0]


# ---------------------------------------------------------------------------
# convergence tracking
# ---------------------------------------------------------------------------


@dataclass
class ConvergenceCurves:
    times: np.ndarray
    peaks: np.ndarray
    delta: np.ndarray
    tau: np.ndarray
    threshold: float
    rejected: list = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("t," + ",".join(f"delta_k{float(k)!r}" for k in self.peaks) + "\n")
            for t, row in zip(self.times, self.delta):
                fh.write(f"{float(t)!r}," + ",".join(f"{float(v)!r}" for v in row) + "\n")


def convergence_per_frequency(predictions, target, points, direction, peaks, *, times=None,
                              threshold: float = 0.2, rescale: bool = True) -> ConvergenceCurves:
    """Relative spectral error ``|F_h(k,t) - F_f(k)| / |F_f(k)|`` at each peak.

    ``predictions`` has one row per checkpoint. ``tau`` is the first
    checkpoint time with error below ``threshold`` (``inf`` if never).
    Peaks where the target transform is below 1e-12 are rejected.
    """
    preds = np.atleast_2d(np.asarray(predictions, dtype=np.float64))
    target = np.asarray(target, dtype=np.float64).reshape(-1)
    if preds.shape[1] != target.shape[0]:
        raise DomainError("every checkpoint must be evaluated on the same points as the target")
    times = np.arange(preds.shape[0], dtype=np.float64) if times is None else np.asarray(times, dtype=np.float64)
    peaks = np.asarray(peaks, dtype=np.float64).reshape(-1)
    p = project(points, direction, rescale)
    phase = np.exp(-2j * np.pi * np.outer(peaks, p)) / target.shape[0]
    ft = phase @ target
    keep = np.abs(ft) >= 1e-12
    rejected = [float(k) for k in peaks[~keep]]
    if not np.any(keep):
        raise DomainError(f"target has no spectral weight at any requested peak {peaks.tolist()}")
    peaks, phase, ft = peaks[keep], phase[keep], ft[keep]
    fh = preds @ phase.T
    delta = np.abs(fh - ft[None, :]) / np.abs(ft)[None, :]
    tau = np.full(peaks.shape[0], np.inf)
    for j in range(peaks.shape[0]):
        hit = np.nonzero(delta[:, j] < threshold)[0]
        if hit.size:
            tau[j] = times[hit[0]]
    return ConvergenceCurves(times=times, peaks=peaks, delta=delta, tau=tau,
                             threshold=threshold, rejected=rejected)


# ---------------------------------------------------------------------------
# FP-energy of sampled functions
# ---------------------------------------------------------------------------


def raised_cosine(x, inner_lo, inner_hi, outer_lo, outer_hi):
    """1 on [inner_lo, inner_hi], cosine ramps to 0 at the outer edges."""
    x = np.asarray(x, dtype=np.float64)
    w = np.ones_like(x)
    left = x < inner_lo
    if inner_lo > outer_lo:
        w[left] = 0.5 * (1 - np.cos(np.pi * np.clip((x[left] - outer_lo) / (inner_lo - outer_lo), 0, 1)))
    else:
        w[left] = 0.0
    right = x > inner_hi
    if outer_hi > inner_hi:
        w[right] = 0.5 * (1 - np.cos(np.pi * np.clip((outer_hi - x[right]) / (outer_hi - inner_hi), 0, 1)))
    else:
        w[right] = 0.0
    return w


def tapered_grid(window, xi_max: float, samples_per_axis: int | None = None):
    """Uniform per-axis grids over the outer window and the tensor taper.

    The default spacing ``pi / (2 xi_max)`` samples the highest lattice
    frequency four times per period.
    """
    inner_lo, inner_hi, outer_lo, outer_hi = (np.atleast_1d(np.asarray(w, dtype=np.float64)) for w in window)
    axes, tapers = [], []
    for j in range(inner_lo.shape[0]):
        if samples_per_axis is None:
            dx = np.pi / (2 * xi_max)
            m = int(np.ceil((outer_hi[j] - outer_lo[j]) / dx)) + 1
        else:
            m = samples_per_axis
        ax = np.linspace(outer_lo[j], outer_hi[j], m)
        axes.append(ax)
        tapers.append(raised_cosine(ax, inner_lo[j], inner_hi[j], outer_lo[j], outer_hi[j]))
    taper = tapers[0]
    for t in tapers[1:]:
        taper = np.multiply.outer(taper, t)
    return axes, taper


def grid_transform(values: np.ndarray, axes, lattice: FrequencyLattice) -> np.ndarray:
    """Riemann-sum Fourier transform of tensor-grid samples at lattice nodes."""
    kmax = int(np.floor(lattice.xi_max / lattice.dxi + 1e-9))
    xi_axis = np.arange(-kmax, kmax + 1) * lattice.dxi
    out = np.asarray(values, dtype=np.complex128)
    for j, ax in enumerate(axes):
        dx = ax[1] - ax[0] if ax.size > 1 else 1.0
        E = np.exp(-1j * np.outer(xi_axis, ax)) * dx
        out = np.moveaxis(np.tensordot(E, out, axes=([1], [j])), 0, j)
    idx = np.round(lattice.nodes / lattice.dxi).astype(int) + kmax
    return out[tuple(idx.T)]


@dataclass
class SampledEnergy:
    value: float
    nyquist_fraction: float
    warnings: list = field(default_factory=list)


def fp_energy_sampled(values, spacing, spec: GammaSpec, *, taper: float = 0.5,
                      eps_zero: float | None = None, nyquist_band: float = 0.75) -> SampledEnergy:
    """``sum gamma^-1 |h_hat|^2 dxi^d`` from samples on a uniform grid.

    ``values`` is a d-dimensional array of samples with per-axis
    ``spacing``. Each axis is multiplied by a Tukey (raised-cosine) window
    with taper fraction ``taper`` before the FFT. Nodes with
    ``|xi| < eps_zero`` (default: half the frequency spacing, i.e. just the
    zero mode) are excluded. A warning is attached when more than 5% of the
    energy sits beyond ``nyquist_band`` of the Nyquist frequency.
    """
    from scipy.signal.windows import tukey

    vals = np.asarray(values, dtype=np.float64)
    spacing = np.broadcast_to(np.asarray(spacing, dtype=np.float64), (vals.ndim,))
    w = vals.copy()
    for j in range(vals.ndim):
        shape = [1] * vals.ndim
        shape[j] = vals.shape[j]
        w = w * tukey(vals.shape[j], taper).reshape(shape)
    hhat = np.fft.fftn(w) * np.prod(spacing)
    freq_axes = [2 * np.pi * np.fft.fftfreq(vals.shape[j], spacing[j]) for j in range(vals.ndim)]
    mesh = np.stack(np.meshgrid(*freq_axes, indexing="ij"), axis=-1)
    dxi = np.array([2 * np.pi / (vals.shape[j] * spacing[j]) for j in range(vals.ndim)])
    if eps_zero is None:
        eps_zero = 0.5 * float(dxi.min())
    norms = np.linalg.norm(mesh, axis=-1)
    keep = norms >= eps_zero
    rate = np.ones_like(norms)
    rate[keep] = gamma_eval(spec, mesh[keep])
    dens = np.where(keep, np.abs(hhat) ** 2 / rate, 0.0) * float(np.prod(dxi))
    total = float(dens.sum())
    nyq = np.pi / spacing
    outer = np.any(np.abs(mesh) > nyquist_band * nyq, axis=-1)
    frac = float(dens[outer].sum() / total) if total > 0 else 0.0
    warns = []
    if frac > 0.05:
        warns.append(f"aliasing: {100 * frac:.1f}% of the energy lies near the Nyquist frequency")
    return SampledEnergy(value=total, nyquist_fraction=frac, warnings=warns)


# ---------------------------------------------------------------------------
# generalization bound and error scaling
# ---------------------------------------------------------------------------


@dataclass
class BoundReport:
    E_star: float
    n: int
    delta: float
    C_gamma: float
    bound: float
    measured_mse: float | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def generalization_bound(E_star: float, n: int, delta: float, C_gamma: float = 1.0,
                         measured_mse: float | None = None) -> BoundReport:
    """``E_star / sqrt(n) * C_gamma * (2 + 4 sqrt(2 log(4 / delta)))``."""
    if n < 1 or not (0 < delta < 1) or C_gamma <= 0 or E_star < 0:
        raise DomainError("need n >= 1, 0 < delta < 1, C_gamma > 0 and E_star >= 0")
    bound = E_star / math.sqrt(n) * C_gamma * (2 + 4 * math.sqrt(2 * math.log(4 / delta)))
    return BoundReport(E_star=float(E_star), n=int(n), delta=float(delta), C_gamma=float(C_gamma),
                       bound=float(bound), measured_mse=None if measured_mse is None else float(measured_mse))


@dataclass
class ScalingScenario:
    """Inputs for :func:`error_vs_n_scaling`.

    ``sampler(rng, n)`` draws ``n`` distinct training points; the error is
    the ``eval_weights``-weighted mean of ``(h - f*)^2`` over ``eval_points``.
    """

    target: Callable
    sampler: Callable
    kernel: object
    eval_points: np.ndarray
    eval_weights: np.ndarray
    C_gamma: float = 1.0


@dataclass
class ScalingReport:
    n_list: list
    errors: np.ndarray
    mean_errors: np.ndarray
    slope: float
    slope_ci: tuple
    degenerate: bool
    monotone: bool
    C_gamma: float

    def to_json(self) -> str:
        return json.dumps({
            "n": list(self.n_list),
            "mean_mse": [float(v) for v in self.mean_errors],
            "slope": None if np.isnan(self.slope) else float(self.slope),
            "slope_ci": [None if np.isnan(v) else float(v) for v in self.slope_ci],
            "degenerate": self.degenerate,
            "monotone": self.monotone,
            "C_gamma": self.C_gamma,
        }, indent=2)


def _loglog_slope(n, err):
    return float(np.polyfit(np.log(n), np.log(err), 1)[0])


def error_vs_n_scaling(scenario: ScalingScenario, n_list: Sequence[int], trials: int, *,
                       rng: np.random.Generator, bootstrap: int = 500) -> ScalingReport:
    """Mean-square error of the spline steady state against ``n``.

    Fits the slope of ``log(mean MSE)`` against ``log n`` with a percentile
    bootstrap over trials. A target that is reproduced exactly at every
    ``n`` is reported as degenerate (slope NaN).
    """
    from fpl.core import Dataset
    from fpl.splines import steady_state

    n_list = [int(v) for v in n_list]
    if len(n_list) < 4 or trials < 10:
        raise DomainError("need at least 4 sample sizes and 10 trials each")
    f_eval = np.asarray(scenario.target(scenario.eval_points), dtype=np.float64)
    w = np.asarray(scenario.eval_weights, dtype=np.float64)
    w = w / w.sum()
    errors = np.empty((len(n_list), trials))
    for a, n in enumerate(n_list):
        for t in range(trials):
            pts = scenario.sampler(rng, n)
            ds = Dataset(pts, scenario.target(pts))
            h = steady_state(ds, scenario.kernel)
            errors[a, t] = float(w @ (h(scenario.eval_points) - f_eval) ** 2)
    means = errors.mean(axis=1)
    scale = max(float(np.max(np.abs(f_eval))), 1.0)
    if np.any(means <= 1e-28 * scale ** 2):
        return ScalingReport(n_list, errors, means, float("nan"), (float("nan"), float("nan")),
                             True, True, scenario.C_gamma)
    slope = _loglog_slope(n_list, means)
    boot = np.empty(bootstrap)
    for b in range(bootstrap):
        idx = rng.integers(0, trials, size=(len(n_list), trials))
        boot[b] = _loglog_slope(n_list, np.take_along_axis(errors, idx, axis=1).mean(axis=1))
    ci = (float(np.percentile(boot, 2.5)), float(np.percentile(boot, 97.5)))
    se = errors.std(axis=1, ddof=1) / np.sqrt(trials)
    monotone = bool(np.all(np.diff(means) <= 2 * np.hypot(se[1:], se[:-1])))
    return ScalingReport(n_list, errors, means, slope, ci, False, monotone, scenario.C_gamma)
