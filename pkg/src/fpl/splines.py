"""Closed-form steady states of the LFP dynamics.

For ``gamma(xi) = A |xi|^-(d+3) + B |xi|^-(d+1)`` and a zero initial
function, the long-time limit is the minimizer of the FP-energy
``int |h_hat|^2 / gamma`` subject to interpolating the data. That minimizer
is a polyharmonic-spline interpolant with kernel

    k(r) = c3 * r**3 - c1 * r

plus a polynomial tail (constants for the pure linear kernel, affine
functions as soon as the cubic term is present). In one dimension this is
the natural cubic spline (c1 = 0) or the piecewise linear interpolant
(c3 = 0).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from fpl.core import Dataset, FrequencyLattice, GammaSpec, gamma_eval
from fpl.errors import DegenerateGeometryError, DomainError, InvalidSpecError

__all__ = [
    "CpdKernelSpec",
    "KernelInterpolant",
    "EnergyReport",
    "riesz_constant",
    "kernel_weights_from_stats",
    "steady_state",
    "evaluate",
    "fp_energy_of_interpolant",
    "energy_comparison",
]


def riesz_constant(s: float, d: int) -> float:
    """``c`` in the distributional pair ``FT(|x|^s) = c |xi|^-(s+d)`` on R^d.

    ``c = 2^(s+d) pi^(d/2) Gamma((s+d)/2) / Gamma(-s/2)``; gives 12 for
    ``|x|^3`` and -2 for ``|x|`` in one dimension.
    """
    return 2.0 ** (s + d) * math.pi ** (d / 2) * math.gamma((s + d) / 2) / math.gamma(-s / 2)


@dataclass(frozen=True)
class CpdKernelSpec:
    """``k(r) = c3 r^3 - c1 r`` with a polynomial tail of order ``m_poly``."""

    d: int
    c3: float
    c1: float
    m_poly: int

    def __post_init__(self):
        if self.c3 < 0 or self.c1 < 0 or not (self.c3 + self.c1 > 0):
            raise InvalidSpecError(f"need c3, c1 >= 0 with c3 + c1 > 0 (got c3={self.c3}, c1={self.c1})")
        if self.m_poly not in (1, 2):
            raise InvalidSpecError("m_poly must be 1 (constants) or 2 (affine)")
        if self.c3 > 0 and self.m_poly != 2:
            raise InvalidSpecError("the cubic kernel is conditionally positive definite of order 2; use m_poly=2")

    @classmethod
    def linear(cls, d: int = 1, weight: float = 1.0) -> "CpdKernelSpec":
        return cls(d=d, c3=0.0, c1=weight, m_poly=1)

    @classmethod
    def cubic(cls, d: int = 1, weight: float = 1.0) -> "CpdKernelSpec":
        return cls(d=d, c3=weight, c1=0.0, m_poly=2)

    def __call__(self, r):
        r = np.asarray(r, dtype=np.float64)
        return self.c3 * r ** 3 - self.c1 * r

    def as_dict(self) -> dict:
        return {"d": self.d, "c3": self.c3, "c1": self.c1, "m_poly": self.m_poly}


def kernel_weights_from_stats(A: float, B: float, d: int) -> CpdKernelSpec:
    """Map the rate coefficients to spatial kernel weights.

    The inverse transform of ``A |xi|^-(d+3)`` is ``A / c(3, d) |x|^3`` and
    that of ``B |xi|^-(d+1)`` is ``B / c(1, d) |x|``, modulo polynomials;
    ``c(1, d) < 0`` which is where the minus sign of the linear term comes
    from. In one dimension ``c3 = A/12`` and ``c1 = B/2``.
    """
    if A < 0 or B < 0 or not (A + B > 0):
        raise InvalidSpecError(f"need A, B >= 0 with A + B > 0 (got A={A}, B={B})")
    if d < 1:
        raise InvalidSpecError("dimension must be positive")
    c3 = A / riesz_constant(3.0, d)
    c1 = B / abs(riesz_constant(1.0, d))
    return CpdKernelSpec(d=d, c3=float(c3), c1=float(c1), m_poly=2 if c3 > 0 else 1)


# ---------------------------------------------------------------------------
# interpolation
# ---------------------------------------------------------------------------


def _distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def _monomials(x: np.ndarray, m_poly: int) -> np.ndarray:
    ones = np.ones((x.shape[0], 1))
    return ones if m_poly == 1 else np.hstack([ones, x])


@dataclass
class KernelInterpolant:
    """``h(x) = sum_i alpha_i k(|x - x_i|) + q(x)``.

    The tail ``q`` is expressed in the (possibly reduced) basis
    ``monomials(x - origin) @ basis`` with coefficients ``poly``.
    """

    centers: np.ndarray
    alpha: np.ndarray
    poly: np.ndarray
    kernel: CpdKernelSpec
    origin: np.ndarray
    basis: np.ndarray
    residual: float = 0.0

    def __call__(self, x):
        return evaluate(self, x)

    def tail(self, x) -> np.ndarray:
        x = _as_query(x, self.kernel.d)
        return _monomials(x - self.origin, self.kernel.m_poly) @ self.basis @ self.poly

    def to_json(self) -> str:
        return json.dumps({
            "kernel": self.kernel.as_dict(),
            "centers": self.centers.tolist(),
            "alpha": self.alpha.tolist(),
            "poly": self.poly.tolist(),
            "origin": self.origin.tolist(),
            "basis": self.basis.tolist(),
        }, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "KernelInterpolant":
        obj = json.loads(text)
        return cls(
            centers=np.array(obj["centers"], dtype=np.float64),
            alpha=np.array(obj["alpha"], dtype=np.float64),
            poly=np.array(obj["poly"], dtype=np.float64),
            kernel=CpdKernelSpec(**obj["kernel"]),
            origin=np.array(obj["origin"], dtype=np.float64),
            basis=np.array(obj["basis"], dtype=np.float64),
        )


def _as_query(x, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0:
        return x.reshape(1, 1)
    if x.ndim == 1:
        return x[:, None] if d == 1 else x.reshape(1, d)
    if x.shape[1] != d:
        raise DomainError(f"query dimension {x.shape[1]} != interpolant dimension {d}")
    return x


def steady_state(dataset: Dataset, kernel: CpdKernelSpec) -> KernelInterpolant:
    """Solve ``[[K, P], [P^T, 0]] [alpha; p] = [y; 0]``.

    When there are too few centers to pin down the affine tail (``n <= d``)
    the tail is restricted to the polynomials the centers can see, which
    keeps the system nonsingular; otherwise a rank-deficient tail is a
    degenerate geometry.
    """
    if dataset.d != kernel.d:
        raise DomainError(f"dataset dimension {dataset.d} != kernel dimension {kernel.d}")
    X = dataset.points
    n = dataset.n
    origin = X.mean(axis=0)
    Xc = X - origin
    P = _monomials(Xc, kernel.m_poly)
    q = P.shape[1]
    _, sv, Vt = np.linalg.svd(P, full_matrices=True)
    tol = max(P.shape) * np.finfo(float).eps * (sv[0] if sv.size else 1.0) * 1e3
    rank = int(np.sum(sv > tol))
    if rank < q:
        if n <= kernel.d:
            basis = Vt[:rank].T
        else:
            null = Vt[rank:]
            raise DegenerateGeometryError(
                f"{n} centers lie in a {rank - 1}-dimensional affine subspace; the affine tail is undetermined "
                f"along direction(s) {np.round(null[:, 1:], 6).tolist()}")
    else:
        basis = np.eye(q)
    Pb = P @ basis
    qb = Pb.shape[1]
    K = kernel(_distances(Xc, Xc))
    M = np.zeros((n + qb, n + qb))
    M[:n, :n] = K
    M[:n, n:] = Pb
    M[n:, :n] = Pb.T
    rhs = np.concatenate([dataset.values, np.zeros(qb)])
    try:
        sol = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError as exc:
        raise DegenerateGeometryError(f"saddle-point system is singular: {exc}") from exc
    resid = float(np.linalg.norm(M @ sol - rhs) / max(np.linalg.norm(rhs), 1e-300))
    if not np.isfinite(resid) or resid > 1e-6:
        raise DegenerateGeometryError(f"saddle-point system is numerically singular (residual {resid:.2e})")
    return KernelInterpolant(centers=X.copy(), alpha=sol[:n], poly=sol[n:], kernel=kernel,
                             origin=origin, basis=basis, residual=resid)


def evaluate(interp: KernelInterpolant, x):
    """Interpolant value(s); a float for a single point."""
    raw = np.asarray(x)
    q = _as_query(x, interp.kernel.d)
    qc = q - interp.origin
    out = interp.kernel(_distances(qc, interp.centers - interp.origin)) @ interp.alpha
    out = out + _monomials(qc, interp.kernel.m_poly) @ interp.basis @ interp.poly
    single = raw.ndim == 0 or (raw.ndim == 1 and interp.kernel.d > 1)
    return float(out[0]) if single else out


# ---------------------------------------------------------------------------
# FP-energy
# ---------------------------------------------------------------------------


@dataclass
class EnergyReport:
    value: float
    tail_fraction: float
    warnings: list = field(default_factory=list)


def data_window(points: np.ndarray, margin: float = 0.5):
    """Per-axis ``(inner_lo, inner_hi, outer_lo, outer_hi)`` for a point cloud:
    flat over the data box, tapered over ``margin * extent`` beyond it."""
    pts = np.asarray(points, dtype=np.float64)
    pts = pts[:, None] if pts.ndim == 1 else pts
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    ext = np.where(hi > lo, hi - lo, 1.0)
    return lo, hi, lo - margin * ext, hi + margin * ext


def fp_energy_of_interpolant(interp, spec: GammaSpec, lattice: FrequencyLattice, *,
                             window=None, samples_per_axis: int | None = None,
                             tail_band: float = 0.75) -> EnergyReport:
    """Windowed ``int |h_hat|^2 / gamma dxi`` over the lattice.

    ``interp`` is any callable on ``(N, d)`` arrays (a :class:`KernelInterpolant`
    or a candidate function). ``window`` defaults to :func:`data_window` of the
    interpolant's centers. The tail fraction is the share of the energy on
    nodes with ``|xi|_inf > tail_band * xi_max``; above 5% a truncation warning
    is attached.
    """
    from fpl.spectral import tapered_grid, grid_transform

    d = lattice.d
    if window is None:
        if not isinstance(interp, KernelInterpolant):
            raise DomainError("a window is required for plain callables")
        window = data_window(interp.centers)
    axes, taper = tapered_grid(window, lattice.xi_max, samples_per_axis)
    mesh = np.stack([g.reshape(-1) for g in np.meshgrid(*axes, indexing="ij")], axis=1)
    vals = np.asarray(interp(mesh), dtype=np.float64).reshape(taper.shape) * taper
    hhat = grid_transform(vals, axes, lattice)
    inv_rate = 1.0 / np.asarray(gamma_eval(spec, lattice.nodes), dtype=np.float64).reshape(-1)
    dens = inv_rate * np.abs(hhat) ** 2 * lattice.cell_volume
    total = float(dens.sum())
    tail = np.max(np.abs(lattice.nodes), axis=1) > tail_band * lattice.xi_max
    frac = float(dens[tail].sum() / total) if total > 0 else 0.0
    warns = []
    if frac > 0.05:
        warns.append(f"truncation: {100 * frac:.1f}% of the energy lies in the outer lattice band")
    return EnergyReport(value=total, tail_fraction=frac, warnings=warns)


@dataclass
class EnergyComparison:
    energies: list
    minimizer_energy: float
    minimal: bool
    margin: float
    warnings: list = field(default_factory=list)


def energy_comparison(dataset: Dataset, kernel: CpdKernelSpec, candidates: Sequence[Callable],
                      spec: GammaSpec, lattice: FrequencyLattice, *, window=None,
                      interp_tol: float = 1e-6, rel_slack: float = 1e-9) -> EnergyComparison:
    """FP-energies of the steady state and of other interpolants of the data.

    Every candidate must reproduce the data to ``interp_tol``; otherwise a
    :class:`DomainError` reports the worst violation. ``minimal`` is true
    when the steady state's energy does not exceed any candidate's (up to a
    relative slack for round-off).
    """
    for idx, cand in enumerate(candidates):
        got = np.asarray(cand(dataset.points), dtype=np.float64).reshape(-1)
        viol = float(np.max(np.abs(got - dataset.values)))
        if viol > interp_tol:
            raise DomainError(f"candidate {idx} does not interpolate the data (max violation {viol:.3e})")
    h_inf = steady_state(dataset, kernel)
    if window is None:
        window = data_window(dataset.points)
    base = fp_energy_of_interpolant(h_inf, spec, lattice, window=window)
    reports = [fp_energy_of_interpolant(c, spec, lattice, window=window) for c in candidates]
    energies = [r.value for r in reports]
    best_other = min(energies) if energies else np.inf
    margin = float(best_other - base.value)
    warns = list(base.warnings) + [w for r in reports for w in r.warnings]
    return EnergyComparison(energies=energies, minimizer_energy=base.value,
                            minimal=bool(base.value <= best_other * (1 + rel_slack)),
                            margin=margin, warnings=warns)
