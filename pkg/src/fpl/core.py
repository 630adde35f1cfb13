"""Domain types shared by the solvers: datasets, rate functions, frequency
lattices and seeded random streams.

Fourier convention used throughout the package::

    f_hat(xi) = integral f(x) exp(-i x.xi) dx
    f(x)      = (2 pi)^-d integral f_hat(xi) exp(+i x.xi) dxi

Frequencies ``xi`` are angular; there is no 2 pi in the exponent.
"""
from __future__ import annotations

import csv
import warnings
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from fpl.errors import DomainError, ExtrapolationError, InvalidSpecError, ResourceError

__all__ = [
    "Dataset",
    "PowerLaw",
    "Tabulated",
    "GammaSpec",
    "FrequencyLattice",
    "RandomSource",
    "gamma_eval",
    "build_lattice",
    "empirical_transform",
]

#: default cap on the number of lattice nodes (complex128 field ~ 16 bytes/node)
DEFAULT_NODE_BUDGET = 4_000_000


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Training pairs ``(x_i, y_i)`` plus an optional held-out set.

    ``points`` has shape ``(n, d)`` and ``values`` shape ``(n,)``. One
    dimensional inputs may be given as a flat array.
    """

    points: np.ndarray
    values: np.ndarray
    eval_points: np.ndarray | None = None
    eval_values: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        vals = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise DomainError(f"points must be a non-empty (n, d) array, got shape {pts.shape}")
        if vals.shape[0] != pts.shape[0]:
            raise DomainError(f"{pts.shape[0]} points but {vals.shape[0]} values")
        if not (np.all(np.isfinite(pts)) and np.all(np.isfinite(vals))):
            raise DomainError("dataset contains non-finite entries")
        if len(np.unique(pts, axis=0)) != len(pts):
            raise DomainError("training points must be pairwise distinct")
        object.__setattr__(self, "points", _readonly(pts))
        object.__setattr__(self, "values", _readonly(vals))

        if (self.eval_points is None) != (self.eval_values is None):
            raise DomainError("eval_points and eval_values must be given together")
        if self.eval_points is not None:
            ep = np.asarray(self.eval_points, dtype=np.float64)
            if ep.ndim == 1:
                ep = ep[:, None]
            ev = np.asarray(self.eval_values, dtype=np.float64).reshape(-1)
            if ep.shape[1] != pts.shape[1] or ep.shape[0] != ev.shape[0]:
                raise DomainError("evaluation set shape does not match the training set")
            object.__setattr__(self, "eval_points", _readonly(ep))
            object.__setattr__(self, "eval_values", _readonly(ev))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def with_values(self, values) -> "Dataset":
        return Dataset(self.points, values, self.eval_points, self.eval_values)

    def to_csv(self, path) -> None:
        """Write ``x0,...,x{d-1},y`` with full float64 round-trip precision."""
        write_points_csv(path, self.points, {"y": self.values})

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                raise DomainError(f"{path}: empty file")
            d = len(header) - 1
            expected = [f"x{j}" for j in range(d)] + ["y"]
            if d < 1 or header != expected:
                raise DomainError(f"{path}: header must be {','.join(expected)}")
            rows = [[float(v) for v in row] for row in reader if row]
        if not rows:
            raise DomainError(f"{path}: no data rows")
        arr = np.array(rows, dtype=np.float64)
        return cls(arr[:, :d], arr[:, d])


def write_points_csv(path, points, columns: dict) -> None:
    """CSV with ``x0..x{d-1}`` followed by the named columns, repr precision."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points[:, None]
    header = [f"x{j}" for j in range(points.shape[1])] + list(columns)
    cols = [np.asarray(c, dtype=np.float64).reshape(-1) for c in columns.values()]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(points.shape[0]):
            w.writerow([repr(float(v)) for v in points[i]] + [repr(float(c[i])) for c in cols])


# ---------------------------------------------------------------------------
# rate functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PowerLaw:
    """``gamma(xi) = A |xi|^-(d+3) + B |xi|^-(d+1)``.

    ``A`` plays the role of <a^2 + r^2> and ``B`` of <a^2 r^2> for the
    two-layer ReLU network.
    """

    A: float
    B: float
    d: int

    def __post_init__(self):
        if self.A < 0 or self.B < 0 or not (self.A + self.B > 0):
            raise InvalidSpecError(f"PowerLaw needs A, B >= 0 with A + B > 0 (got A={self.A}, B={self.B})")
        if int(self.d) != self.d or self.d < 1:
            raise InvalidSpecError(f"dimension must be a positive integer, got {self.d}")

    def of_norm(self, norm):
        norm = np.asarray(norm, dtype=np.float64)
        if np.any(norm <= 0):
            raise DomainError("power-law rate is singular at xi = 0")
        d = self.d
        return self.A * norm ** (-(d + 3.0)) + self.B * norm ** (-(d + 1.0))


@dataclass(frozen=True)
class Tabulated:
    """Rate tabulated against ``|xi|``, linearly interpolated in between.

    With ``fprinciple=True`` (the default) a warning is issued when the rates
    increase with frequency.
    """

    freqs: tuple
    rates: tuple
    d: int | None = None
    fprinciple: bool = True

    def __post_init__(self):
        f = np.asarray(self.freqs, dtype=np.float64)
        r = np.asarray(self.rates, dtype=np.float64)
        if f.ndim != 1 or f.shape != r.shape or f.size < 2:
            raise InvalidSpecError("tabulated rate needs matching 1-d freqs/rates with >= 2 entries")
        if np.any(np.diff(f) <= 0) or f[0] < 0:
            raise InvalidSpecError("tabulated frequencies must be non-negative and strictly increasing")
        if np.any(r <= 0):
            raise InvalidSpecError("tabulated rates must be strictly positive")
        if self.fprinciple and np.any(np.diff(r) > 0):
            warnings.warn("tabulated rate increases with |xi|; F-Principle ordering not guaranteed", stacklevel=3)
        object.__setattr__(self, "freqs", tuple(float(v) for v in f))
        object.__setattr__(self, "rates", tuple(float(v) for v in r))

    def of_norm(self, norm):
        norm = np.asarray(norm, dtype=np.float64)
        lo, hi = self.freqs[0], self.freqs[-1]
        if np.any(norm < lo) or np.any(norm > hi):
            raise ExtrapolationError(f"|xi| outside tabulated range [{lo}, {hi}]")
        return np.interp(norm, self.freqs, self.rates)


GammaSpec = Union[PowerLaw, Tabulated]


def gamma_eval(spec: GammaSpec, xi):
    """Evaluate the rate at frequency vector(s) ``xi``.

    ``xi`` is a d-vector or an array whose last axis is the frequency
    dimension; a scalar is accepted in one dimension. Returns a float for a
    single vector, otherwise an array over the leading axes.
    """
    xi = np.asarray(xi, dtype=np.float64)
    if xi.ndim == 0:
        xi = xi[None]
    d = getattr(spec, "d", None)
    if d is not None and xi.shape[-1] != d:
        if d == 1:
            xi = xi[..., None]
        else:
            raise DomainError(f"frequency has dimension {xi.shape[-1]}, rate expects {d}")
    out = spec.of_norm(np.linalg.norm(xi, axis=-1))
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# frequency lattice
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FrequencyLattice:
    """Uniform grid of angular frequencies with an excluded ball at 0."""

    d: int
    xi_max: float
    dxi: float
    eps_zero: float
    nodes: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return self.nodes.shape[0]

    @property
    def cell_volume(self) -> float:
        return self.dxi ** self.d

    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.nodes, axis=1)

    def describe(self) -> dict:
        return {"d": self.d, "xi_max": self.xi_max, "dxi": self.dxi, "eps_zero": self.eps_zero, "nodes": self.size}


def build_lattice(d: int, xi_max: float, dxi: float, eps_zero: float | None = None,
                  max_nodes: int = DEFAULT_NODE_BUDGET) -> FrequencyLattice:
    """Nodes ``k * dxi`` with ``|k_j dxi| <= xi_max`` and ``|xi| >= eps_zero``.

    ``eps_zero`` defaults to ``dxi / 2``, which removes exactly the origin.
    """
    if eps_zero is None:
        eps_zero = dxi / 2
    if d < 1 or dxi <= 0 or xi_max <= 0 or eps_zero <= 0:
        raise DomainError("lattice parameters must be positive")
    if xi_max < dxi:
        raise DomainError(f"xi_max={xi_max} smaller than spacing {dxi}")
    if eps_zero >= dxi:
        raise DomainError(f"eps_zero={eps_zero} must be smaller than dxi={dxi}")
    kmax = int(np.floor(xi_max / dxi + 1e-9))
    per_axis = 2 * kmax + 1
    if per_axis ** d > max_nodes:
        raise ResourceError(f"lattice would have {per_axis ** d} nodes, budget is {max_nodes}")
    axis = np.arange(-kmax, kmax + 1, dtype=np.float64) * dxi
    grids = np.meshgrid(*([axis] * d), indexing="ij")
    nodes = np.stack([g.reshape(-1) for g in grids], axis=1)
    nodes = nodes[np.linalg.norm(nodes, axis=1) >= eps_zero]
    nodes.setflags(write=False)
    return FrequencyLattice(d=d, xi_max=float(xi_max), dxi=float(dxi), eps_zero=float(eps_zero), nodes=nodes)


# ---------------------------------------------------------------------------
# transforms
# ---------------------------------------------------------------------------


def _as_points(points_or_dataset) -> np.ndarray:
    if isinstance(points_or_dataset, Dataset):
        return points_or_dataset.points
    pts = np.asarray(points_or_dataset, dtype=np.float64)
    return pts[:, None] if pts.ndim == 1 else pts


def empirical_transform(values, dataset, xi):
    """Fourier transform of ``u * rho`` with ``rho = sum_i delta(x - x_i) / n``.

    Returns ``(1/n) sum_i values_i exp(-i xi . x_i)``; ``xi`` may be a single
    d-vector (complex scalar result) or a ``(K, d)`` array.
    """
    pts = _as_points(dataset)
    values = np.asarray(values)
    if values.shape != (pts.shape[0],):
        raise DomainError(f"expected {pts.shape[0]} values, got shape {values.shape}")
    xi = np.asarray(xi, dtype=np.float64)
    single = xi.ndim <= 1
    xi = np.atleast_2d(xi) if xi.ndim else xi.reshape(1, 1)
    if xi.shape[1] != pts.shape[1]:
        raise DomainError("frequency dimension does not match the data")
    out = np.exp(-1j * (xi @ pts.T)) @ values / pts.shape[0]
    return complex(out[0]) if single else out


# ---------------------------------------------------------------------------
# random streams
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RandomSource:
    """Seeded, splittable source of counter-based (Philox) generators.

    Streams are addressed by name, so the draws for one consumer do not
    depend on how many other consumers asked first.
    """

    seed: int

    def __post_init__(self):
        if not (0 <= int(self.seed) < 2 ** 64):
            raise DomainError("seed must fit in an unsigned 64-bit integer")

    def generator(self, *keys) -> np.random.Generator:
        spawn_key = tuple(k if isinstance(k, int) else zlib.crc32(str(k).encode()) for k in keys)
        ss = np.random.SeedSequence(int(self.seed), spawn_key=spawn_key)
        return np.random.Generator(np.random.Philox(ss))

    def child(self, key) -> "RandomSource":
        """Independent source derived from this one (stable under reordering)."""
        derived = self.generator("child", key).integers(0, 2 ** 63)
        return RandomSource(int(derived))
