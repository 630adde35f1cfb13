"""Linear frequency principle dynamics.

The residual ``u = h - f*`` obeys ``d/dt u_hat(xi) = -gamma(xi) (u rho)^(xi)``
with ``rho`` the empirical measure of the training points. Two integrators
are provided:

* :func:`evolve_reduced` works on the residuals at the training points,
  where the dynamics close to ``dr/dt = -G r`` with
  ``G_ji = Gamma(x_j - x_i) / n`` and ``Gamma`` the inverse transform of
  ``gamma``. It is exact in time (symmetric eigendecomposition) and is the
  reference solver.
* :func:`evolve_spectral` steps the frequency field itself with explicit
  Euler so that per-frequency behaviour can be inspected.

Both discretize ``Gamma`` with the same lattice quadrature, so they agree up
to the Euler time-stepping error.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from fpl.core import Dataset, FrequencyLattice, GammaSpec, gamma_eval
from fpl.errors import DomainError, NumericalFailure, StabilityError

__all__ = [
    "LatticeKernel",
    "SpectralState",
    "ReducedState",
    "FlowTrajectory",
    "kernel_from_gamma",
    "build_gram",
    "reduced_state",
    "evolve_reduced",
    "evolve_spectral",
    "predict_offsample",
    "frequency_dissipation",
    "dissipation_rate",
    "spectral_step_bound",
]

_QUANTUM = 1e-12
_CHUNK = 1 << 22  # displacement x node products per block


class LatticeKernel:
    """Spatial kernel ``Gamma(x) = (2 pi)^-d sum_k gamma(xi_k) cos(xi_k . x) dxi^d``.

    The lattice is symmetric, so the sum of ``exp(i xi.x)`` collapses to a
    cosine sum. Scalar evaluations are memoized on the displacement rounded
    to ``1e-12``.
    """

    def __init__(self, spec: GammaSpec, lattice: FrequencyLattice):
        self.spec = spec
        self.lattice = lattice
        rates = np.asarray(gamma_eval(spec, lattice.nodes), dtype=np.float64).reshape(-1)
        self.rates = rates
        self.weights = rates * lattice.cell_volume / (2 * np.pi) ** lattice.d
        self._cache: dict = {}

    @property
    def d(self) -> int:
        return self.lattice.d

    def at_zero(self) -> float:
        return float(self.weights.sum())

    def __call__(self, displacement):
        disp = np.asarray(displacement, dtype=np.float64)
        if disp.ndim == 0:
            disp = disp.reshape(1)
        if disp.ndim == 1 and disp.shape[0] == self.d:
            key = tuple(np.round(disp / _QUANTUM).astype(np.int64))
            hit = self._cache.get(key)
            if hit is None:
                hit = float(self._batch(disp[None, :])[0])
                self._cache[key] = hit
            return hit
        if disp.shape[-1] != self.d:
            if self.d == 1:
                disp = disp[..., None]
            else:
                raise DomainError(f"displacement dimension {disp.shape[-1]} != lattice dimension {self.d}")
        lead = disp.shape[:-1]
        return self._batch(disp.reshape(-1, self.d)).reshape(lead)

    def _batch(self, disp: np.ndarray) -> np.ndarray:
        out = np.empty(disp.shape[0])
        nodes = self.lattice.nodes
        step = max(1, _CHUNK // max(nodes.shape[0], 1))
        for s in range(0, disp.shape[0], step):
            out[s:s + step] = np.cos(disp[s:s + step] @ nodes.T) @ self.weights
        return out

    def matrix(self, a, b=None) -> np.ndarray:
        """``Gamma(a_j - b_i)`` for point sets ``a`` (p, d) and ``b`` (q, d)."""
        a = np.asarray(a, dtype=np.float64)
        a = a[:, None] if a.ndim == 1 else a
        b = a if b is None else np.asarray(b, dtype=np.float64)
        b = b[:, None] if b.ndim == 1 else b
        return self(a[:, None, :] - b[None, :, :])


def kernel_from_gamma(spec: GammaSpec, lattice: FrequencyLattice, displacement):
    """Quadrature of ``(2 pi)^-d int gamma(xi) exp(i xi.x) dxi`` over the lattice."""
    return LatticeKernel(spec, lattice)(displacement)


def build_gram(dataset: Dataset, spec_or_kernel, lattice: FrequencyLattice | None = None) -> np.ndarray:
    """``G_ji = Gamma(x_j - x_i) / n``; symmetric with constant diagonal."""
    kern = spec_or_kernel if isinstance(spec_or_kernel, LatticeKernel) else LatticeKernel(spec_or_kernel, lattice)
    G = kern.matrix(dataset.points) / dataset.n
    G = 0.5 * (G + G.T)
    np.fill_diagonal(G, kern.at_zero() / dataset.n)
    return G


# ---------------------------------------------------------------------------
# reduced flow
# ---------------------------------------------------------------------------


@dataclass
class FlowTrajectory:
    """Checkpointed output of either solver."""

    times: np.ndarray
    losses: np.ndarray
    residuals: np.ndarray
    betas: np.ndarray | None = None
    uhat: np.ndarray | None = None
    drive: np.ndarray | None = None
    lattice: FrequencyLattice | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.times)

    def to_csv(self, path) -> None:
        n = self.residuals.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time", "loss"] + [f"residual_{i}" for i in range(n)])
            for t, loss, r in zip(self.times, self.losses, self.residuals):
                w.writerow([repr(float(t)), repr(float(loss))] + [repr(float(v)) for v in r])

    def snapshots_to_csv(self, path) -> None:
        if self.uhat is None or self.lattice is None:
            raise DomainError("trajectory has no spectral snapshots")
        nodes = self.lattice.nodes
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time"] + [f"xi{j}" for j in range(nodes.shape[1])] + ["re_uhat", "im_uhat"])
            for t, field_ in zip(self.times, self.uhat):
                for node, v in zip(nodes, field_):
                    w.writerow([repr(float(t))] + [repr(float(c)) for c in node]
                               + [repr(float(v.real)), repr(float(v.imag))])

    def write_meta(self, path) -> None:
        meta = dict(self.meta)
        if self.lattice is not None:
            meta["lattice"] = self.lattice.describe()
        with open(path, "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)


@dataclass
class ReducedState:
    """Residuals at the training points together with the cached Gram
    eigendecomposition and the accumulated off-sample coefficients."""

    residuals: np.ndarray
    gram: np.ndarray
    time: float = 0.0
    beta: np.ndarray | None = None
    _eig: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        self.residuals = np.asarray(self.residuals, dtype=np.float64).copy()
        self.gram = np.asarray(self.gram, dtype=np.float64)
        n = self.residuals.shape[0]
        if self.gram.shape != (n, n):
            raise DomainError(f"Gram shape {self.gram.shape} incompatible with {n} residuals")
        if self.beta is None:
            self.beta = np.zeros(n)

    @property
    def n(self) -> int:
        return self.residuals.shape[0]

    def eig(self):
        if self._eig is None:
            lam, V = np.linalg.eigh(0.5 * (self.gram + self.gram.T))
            self._eig = (np.maximum(lam, 0.0), V)
        return self._eig


def reduced_state(dataset: Dataset, kernel: LatticeKernel, h_ini: Callable | None = None) -> ReducedState:
    """Initial reduced state with residuals ``h_ini(x_i) - y_i``."""
    h0 = np.zeros(dataset.n) if h_ini is None else np.asarray(h_ini(dataset.points), dtype=np.float64)
    return ReducedState(residuals=h0 - dataset.values, gram=build_gram(dataset, kernel))


def _phi(lam: np.ndarray, tau: float) -> np.ndarray:
    """``int_0^tau exp(-lam s) ds`` evaluated stably (``tau`` may be inf)."""
    if np.isinf(tau):
        with np.errstate(divide="ignore"):
            return np.where(lam > 0, 1.0 / np.where(lam > 0, lam, 1.0), 0.0)
    x = lam * tau
    small = x < 1e-8
    safe = np.where(small, 1.0, lam)
    return np.where(small, tau * (1 - 0.5 * x), -np.expm1(-x) / safe)


def evolve_reduced(state: ReducedState, t_end: float, n_checkpoints: int = 50, *,
                   times=None, spacing: str = "linear", rel_null: float = 1e-13) -> FlowTrajectory:
    """Exact flow ``r(t) = exp(-G (t - t0)) r(t0)`` sampled at checkpoints.

    ``t_end`` may be ``inf``, in which case the last checkpoint is the
    steady state; eigenvalues below ``rel_null * max`` are treated as null
    modes (they neither decay nor contribute to the off-sample coefficients).
    ``state`` is advanced in place to the final checkpoint.
    """
    t0 = float(state.time)
    if times is None:
        if not t_end > t0:
            raise DomainError(f"t_end={t_end} must exceed current time {t0}")
        if np.isinf(t_end):
            times = np.array([t0, np.inf])
        elif spacing == "log":
            first = (t_end - t0) * 1e-4
            times = np.concatenate([[t0], t0 + np.geomspace(first, t_end - t0, max(n_checkpoints - 1, 1))])
        else:
            times = np.linspace(t0, t_end, max(n_checkpoints, 2))
    times = np.asarray(times, dtype=np.float64)
    if np.any(np.diff(times) <= 0) or times[0] < t0:
        raise DomainError("checkpoint times must be increasing and not precede the state time")

    lam, V = state.eig()
    lam = np.where(lam > rel_null * max(lam.max(), 1e-300), lam, 0.0)
    coeff = V.T @ state.residuals
    n = state.n
    res = np.empty((len(times), n))
    betas = np.empty((len(times), n))
    for k, t in enumerate(times):
        tau = t - t0
        if np.isinf(tau):
            decay = np.where(lam > 0, 0.0, 1.0)
        else:
            decay = np.exp(-lam * tau)
        res[k] = V @ (decay * coeff)
        betas[k] = state.beta - (V @ (_phi(lam, tau) * coeff)) / n
    if not (np.all(np.isfinite(res)) and np.all(np.isfinite(betas))):
        bad = int(np.argmax(~np.isfinite(res).all(axis=1)))
        raise NumericalFailure(f"non-finite residuals at checkpoint t={times[bad]} (max eigenvalue {lam.max():.3e})")
    losses = np.sum(res ** 2, axis=1) / (2 * n)
    state.residuals = res[-1].copy()
    state.beta = betas[-1].copy()
    state.time = float(times[-1])
    return FlowTrajectory(times=times, losses=losses, residuals=res, betas=betas,
                          meta={"solver": "reduced", "t0": t0})


def predict_offsample(source, dataset: Dataset, kernel: LatticeKernel, x, *,
                      h_ini: Callable | None = None, index: int = -1):
    """``h(x, t) = h_ini(x) + sum_i Gamma(x - x_i) beta_i(t)``.

    ``source`` is a :class:`FlowTrajectory` (checkpoint ``index``), a
    :class:`ReducedState` or a coefficient vector.
    """
    if isinstance(source, FlowTrajectory):
        beta = source.betas[index]
    elif isinstance(source, ReducedState):
        beta = source.beta
    else:
        beta = np.asarray(source, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 0 or (x.ndim == 1 and x.shape[0] == dataset.d and dataset.d > 1)
    pts = x.reshape(1, -1) if single else (x[:, None] if x.ndim == 1 else x)
    if pts.shape[1] != dataset.d:
        pts = pts.reshape(-1, dataset.d)
    out = kernel.matrix(pts, dataset.points) @ beta
    if h_ini is not None:
        out = out + np.asarray(h_ini(pts), dtype=np.float64)
    return float(out[0]) if single else out


# ---------------------------------------------------------------------------
# spectral solver
# ---------------------------------------------------------------------------


@dataclass
class SpectralState:
    """Residual field on a frequency lattice.

    The residual at training point ``x_i`` is
    ``anchor_i + (2 pi)^-d dxi^d sum_k uhat_k exp(i xi_k . x_i)``. The anchor
    carries the part of ``h_ini - f*`` that has no lattice representation
    (only its values at the training points ever enter the dynamics).
    """

    lattice: FrequencyLattice
    uhat: np.ndarray
    anchor: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.uhat = np.asarray(self.uhat, dtype=np.complex128).copy()
        self.anchor = np.asarray(self.anchor, dtype=np.float64).copy()
        if self.uhat.shape != (self.lattice.size,):
            raise DomainError("uhat must have one entry per lattice node")

    @classmethod
    def from_residuals(cls, lattice: FrequencyLattice, residuals) -> "SpectralState":
        r = np.asarray(residuals, dtype=np.float64)
        return cls(lattice, np.zeros(lattice.size, dtype=np.complex128), r)

    @classmethod
    def lattice_resolved(cls, dataset: Dataset, kernel: LatticeKernel, residuals) -> "SpectralState":
        """Represent the initial residual entirely on the lattice.

        Picks the lattice field ``gamma(xi) sum_i c_i exp(-i xi.x_i)`` that
        reproduces ``residuals`` at the training points, i.e. the
        minimum-FP-energy extension of the residual. The anchor is zero, so
        per-frequency energies of the state are meaningful.
        """
        G = build_gram(dataset, kernel)
        c = np.linalg.lstsq(G * dataset.n, np.asarray(residuals, dtype=np.float64), rcond=None)[0]
        phase = np.exp(-1j * (kernel.lattice.nodes @ dataset.points.T))
        uhat = kernel.rates * (phase @ c)
        state = cls(kernel.lattice, uhat, np.zeros(dataset.n))
        ops = _SpectralOps(dataset, kernel)
        state.anchor = np.asarray(residuals, dtype=np.float64) - ops.inverse(state.uhat)
        return state


class _SpectralOps:
    def __init__(self, dataset: Dataset, kernel: LatticeKernel):
        lat = kernel.lattice
        phase = lat.nodes @ dataset.points.T  # (K, n)
        self.fwd = np.exp(-1j * phase)  # (K, n)
        self.scale = lat.cell_volume / (2 * np.pi) ** lat.d
        self.rates = kernel.rates
        self.n = dataset.n

    def inverse(self, uhat: np.ndarray) -> np.ndarray:
        return self.scale * (uhat @ self.fwd.conj()).real

    def drive(self, u: np.ndarray) -> np.ndarray:
        return self.fwd @ u / self.n

    def operator(self, u: np.ndarray) -> np.ndarray:
        return self.inverse(self.rates * self.drive(u))


def spectral_step_bound(dataset: Dataset, kernel: LatticeKernel, iters: int = 500, tol: float = 1e-10) -> float:
    """``1 / lambda_max`` of the discretized operator, by power iteration.

    The estimate is inflated by 1% before inversion since power iteration
    approaches the top eigenvalue from below.
    """
    ops = _SpectralOps(dataset, kernel)
    v = np.cos(np.arange(1, dataset.n + 1) * 0.7311) + 1.0
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = ops.operator(v)
        new = float(np.linalg.norm(w))
        if new == 0:
            break
        v = w / new
        if abs(new - lam) <= tol * new:
            lam = new
            break
        lam = new
    if lam <= 0:
        return np.inf
    return 1.0 / (1.01 * lam)


def evolve_spectral(state: SpectralState, dataset: Dataset, kernel: LatticeKernel, dt: float | None,
                    steps: int, *, n_checkpoints: int = 50, snapshots: bool = True) -> FlowTrajectory:
    """Explicit Euler on the lattice field: ``uhat -= dt * gamma * (u rho)^``.

    Each step reconstructs the residuals at the training points by the
    quadrature inverse transform, forms the empirical transform and updates
    every node. ``dt=None`` selects half the stability bound; a larger
    ``dt`` than the bound is refused. ``state`` is advanced in place.
    """
    if kernel.lattice is not state.lattice and kernel.lattice.size != state.lattice.size:
        raise DomainError("kernel and state use different lattices")
    if state.anchor.shape != (dataset.n,):
        raise DomainError("state anchor does not match the dataset")
    bound = spectral_step_bound(dataset, kernel)
    if dt is None:
        dt = 0.5 * bound
    if dt <= 0:
        raise DomainError("dt must be positive")
    if dt > bound:
        raise StabilityError(f"dt={dt:.4g} exceeds the stable step {bound:.4g}; reduce dt")
    ops = _SpectralOps(dataset, kernel)
    n_cp = max(2, min(n_checkpoints, steps + 1))
    marks = np.unique(np.round(np.linspace(0, steps, n_cp)).astype(int))
    times, losses, res, fields, drives = [], [], [], [], []
    uhat = state.uhat
    step = 0
    for mark in marks:
        while step < mark:
            u = state.anchor + ops.inverse(uhat)
            uhat = uhat - dt * ops.rates * ops.drive(u)
            step += 1
        u = state.anchor + ops.inverse(uhat)
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(uhat))):
            raise NumericalFailure(f"non-finite spectral field after {step} steps")
        times.append(state.time + step * dt)
        losses.append(float(u @ u) / (2 * dataset.n))
        res.append(u)
        if snapshots:
            fields.append(uhat.copy())
            drives.append(ops.drive(u))
    state.uhat = uhat
    state.time = times[-1]
    return FlowTrajectory(
        times=np.array(times), losses=np.array(losses), residuals=np.array(res),
        uhat=np.array(fields) if snapshots else None,
        drive=np.array(drives) if snapshots else None,
        lattice=state.lattice,
        meta={"solver": "spectral", "dt": dt, "stable_dt": bound, "steps": steps},
    )


def frequency_dissipation(trajectory: FlowTrajectory) -> np.ndarray:
    """``Re(uhat * conj(u_rho hat)) / 2`` per checkpoint (rows) and node (columns)."""
    if trajectory.uhat is None or trajectory.drive is None:
        raise DomainError("trajectory was recorded without spectral snapshots")
    return 0.5 * np.real(trajectory.uhat * np.conj(trajectory.drive))


def dissipation_rate(trajectory: FlowTrajectory, kernel: LatticeKernel) -> np.ndarray:
    """``-gamma |u_rho hat|^2`` per checkpoint and node."""
    if trajectory.drive is None:
        raise DomainError("trajectory was recorded without spectral snapshots")
    return -kernel.rates * np.abs(trajectory.drive) ** 2
