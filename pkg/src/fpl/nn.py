"""Hand-differentiated networks trained by full-batch gradient descent.

``TwoLayerNet`` is ``f(x) = m^-1/2 sum_j a_j relu(w_j.x + |w_j| c_j)``; the
bias is tied to the weight norm and is differentiated through
``d|w|/dw = w/|w|`` (taken as 0 at w = 0, as is the ReLU derivative at 0).
``MLP`` is a plain ReLU network with a linear output used for the parity
experiment. Both minimize ``R_S = sum (f(x_i) - y_i)^2 / 2n``.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from fpl.core import Dataset, RandomSource
from fpl.errors import DomainError, NumericalFailure

__all__ = [
    "TwoLayerNet",
    "InitConfig",
    "TrainConfig",
    "TrainResult",
    "MLP",
    "init_two_layer",
    "forward",
    "loss_and_grad",
    "grad_step",
    "train",
    "init_stats",
    "param_jacobian",
    "empirical_ntk",
    "linearized_forward",
    "build_mlp",
    "train_mlp",
    "probe_stable_lr",
]


def _as_inputs(x, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0:
        return x.reshape(1, 1)
    if x.ndim == 1:
        return x[:, None] if d == 1 else x.reshape(1, d)
    return x


@dataclass
class TwoLayerNet:
    a: np.ndarray
    w: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=np.float64).reshape(-1)
        self.w = np.asarray(self.w, dtype=np.float64)
        if self.w.ndim == 1:
            self.w = self.w[:, None]
        self.c = np.asarray(self.c, dtype=np.float64).reshape(-1)
        m = self.a.shape[0]
        if self.w.shape[0] != m or self.c.shape[0] != m:
            raise DomainError("a, w and c must describe the same number of neurons")

    @property
    def m(self) -> int:
        return self.a.shape[0]

    @property
    def d(self) -> int:
        return self.w.shape[1]

    @property
    def r(self) -> np.ndarray:
        return np.linalg.norm(self.w, axis=1)

    def copy(self) -> "TwoLayerNet":
        return TwoLayerNet(self.a.copy(), self.w.copy(), self.c.copy())

    def __call__(self, x):
        return forward(self, x)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.a, self.w.reshape(-1), self.c])

    @classmethod
    def from_vector(cls, theta, m: int, d: int) -> "TwoLayerNet":
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (m * (d + 2),):
            raise DomainError(f"parameter vector of length {theta.shape} does not fit m={m}, d={d}")
        return cls(theta[:m].copy(), theta[m:m + m * d].reshape(m, d).copy(), theta[m + m * d:].copy())

    def save(self, path, header: dict | None = None) -> None:
        """JSON header line, then little-endian float64 parameters."""
        meta = {"kind": "two_layer", "m": self.m, "d": self.d, **(header or {})}
        blob = json.dumps(meta, sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(struct.pack("<Q", len(blob)))
            fh.write(blob)
            fh.write(self.to_vector().astype("<f8").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            (size,) = struct.unpack("<Q", fh.read(8))
            meta = json.loads(fh.read(size))
            theta = np.frombuffer(fh.read(), dtype="<f8")
        return cls.from_vector(theta, meta["m"], meta["d"]), meta


@dataclass(frozen=True)
class InitConfig:
    sigma_a: float = 1.0
    sigma_w: float = 1.0
    sigma_c: float = 1.0
    asi: bool = True
    seed: int = 0

    def __post_init__(self):
        if min(self.sigma_a, self.sigma_w, self.sigma_c) <= 0:
            raise DomainError("initialization standard deviations must be positive")


@dataclass(frozen=True)
class TrainConfig:
    lr: float
    max_steps: int
    loss_tol: float = 0.0
    checkpoints: tuple = ()
    n_checkpoints: int = 0
    divergence_factor: float = 1e6

    def __post_init__(self):
        if not self.lr > 0:
            raise DomainError("learning rate must be positive")
        if self.max_steps < 0:
            raise DomainError("max_steps must be non-negative")

    def schedule(self) -> np.ndarray:
        marks = set(int(s) for s in self.checkpoints if 0 <= s <= self.max_steps)
        if self.n_checkpoints:
            marks.update(np.unique(np.round(np.geomspace(1, max(self.max_steps, 1), self.n_checkpoints))).astype(int))
            marks.add(0)
        return np.array(sorted(marks), dtype=int)


def init_two_layer(m: int, d: int, cfg: InitConfig) -> TwoLayerNet:
    """Gaussian initialization; with ASI the second half mirrors the first
    with negated output weights so that ``f(x; theta(0)) = 0`` exactly.

    Each parameter group has its own named stream, so the draws for ``w``
    do not depend on the number of ``a`` draws.
    """
    if m < 1 or d < 1:
        raise DomainError("need m >= 1 neurons and d >= 1 inputs")
    if cfg.asi and m % 2:
        raise DomainError("antisymmetric initialization needs an even neuron count")
    src = RandomSource(cfg.seed)
    half = m // 2 if cfg.asi else m
    a = src.generator("two_layer", "a").normal(0.0, cfg.sigma_a, half)
    w = src.generator("two_layer", "w").normal(0.0, cfg.sigma_w, (half, d))
    c = src.generator("two_layer", "c").normal(0.0, cfg.sigma_c, half)
    if cfg.asi:
        a = np.concatenate([a, -a])
        w = np.concatenate([w, w])
        c = np.concatenate([c, c])
    return TwoLayerNet(a, w, c)


def _preact(net: TwoLayerNet, X: np.ndarray):
    r = net.r
    if net.d == 1:
        z = np.multiply.outer(X[:, 0], net.w[:, 0])
    else:
        z = X @ net.w.T
    z += r * net.c
    return z, r


def forward(net: TwoLayerNet, x):
    """``m^-1/2 sum_j a_j relu(w_j.x + r_j c_j)``; float for a single input."""
    raw = np.asarray(x)
    X = _as_inputs(x, net.d)
    z, _ = _preact(net, X)
    out = np.maximum(z, 0.0) @ net.a / np.sqrt(net.m)
    single = raw.ndim == 0 or (raw.ndim == 1 and net.d > 1)
    return float(out[0]) if single else out


def loss_and_grad(net: TwoLayerNet, X: np.ndarray, y: np.ndarray):
    """Loss and its gradient as a ``TwoLayerNet`` of partial derivatives."""
    n = X.shape[0]
    z, r = _preact(net, X)
    act = np.maximum(z, 0.0)
    scale = 1.0 / np.sqrt(net.m)
    e = act @ net.a * scale - y
    loss = float(e @ e) / (2 * n)
    coef = scale / n
    mask = (z > 0).astype(np.float64)
    s0 = e @ mask
    S = mask.T @ (X * e[:, None])  # (m, d)
    safe = np.where(r > 0, r, 1.0)
    what = np.where(r[:, None] > 0, net.w / safe[:, None], 0.0)
    ga = coef * (e @ act)
    gw = coef * net.a[:, None] * (S + (net.c * s0)[:, None] * what)
    gc = coef * net.a * r * s0
    return loss, TwoLayerNet(ga, gw, gc), e


def grad_step(net: TwoLayerNet, dataset: Dataset, lr: float):
    """One explicit Euler step of the gradient flow; returns the new net and
    the loss before the step."""
    if not lr > 0:
        raise DomainError("learning rate must be positive")
    loss, g, _ = loss_and_grad(net, dataset.points, dataset.values)
    return TwoLayerNet(net.a - lr * g.a, net.w - lr * g.w, net.c - lr * g.c), loss


@dataclass
class TrainResult:
    net: object
    steps: int
    losses: np.ndarray
    checkpoint_steps: np.ndarray
    train_outputs: np.ndarray
    eval_outputs: np.ndarray | None
    saved: dict = field(default_factory=dict)
    converged: bool = False


def _descent(params: list, grad_fn: Callable, predict: Callable, X_eval, cfg: TrainConfig,
             save_steps: Sequence[int] = (), snapshot: Callable | None = None,
             until: Callable | None = None) -> dict:
    """Shared full-batch loop. ``grad_fn(params) -> (loss, grads, train_out)``
    updates nothing; parameters are updated in place here. ``until(train_out)``
    is an optional extra stopping rule."""
    schedule = set(cfg.schedule().tolist())
    save_steps = set(int(s) for s in save_steps)
    losses, cp_steps, train_out, eval_out, saved = [], [], [], [], {}
    initial = None
    step = 0
    converged = False
    while True:
        loss, grads, out = grad_fn(params)
        if not np.isfinite(loss):
            raise NumericalFailure(f"loss became non-finite at step {step}; try a smaller learning rate than {cfg.lr}")
        if initial is None:
            initial = loss
        elif initial > 0 and loss > cfg.divergence_factor * initial:
            raise NumericalFailure(
                f"training diverged at step {step} (loss {loss:.3e} vs initial {initial:.3e}); "
                f"reduce the learning rate below {cfg.lr}")
        losses.append(loss)
        hit = loss <= cfg.loss_tol or (until is not None and bool(until(out)))
        done = hit or step >= cfg.max_steps
        if step in schedule or done:
            cp_steps.append(step)
            train_out.append(np.array(out, copy=True))
            if X_eval is not None:
                eval_out.append(predict(params, X_eval))
        if step in save_steps and snapshot is not None:
            saved[step] = snapshot(params)
        if done:
            converged = hit
            break
        for p, g in zip(params, grads):
            p -= cfg.lr * g
        step += 1
    return dict(steps=step, losses=np.array(losses), checkpoint_steps=np.array(cp_steps),
                train_outputs=np.array(train_out), eval_outputs=np.array(eval_out) if X_eval is not None else None,
                saved=saved, converged=converged)


def train(net: TwoLayerNet, dataset: Dataset, cfg: TrainConfig, *, eval_points=None,
          save_steps: Sequence[int] = (), until: Callable | None = None) -> TrainResult:
    """Gradient descent until ``loss <= loss_tol`` or ``max_steps``.

    Training-point outputs (and outputs on ``eval_points``) are recorded at
    the checkpoint schedule and at the final step; full copies of the net
    are kept for ``save_steps``. The input net is not modified.
    """
    work = net.copy()
    X, y = dataset.points, dataset.values
    X_eval = None if eval_points is None else _as_inputs(eval_points, net.d)

    def grad_fn(params):
        loss, g, e = loss_and_grad(work, X, y)
        return loss, [g.a, g.w, g.c], e + y

    out = _descent([work.a, work.w, work.c], grad_fn, lambda p, Xe: forward(work, Xe), X_eval, cfg,
                   save_steps, lambda p: work.copy(), until)
    return TrainResult(net=work, **out)


def probe_stable_lr(net, dataset: Dataset, lr: float, steps: int = 100, max_halvings: int = 30) -> float:
    """Halve ``lr`` until ``steps`` gradient steps never increase the loss."""
    for _ in range(max_halvings):
        cur = net.copy()
        prev = np.inf
        ok = True
        for _ in range(steps):
            cur, loss = grad_step(cur, dataset, lr) if isinstance(net, TwoLayerNet) else _mlp_step(cur, dataset, lr)
            if loss > prev:
                ok = False
                break
            prev = loss
        if ok:
            return lr
        lr *= 0.5
    raise NumericalFailure("no monotone learning rate found")


def init_stats(net: TwoLayerNet) -> tuple[float, float]:
    """``A = mean(a^2 + r^2)`` and ``B = mean(a^2 r^2)`` over neurons."""
    a2 = net.a ** 2
    r2 = np.sum(net.w ** 2, axis=1)
    return float(np.mean(a2 + r2)), float(np.mean(a2 * r2))


# ---------------------------------------------------------------------------
# NTK and linearization
# ---------------------------------------------------------------------------


def param_jacobian(net: TwoLayerNet, points) -> np.ndarray:
    """Rows ``grad_theta f(x_i)`` in :meth:`TwoLayerNet.to_vector` order."""
    X = _as_inputs(points, net.d)
    z, r = _preact(net, X)
    mask = (z > 0).astype(np.float64)
    scale = 1.0 / np.sqrt(net.m)
    safe = np.where(r > 0, r, 1.0)
    what = np.where(r[:, None] > 0, net.w / safe[:, None], 0.0)
    ja = np.maximum(z, 0.0) * scale
    am = mask * net.a * scale  # (N, m)
    jw = am[:, :, None] * (X[:, None, :] + (net.c[:, None] * what)[None, :, :])
    jc = am * r
    return np.concatenate([ja, jw.reshape(X.shape[0], -1), jc], axis=1)


def empirical_ntk(net: TwoLayerNet, points) -> np.ndarray:
    """``K(x, x') = grad f(x) . grad f(x')`` at the given parameters."""
    X = _as_inputs(points, net.d)
    z, r = _preact(net, X)
    mask = (z > 0).astype(np.float64)
    act = np.maximum(z, 0.0)
    safe = np.where(r > 0, r, 1.0)
    cw = np.where(r[:, None] > 0, net.c[:, None] * net.w / safe[:, None], 0.0)  # (m, d)
    K = act @ act.T
    am = mask * net.a
    for k in range(net.d):
        U = am * (X[:, k:k + 1] + cw[:, k][None, :])
        K += U @ U.T
    ar = am * r
    K += ar @ ar.T
    K /= net.m
    return 0.5 * (K + K.T)


def linearized_forward(net0: TwoLayerNet, theta_t, x):
    """First-order expansion of the net around ``net0`` evaluated at ``theta_t``."""
    vec_t = theta_t.to_vector() if isinstance(theta_t, TwoLayerNet) else np.asarray(theta_t, dtype=np.float64)
    vec_0 = net0.to_vector()
    if vec_t.shape != vec_0.shape:
        raise DomainError("parameter shapes differ from the reference net")
    raw = np.asarray(x)
    J = param_jacobian(net0, x)
    out = forward(net0, _as_inputs(x, net0.d)) + J @ (vec_t - vec_0)
    single = raw.ndim == 0 or (raw.ndim == 1 and net0.d > 1)
    return float(out[0]) if single else out


# ---------------------------------------------------------------------------
# generic ReLU MLP
# ---------------------------------------------------------------------------


@dataclass
class MLP:
    """``W[l]`` has shape (in, out); hidden layers use ReLU, the last is linear."""

    weights: list
    biases: list

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise DomainError("need one bias per weight matrix")
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            if b.shape != (W.shape[1],):
                raise DomainError(f"layer {l}: bias shape {b.shape} vs weight {W.shape}")
            if l and W.shape[0] != self.weights[l - 1].shape[1]:
                raise DomainError(f"layer {l}: input width {W.shape[0]} != previous output width")

    @property
    def widths(self) -> list:
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights]

    def copy(self) -> "MLP":
        return MLP([W.copy() for W in self.weights], [b.copy() for b in self.biases])

    def params(self) -> list:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def __call__(self, x):
        X = _as_inputs(x, self.widths[0])
        h = X
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ W + b, 0.0)
        return (h @ self.weights[-1] + self.biases[-1])[:, 0]

    def to_vector(self) -> np.ndarray:
        return np.concatenate([p.reshape(-1) for p in self.params()])


def build_mlp(widths: Sequence[int], rng: np.random.Generator, *, gain: float = 2.0,
              out_gain: float = 1.0) -> MLP:
    """He-style normal initialization, zero biases."""
    widths = [int(v) for v in widths]
    if len(widths) < 2 or widths[-1] != 1 or min(widths) < 1:
        raise DomainError("widths must run from the input dimension to a single output")
    Ws, bs = [], []
    for l in range(len(widths) - 1):
        g = out_gain if l == len(widths) - 2 else gain
        Ws.append(rng.normal(0.0, np.sqrt(g / widths[l]), (widths[l], widths[l + 1])))
        bs.append(np.zeros(widths[l + 1]))
    return MLP(Ws, bs)


def mlp_loss_and_grad(net: MLP, X: np.ndarray, y: np.ndarray):
    n = X.shape[0]
    hs = [X]
    h = X
    for W, b in zip(net.weights[:-1], net.biases[:-1]):
        h = np.maximum(h @ W + b, 0.0)
        hs.append(h)
    out = (h @ net.weights[-1] + net.biases[-1])[:, 0]
    e = out - y
    loss = float(e @ e) / (2 * n)
    delta = (e / n)[:, None]
    grads = [None] * (2 * len(net.weights))
    for l in range(len(net.weights) - 1, -1, -1):
        grads[2 * l] = hs[l].T @ delta
        grads[2 * l + 1] = delta.sum(axis=0)
        if l:
            delta = (delta @ net.weights[l].T) * (hs[l] > 0)
    return loss, grads, out


def _mlp_step(net: MLP, dataset: Dataset, lr: float):
    loss, grads, _ = mlp_loss_and_grad(net, dataset.points, dataset.values)
    new = net.copy()
    for p, g in zip(new.params(), grads):
        p -= lr * g
    return new, loss


def train_mlp(net: MLP, dataset: Dataset, cfg: TrainConfig, *, eval_points=None,
              until: Callable | None = None) -> TrainResult:
    """Same descent loop as :func:`train`, applied to an :class:`MLP`."""
    work = net.copy()
    X, y = dataset.points, dataset.values
    params = work.params()
    X_eval = None if eval_points is None else _as_inputs(eval_points, work.widths[0])

    def grad_fn(_params):
        return mlp_loss_and_grad(work, X, y)

    out = _descent(params, grad_fn, lambda p, Xe: work(Xe), X_eval, cfg, until=until)
    return TrainResult(net=work, **out)
