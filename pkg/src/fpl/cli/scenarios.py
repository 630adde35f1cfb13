"""Experiment pipelines and the scenario runner.

The ``*_experiment`` functions hold the numerics and return plain dicts of
arrays and metrics; :func:`run_scenario` maps a resolved config onto them
and writes CSV/JSON artifacts plus a :class:`RunManifest`.
"""
from __future__ import annotations

import csv
import hashlib
import itertools
import json
import platform
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from fpl.cli.config import ScenarioConfig, config_hash
from fpl.core import Dataset, PowerLaw, RandomSource, build_lattice
from fpl.errors import ConfigError, DomainError, FplError
from fpl.lfp import LatticeKernel, evolve_reduced, reduced_state
from fpl.nn import (InitConfig, TrainConfig, build_mlp, empirical_ntk, forward, init_stats, init_two_layer,
                    probe_stable_lr, train, train_mlp)
from fpl.spectral import (ScalingScenario, convergence_per_frequency, error_vs_n_scaling, generalization_bound,
                          nudft_vectors)
from fpl.splines import CpdKernelSpec, kernel_weights_from_stats, steady_state

__all__ = [
    "RunManifest",
    "StageFailure",
    "compare_predictors",
    "run_scenario",
    "two_tone_experiment",
    "spline_regime_experiment",
    "xor_experiment",
    "parity_experiment",
    "scaling_experiment",
    "target_function",
    "REGIMES",
]

# (sigma_a, sigma_w): (a) gives A >> B, (b) gives B >> A
REGIMES = {"a": (1e-2, 1.0), "b": (10.0, 10.0)}


# ---------------------------------------------------------------------------
# targets and sampling
# ---------------------------------------------------------------------------


def target_function(expr: str, params: dict | None = None) -> Callable:
    """Vectorized ``f(X)`` for ``X`` of shape (N, d)."""
    p = dict(params or {})

    def first(X):
        X = np.asarray(X, dtype=np.float64)
        return X[:, 0] if X.ndim == 2 else X

    if expr == "two_tone":
        k1, k2 = p.get("k1", 1.0), p.get("k2", 5.0)
        return lambda X: np.sin(k1 * first(X)) + np.sin(k2 * first(X))
    if expr == "sin_pi":
        return lambda X: np.sin(np.pi * first(X))
    if expr == "sin":
        k = p.get("k", 1.0)
        return lambda X: np.sin(k * np.sum(np.atleast_2d(np.asarray(X, dtype=np.float64)).reshape(len(X), -1), axis=1))
    if expr == "sin_cos":
        return lambda X: np.sin(first(X)) + 0.5 * np.cos(2 * first(X))
    if expr == "xor":
        return lambda X: np.prod(np.asarray(X, dtype=np.float64)[:, :2], axis=1)
    if expr == "parity":
        return lambda X: np.prod(np.asarray(X, dtype=np.float64), axis=1)
    if expr == "zero":
        return lambda X: np.zeros(len(X))
    raise ConfigError(f"unknown target expression {expr!r}")


def sample_points(kind: str, n: int, d: int, domain, rng: np.random.Generator) -> np.ndarray:
    lo, hi = domain
    if kind == "grid":
        per = round(n ** (1.0 / d))
        if per ** d != n:
            raise ConfigError(f"grid sampling needs n to be a perfect {d}-th power (got {n})")
        axis = np.linspace(lo, hi, per)
        return np.stack(np.meshgrid(*[axis] * d, indexing="ij"), axis=-1).reshape(-1, d)
    if kind == "uniform":
        return rng.uniform(lo, hi, (n, d))
    if kind == "normal":
        return rng.normal(0.0, 1.0, (n, d))
    if kind == "corners":
        if n != 2 ** d:
            raise ConfigError(f"corner sampling gives 2^d = {2 ** d} points, config asks for n = {n}")
        return np.array(list(itertools.product([lo, hi], repeat=d)), dtype=np.float64)
    raise ConfigError(f"unknown sampling kind {kind!r}")


def _ntk_lr(net, X: np.ndarray, scale: float) -> float:
    lam = np.linalg.eigvalsh(empirical_ntk(net, X) / X.shape[0])
    return scale / lam[-1]


def _rel_l2(u, v) -> float:
    return float(np.linalg.norm(u - v) / np.linalg.norm(v))


# ---------------------------------------------------------------------------
# comparisons
# ---------------------------------------------------------------------------


def compare_predictors(grid, predictors) -> dict:
    """Pairwise max/mean absolute difference, relative L2 (against the second
    of each pair), Pearson correlation and the least-squares line
    ``second = slope * first + intercept``.

    ``predictors`` is a mapping or a sequence of ``(name, values-or-callable)``.
    """
    items = list(predictors.items()) if isinstance(predictors, dict) else list(predictors)
    if len(items) < 2:
        raise DomainError("need at least two predictors to compare")
    grid = np.asarray(grid, dtype=np.float64)
    vals = {}
    for name, p in items:
        v = np.asarray(p(grid) if callable(p) else p, dtype=np.float64).reshape(-1)
        if vals and v.shape != next(iter(vals.values())).shape:
            raise DomainError(f"predictor {name!r} is not evaluated on the shared grid")
        vals[name] = v
    rows = []
    names = list(vals)
    for i, j in itertools.combinations(range(len(names)), 2):
        u, v = vals[names[i]], vals[names[j]]
        diff = u - v
        su, sv = np.std(u), np.std(v)
        if su == 0 or sv == 0:
            corr = 1.0 if np.array_equal(u, v) else float("nan")
        else:
            corr = float(np.corrcoef(u, v)[0, 1])
        if su > 0:
            slope, intercept = (float(c) for c in np.polyfit(u, v, 1))
        else:
            slope, intercept = float("nan"), float(np.mean(v - u))
        nv = np.linalg.norm(v)
        rows.append(dict(first=names[i], second=names[j], max_abs=float(np.max(np.abs(diff))),
                         mean_abs=float(np.mean(np.abs(diff))),
                         rel_l2=float(np.linalg.norm(diff) / nv) if nv > 0 else float(np.linalg.norm(diff)),
                         correlation=corr, slope=slope, intercept=intercept))
    return {"rows": rows, "values": vals}


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------


def two_tone_experiment(seed: int, *, m: int = 4096, n: int = 40, domain=(-3.14, 3.14),
                        init=(10.0, 10.0, 1.0), lr_scale: float = 1.0, max_steps: int = 4000,
                        loss_tol: float = 1e-4, stages: Sequence[int] = (0, 300, 4000),
                        grid_points: int = 401, lattice=(20.0, 0.05), params: dict | None = None) -> dict:
    """Two-tone target on a 1-d grid: NN convergence per tone and the LFP
    reduced flow with the measured rate coefficients."""
    f = target_function("two_tone", params)
    x = np.linspace(domain[0], domain[1], n)
    y = f(x[:, None])
    ds = Dataset(x, y)
    k1, k2 = (params or {}).get("k1", 1.0), (params or {}).get("k2", 5.0)
    peaks = [k1 / (2 * np.pi), k2 / (2 * np.pi)]
    net = init_two_layer(m, 1, InitConfig(*init, asi=True, seed=seed))
    A, B = init_stats(net)
    lr = _ntk_lr(net, ds.points, lr_scale)
    grid = np.linspace(domain[0], domain[1], grid_points)
    cfg = TrainConfig(lr=lr, max_steps=max_steps, loss_tol=loss_tol, n_checkpoints=200,
                      checkpoints=tuple(stages))
    res = train(net, ds, cfg, eval_points=grid)
    curves = convergence_per_frequency(res.train_outputs, y, x, [1.0], peaks,
                                       times=res.checkpoint_steps, rescale=False)
    stage_out = {}
    for s in stages:
        hit = np.nonzero(res.checkpoint_steps == min(s, res.steps))[0]
        stage_out[int(min(s, res.steps))] = res.eval_outputs[hit[0]]

    lat = build_lattice(1, *lattice)
    kern = LatticeKernel(PowerLaw(A, B, 1), lat)
    state = reduced_state(ds, kern)
    lam = np.linalg.eigvalsh(state.gram)
    t_end = 20.0 / max(lam[lam > 1e-12 * lam[-1]].min(), 1e-300)
    traj = evolve_reduced(state, t_end, 400, spacing="log")
    lfp_curves = convergence_per_frequency(traj.residuals + y, y, x, [1.0], peaks, times=traj.times, rescale=False)
    return dict(x=x, y=y, grid=grid, target_grid=f(grid[:, None]), stages=stage_out, curves=curves,
                lfp_curves=lfp_curves, tau_nn=curves.tau.tolist(), tau_lfp=lfp_curves.tau.tolist(),
                A=A, B=B, lr=lr, steps=res.steps, final_loss=float(res.losses[-1]), lattice=lat.describe())


def spline_regime_experiment(regime: str, seed: int = 0, *, m: int = 4096, n: int = 6, domain=(-1.0, 1.0),
                             sigma_c: float = 1.0, lr_scale: float = 1.8, max_steps: int = 400_000,
                             loss_tol: float = 1e-6, grid_points: int = 401) -> dict:
    """Train a two-layer net in regime (a) or (b) and compare it with the
    matching spline and with the mixed-kernel steady state."""
    if regime not in REGIMES:
        raise ConfigError(f"regime must be one of {sorted(REGIMES)}")
    sa, sw = REGIMES[regime]
    x = np.linspace(domain[0], domain[1], n)
    y = np.sin(np.pi * x)
    ds = Dataset(x, y)
    grid = np.linspace(domain[0], domain[1], grid_points)
    net = init_two_layer(m, 1, InitConfig(sa, sw, sigma_c, asi=True, seed=seed))
    A, B = init_stats(net)
    lr = _ntk_lr(net, ds.points, lr_scale)
    res = train(net, ds, TrainConfig(lr=lr, max_steps=max_steps, loss_tol=loss_tol))
    f_nn = forward(res.net, grid)
    spline = steady_state(ds, CpdKernelSpec.cubic() if regime == "a" else CpdKernelSpec.linear())(grid)
    f_lfp = steady_state(ds, kernel_weights_from_stats(A, B, 1))(grid)
    t0 = net.to_vector()
    disp = float(np.linalg.norm(res.net.to_vector() - t0) / np.linalg.norm(t0))
    table = compare_predictors(grid, [("nn", f_nn), ("lfp", f_lfp), ("spline", spline)])
    return dict(x=x, y=y, grid=grid, f_nn=f_nn, f_lfp=f_lfp, spline=spline, A=A, B=B, lr=lr, steps=res.steps,
                converged=res.converged, final_loss=float(res.losses[-1]), displacement=disp,
                rel_nn_spline=_rel_l2(f_nn, spline), rel_nn_lfp=_rel_l2(f_nn, f_lfp), table=table["rows"])


def xor_experiment(seed: int = 0, *, m: int = 8192, init=(1.0, 1.0, 1.0), lr_scale: float = 1.0,
                   max_steps: int = 100_000, loss_tol: float = 1e-8, grid_points: int = 101) -> dict:
    """XOR on the four corners of [-1, 1]^2; LFP uses the measured A, B."""
    X = np.array(list(itertools.product([-1.0, 1.0], repeat=2)))
    y = X[:, 0] * X[:, 1]
    ds = Dataset(X, y)
    g = np.linspace(-1, 1, grid_points)
    G = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
    net = init_two_layer(m, 2, InitConfig(*init, asi=True, seed=seed))
    A, B = init_stats(net)
    lr = _ntk_lr(net, X, lr_scale)
    res = train(net, ds, TrainConfig(lr=lr, max_steps=max_steps, loss_tol=loss_tol))
    f_nn = forward(res.net, G)
    f_lfp = steady_state(ds, kernel_weights_from_stats(A, B, 2))(G)
    row = compare_predictors(G, [("nn", f_nn), ("lfp", f_lfp)])["rows"][0]
    return dict(X=X, y=y, axis=g, points=G, f_nn=f_nn, f_lfp=f_lfp, A=A, B=B, lr=lr, steps=res.steps,
                final_loss=float(res.losses[-1]), correlation=row["correlation"], slope=row["slope"],
                intercept=row["intercept"], max_abs=row["max_abs"])


def parity_experiment(seed: int = 0, *, d: int = 10, widths=(10, 500, 500, 1), train_fraction: float = 0.8,
                      lr_start: float = 0.1, max_steps: int = 20_000, k_points: int = 41) -> dict:
    """Parity on the corners of {-1, 1}^d with a random train/test split.

    The step is the largest of ``lr_start / 2^j`` giving 100 monotone steps;
    training stops at the first step where every training sign is right.
    """
    C = np.array(list(itertools.product([-1.0, 1.0], repeat=d)))
    y = np.prod(C, axis=1)
    src = RandomSource(seed)
    perm = src.generator("split").permutation(C.shape[0])
    n_train = int(round(train_fraction * C.shape[0]))
    tr, te = perm[:n_train], perm[n_train:]
    ds = Dataset(C[tr], y[tr])
    net = build_mlp(list(widths), src.generator("mlp"))
    lr = probe_stable_lr(net, ds, lr_start)
    res = train_mlp(net, ds, TrainConfig(lr=lr, max_steps=max_steps),
                    until=lambda out: bool(np.all(np.sign(out) == ds.values)))
    out_all = res.net(C)
    train_acc = float(np.mean(np.sign(out_all[tr]) == y[tr]))
    test_acc = float(np.mean(np.sign(out_all[te]) == y[te]))
    k = np.linspace(-0.5, 0.5, k_points)
    kv = np.full((k_points, d), 0.25)
    kv[:, 0] = k
    return dict(k=k, target_amp=np.abs(nudft_vectors(C, y, kv)), nn_amp=np.abs(nudft_vectors(C, out_all, kv)),
                lr=lr, steps=res.steps, converged=res.converged, final_loss=float(res.losses[-1]),
                train_accuracy=train_acc, test_accuracy=test_acc)


def scaling_experiment(seed: int = 0, *, A: float = 1.0, B: float = 10.0, n_list=(8, 16, 32, 64, 128),
                       trials: int = 20, eval_range=(-8.0, 8.0), grid_points: int = 8001,
                       C_gamma: float = 1.0, bootstrap: int = 500) -> dict:
    """Mixed-kernel steady state on ``sin(x) + cos(2x)/2`` with standard
    normal inputs; the error is weighted by the input density."""
    from scipy.stats import norm

    f = target_function("sin_cos")
    grid = np.linspace(eval_range[0], eval_range[1], grid_points)
    scen = ScalingScenario(target=lambda p: f(np.asarray(p).reshape(-1, 1)),
                           sampler=lambda rng, n: rng.normal(0.0, 1.0, n),
                           kernel=kernel_weights_from_stats(A, B, 1), eval_points=grid,
                           eval_weights=norm.pdf(grid), C_gamma=C_gamma)
    rep = error_vs_n_scaling(scen, list(n_list), trials, rng=RandomSource(seed).generator("scaling"),
                             bootstrap=bootstrap)
    bounds = [generalization_bound(1.0, n, 0.05, C_gamma).bound for n in n_list]
    return dict(report=rep, bound_per_unit_energy=bounds)


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    return repr(float(v))


def write_table(path: Path, columns: dict) -> None:
    names = list(columns)
    cols = [np.asarray(columns[k]).reshape(-1) for k in names]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in zip(*cols):
            w.writerow([_fmt(v) for v in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path: Path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _versions() -> dict:
    import matplotlib
    import pydantic
    import scipy

    import fpl

    return {"fpl": getattr(fpl, "__version__", "0"), "numpy": np.__version__, "scipy": scipy.__version__,
            "matplotlib": matplotlib.__version__, "pydantic": pydantic.__version__,
            "python": platform.python_version()}


@dataclass
class RunManifest:
    scenario: str
    label: str
    config_hash: str
    seed: int
    out_dir: str
    versions: dict = field(default_factory=dict)
    wall_clock_s: float = 0.0
    files: list = field(default_factory=list)
    plots: list = field(default_factory=list)
    status: str = "running"
    failed_stage: str | None = None
    error: str | None = None

    def add(self, path: Path) -> None:
        rel = str(Path(path).relative_to(self.out_dir))
        self.files = [f for f in self.files if f["path"] != rel]
        self.files.append({"path": rel, "sha256": sha256_file(Path(path))})

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def write(self) -> Path:
        """Write ``manifest.json``; it lists itself without a digest."""
        path = Path(self.out_dir) / "manifest.json"
        self.files = [f for f in self.files if f["path"] != "manifest.json"]
        self.files.append({"path": "manifest.json", "sha256": None})
        path.write_text(self.to_json() + "\n")
        return path

    @classmethod
    def read(cls, path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text()))


class StageFailure(FplError):
    """A pipeline stage raised; carries the stage name and partial manifest."""

    def __init__(self, stage: str, manifest: RunManifest, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.manifest = manifest
        self.cause = cause


@contextmanager
def _stage(manifest: RunManifest, name: str):
    try:
        yield
    except StageFailure:
        raise
    except Exception as exc:
        manifest.status = "failed"
        manifest.failed_stage = name
        manifest.error = f"{type(exc).__name__}: {exc}"
        manifest.write()
        raise StageFailure(name, manifest, exc) from exc


# ---------------------------------------------------------------------------
# scenario bodies: each writes its artifacts and returns plot requests
# ---------------------------------------------------------------------------


def _run_fig1(cfg: ScenarioConfig, out: Path, man: RunManifest, stage) -> list:
    md, sp = cfg.model, cfg.sampling
    lat = (cfg.solver.xi_max or 20.0, cfg.solver.dxi or 0.05)
    with stage("train"):
        r = two_tone_experiment(sp.seed, m=md.m, n=sp.n, domain=sp.domain,
                                init=(md.sigma_a, md.sigma_w, md.sigma_c), lr_scale=md.lr_scale,
                                max_steps=md.max_steps, loss_tol=md.loss_tol, stages=cfg.output.stages,
                                grid_points=cfg.output.grid_points, lattice=lat, params=cfg.target.params)
    with stage("emit"):
        write_table(out / "data.csv", {"x": r["x"], "y": r["y"]})
        cols = {"x": r["grid"], "target": r["target_grid"]}
        for s, v in r["stages"].items():
            cols[f"nn_t{s}"] = v
        write_table(out / "stages.csv", cols)
        r["curves"].to_csv(out / "convergence_nn.csv")
        r["lfp_curves"].to_csv(out / "convergence_lfp.csv")
        write_json(out / "results.json", {k: r[k] for k in ("tau_nn", "tau_lfp", "A", "B", "lr", "steps",
                                                             "final_loss", "lattice")}
                   | {"peaks_cycles": r["curves"].peaks, "threshold": r["curves"].threshold})
    stage_names = [c for c in cols if c.startswith("nn_t")]
    delta_names = [f"delta_k{float(k)!r}" for k in r["curves"].peaks]
    return [
        dict(kind="overlay", csv="stages.csv", x="x", series=["target"] + stage_names, file="stages.svg",
             points="data.csv", title="two-tone fit at three training stages"),
        dict(kind="overlay", csv="convergence_nn.csv", x="t", series=delta_names, file="convergence_nn.svg",
             logy=True, title="relative spectral error per tone (NN)"),
        dict(kind="overlay", csv="convergence_lfp.csv", x="t", series=delta_names, file="convergence_lfp.svg",
             logx=True, logy=True, title="relative spectral error per tone (LFP)"),
    ]


def _run_fig3(cfg: ScenarioConfig, out: Path, man: RunManifest, stage) -> list:
    md, sp = cfg.model, cfg.sampling
    summary, plots = {}, []
    for regime in ("a", "b"):
        with stage(f"train_{regime}"):
            r = spline_regime_experiment(regime, sp.seed, m=md.m, n=sp.n, domain=sp.domain, sigma_c=md.sigma_c,
                                         lr_scale=md.lr_scale, max_steps=md.max_steps, loss_tol=md.loss_tol,
                                         grid_points=cfg.output.grid_points)
        with stage(f"emit_{regime}"):
            write_table(out / f"data_{regime}.csv", {"x": r["x"], "y": r["y"]})
            write_table(out / f"fig3_{regime}.csv", {"x": r["grid"], "nn": r["f_nn"], "lfp": r["f_lfp"],
                                                      "spline": r["spline"]})
        summary[regime] = {k: r[k] for k in ("A", "B", "lr", "steps", "converged", "final_loss", "displacement",
                                             "rel_nn_spline", "rel_nn_lfp", "table")}
        plots.append(dict(kind="overlay", csv=f"fig3_{regime}.csv", x="x", series=["nn", "lfp", "spline"],
                          file=f"fig3_{regime}.svg", points=f"data_{regime}.csv",
                          title=f"regime ({regime}): NN vs LFP vs {'cubic' if regime == 'a' else 'linear'} spline"))
    with stage("emit"):
        write_json(out / "results.json", {"m": md.m, "regimes": summary})
    return plots


def _run_fig4(cfg: ScenarioConfig, out: Path, man: RunManifest, stage) -> list:
    md = cfg.model
    with stage("train"):
        r = xor_experiment(cfg.sampling.seed, m=md.m, init=(md.sigma_a, md.sigma_w, md.sigma_c),
                           lr_scale=md.lr_scale, max_steps=md.max_steps, loss_tol=md.loss_tol,
                           grid_points=cfg.output.grid_points)
    with stage("emit"):
        write_table(out / "data.csv", {"x0": r["X"][:, 0], "x1": r["X"][:, 1], "y": r["y"]})
        write_table(out / "heatmap.csv", {"x0": r["points"][:, 0], "x1": r["points"][:, 1], "nn": r["f_nn"],
                                          "lfp": r["f_lfp"]})
        write_json(out / "results.json", {k: r[k] for k in ("A", "B", "lr", "steps", "final_loss", "correlation",
                                                            "slope", "intercept", "max_abs")} | {"m": md.m})
    return [
        dict(kind="heatmap", csv="heatmap.csv", x="x0", y="x1", value="nn", file="heatmap_nn.svg",
             points="data.csv", title="f_NN over [-1,1]^2"),
        dict(kind="scatter", csv="heatmap.csv", x="nn", series=["lfp"], file="scatter.svg", identity=True,
             title="f_LFP vs f_NN"),
    ]


def _run_parity(cfg: ScenarioConfig, out: Path, man: RunManifest, stage) -> list:
    md, sp = cfg.model, cfg.sampling
    if md.widths[0] != sp.d:
        raise ConfigError(f"MLP input width {md.widths[0]} != parity dimension {sp.d}")
    with stage("train"):
        r = parity_experiment(sp.seed, d=sp.d, widths=md.widths, train_fraction=sp.train_fraction,
                              lr_start=md.lr, max_steps=md.max_steps, k_points=cfg.output.grid_points)
    with stage("emit"):
        write_table(out / "spectrum.csv", {"k": r["k"], "target": r["target_amp"], "nn": r["nn_amp"]})
        write_json(out / "results.json", {k: r[k] for k in ("lr", "steps", "converged", "final_loss",
                                                            "train_accuracy", "test_accuracy")})
    return [dict(kind="overlay", csv="spectrum.csv", x="k", series=["target", "nn"], file="spectrum.svg",
                 title="|F(k)| along axis 0, other axes at k = 1/4")]


def _run_scaling(cfg: ScenarioConfig, out: Path, man: RunManifest, stage) -> list:
    sol, o = cfg.solver, cfg.output
    if sol.gamma_source != "explicit":
        raise ConfigError("scaling_law needs explicit A, B (there is no network to measure)")
    with stage("solve"):
        r = scaling_experiment(cfg.sampling.seed, A=sol.A, B=sol.B, n_list=o.n_list, trials=o.trials,
                               eval_range=cfg.sampling.domain, grid_points=o.grid_points)
    rep = r["report"]
    with stage("emit"):
        write_table(out / "scaling.csv", {"n": rep.n_list, "mean_mse": rep.mean_errors,
                                          "bound_per_unit_energy": r["bound_per_unit_energy"]})
        write_json(out / "results.json", json.loads(rep.to_json()) | {"A": sol.A, "B": sol.B})
    return [dict(kind="overlay", csv="scaling.csv", x="n", series=["mean_mse"], file="scaling.svg",
                 logx=True, logy=True, markers=True, title="mean-square error vs n")]


def _run_custom(cfg: ScenarioConfig, out: Path, man: RunManifest, stage) -> list:
    md, sp, sol = cfg.model, cfg.sampling, cfg.solver
    with stage("sample"):
        if cfg.target.path is not None:
            ds = Dataset.from_csv(cfg.target.path)
        else:
            rng = RandomSource(sp.seed).generator("custom", "sample")
            pts = sample_points(sp.kind, sp.n, sp.d, sp.domain, rng)
            ds = Dataset(pts, target_function(cfg.target.expr, cfg.target.params)(pts))
    d = ds.d
    if d > 3:
        raise ConfigError("custom scenarios support d <= 3 (mixed-kernel weights are verified up to d = 3)")
    with stage("model"):
        net = None
        if md.kind == "two_layer" or sol.gamma_source == "measured":
            net = init_two_layer(md.m, d, InitConfig(md.sigma_a, md.sigma_w, md.sigma_c, md.asi, sp.seed))
        A, B = (sol.A, sol.B) if sol.gamma_source == "explicit" else init_stats(net)
        h = steady_state(ds, kernel_weights_from_stats(A, B, d))
    lo = ds.points.min(axis=0)
    hi = ds.points.max(axis=0)
    if d == 1:
        evalp = np.linspace(lo[0], hi[0], cfg.output.grid_points)[:, None]
    elif d == 2:
        per = min(cfg.output.grid_points, 101)
        axes = [np.linspace(lo[j], hi[j], per) for j in range(2)]
        evalp = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 2)
    else:
        evalp = ds.points
    cols = {f"x{j}": evalp[:, j] for j in range(d)}
    cols["lfp"] = h(evalp)
    results = {"A": A, "B": B, "n": ds.n, "d": d, "gamma_source": sol.gamma_source}
    if md.kind == "two_layer":
        with stage("train"):
            lr = md.lr or _ntk_lr(net, ds.points, md.lr_scale)
            res = train(net, ds, TrainConfig(lr=lr, max_steps=md.max_steps, loss_tol=md.loss_tol))
        cols["nn"] = forward(res.net, evalp)
        results |= {"lr": lr, "steps": res.steps, "final_loss": float(res.losses[-1]),
                    "comparison": compare_predictors(evalp, [("nn", cols["nn"]), ("lfp", cols["lfp"])])["rows"]}
    with stage("emit"):
        ds.to_csv(out / "data.csv")
        write_table(out / "predictions.csv", cols)
        write_json(out / "results.json", results)
    if d != 1:
        return []
    return [dict(kind="overlay", csv="predictions.csv", x="x0", series=[c for c in ("lfp", "nn") if c in cols],
                 file="predictions.svg", points="data.csv", title="custom scenario predictions")]


_RUNNERS = {"fig1_two_tone": _run_fig1, "fig3_splines": _run_fig3, "fig4_xor": _run_fig4,
            "parity": _run_parity, "scaling_law": _run_scaling, "custom": _run_custom}


def run_scenario(cfg: ScenarioConfig, out_dir, *, plots: bool = True) -> RunManifest:
    """Run a resolved scenario config into ``out_dir``.

    Raises :class:`StageFailure` (with a partial manifest on disk) when a
    stage fails; configuration problems found mid-run surface as a
    ``ConfigError`` cause.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    man = RunManifest(scenario=cfg.scenario, label=cfg.label, config_hash=config_hash(cfg),
                      seed=cfg.sampling.seed, out_dir=str(out), versions=_versions())
    start = time.perf_counter()
    stage = lambda name: _stage(man, name)
    with stage("config"):
        write_json(out / "config.json", cfg.model_dump(mode="json"))
    with stage("run"):
        requests = _RUNNERS[cfg.scenario](cfg, out, man, stage)
    man.plots = requests
    if plots:
        from fpl.cli.plots import emit_plots

        with stage("plots"):
            emit_plots(man)
    for p in sorted(out.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            man.add(p)
    man.wall_clock_s = round(time.perf_counter() - start, 3)
    man.status = "ok"
    man.write()
    return man
