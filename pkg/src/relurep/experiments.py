"""Reproducible experiments behind the command-line interface.

Each ``run_*`` function takes a config dataclass and an output directory,
writes its CSV/JSON/SVG artefacts there and returns a result object with a
``passed`` flag for the experiment's thresholds. Nothing outside the output
directory is touched, and every random draw comes from the config seed.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import MISSING, asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import baselines, oracle, svg
from . import net as nn
from . import train as tr
from .pfunc import network_cost, stack_cost, write_breakdowns_csv
from .tasks import (
    Dataset,
    coupling_truth,
    gen_coupling_pair,
    gen_periodic7,
    load_csv,
    periodic7_truth,
    save_csv,
)


class ConfigError(ValueError):
    """Bad or unknown configuration keys."""


# -- config plumbing ----------------------------------------------------------


def _convert(name: str, default, raw):
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            if not text:
                return ()
            parts = [p.strip() for p in text.split(",")]
            if default:
                return tuple(type(default[0])(p) for p in parts)
            try:
                return tuple(int(p) for p in parts)
            except ValueError:
                return tuple(parts)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None
    return text


def make_config(cls, values: dict):
    """Build ``cls`` from string or typed values; unknown keys are rejected."""
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError(f"unknown config key(s) for {cls.__name__}: {', '.join(unknown)}")
    kwargs = {}
    for key, raw in values.items():
        f = known[key]
        default = None if f.default is MISSING else f.default
        kwargs[key] = _convert(key, default, raw)
    try:
        cfg = cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    for f in fields(cls):
        rule = _RANGES.get(f.name)
        if rule is not None and not rule[0](getattr(cfg, f.name)):
            raise ConfigError(f"{f.name} must be {rule[1]}, got {getattr(cfg, f.name)!r}")
    return cfg


def _positive(v):
    return all(x > 0 for x in v) if isinstance(v, tuple) else v > 0


def _non_negative(v):
    return v >= 0


# checked by name on every config, before anything runs
_RANGES = {name: (_positive, "positive") for name in (
    "lam", "tol", "grad_norm_tol", "restarts", "width", "widths", "hidden", "resolution",
    "eval_points", "plot_points", "rf_features", "d_out", "dims", "bottlenecks",
)}
_RANGES.update({name: (_non_negative, "non-negative") for name in (
    "adam_iters", "max_iters", "tails", "margin", "eval_margin", "noise_sd", "N", "init_scale",
    "objective_tol", "cost_tol", "sup_tol", "kink_tol",
)})


def read_config_file(path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        values[key.replace("-", "_")] = val
    return values


# -- shared helpers -----------------------------------------------------------


def _out(out_dir) -> Path:
    p = Path(out_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (set, tuple)):
        return list(v)
    raise TypeError(f"cannot serialise {type(v)}")


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _curve_csv(path: Path, xs, Y) -> None:
    Y = np.atleast_2d(np.asarray(Y, dtype=float).T).T
    _write_rows(path, ["x"] + [f"y_{k + 1}" for k in range(Y.shape[1])],
                [[float(a)] + [float(v) for v in row] for a, row in zip(xs, Y)])


def _eval_grid(data: Dataset, margin: float, count: int) -> np.ndarray:
    x = data.X[:, 0]
    return np.linspace(x.min() - margin, x.max() + margin, count)


def _parse_arch(dims, widths, skips, activation) -> nn.Architecture:
    return nn.Architecture(tuple(dims), tuple(widths), inner_activation=activation,
                           skips=tuple(skips) if skips else None)


# -- data generation ----------------------------------------------------------


def theorem_instance(seed: int = 0, N: int = 8, noise_sd: float = 0.1) -> Dataset:
    """Stratified random inputs on [-2, 2] and two smooth, differently shaped targets."""
    rng = np.random.default_rng(seed)
    x = -2.0 + (np.arange(N) + rng.uniform(0.0, 1.0, N)) * 4.0 / N
    Y = np.stack([np.sin(1.5 * x), np.abs(x) - 1.0], axis=1)
    Y = Y + noise_sd * rng.standard_normal((N, 2))
    return Dataset(x[:, None], Y)


def sweep_instance(seed: int = 0, N: int = 6, d_out: int = 8) -> Dataset:
    """Few inputs with many sinusoidal outputs, so a narrow bottleneck binds."""
    rng = np.random.default_rng(seed)
    x = np.sort(rng.uniform(-2.0, 2.0, N))
    freq = rng.uniform(0.5, 2.0, d_out)
    phase = rng.uniform(0.0, 2 * np.pi, d_out)
    return Dataset(x[:, None], np.sin(np.outer(x, freq) + phase))


def toy_instance() -> Dataset:
    """A single sample (0, 1)."""
    return Dataset(np.zeros((1, 1)), np.ones((1, 1)))


GENERATORS = ("theorem", "coupling", "periodic7", "sweep", "toy")


def generate(name: str, seed: int = 0, N: int | None = None) -> Dataset:
    if name == "theorem":
        return theorem_instance(seed, N or 8)
    if name == "coupling":
        return gen_coupling_pair(seed)
    if name == "periodic7":
        return gen_periodic7(N or 60, seed=seed)
    if name == "sweep":
        return sweep_instance(seed, N or 6)
    if name == "toy":
        return toy_instance()
    raise ConfigError(f"unknown generator {name!r}; choose from {', '.join(GENERATORS)}")


def load_data(data: str, seed: int, N: int | None = None) -> Dataset:
    """A generator name or a CSV path."""
    if data in GENERATORS:
        return generate(data, seed, N)
    return load_csv(data)


# -- gen-data -----------------------------------------------------------------


@dataclass(frozen=True)
class GenDataConfig:
    generator: str = "theorem"
    seed: int = 0
    N: int = 0  # 0 = generator default
    filename: str = "data.csv"


def run_gen_data(cfg: GenDataConfig, out_dir) -> Path:
    out = _out(out_dir)
    data = generate(cfg.generator, cfg.seed, cfg.N or None)
    path = out / cfg.filename
    save_csv(data, path)
    return path


# -- train --------------------------------------------------------------------


class NarrowNetworkError(ConfigError):
    pass


@dataclass(frozen=True)
class TrainCommandConfig:
    data: str = "theorem"
    seed: int = 0
    lam: float = 1e-2
    dims: tuple = ()  # default: (d_in, d_out) of the data, one stack
    widths: tuple = (64,)
    skips: tuple = ()
    activation: str = "identity"
    restarts: int = 5
    adam_iters: int = 10_000
    max_iters: int = 20_000
    grad_norm_tol: float = 1e-6
    init_scale: float = 1.0
    allow_narrow: bool = False
    eval_points: int = 401
    eval_margin: float = 1.0


@dataclass
class TrainResult:
    net: nn.NetworkParams
    arch: nn.Architecture
    report: tr.TrainReport
    passed: bool = True


def run_train(cfg: TrainCommandConfig, out_dir) -> TrainResult:
    """Train, then write the report, parameters and prediction curves.

    Files: ``train_report.csv`` (iteration, phase, objective, grad_norm),
    ``train_summary.json``, ``params.txt``, ``cost_breakdown.csv``,
    ``predictions.csv`` (x, y_1..y_d over a dense grid) and ``predictions.svg``.
    """
    data = load_data(cfg.data, cfg.seed)
    dims = cfg.dims or (data.d_in, data.d_out)
    arch = _parse_arch(dims, cfg.widths, cfg.skips, cfg.activation)
    if arch.d_in != data.d_in or arch.d_out != data.d_out:
        raise ConfigError(
            f"architecture maps {arch.d_in} -> {arch.d_out} but data has "
            f"{data.d_in} inputs and {data.d_out} outputs"
        )
    narrow = [n for n in arch.widths if n <= data.n]
    if narrow and not cfg.allow_narrow:
        raise NarrowNetworkError(
            f"widths {narrow} do not exceed N = {data.n}; pass allow_narrow to train anyway"
        )
    tcfg = tr.TrainConfig(
        lam=cfg.lam, restarts=cfg.restarts, adam_iters=cfg.adam_iters, max_iters=cfg.max_iters,
        grad_norm_tol=cfg.grad_norm_tol, init_scale=cfg.init_scale, seed=cfg.seed,
    )
    net, report = tr.train(arch, data, tcfg)
    out = _out(out_dir)
    report.write_csv(out / "train_report.csv")
    report.write_summary(out / "train_summary.json")
    (out / "params.txt").write_text(nn.dumps(net, arch))
    write_breakdowns_csv([stack_cost(s) for s in net], out / "cost_breakdown.csv")
    if data.d_in == 1:
        xs = _eval_grid(data, cfg.eval_margin, cfg.eval_points)
        pred = nn.forward(net, arch, xs[:, None])
        _curve_csv(out / "predictions.csv", xs, pred)
        series = []
        for k in range(data.d_out):
            series.append(svg.Series(xs, pred[:, k], label=f"output {k + 1}"))
            obs = data.mask[:, k]
            series.append(svg.Series(data.X[obs, 0], data.Y[obs, k], style="points", color="#000000"))
        svg.emit_svg(series, out / "predictions.svg", title="trained network")
    return TrainResult(net, arch, report)


# -- oracle -------------------------------------------------------------------


@dataclass(frozen=True)
class OracleCommandConfig:
    data: str = "theorem"
    seed: int = 0
    lam: float = 1e-2
    resolution: int = 512
    margin: float = 1.0
    tails: int = 16
    kind: str = "bias_reg"
    separate: bool = False
    tol: float = 1e-7
    max_iters: int = 500_000
    eval_points: int = 401


@dataclass
class OracleResult:
    solutions: list
    passed: bool


def run_oracle(cfg: OracleCommandConfig, out_dir) -> OracleResult:
    """Solve the grid group lasso (or one lasso per output).

    Files: ``atoms.csv`` (s, xi, rho, W_1..W_d for active atoms),
    ``oracle_summary.json``, ``predictions.csv`` and ``predictions.svg``.
    With ``separate`` the files get a ``_task<k>`` suffix.
    """
    data = load_data(cfg.data, cfg.seed)
    grid = oracle.build_grid(data, cfg.resolution, cfg.margin, kind=cfg.kind, tails=cfg.tails)
    scfg = oracle.SolverConfig(tol=cfg.tol, max_iters=cfg.max_iters)
    if cfg.separate:
        sols = oracle.solve_separate(data, cfg.lam, grid, scfg)
        suffixes = [f"_task{k + 1}" for k in range(len(sols))]
    else:
        sols = [oracle.solve_group_lasso(data, cfg.lam, grid, scfg)]
        suffixes = [""]
    out = _out(out_dir)
    xs = _eval_grid(data, cfg.margin, cfg.eval_points)
    for sol, sfx in zip(sols, suffixes):
        sol.write_csv(out / f"atoms{sfx}.csv", act_tol=oracle.ACT_TOL)
        sol.write_summary(out / f"oracle_summary{sfx}.json")
        pred = oracle.predict(sol, xs)
        _curve_csv(out / f"predictions{sfx}.csv", xs, pred)
        svg.emit_svg(
            [svg.Series(xs, pred[:, k], label=f"output {k + 1}") for k in range(sol.d_out)],
            out / f"predictions{sfx}.svg", title="grid oracle",
        )
    return OracleResult(sols, all(s.converged for s in sols))


# -- theorem check ------------------------------------------------------------


@dataclass(frozen=True)
class TheoremCheckConfig:
    seed: int = 0
    N: int = 8
    lam: float = 1e-2
    width: int = 64
    restarts: int = 5
    resolution: int = 512
    margin: float = 1.0
    tails: int = 16
    eval_points: int = 401
    objective_tol: float = 0.02
    cost_tol: float = 0.05
    sup_tol: float = 0.05  # times the target standard deviation


@dataclass
class TheoremCheckResult:
    trained_objective: float
    oracle_objective: float
    objective_gap: float
    network_cost: float
    oracle_penalty: float
    cost_gap: float
    sup_distance: float
    set_distance: float
    sup_threshold: float
    oracle_kkt: float
    seconds: float
    passed: bool
    checks: dict = field(default_factory=dict)

    def table(self) -> list[tuple[str, float]]:
        return [(k, v) for k, v in asdict(self).items() if k != "checks"]


def run_theorem_check(cfg: TheoremCheckConfig, out_dir) -> TheoremCheckResult:
    """Train a wide one-stack network and compare it with the grid oracle.

    Files: ``theorem_check.csv`` (quantity, value), ``theorem_check.json``,
    ``predictions.csv`` (x, net_1, net_2, oracle_1, oracle_2), a plot and the
    trained parameters. ``set_distance`` is the sup-norm distance to the
    nearest oracle minimiser, which differs from ``sup_distance`` only when
    the grid problem has several minimisers.
    """
    t0 = time.perf_counter()
    data = theorem_instance(cfg.seed, cfg.N)
    arch = nn.Architecture((1, data.d_out), (cfg.width,))
    tcfg = tr.TrainConfig(lam=cfg.lam, restarts=cfg.restarts, seed=cfg.seed)
    net, report = tr.train(arch, data, tcfg)

    grid = oracle.build_grid(data, cfg.resolution, cfg.margin, tails=cfg.tails)
    sol = oracle.solve_group_lasso(data, cfg.lam, grid)

    xs = _eval_grid(data, cfg.margin, cfg.eval_points)
    f_net = nn.forward(net, arch, xs[:, None])
    f_orc = oracle.predict(sol, xs)
    sup = float(np.max(np.abs(f_net - f_orc)))
    set_dist, _ = oracle.minimizer_set_distance(sol, data, xs, f_net)
    threshold = cfg.sup_tol * float(np.std(data.Y))

    obj_gap = abs(report.final_objective - sol.objective) / sol.objective
    cost = network_cost(net, arch)
    cost_gap = abs(cost - sol.penalty) / sol.penalty
    checks = {
        "objective_gap": obj_gap <= cfg.objective_tol,
        "cost_gap": cost_gap <= cfg.cost_tol,
        "sup_distance": sup <= threshold,
    }
    res = TheoremCheckResult(
        trained_objective=report.final_objective, oracle_objective=sol.objective,
        objective_gap=obj_gap, network_cost=cost, oracle_penalty=sol.penalty,
        cost_gap=cost_gap, sup_distance=sup, set_distance=set_dist,
        sup_threshold=threshold, oracle_kkt=sol.kkt_residual,
        seconds=time.perf_counter() - t0, passed=all(checks.values()), checks=checks,
    )

    out = _out(out_dir)
    _write_rows(out / "theorem_check.csv", ["quantity", "value"], res.table())
    _write_json(out / "theorem_check.json", asdict(res))
    _curve_csv(out / "predictions.csv", xs, np.hstack([f_net, f_orc]))
    (out / "params.txt").write_text(nn.dumps(net, arch))
    report.write_csv(out / "train_report.csv")
    series = []
    for k in range(data.d_out):
        series.append(svg.Series(xs, f_net[:, k], label=f"network {k + 1}"))
        series.append(svg.Series(xs, f_orc[:, k], label=f"oracle {k + 1}"))
    series.append(svg.Series(np.repeat(data.X[:, 0], 2), data.Y.ravel(), style="points",
                             color="#000000", label="data"))
    svg.emit_svg(series, out / "predictions.svg", title="trained network vs grid oracle")
    return res


# -- multi-task demo ----------------------------------------------------------


@dataclass(frozen=True)
class MultitaskConfig:
    seed: int = 0
    lam: float = 0.1
    resolution: int = 256
    margin: float = 1.0
    tails: int = 16
    rf_features: int = 200
    eval_points: int = 401
    train_nets: bool = True
    width: int = 64
    restarts: int = 1
    adam_iters: int = 5_000
    max_iters: int = 5_000
    kink_tol: float = 1e-3


@dataclass
class MultitaskResult:
    mse: dict  # model -> list of held-out MSE per task
    baseline_max_diff: float
    joint_kinks: list
    separate_kinks: list
    kinks_differ: bool
    joint_beats_separate: bool
    joint_kink_sets_equal: bool
    seconds: float
    passed: bool


def _kink_set(sol: oracle.OracleSolution, task: int) -> set:
    return sol.active_kinks(task)


def _net_kinks(net: nn.NetworkParams, task: int, tol: float) -> list[float]:
    view = nn.kinks(net[0])
    mag = np.abs(net[0].w[task]) * view.v_norm
    keep = (~view.degenerate) & (mag > tol)
    return sorted(float(p) for p in view.position[keep, 0])


def run_multitask_demo(cfg: MultitaskConfig, out_dir) -> MultitaskResult:
    """Joint and separate fits on the coupling pair; held-out error on task 2.

    Files: ``heldout_mse.csv`` (model, task, mse), ``kinks.csv`` (model,
    task, s, xi), ``multitask_summary.json`` and ``kinks.svg`` (kink
    positions per model and task).
    """
    t0 = time.perf_counter()
    data = gen_coupling_pair(cfg.seed)
    xs = np.linspace(data.X[:, 0].min(), data.X[:, 0].max(), cfg.eval_points)
    truth = coupling_truth(xs)

    def mse(pred, k):
        return float(np.mean((pred - truth[:, k]) ** 2))

    grid = oracle.build_grid(data, cfg.resolution, cfg.margin, tails=cfg.tails)
    joint = oracle.solve_group_lasso(data, cfg.lam, grid)
    sep = oracle.solve_separate(data, cfg.lam, grid)
    pj = oracle.predict(joint, xs)
    results = {
        "oracle_joint": [mse(pj[:, k], k) for k in range(2)],
        "oracle_separate": [mse(oracle.predict(sep[k], xs)[:, 0], k) for k in range(2)],
    }

    rf = baselines.fit_random_features(data, cfg.lam, cfg.rf_features, cfg.seed)
    rf_sep = baselines.fit_random_features_separate(data, cfg.lam, cfg.rf_features, cfg.seed)
    rf_sep_w = np.vstack([m.W for m in rf_sep])
    rf_sep_c = np.concatenate([m.c for m in rf_sep])
    base_diff = float(max(np.max(np.abs(rf.W - rf_sep_w)), np.max(np.abs(rf.c - rf_sep_c))))
    pr = baselines.baseline_predict(rf, xs[:, None])
    results["random_features"] = [mse(pr[:, k], k) for k in range(2)]

    kink_rows = []
    for k in range(2):
        for s, xi in sorted(_kink_set(joint, k)):
            kink_rows.append(("oracle_joint", k + 1, s, xi))
        for s, xi in sorted(_kink_set(sep[k], 0)):
            kink_rows.append(("oracle_separate", k + 1, s, xi))

    if cfg.train_nets:
        tcfg = tr.TrainConfig(lam=cfg.lam, restarts=cfg.restarts, adam_iters=cfg.adam_iters,
                              max_iters=cfg.max_iters, seed=cfg.seed)
        arch = nn.Architecture((1, 2), (cfg.width,))
        jnet, _ = tr.train(arch, data, tcfg)
        pn = nn.forward(jnet, arch, xs[:, None])
        results["net_joint"] = [mse(pn[:, k], k) for k in range(2)]
        a1 = nn.Architecture((1, 1), (cfg.width,))
        sep_mse = []
        for k in range(2):
            snet, _ = tr.train(a1, data.column(k), tcfg)
            sep_mse.append(mse(nn.forward(snet, a1, xs[:, None])[:, 0], k))
            for xi in _net_kinks(snet, 0, cfg.kink_tol):
                kink_rows.append(("net_separate", k + 1, 0, xi))
            for xi in _net_kinks(jnet, k, cfg.kink_tol):
                kink_rows.append(("net_joint", k + 1, 0, xi))
        results["net_separate"] = sep_mse

    j1, j2 = _kink_set(joint, 0), _kink_set(joint, 1)
    s2 = _kink_set(sep[1], 0)
    kinks_differ = _kink_set(joint, 1) != s2
    beats = results["oracle_joint"][1] < results["oracle_separate"][1]
    res = MultitaskResult(
        mse=results, baseline_max_diff=base_diff,
        joint_kinks=sorted(j2), separate_kinks=sorted(s2),
        kinks_differ=kinks_differ, joint_beats_separate=beats,
        joint_kink_sets_equal=j1 == j2, seconds=time.perf_counter() - t0,
        passed=bool(base_diff <= 1e-10 and kinks_differ and beats),
    )

    out = _out(out_dir)
    _write_rows(out / "heldout_mse.csv", ["model", "task", "mse"],
                [(m, k + 1, v) for m, vals in results.items() for k, v in enumerate(vals)])
    _write_rows(out / "kinks.csv", ["model", "task", "s", "xi"], kink_rows)
    _write_json(out / "multitask_summary.json", asdict(res))
    models = sorted({r[0] for r in kink_rows})
    series = []
    for i, m in enumerate(models):
        pts = [(r[3], r[1] + 0.1 * i) for r in kink_rows if r[0] == m]
        xs_k = [p[0] for p in pts]
        ys_k = [p[1] for p in pts]
        series.append(svg.Series(xs_k, ys_k, style="points", label=m))
    svg.emit_svg(series, out / "kinks.svg", title="kink positions by task",
                 xlabel="kink position", ylabel="task (offset by model)")
    return res


# -- periodic tasks -----------------------------------------------------------


@dataclass(frozen=True)
class PeriodicTasksConfig:
    seeds: tuple = (0, 1, 2)
    N: int = 60
    noise_sd: float = 0.05
    lam: float = 1e-3
    width: int = 128
    restarts: int = 3
    adam_iters: int = 5_000
    max_iters: int = 2_000
    eval_points: int = 601
    plot_points: int = 401


@dataclass
class PeriodicTasksResult:
    joint_mse: list  # per seed, mean over tasks
    separate_mse: list
    per_task: list  # rows (seed, task, joint, separate)
    plots: list
    seconds: float
    passed: bool


def periodic_architecture(d_out: int, width: int) -> nn.Architecture:
    """Three stacks with scalar bottlenecks, identity in between, two-layer linear paths."""
    return nn.Architecture(
        (1, 1, 1, d_out), (width,) * 3, inner_activation="identity",
        skips=("factored_linear",) * 3,
    )


def _stack_plots(net, arch, data: Dataset, out: Path, n_pts: int) -> list[Path]:
    x = data.X[:, 0]
    xs = np.linspace(x.min(), x.max(), n_pts)
    h1, h2, f = nn.stack_outputs(net, arch, xs[:, None])
    paths = []
    paths.append(svg.emit_svg(
        [svg.Series(xs, h1[:, 0], label="stack 1", color="#2ca02c")],
        out / "stack1.svg", title="first stack", xlabel="x", ylabel="NN1(x)"))
    z = np.linspace(h1.min(), h1.max(), n_pts)
    g2 = nn.stack_forward(net[1], z[:, None])
    paths.append(svg.emit_svg(
        [svg.Series(z, g2[:, 0], label="stack 2 on its input", color="#2ca02c"),
         svg.Series(xs, h2[:, 0], label="H = NN2(NN1(x))", color="#d62728")],
        out / "stack2.svg", title="second stack and H"))
    u = np.linspace(h2.min(), h2.max(), n_pts)
    g3 = nn.stack_forward(net[2], u[:, None])
    for k in range(arch.d_out):
        name = data.names[k] if data.names else f"y_{k + 1}"
        paths.append(svg.emit_svg(
            [svg.Series(u, g3[:, k], label="stack 3 output", color="#2ca02c"),
             svg.Series(xs, f[:, k], label="composition", color="#d62728"),
             svg.Series(x, data.Y[:, k], style="points", color="#000000", label="data")],
            out / f"output{k + 1}.svg", title=f"output {k + 1}: {name}"))
    return paths


def run_periodic_tasks(cfg: PeriodicTasksConfig, out_dir) -> PeriodicTasksResult:
    """Joint versus per-task training of the three-stack architecture.

    Per-task networks share the architecture (with one output) and the
    optimiser budget of the joint network. Files: ``heldout_mse.csv`` (seed,
    task, joint_mse, separate_mse), ``periodic_summary.json`` and, for the
    first seed, ``stack1.svg``, ``stack2.svg`` and ``output<k>.svg``.
    """
    if not cfg.seeds:
        raise ConfigError("at least one seed required")
    t0 = time.perf_counter()
    out = _out(out_dir)
    rows, joint_means, sep_means, plots = [], [], [], []
    for i, seed in enumerate(cfg.seeds):
        data = gen_periodic7(cfg.N, noise_sd=cfg.noise_sd, seed=seed)
        xs = np.linspace(data.X[:, 0].min(), data.X[:, 0].max(), cfg.eval_points)
        truth = periodic7_truth(xs)
        tcfg = tr.TrainConfig(lam=cfg.lam, restarts=cfg.restarts, adam_iters=cfg.adam_iters,
                              max_iters=cfg.max_iters, seed=seed)
        arch = periodic_architecture(data.d_out, cfg.width)
        net, _ = tr.train(arch, data, tcfg)
        joint = np.mean((nn.forward(net, arch, xs[:, None]) - truth) ** 2, axis=0)
        a1 = periodic_architecture(1, cfg.width)
        sep = []
        for k in range(data.d_out):
            snet, _ = tr.train(a1, data.column(k), tcfg)
            sep.append(float(np.mean((nn.forward(snet, a1, xs[:, None])[:, 0] - truth[:, k]) ** 2)))
        rows += [(seed, k + 1, float(joint[k]), sep[k]) for k in range(data.d_out)]
        joint_means.append(float(np.mean(joint)))
        sep_means.append(float(np.mean(sep)))
        if i == 0:
            plots = [str(p) for p in _stack_plots(net, arch, data, out, cfg.plot_points)]
            (out / "params_joint.txt").write_text(nn.dumps(net, arch))
    res = PeriodicTasksResult(
        joint_mse=joint_means, separate_mse=sep_means, per_task=rows, plots=plots,
        seconds=time.perf_counter() - t0,
        passed=bool(np.mean(joint_means) < np.mean(sep_means)),
    )
    _write_rows(out / "heldout_mse.csv", ["seed", "task", "joint_mse", "separate_mse"], rows)
    _write_json(out / "periodic_summary.json", asdict(res))
    return res


# -- width sweep --------------------------------------------------------------


@dataclass(frozen=True)
class WidthSweepConfig:
    seed: int = 0
    N: int = 6
    d_out: int = 8
    lam: float = 1e-2
    hidden: int = 16
    restarts: int = 3
    bottlenecks: tuple = ()  # default: 1..N+1 and 2(N+1)
    activation: str = "identity"
    tol: float = 0.05


@dataclass
class WidthSweepResult:
    bottlenecks: list
    best_objectives: list
    restart_objectives: list
    reference_width: int
    reference_gap: float
    seconds: float
    passed: bool


def run_width_sweep(cfg: WidthSweepConfig, out_dir) -> WidthSweepResult:
    """Best-of-restarts objective of a two-stack network against bottleneck width.

    Files: ``width_sweep.csv`` (bottleneck, best_objective, then one column
    per restart), ``width_sweep.json`` and ``width_sweep.svg``. Passes when
    the objective at width N+1 is within ``tol`` (relative) of the best.
    """
    t0 = time.perf_counter()
    data = sweep_instance(cfg.seed, cfg.N, cfg.d_out)
    ref = data.n + 1
    widths = list(cfg.bottlenecks) or list(range(1, ref + 1)) + [2 * ref]
    if ref not in widths:
        raise ConfigError(f"the sweep must include the bottleneck width N+1 = {ref}")
    if cfg.hidden <= data.n:
        raise ConfigError(f"hidden width {cfg.hidden} must exceed N = {data.n}")
    best, per = [], []
    for d in widths:
        arch = nn.Architecture((1, d, data.d_out), (cfg.hidden, cfg.hidden),
                               inner_activation=cfg.activation)
        _, report = tr.train(arch, data, tr.TrainConfig(lam=cfg.lam, restarts=cfg.restarts,
                                                        seed=cfg.seed))
        best.append(report.final_objective)
        per.append(list(report.restart_objectives))
    overall = min(best)
    gap = best[widths.index(ref)] / overall - 1.0
    res = WidthSweepResult(
        bottlenecks=widths, best_objectives=best, restart_objectives=per,
        reference_width=ref, reference_gap=gap, seconds=time.perf_counter() - t0,
        passed=bool(gap <= cfg.tol),
    )
    out = _out(out_dir)
    _write_rows(out / "width_sweep.csv",
                ["bottleneck", "best_objective"] + [f"restart_{r}" for r in range(cfg.restarts)],
                [[d, b] + list(p) for d, b, p in zip(widths, best, per)])
    _write_json(out / "width_sweep.json", asdict(res))
    svg.emit_svg([svg.Series(widths, best, style="points", label="best of restarts")],
                 out / "width_sweep.svg", title="objective against bottleneck width",
                 xlabel="bottleneck width", ylabel="objective")
    return res
