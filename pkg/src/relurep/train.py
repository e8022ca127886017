"""Full-batch training under squared loss plus weight decay.

The objective is ``sum_i |NN(x_i) - y_i|^2 + lam * |theta|^2`` with missing
targets skipped. Gradients are exact (backpropagation, relu'(0) = 0).
"""

from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import net as nn
from .net import Architecture, NetworkParams
from .pfunc import network_cost
from .tasks import Dataset

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """Every restart produced a non-finite objective."""


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 1e-2
    max_iters: int = 20_000
    optimizer: str = "adam_then_gd"
    adam_iters: int = 10_000
    adam_lr: float = 1e-2
    # the warm-phase rate decays geometrically to this value; a small final
    # rate lets kinks settle onto data points, where the objective is not smooth
    adam_lr_final: float = 1e-4
    step0: float = 1e-2
    grad_norm_tol: float = 1e-6
    seed: int = 0
    init_scale: float = 1.0
    restarts: int = 5

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        if self.optimizer not in ("gd", "adam_then_gd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if min(self.grad_norm_tol, self.step0, self.adam_lr, self.adam_lr_final) <= 0:
            raise ValueError("tolerances and step sizes must be positive")
        if self.restarts < 1 or self.max_iters < 0 or self.adam_iters < 0:
            raise ValueError("restarts must be >= 1 and iteration counts >= 0")
        if self.init_scale < 0:
            raise ValueError("init_scale must be non-negative")


@dataclass
class TrainReport:
    final_objective: float
    final_loss: float
    final_param_norm_sq: float
    final_network_cost: float
    objective_trace: list[float]
    grad_norm_trace: list[float]
    phase_trace: list[str]
    iterations: int
    converged: bool
    best_restart: int = 0
    restart_objectives: list[float] = field(default_factory=list)
    failed_restarts: list[int] = field(default_factory=list)

    def summary(self) -> dict:
        out = asdict(self)
        for key in ("objective_trace", "grad_norm_trace", "phase_trace"):
            out.pop(key)
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "phase", "objective", "grad_norm"])
            for i, (ph, obj, g) in enumerate(
                zip(self.phase_trace, self.objective_trace, self.grad_norm_trace)
            ):
                writer.writerow([i, ph, repr(obj), repr(g)])

    def write_summary(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")


# -- loss, objective, gradient ------------------------------------------------


def _targets(data: Dataset, arch: Architecture):
    if data.d_in != arch.d_in or data.d_out != arch.d_out:
        raise nn.ShapeError(
            f"dataset is {data.d_in}->{data.d_out}, architecture is {arch.d_in}->{arch.d_out}"
        )
    mask = data.mask
    return np.where(mask, data.Y, 0.0), mask.astype(float)


def sq_loss(net: NetworkParams, arch: Architecture, data: Dataset) -> float:
    """Sum over samples (and observed outputs) of squared errors."""
    Y, M = _targets(data, arch)
    R = (nn.forward(net, arch, data.X) - Y) * M
    return float(np.sum(R**2))


def objective(net: NetworkParams, arch: Architecture, data: Dataset, lam: float) -> float:
    return sq_loss(net, arch, data) + lam * nn.param_norm_sq(net)


class _Problem:
    """Objective and gradient on the flat parameter vector."""

    def __init__(self, template: NetworkParams, arch: Architecture, data: Dataset, lam: float):
        nn.check_arch(template, arch)
        self.arch = arch
        self.template = template
        self.X = data.X
        self.Y, self.M = _targets(data, arch)
        self.lam = lam
        self.layout = []
        pos = 0
        for s in template:
            shapes = [a.shape for a in s.arrays()]
            entry = []
            for shp in shapes:
                size = int(np.prod(shp))
                entry.append((pos, pos + size, shp))
                pos += size
            self.layout.append((s.skip_kind, entry))
        self.size = pos

    def _unpack(self, vec):
        stacks = []
        for kind, entry in self.layout:
            arrs = [vec[a:b].reshape(shp) for a, b, shp in entry]
            stacks.append((kind, arrs))
        return stacks

    def value(self, vec) -> float:
        h = self.X
        for j, (kind, arrs) in enumerate(self._unpack(vec)):
            if j > 0 and self.arch.inner_activation == "relu":
                h = np.maximum(h, 0.0)
            h = self._apply(kind, arrs, h)
        R = (h - self.Y) * self.M
        return float(np.sum(R**2) + self.lam * vec @ vec)

    @staticmethod
    def _apply(kind, arrs, a):
        v, b, w, c = arrs[:4]
        out = np.maximum(a @ v.T + b, 0.0) @ w.T + c
        if kind == "linear":
            out = out + a @ arrs[4].T
        elif kind == "factored_linear":
            out = out + (a @ arrs[5].T) @ arrs[4].T
        return out

    def value_and_grad(self, vec):
        stacks = self._unpack(vec)
        relu_between = self.arch.inner_activation == "relu"
        cache = []
        h = self.X
        for j, (kind, arrs) in enumerate(stacks):
            pre = h
            a = np.maximum(h, 0.0) if (j > 0 and relu_between) else h
            v, b, w, c = arrs[:4]
            Z = a @ v.T + b
            H = np.maximum(Z, 0.0)
            h = H @ w.T + c
            P = None
            if kind == "linear":
                h = h + a @ arrs[4].T
            elif kind == "factored_linear":
                P = a @ arrs[5].T
                h = h + P @ arrs[4].T
            cache.append((pre, a, Z, H, P))
        R = (h - self.Y) * self.M
        val = float(np.sum(R**2) + self.lam * vec @ vec)

        grad = np.empty_like(vec)
        G = 2.0 * R
        for j in range(len(stacks) - 1, -1, -1):
            kind, arrs = stacks[j]
            pre, a, Z, H, P = cache[j]
            v, b, w, c = arrs[:4]
            entry = self.layout[j][1]
            dZ = (G @ w) * (Z > 0)
            parts = [dZ.T @ a, dZ.sum(axis=0), G.T @ H, G.sum(axis=0)]
            da = dZ @ v
            if kind == "linear":
                parts.append(G.T @ a)
                da = da + G @ arrs[4]
            elif kind == "factored_linear":
                GA2 = G @ arrs[4]
                parts.append(G.T @ P)
                parts.append(GA2.T @ a)
                da = da + GA2 @ arrs[5]
            for (lo, hi, _), g in zip(entry, parts):
                grad[lo:hi] = g.ravel()
            if j > 0:
                G = da * (pre > 0) if relu_between else da
        grad += 2.0 * self.lam * vec
        return val, grad


def gradient(net: NetworkParams, arch: Architecture, data: Dataset, lam: float) -> NetworkParams:
    """Exact gradient of :func:`objective`, shaped like the parameters."""
    prob = _Problem(net, arch, data, lam)
    _, g = prob.value_and_grad(nn.to_vector(net))
    return nn.from_vector(net, g)


# -- initialisation and optimisation ------------------------------------------


def init(arch: Architecture, seed: int = 0, init_scale: float = 1.0) -> NetworkParams:
    """iid uniform entries in +-init_scale/sqrt(fan_in), deterministic in seed."""
    rng = np.random.default_rng(seed)
    return _init_with(arch, rng, init_scale)


def _init_with(arch: Architecture, rng: np.random.Generator, scale: float) -> NetworkParams:
    def u(shape, fan_in):
        bound = scale / np.sqrt(max(fan_in, 1))
        return rng.uniform(-bound, bound, size=shape)

    stacks = []
    for j in range(arch.num_stacks):
        d0, d1, n = arch.dims[j], arch.dims[j + 1], arch.widths[j]
        v, b = u((n, d0), d0), u((n,), d0)
        w, c = u((d1, n), n), u((d1,), n)
        skip = None
        if arch.skips[j] == "linear":
            skip = u((d1, d0), d0)
        elif arch.skips[j] == "factored_linear":
            m = nn.factored_inner_dim(d0, d1)
            skip = (u((d1, m), m), u((m, d0), d0))
        stacks.append(nn.StackParams(v, b, w, c, skip))
    return nn.NetworkParams(tuple(stacks))


@dataclass
class _RunResult:
    vec: np.ndarray
    obj: list
    gnorm: list
    phase: list
    converged: bool
    diverged: bool


def _adam(
    prob: _Problem, x, iters, lr, lr_final, obj, gnorm, phase, beta1=0.9, beta2=0.999, eps=1e-8
):
    decay = (lr_final / lr) ** (1.0 / max(iters - 1, 1))
    m = np.zeros_like(x)
    s = np.zeros_like(x)
    best_x, best_f = x.copy(), np.inf
    for t in range(1, iters + 1):
        f, g = prob.value_and_grad(x)
        if not np.isfinite(f):
            return best_x, True
        if f < best_f:
            best_x, best_f = x.copy(), f
        obj.append(f)
        gnorm.append(float(np.linalg.norm(g)))
        phase.append("adam")
        m = beta1 * m + (1 - beta1) * g
        s = beta2 * s + (1 - beta2) * g * g
        mhat = m / (1 - beta1**t)
        shat = s / (1 - beta2**t)
        x = x - lr * decay ** (t - 1) * mhat / (np.sqrt(shat) + eps)
    f = prob.value(x)
    if np.isfinite(f) and f < best_f:
        best_x = x
    return best_x, False


def _gd_backtracking(prob: _Problem, x, iters, step, tol, obj, gnorm, phase, armijo=1e-4):
    """Gradient descent with Armijo backtracking; the objective never increases."""
    f, g = prob.value_and_grad(x)
    if not np.isfinite(f):
        return x, False, True
    for _ in range(iters):
        gn = float(np.linalg.norm(g))
        obj.append(f)
        gnorm.append(gn)
        phase.append("gd")
        if gn < tol:
            return x, True, False
        t = step * 2.0
        gg = gn * gn
        while True:
            x_new = x - t * g
            f_new = prob.value(x_new)
            if np.isfinite(f_new) and f_new <= f - armijo * t * gg:
                break
            t *= 0.5
            if t < 1e-20:
                return x, False, False
        step = t
        x = x_new
        f, g = prob.value_and_grad(x)
    gn = float(np.linalg.norm(g))
    obj.append(f)
    gnorm.append(gn)
    phase.append("gd")
    return x, gn < tol, False


def _run(prob: _Problem, x0: np.ndarray, cfg: TrainConfig) -> _RunResult:
    obj, gnorm, phase = [], [], []
    x = x0
    if cfg.optimizer == "adam_then_gd" and cfg.adam_iters > 0:
        x, diverged = _adam(prob, x, cfg.adam_iters, cfg.adam_lr, cfg.adam_lr_final, obj, gnorm, phase)
        if diverged:
            return _RunResult(x, obj, gnorm, phase, False, True)
    x, converged, diverged = _gd_backtracking(
        prob, x, cfg.max_iters, cfg.step0, cfg.grad_norm_tol, obj, gnorm, phase
    )
    return _RunResult(x, obj, gnorm, phase, converged, diverged)


def train(
    arch: Architecture,
    data: Dataset,
    cfg: TrainConfig = TrainConfig(),
    init_net: NetworkParams | None = None,
) -> tuple[NetworkParams, TrainReport]:
    """Minimise the weight-decay objective; keep the best of ``cfg.restarts`` runs.

    The returned network is balanced, which preserves the function and can
    only lower the objective.
    """
    for j, n in enumerate(arch.widths):
        if n <= data.n:
            warnings.warn(
                f"stack {j + 1} has {n} neurons for {data.n} samples; global minimisers "
                f"are only guaranteed to match the function-space optimum when width > N",
                stacklevel=2,
            )
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.restarts)
    template = nn.zero_network(arch)
    prob = _Problem(template, arch, data, cfg.lam)

    best = None
    restart_objs, failed = [], []
    for r, ss in enumerate(seeds):
        if init_net is not None and r == 0:
            x0 = nn.to_vector(init_net)
        else:
            x0 = nn.to_vector(_init_with(arch, np.random.default_rng(ss), cfg.init_scale))
        res = _run(prob, x0, cfg)
        f = prob.value(res.vec)
        if res.diverged or not np.isfinite(f):
            log.warning("restart %d diverged", r)
            failed.append(r)
            restart_objs.append(float("nan"))
            continue
        restart_objs.append(f)
        log.info("restart %d: objective %.10g (%d iterations)", r, f, len(res.obj))
        if best is None or f < best[1]:
            best = (r, f, res)
    if best is None:
        raise TrainingDiverged(f"all {cfg.restarts} restarts diverged")

    r, _, res = best
    net = nn.balance_network(nn.from_vector(template, res.vec))
    loss = sq_loss(net, arch, data)
    norm_sq = nn.param_norm_sq(net)
    report = TrainReport(
        final_objective=loss + cfg.lam * norm_sq,
        final_loss=loss,
        final_param_norm_sq=norm_sq,
        final_network_cost=network_cost(net, arch),
        objective_trace=[float(v) for v in res.obj],
        grad_norm_trace=[float(v) for v in res.gnorm],
        phase_trace=list(res.phase),
        iterations=len(res.obj),
        converged=res.converged,
        best_restart=r,
        restart_objectives=restart_objs,
        failed_restarts=failed,
    )
    return net, report
