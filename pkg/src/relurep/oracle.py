"""Convex function-space solver for one stack with scalar input.

Any function ``c + sum_g W_g relu(s_g (x - xi_g))`` with kinks xi_g and
directions s_g in {-1, +1} is priced ``sum_g rho_g |W_g|_2 + |c|^2``, where
``rho_g = atom_factor * sqrt(xi_g^2 + 1)`` (bias regularised) or
``atom_factor`` (biases free). Restricting kinks to a dense grid turns the
variational problem into a weighted multi-output group lasso

    min_{W, c}  sum_i |f(x_i) - y_i|^2 + lam |c|^2 + lam sum_g rho_g |W_g|_2

solved here by accelerated proximal gradient with restarts. The l2 norm over
outputs in each group is what couples the tasks; solving each output
separately turns it into a plain weighted lasso.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .net import Architecture, NetworkParams, StackParams
from .tasks import Dataset

log = logging.getLogger(__name__)

ACT_TOL = 1e-6


class UnsupportedDimension(ValueError):
    pass


@dataclass(frozen=True)
class Atom:
    direction: int
    kink: float
    weight: np.ndarray


@dataclass(frozen=True)
class Grid:
    direction: np.ndarray  # (G,) entries in {-1, +1}
    kink: np.ndarray  # (G,)
    rho: np.ndarray  # (G,) penalty weights

    def __post_init__(self):
        if not (self.direction.shape == self.kink.shape == self.rho.shape):
            raise ValueError("grid arrays must have equal length")
        if np.any(self.rho <= 0):
            raise ValueError("penalty weights must be positive")

    def __len__(self):
        return self.kink.shape[0]

    def features(self, x) -> np.ndarray:
        """``(N, G)`` matrix of relu(s_g (x_i - xi_g))."""
        x = np.asarray(x, dtype=float).reshape(-1)
        return np.maximum(self.direction[None, :] * (x[:, None] - self.kink[None, :]), 0.0)


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-7
    max_iters: int = 500_000  # total inner proximal-gradient iterations
    max_outer: int = 200
    working_set_growth: int = 20
    check_every: int = 10
    # An inner solve that runs this long without reaching its target is a
    # stall: typically a degenerate direction among active atoms, along which
    # the KKT residual decays slowly although the objective is already optimal.
    stall_iters: int = 100_000
    # After a stall, a relative duality gap below this counts as convergence.
    gap_tol: float = 1e-11


@dataclass
class OracleSolution:
    grid: Grid
    W: np.ndarray  # (G, d_out)
    c: np.ndarray  # (d_out,)
    lam: float
    objective: float
    kkt_residual: float
    converged: bool
    iterations: int
    objective_trace: list[float] = field(default_factory=list, repr=False)
    duality_gap: float | None = None  # set when a stall triggered the dual certificate

    @property
    def d_out(self) -> int:
        return self.c.shape[0]

    @property
    def penalty(self) -> float:
        """``sum_g rho_g |W_g| + |c|^2``."""
        return float(self.grid.rho @ np.linalg.norm(self.W, axis=1) + self.c @ self.c)

    def active(self, act_tol: float = ACT_TOL) -> np.ndarray:
        return np.flatnonzero(np.linalg.norm(self.W, axis=1) > act_tol)

    def active_kinks(self, task: int | None = None, act_tol: float = ACT_TOL) -> set:
        """(direction, kink) pairs used by one output, or by any output."""
        mags = np.linalg.norm(self.W, axis=1) if task is None else np.abs(self.W[:, task])
        idx = np.flatnonzero(mags > act_tol)
        return {(int(self.grid.direction[g]), float(self.grid.kink[g])) for g in idx}

    def atoms(self, act_tol: float = ACT_TOL) -> list[Atom]:
        return [
            Atom(int(self.grid.direction[g]), float(self.grid.kink[g]), self.W[g].copy())
            for g in self.active(act_tol)
        ]

    def summary(self) -> dict:
        return {
            "lambda": self.lam,
            "objective": self.objective,
            "penalty": self.penalty,
            "kkt_residual": self.kkt_residual,
            "converged": self.converged,
            "iterations": self.iterations,
            "duality_gap": self.duality_gap,
            "grid_size": len(self.grid),
            "active_atoms": int(len(self.active())),
            "intercept": [float(v) for v in self.c],
        }

    def write_csv(self, path, act_tol: float = 0.0) -> None:
        """Atom rows ``s,xi,rho,W_1..W_d`` for atoms with |W| > act_tol."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["s", "xi", "rho"] + [f"W_{k + 1}" for k in range(self.d_out)])
            for g in np.flatnonzero(np.linalg.norm(self.W, axis=1) > act_tol):
                writer.writerow(
                    [int(self.grid.direction[g]), repr(float(self.grid.kink[g])),
                     repr(float(self.grid.rho[g]))]
                    + [repr(float(v)) for v in self.W[g]]
                )

    def write_summary(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def atom_weight(kink, kind: str = "bias_reg", atom_factor: float = 2.0):
    kink = np.asarray(kink, dtype=float)
    if kind == "bias_reg":
        return atom_factor * np.sqrt(kink**2 + 1.0)
    if kind == "no_bias_reg":
        return np.full_like(kink, atom_factor)
    raise ValueError(f"unknown penalty kind {kind!r}")


def build_grid(
    data: Dataset,
    resolution: int,
    margin: float = 1.0,
    kind: str = "bias_reg",
    atom_factor: float = 2.0,
    tails: int = 0,
    tail_span: float = 1e6,
) -> Grid:
    """Kinks at every training input plus ``resolution`` equispaced points.

    The uniform points span ``[min x - margin, max x + margin]``; every kink
    appears with both directions. ``tails > 0`` adds that many geometrically
    spaced kinks on each side, out to ``tail_span`` beyond the data, so that
    affine and constant pieces can be priced by far-away kinks.
    """
    if data.d_in != 1:
        raise UnsupportedDimension(f"the oracle supports d_in = 1 only, got {data.d_in}")
    if resolution < data.n:
        raise ValueError(f"resolution {resolution} must be at least N = {data.n}")
    x = data.X[:, 0]
    lo, hi = float(x.min()) - margin, float(x.max()) + margin
    pts = [x, np.linspace(lo, hi, resolution)]
    if tails > 0:
        dist = np.geomspace(0.5, tail_span, tails)
        pts += [lo - dist, hi + dist]
    kinks = np.unique(np.concatenate(pts))
    direction = np.concatenate([np.ones_like(kinks), -np.ones_like(kinks)])
    kink = np.concatenate([kinks, kinks])
    return Grid(direction, kink, atom_weight(kink, kind, atom_factor))


# -- solver -------------------------------------------------------------------


def _largest_eig(B: np.ndarray, iters: int = 1000, rtol: float = 1e-12, seed: int = 0) -> float:
    """Largest eigenvalue of B^T B by power iteration."""
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(B.shape[1])
    z /= np.linalg.norm(z)
    est = 0.0
    for _ in range(iters):
        y = B.T @ (B @ z)
        new = float(np.linalg.norm(y))
        if new == 0.0:
            return 0.0
        z = y / new
        if abs(new - est) <= rtol * new:
            est = new
            break
        est = new
    return est


class _Scaled:
    """The group lasso in scaled variables U_g = rho_g W_g (unit penalty weights).

    ``cols`` restricts the problem to a subset of atoms; missing targets get
    zero weight in the squared residuals.
    """

    def __init__(self, F, Y, M, lam, cols=None):
        self.lam = lam
        self.Y = Y
        self.M = M
        self.F = F if cols is None else F[:, cols]
        B = np.hstack([self.F, np.ones((F.shape[0], 1))]) * np.sqrt(M.max(axis=1))[:, None]
        self.L = 2.0 * _largest_eig(B) * 1.01 + 2.0 * lam

    @classmethod
    def from_data(cls, data: Dataset, lam: float, grid: Grid):
        if data.d_in != 1:
            raise UnsupportedDimension(f"the oracle supports d_in = 1 only, got {data.d_in}")
        if not lam > 0:
            raise ValueError("lam must be positive")
        M = data.mask.astype(float)
        Y = np.where(data.mask, data.Y, 0.0)
        F = grid.features(data.X[:, 0]) / grid.rho[None, :]
        return cls(F, Y, M, lam)

    def restrict(self, cols) -> "_Scaled":
        return _Scaled(self.F, self.Y, self.M, self.lam, cols)

    def residual(self, U, c):
        return (self.F @ U + c - self.Y) * self.M

    def smooth_grad(self, U, c):
        R = 2.0 * (self.F @ U + c - self.Y) * self.M
        return self.F.T @ R, R.sum(axis=0) + 2.0 * self.lam * c

    def total(self, U, c):
        R = self.F @ U + c - self.Y
        fit = float(np.sum(self.M * R * R))
        return fit + self.lam * float(c @ c + np.sum(np.linalg.norm(U, axis=1)))

    def prox(self, U, t):
        norms = np.linalg.norm(U, axis=1)
        scale = np.maximum(0.0, 1.0 - t * self.lam / np.where(norms > 0, norms, 1.0))
        return U * scale[:, None]

    def violations(self, U, c):
        """Per-atom KKT violation and the intercept term."""
        gU, gc = self.smooth_grad(U, c)
        norms = np.linalg.norm(U, axis=1)
        act = norms > 0
        res = np.empty(U.shape[0])
        res[act] = np.linalg.norm(gU[act] + self.lam * U[act] / norms[act, None], axis=1)
        res[~act] = np.maximum(0.0, np.linalg.norm(gU[~act], axis=1) - self.lam)
        return res, float(np.linalg.norm(gc)), gU

    def kkt(self, U, c) -> float:
        res, gc, _ = self.violations(U, c)
        return float(max(res.max(initial=0.0), gc))


def _fista(prob: _Scaled, U, c, tol, max_iters, check_every, trace):
    """Accelerated proximal gradient with function-value restarts on one problem.

    Whenever the momentum step would increase the objective, the momentum is
    reset and a plain proximal step is taken from the current iterate, so the
    recorded objective never increases.
    """
    t_step = 1.0 / prob.L
    F = prob.total(U, c)
    yU, yc = U, c
    mom = 1.0
    it = 0
    while it < max_iters:
        it += 1
        gU, gc = prob.smooth_grad(yU, yc)
        U_new = prob.prox(yU - t_step * gU, t_step)
        c_new = yc - t_step * gc
        F_new = prob.total(U_new, c_new)
        if F_new > F:
            mom = 1.0
            gU, gc = prob.smooth_grad(U, c)
            while True:
                U_new = prob.prox(U - t_step * gU, t_step)
                c_new = c - t_step * gc
                F_new = prob.total(U_new, c_new)
                if F_new <= F or t_step < 1e-30:
                    break
                # the power-iteration bound was too optimistic
                t_step *= 0.5
            yU, yc = U_new, c_new
        else:
            mom_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * mom * mom))
            beta = (mom - 1.0) / mom_new
            yU = U_new + beta * (U_new - U)
            yc = c_new + beta * (c_new - c)
            mom = mom_new
        U, c, F = U_new, c_new, F_new
        trace.append(F)
        if it % check_every == 0 and prob.kkt(U, c) < tol:
            break
    return U, c, it


def solve_group_lasso(
    data: Dataset,
    lam: float,
    grid: Grid,
    cfg: SolverConfig = SolverConfig(),
    warm: OracleSolution | None = None,
) -> OracleSolution:
    """Minimise the grid-restricted group lasso to a KKT residual below ``cfg.tol``.

    A working set of atoms (the current support plus the worst KKT
    violators on the full grid) is solved by FISTA with restarts; the set is
    grown until no atom on the full grid violates optimality. Each inner
    solve is warm-started, so the objective trace is non-increasing.

    If an inner solve stalls (see :class:`SolverConfig`), the primal-dual
    gap from :func:`dual_solve` is computed; a gap below ``cfg.gap_tol``
    (relative) also counts as converged and is stored on the solution.
    """
    full = _Scaled.from_data(data, lam, grid)
    G, d_out = len(grid), data.d_out
    if warm is not None:
        U = warm.W * grid.rho[:, None]
        c = warm.c.copy()
    else:
        U = np.zeros((G, d_out))
        c = np.zeros(d_out)
    trace = [full.total(U, c)]
    iters = 0
    kkt = full.kkt(U, c)
    gap = None
    for _ in range(cfg.max_outer):
        if kkt < cfg.tol or iters >= cfg.max_iters:
            break
        res, _, _ = full.violations(U, c)
        support = np.linalg.norm(U, axis=1) > 0
        worst = np.argsort(-res, kind="stable")[: cfg.working_set_growth]
        ws = support.copy()
        ws[worst[res[worst] > 0]] = True
        cols = np.flatnonzero(ws)
        sub = full.restrict(cols)
        inner_tol = max(1e-2 * kkt, 0.5 * cfg.tol)
        budget = min(cfg.stall_iters, cfg.max_iters - iters)
        Uw, c, it = _fista(sub, U[cols], c, inner_tol, budget, cfg.check_every, trace)
        iters += it
        U = np.zeros_like(U)
        U[cols] = Uw
        kkt = full.kkt(U, c)
        if kkt >= cfg.tol and it >= cfg.stall_iters:
            W = U / grid.rho[:, None]
            obj = objective_value(data, lam, grid, W, c)
            gap = obj - dual_solve(data, lam, grid)[0]
            log.info("inner solve stalled at KKT %.3g; duality gap %.3g", kkt, gap)
            if gap <= cfg.gap_tol * max(1.0, abs(obj)):
                break
    certified = gap is not None and gap <= cfg.gap_tol * max(1.0, abs(full.total(U, c)))
    if kkt >= cfg.tol and not certified:
        log.warning("group lasso stopped after %d iterations with KKT residual %.3g", iters, kkt)
    W = U / grid.rho[:, None]
    return OracleSolution(
        grid=grid, W=W, c=c, lam=lam, objective=objective_value(data, lam, grid, W, c),
        kkt_residual=kkt, converged=kkt < cfg.tol or certified, iterations=iters,
        objective_trace=trace, duality_gap=gap,
    )


def solve_separate(
    data: Dataset, lam: float, grid: Grid, cfg: SolverConfig = SolverConfig()
) -> list[OracleSolution]:
    """One scalar-output problem per column; each only sees its observed rows."""
    return [solve_group_lasso(data.column(k), lam, grid, cfg) for k in range(data.d_out)]


def objective_value(data: Dataset, lam: float, grid: Grid, W: np.ndarray, c: np.ndarray) -> float:
    """Group lasso objective evaluated in the original (unscaled) variables."""
    R = (grid.features(data.X[:, 0]) @ W + c - np.where(data.mask, data.Y, 0.0)) * data.mask
    return float(np.sum(R**2) + lam * (grid.rho @ np.linalg.norm(W, axis=1) + c @ c))


def kkt_residual(solution: OracleSolution, data: Dataset, lam: float | None = None) -> float:
    """First-order optimality violation of a candidate solution.

    Per group g, with ``G_g`` the fit gradient with respect to W_g:
    ``|G_g + lam rho_g W_g/|W_g|| / rho_g`` when W_g != 0 and
    ``max(0, |G_g| - lam rho_g) / rho_g`` otherwise; the intercept contributes
    ``|G_c + 2 lam c|``. The result is the maximum over all terms.
    """
    lam = solution.lam if lam is None else lam
    prob = _Scaled.from_data(data, lam, solution.grid)
    return prob.kkt(solution.W * solution.grid.rho[:, None], solution.c)


def predict(solution: OracleSolution, x) -> np.ndarray:
    """``c + sum_g W_g relu(s_g (x - xi_g))`` for scalar or vector x."""
    arr = np.asarray(x, dtype=float)
    out = solution.grid.features(arr) @ solution.W + solution.c
    return out[0] if arr.ndim == 0 else out


def atoms_to_network(
    solution: OracleSolution, act_tol: float = 0.0
) -> tuple[NetworkParams, Architecture]:
    """One balanced neuron per atom with |W_g| > act_tol.

    The neuron ``v = s beta, b = -s xi beta, w = W/beta`` reproduces the atom
    exactly; beta^2 = |W| / sqrt(1 + xi^2) balances it, so twice its cost
    |w| sqrt(v^2 + b^2) equals 2 |W| sqrt(1 + xi^2).
    """
    idx = np.flatnonzero(np.linalg.norm(solution.W, axis=1) > act_tol)
    s = solution.grid.direction[idx]
    xi = solution.grid.kink[idx]
    W = solution.W[idx]
    beta = np.sqrt(np.linalg.norm(W, axis=1) / np.sqrt(1.0 + xi**2))
    v = (s * beta)[:, None]
    b = -s * xi * beta
    w = (W / beta[:, None]).T
    stack = StackParams(v, b, w, solution.c.copy())
    arch = Architecture(dims=(1, solution.d_out), widths=(len(idx),))
    return NetworkParams((stack,)), arch


# -- independent certificates -------------------------------------------------


def dual_value(data: Dataset, lam: float, grid: Grid, U: np.ndarray) -> float:
    """Lagrange dual of the group lasso at residual multipliers U, ``(N, d_out)``.

    ``-|U|^2/4 - <U, Y> - |1^T U|^2 / (4 lam)``, after U is shrunk onto the
    feasible set ``|Phi_g^T U| <= lam rho_g``. By weak duality the result is
    a lower bound on the optimal objective for every input U.
    """
    Phi = grid.features(data.X[:, 0])
    M = data.mask
    U = np.where(M, np.asarray(U, dtype=float), 0.0)
    Y = np.where(M, data.Y, 0.0)
    corr = np.linalg.norm(Phi.T @ U, axis=1)
    over = corr > lam * grid.rho
    if np.any(over):
        U = U * float(np.min(lam * grid.rho[over] / corr[over]))
    s = U.sum(axis=0)
    return float(-0.25 * np.sum(U * U) - np.sum(U * Y) - s @ s / (4.0 * lam))


def dual_solve(data: Dataset, lam: float, grid: Grid, max_iters: int = 1000):
    """Maximise the dual with SLSQP; return ``(lower_bound, U)``.

    The dual has only one variable per observed target, so a generic
    constrained solver handles it directly. It shares no code with the
    primal solver; the primal-dual gap certifies both.
    """
    from scipy.optimize import minimize

    if data.d_in != 1:
        raise UnsupportedDimension("the oracle supports d_in = 1 only")
    Phi = grid.features(data.X[:, 0])
    obs = data.mask.ravel()
    Y = np.where(data.mask, data.Y, 0.0)
    N, d = Y.shape
    limit = (lam * grid.rho) ** 2

    def unpack(z):
        U = np.zeros(N * d)
        U[obs] = z
        return U.reshape(N, d)

    def neg(z):
        U = unpack(z)
        s = U.sum(axis=0)
        return 0.25 * np.sum(U * U) + np.sum(U * Y) + s @ s / (4.0 * lam)

    def neg_grad(z):
        U = unpack(z)
        return (0.5 * U + Y + U.sum(axis=0) / (2.0 * lam)).ravel()[obs]

    def cons(z):
        C = Phi.T @ unpack(z)
        return limit - np.sum(C * C, axis=1)

    def cons_jac(z):
        C = Phi.T @ unpack(z)
        J = -2.0 * np.einsum("gk,ig->gik", C, Phi).reshape(len(grid), N * d)
        return J[:, obs]

    res = minimize(
        neg, np.zeros(int(obs.sum())), jac=neg_grad, method="SLSQP",
        constraints=[{"type": "ineq", "fun": cons, "jac": cons_jac}],
        options={"ftol": 1e-15, "maxiter": max_iters},
    )
    U = unpack(res.x)
    return dual_value(data, lam, grid, U), U


def minimizer_set_distance(
    solution: OracleSolution, data: Dataset, xs, values, slack: float = 1e-4, fit_tol: float = 1e-6
) -> tuple[float, np.ndarray]:
    """Sup-norm distance from ``values`` (at points xs) to the set of grid minimisers.

    Fitted values at the data and the intercept are the same for every
    minimiser, and so is the fit gradient. Optimal atoms are therefore
    confined to groups where that gradient attains ``lam rho_g`` and point
    against it, so the minimiser set is a polytope in the atom magnitudes.
    The closest member is found by linear programming. Groups within
    ``slack`` (relative) of the bound count as attaining it; fitted values
    are matched to ``fit_tol``. Returns ``(distance, W)``.
    """
    from scipy.optimize import linprog

    grid, lam = solution.grid, solution.lam
    x = data.X[:, 0]
    Phi, Pe = grid.features(x), grid.features(xs)
    M = data.mask
    fitted = predict(solution, x)
    G = Phi.T @ (2.0 * (fitted - np.where(M, data.Y, 0.0)) * M)
    gn = np.linalg.norm(G, axis=1)
    tight = np.flatnonzero(gn >= (1.0 - slack) * lam * grid.rho)
    D = -G[tight] / gn[tight, None]
    m, d = len(tight), solution.d_out
    values = np.asarray(values, dtype=float).reshape(len(xs), d)

    rows_eq, rhs_eq = [], []
    rows_ev, rhs_ev = [], []
    for k in range(d):
        obs = M[:, k]
        rows_eq.append(Phi[obs][:, tight] * D[:, k])
        rhs_eq.append(fitted[obs, k] - solution.c[k])
        rows_ev.append(Pe[:, tight] * D[:, k])
        rhs_ev.append(values[:, k] - solution.c[k])
    A_fit, b_fit = np.vstack(rows_eq), np.concatenate(rhs_eq)
    A_ev, b_ev = np.vstack(rows_ev), np.concatenate(rhs_ev)
    ones = np.ones((len(b_ev), 1))
    zeros = np.zeros((len(b_fit), 1))
    # variables (t_1..t_m, tau): minimise tau with |A_ev t - b_ev| <= tau
    A_ub = np.block([[A_ev, -ones], [-A_ev, -ones], [A_fit, zeros], [-A_fit, zeros]])
    b_ub = np.concatenate([b_ev, -b_ev, b_fit + fit_tol, -b_fit + fit_tol])
    cost = np.zeros(m + 1)
    cost[-1] = 1.0
    res = linprog(cost, A_ub=A_ub, b_ub=b_ub, bounds=[(0, None)] * (m + 1), method="highs")
    if res.status != 0:
        raise RuntimeError(f"minimiser-set projection failed: {res.message}")
    W = np.zeros_like(solution.W)
    W[tight] = res.x[:m, None] * D
    return float(res.x[-1]), W
