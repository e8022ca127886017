import numpy as np
import pytest

from relurep import net as nn


def random_arch(rng, max_stacks=3, max_dim=3, max_width=8, skips=None, activation=None):
    s = int(rng.integers(1, max_stacks + 1))
    dims = tuple(int(d) for d in rng.integers(1, max_dim + 1, size=s + 1))
    widths = tuple(int(n) for n in rng.integers(1, max_width + 1, size=s))
    if skips is None:
        skips = tuple(rng.choice(nn.SKIP_KINDS, size=s))
    act = activation or str(rng.choice(nn.INNER_ACTIVATIONS))
    return nn.Architecture(dims, widths, inner_activation=act, skips=tuple(skips))


def random_net(rng, arch, scale=1.0):
    stacks = []
    for j in range(arch.num_stacks):
        d0, d1, n = arch.dims[j], arch.dims[j + 1], arch.widths[j]
        kind = arch.skips[j]
        if kind == "linear":
            skip = scale * rng.standard_normal((d1, d0))
        elif kind == "factored_linear":
            m = nn.factored_inner_dim(d0, d1)
            skip = (scale * rng.standard_normal((d1, m)), scale * rng.standard_normal((m, d0)))
        else:
            skip = None
        stacks.append(nn.StackParams(
            scale * rng.standard_normal((n, d0)), scale * rng.standard_normal(n),
            scale * rng.standard_normal((d1, n)), scale * rng.standard_normal(d1), skip,
        ))
    return nn.NetworkParams(tuple(stacks))


def naive_forward(net, arch, x):
    """Scalar loops over neurons and coordinates; shares nothing with net.forward."""
    h = [float(t) for t in np.atleast_1d(x)]
    for j, s in enumerate(net):
        if j > 0 and arch.inner_activation == "relu":
            h = [t if t > 0 else 0.0 for t in h]
        out = []
        for r in range(s.out_dim):
            acc = float(s.c[r])
            for k in range(s.width):
                z = float(s.b[k])
                for i in range(s.in_dim):
                    z += float(s.v[k, i]) * h[i]
                if z > 0:
                    acc += float(s.w[r, k]) * z
            if s.skip_kind == "linear":
                for i in range(s.in_dim):
                    acc += float(s.skip[r, i]) * h[i]
            elif s.skip_kind == "factored_linear":
                A2, A1 = s.skip
                for q in range(A1.shape[0]):
                    inner = sum(float(A1[q, i]) * h[i] for i in range(s.in_dim))
                    acc += float(A2[r, q]) * inner
            out.append(acc)
        h = out
    return np.array(h)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def min_factorization_cost(A, seed=0):
    """min over invertible A1 of (|A1|_F^2 + |A A1^-1|_F^2) / 2, by L-BFGS.

    Gradient-based and SVD-free, so it is an independent route to the nuclear
    norm of a square matrix.
    """
    from scipy.optimize import minimize

    A = np.asarray(A, dtype=float)
    m = A.shape[1]
    rng = np.random.default_rng(seed)

    def f(flat):
        A1 = flat.reshape(m, m)
        inv = np.linalg.inv(A1)
        B = A @ inv
        val = 0.5 * (np.sum(A1**2) + np.sum(B**2))
        grad = A1 - B.T @ B @ inv.T
        return val, grad.ravel()

    x0 = (np.eye(m) + 0.1 * rng.standard_normal((m, m))).ravel()
    res = minimize(f, x0, jac=True, method="L-BFGS-B", options={"maxiter": 5000, "gtol": 1e-10, "ftol": 1e-15})
    return float(res.fun)


def kink_margin(net, arch, X):
    """Smallest |pre-activation| over all ReLUs, including inner activations."""
    margin = np.inf
    h = np.atleast_2d(X)
    for j, s in enumerate(net):
        if j > 0 and arch.inner_activation == "relu":
            margin = min(margin, np.abs(h).min())
            h = np.maximum(h, 0.0)
        if s.width:
            margin = min(margin, np.abs(h @ s.v.T + s.b).min())
        h = nn.stack_forward(s, h)
    return margin


def fd_relative_error(net, arch, data, lam, h=1e-5):
    """Max |analytic - central difference| relative to the largest gradient entry."""
    from relurep import train

    g = nn.to_vector(train.gradient(net, arch, data, lam))
    x = nn.to_vector(net)
    fd = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        fp = train.objective(nn.from_vector(net, x + e), arch, data, lam)
        fm = train.objective(nn.from_vector(net, x - e), arch, data, lam)
        fd[i] = (fp - fm) / (2 * h)
    return float(np.max(np.abs(g - fd)) / max(np.max(np.abs(fd)), 1e-12))


def fd_instance(seed, min_margin=1e-3):
    """Random architecture, parameters and data with every ReLU off its kink."""
    from relurep.tasks import Dataset

    rng = np.random.default_rng(seed)
    while True:
        arch = random_arch(rng, max_stacks=3, max_dim=3, max_width=8)
        net = random_net(rng, arch, scale=0.8)
        N = int(rng.integers(2, 8))
        X = rng.standard_normal((N, arch.d_in))
        data = Dataset(X, rng.standard_normal((N, arch.d_out)))
        if kink_margin(net, arch, X) > min_margin:
            return arch, net, data
