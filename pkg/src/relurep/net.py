"""Stacked ReLU networks: parameters, forward pass, rescaling and balancing.

A stack maps ``R^{d_in} -> R^{d_out}`` as

    x -> sum_k w_k relu(b_k + <v_k, x>) + c  (+ A x)

and a network is the composition of stacks with an elementwise activation
between consecutive stacks and an (identity) link at the end.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

SKIP_KINDS = ("none", "linear", "factored_linear")
INNER_ACTIVATIONS = ("identity", "relu")
LINKS = ("identity",)

DEGENERATE_TOL = 1e-12

FORMAT_HEADER = "# relurep-params 1"


class ShapeError(ValueError):
    """Raised when parameter or input shapes are inconsistent."""


def relu(z):
    return np.maximum(z, 0.0)


def _frozen(a, ndim: int, name: str) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if arr.ndim != ndim:
        raise ShapeError(f"{name} must have {ndim} dimension(s), got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Architecture:
    """Shape description of a stacked network.

    ``dims`` holds the bottleneck dimensions d_0 (input) .. d_s (output),
    ``widths`` the number of hidden neurons per stack.
    """

    dims: tuple[int, ...]
    widths: tuple[int, ...]
    inner_activation: str = "identity"
    link: str = "identity"
    skips: tuple[str, ...] | None = None

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        widths = tuple(int(n) for n in self.widths)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "widths", widths)
        if len(dims) < 2:
            raise ShapeError("need at least an input and an output dimension")
        if len(widths) != len(dims) - 1:
            raise ShapeError(f"{len(dims) - 1} stacks need {len(dims) - 1} widths, got {len(widths)}")
        if any(d < 1 for d in dims) or any(n < 0 for n in widths):
            raise ShapeError("dims must be >= 1 and widths >= 0")
        skips = self.skips if self.skips is not None else ("none",) * len(widths)
        skips = tuple(skips)
        object.__setattr__(self, "skips", skips)
        if len(skips) != len(widths):
            raise ShapeError("one skip kind per stack required")
        for s in skips:
            if s not in SKIP_KINDS:
                raise ValueError(f"unknown skip kind {s!r}")
        if self.inner_activation not in INNER_ACTIVATIONS:
            raise ValueError(f"unknown inner activation {self.inner_activation!r}")
        if self.link not in LINKS:
            raise ValueError(f"unsupported link {self.link!r}")

    @property
    def num_stacks(self) -> int:
        return len(self.widths)

    @property
    def d_in(self) -> int:
        return self.dims[0]

    @property
    def d_out(self) -> int:
        return self.dims[-1]


@dataclass(frozen=True)
class StackParams:
    """Weights of one stack.

    ``v`` is ``(n, d_in)``, ``b`` is ``(n,)``, ``w`` is ``(d_out, n)`` and
    ``c`` is ``(d_out,)``. ``skip`` is ``None``, a ``(d_out, d_in)`` matrix,
    or a pair ``(A2, A1)`` with ``A2: (d_out, m)`` and ``A1: (m, d_in)``.
    """

    v: np.ndarray
    b: np.ndarray
    w: np.ndarray
    c: np.ndarray
    skip: np.ndarray | tuple[np.ndarray, np.ndarray] | None = None

    def __post_init__(self):
        v = _frozen(self.v, 2, "v")
        b = _frozen(self.b, 1, "b")
        w = _frozen(self.w, 2, "w")
        c = _frozen(self.c, 1, "c")
        n, d_in = v.shape
        if b.shape != (n,) or w.shape != (c.shape[0], n):
            raise ShapeError(
                f"inconsistent stack shapes v{v.shape} b{b.shape} w{w.shape} c{c.shape}"
            )
        skip = self.skip
        if isinstance(skip, (tuple, list)):
            a2 = _frozen(skip[0], 2, "A2")
            a1 = _frozen(skip[1], 2, "A1")
            if a2.shape[0] != c.shape[0] or a1.shape[1] != d_in or a2.shape[1] != a1.shape[0]:
                raise ShapeError(f"factored skip shapes {a2.shape} x {a1.shape} do not fit")
            skip = (a2, a1)
        elif skip is not None:
            skip = _frozen(skip, 2, "A")
            if skip.shape != (c.shape[0], d_in):
                raise ShapeError(f"skip matrix shape {skip.shape} != {(c.shape[0], d_in)}")
        for name, val in (("v", v), ("b", b), ("w", w), ("c", c), ("skip", skip)):
            object.__setattr__(self, name, val)

    @property
    def width(self) -> int:
        return self.v.shape[0]

    @property
    def in_dim(self) -> int:
        return self.v.shape[1]

    @property
    def out_dim(self) -> int:
        return self.c.shape[0]

    @property
    def skip_kind(self) -> str:
        if self.skip is None:
            return "none"
        return "factored_linear" if isinstance(self.skip, tuple) else "linear"

    @property
    def skip_matrix(self) -> np.ndarray | None:
        """The effective linear skip map (``A`` or ``A2 @ A1``)."""
        if self.skip is None:
            return None
        if isinstance(self.skip, tuple):
            return self.skip[0] @ self.skip[1]
        return self.skip

    def arrays(self) -> list[np.ndarray]:
        """All trainable arrays in canonical order."""
        out = [self.v, self.b, self.w, self.c]
        if isinstance(self.skip, tuple):
            out.extend(self.skip)
        elif self.skip is not None:
            out.append(self.skip)
        return out

    def replace(self, **changes) -> "StackParams":
        fields = dict(v=self.v, b=self.b, w=self.w, c=self.c, skip=self.skip)
        fields.update(changes)
        return StackParams(**fields)


@dataclass(frozen=True)
class NetworkParams:
    stacks: tuple[StackParams, ...]

    def __post_init__(self):
        stacks = tuple(self.stacks)
        object.__setattr__(self, "stacks", stacks)
        if not stacks:
            raise ShapeError("a network needs at least one stack")
        for j in range(1, len(stacks)):
            if stacks[j].in_dim != stacks[j - 1].out_dim:
                raise ShapeError(
                    f"stack {j + 1} expects input dim {stacks[j].in_dim}, "
                    f"stack {j} produces {stacks[j - 1].out_dim}"
                )

    def __len__(self):
        return len(self.stacks)

    def __iter__(self):
        return iter(self.stacks)

    def __getitem__(self, j):
        return self.stacks[j]

    def arrays(self) -> list[np.ndarray]:
        return [a for s in self.stacks for a in s.arrays()]


@dataclass(frozen=True)
class KinkAtomView:
    """Per-neuron ridge decomposition of a stack.

    ``direction[k]`` is the unit vector v_k/|v_k|, ``offset[k] = -b_k/|v_k|``
    the signed distance of the kink hyperplane along that direction, and
    ``weight[:, k]`` the outer weight w_k. Degenerate neurons (|v_k| < tol)
    have zero direction and offset.
    """

    direction: np.ndarray
    offset: np.ndarray
    weight: np.ndarray
    v_norm: np.ndarray
    degenerate: np.ndarray = field(repr=False)

    @property
    def position(self) -> np.ndarray:
        """Foot point of each kink hyperplane, ``offset * direction``.

        For one-dimensional input this is the kink location ``-b/v``.
        """
        return self.offset[:, None] * self.direction


def check_arch(net: NetworkParams, arch: Architecture) -> None:
    if len(net) != arch.num_stacks:
        raise ShapeError(f"architecture has {arch.num_stacks} stacks, params have {len(net)}")
    for j, stack in enumerate(net):
        expect = (arch.dims[j], arch.dims[j + 1], arch.widths[j], arch.skips[j])
        got = (stack.in_dim, stack.out_dim, stack.width, stack.skip_kind)
        if expect != got:
            raise ShapeError(f"stack {j + 1}: architecture expects {expect}, params have {got}")


def architecture_of(net: NetworkParams, inner_activation: str = "identity") -> Architecture:
    dims = [net[0].in_dim] + [s.out_dim for s in net]
    return Architecture(
        dims=tuple(dims),
        widths=tuple(s.width for s in net),
        inner_activation=inner_activation,
        skips=tuple(s.skip_kind for s in net),
    )


def zero_network(arch: Architecture) -> NetworkParams:
    stacks = []
    for j in range(arch.num_stacks):
        d0, d1, n = arch.dims[j], arch.dims[j + 1], arch.widths[j]
        stacks.append(
            StackParams(
                np.zeros((n, d0)), np.zeros(n), np.zeros((d1, n)), np.zeros(d1),
                _zero_skip(arch.skips[j], d0, d1),
            )
        )
    return NetworkParams(tuple(stacks))


def _zero_skip(kind: str, d0: int, d1: int):
    if kind == "linear":
        return np.zeros((d1, d0))
    if kind == "factored_linear":
        m = factored_inner_dim(d0, d1)
        return (np.zeros((d1, m)), np.zeros((m, d0)))
    return None


def factored_inner_dim(d_in: int, d_out: int) -> int:
    return min(d_in, d_out)


def _as_batch(x, dim: int, what: str = "input"):
    arr = np.asarray(x, dtype=float)
    single = arr.ndim <= 1
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.shape[1] != dim:
        raise ShapeError(f"{what} has dimension {arr.shape[1]}, expected {dim}")
    return arr, single


def _stack_apply(stack: StackParams, X: np.ndarray) -> np.ndarray:
    out = relu(X @ stack.v.T + stack.b) @ stack.w.T + stack.c
    if isinstance(stack.skip, tuple):
        out = out + (X @ stack.skip[1].T) @ stack.skip[0].T
    elif stack.skip is not None:
        out = out + X @ stack.skip.T
    return out


def stack_forward(stack: StackParams, x) -> np.ndarray:
    """Evaluate one stack on a vector ``(d_in,)`` or a batch ``(N, d_in)``."""
    X, single = _as_batch(x, stack.in_dim)
    out = _stack_apply(stack, X)
    return out[0] if single else out


def _activate(z, kind: str):
    return relu(z) if kind == "relu" else z


def forward(net: NetworkParams, arch: Architecture, x) -> np.ndarray:
    """Evaluate the network; accepts a single input or a batch of rows."""
    check_arch(net, arch)
    X, single = _as_batch(x, arch.d_in)
    h = X
    for j, stack in enumerate(net):
        if j > 0:
            h = _activate(h, arch.inner_activation)
        h = _stack_apply(stack, h)
    # identity link
    return h[0] if single else h


def stack_outputs(net: NetworkParams, arch: Architecture, x) -> list[np.ndarray]:
    """Outputs of the partial compositions NN(1), NN(2)∘σ∘NN(1), ... on a batch."""
    check_arch(net, arch)
    X, _ = _as_batch(x, arch.d_in)
    outs = []
    h = X
    for j, stack in enumerate(net):
        if j > 0:
            h = _activate(h, arch.inner_activation)
        h = _stack_apply(stack, h)
        outs.append(h)
    return outs


def rescale_neuron(stack: StackParams, k: int, alpha: float) -> StackParams:
    """Scale the k-th neuron's (v_k, b_k) by alpha and w_k by 1/alpha."""
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if not 0 <= k < stack.width:
        raise IndexError(f"neuron index {k} out of range for width {stack.width}")
    v = np.array(stack.v)
    b = np.array(stack.b)
    w = np.array(stack.w)
    v[k] *= alpha
    b[k] *= alpha
    w[:, k] /= alpha
    return stack.replace(v=v, b=b, w=w)


def balance(stack: StackParams) -> StackParams:
    """Rescale every neuron so that sqrt(|v_k|^2 + b_k^2) == |w_k|.

    This minimises the squared parameter norm over the function-preserving
    rescalings. Neurons whose inner or outer part vanishes contribute nothing
    to the function and are zeroed. Factored skips ``(A2, A1)`` are rebalanced
    to the SVD factorisation, which minimises ``|A1|_F^2 + |A2|_F^2`` for the
    product.
    """
    v = np.array(stack.v)
    b = np.array(stack.b)
    w = np.array(stack.w)
    inner = np.sqrt(np.sum(v**2, axis=1) + b**2)
    outer = np.linalg.norm(w, axis=0)
    dead = (inner == 0) | (outer == 0)
    alpha = np.ones_like(inner)
    live = ~dead
    alpha[live] = np.sqrt(outer[live] / inner[live])
    v *= alpha[:, None]
    b *= alpha
    w /= alpha[None, :]
    v[dead] = 0.0
    b[dead] = 0.0
    w[:, dead] = 0.0
    skip = stack.skip
    if isinstance(skip, tuple):
        skip = balance_factorization(skip[0] @ skip[1], skip[0].shape[1])
    return stack.replace(v=v, b=b, w=w, skip=skip)


def balance_factorization(A: np.ndarray, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Factor ``A = A2 @ A1`` with inner dimension m minimising the Frobenius sum.

    Needs ``m >= rank(A)``; the minimum equals twice the Schatten-1 norm.
    """
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    r = len(s)
    if m < r and np.any(s[m:] > 1e-12 * max(1.0, s[0])):
        raise ValueError(f"inner dimension {m} is smaller than rank of A")
    root = np.sqrt(s[: min(m, r)])
    A2 = np.zeros((A.shape[0], m))
    A1 = np.zeros((m, A.shape[1]))
    A2[:, : len(root)] = U[:, : len(root)] * root
    A1[: len(root)] = root[:, None] * Vt[: len(root)]
    return A2, A1


def balance_network(net: NetworkParams) -> NetworkParams:
    return NetworkParams(tuple(balance(s) for s in net))


def param_norm_sq(net: NetworkParams | StackParams) -> float:
    """Sum of squares of every trainable entry, including c and skips."""
    return float(sum(np.sum(a**2) for a in net.arrays()))


def kinks(stack: StackParams, tol: float = DEGENERATE_TOL) -> KinkAtomView:
    if not tol > 0:
        raise ValueError("tol must be positive")
    norms = np.linalg.norm(stack.v, axis=1)
    degenerate = norms < tol
    safe = np.where(degenerate, 1.0, norms)
    direction = np.where(degenerate[:, None], 0.0, stack.v / safe[:, None])
    offset = np.where(degenerate, 0.0, -stack.b / safe)
    return KinkAtomView(direction, offset, np.array(stack.w), norms, degenerate)


# -- flat vector views, used by the optimiser ---------------------------------


def to_vector(net: NetworkParams) -> np.ndarray:
    return np.concatenate([a.ravel() for a in net.arrays()])


def from_vector(template: NetworkParams, vec: np.ndarray) -> NetworkParams:
    vec = np.asarray(vec, dtype=float)
    expected = sum(a.size for a in template.arrays())
    if vec.shape != (expected,):
        raise ShapeError(f"vector of shape {vec.shape} does not match template ({expected},)")
    pos = 0

    def take(shape):
        nonlocal pos
        size = int(np.prod(shape))
        out = vec[pos : pos + size].reshape(shape)
        pos += size
        return out

    stacks = []
    for s in template:
        v, b, w, c = take(s.v.shape), take(s.b.shape), take(s.w.shape), take(s.c.shape)
        skip = None
        if isinstance(s.skip, tuple):
            skip = (take(s.skip[0].shape), take(s.skip[1].shape))
        elif s.skip is not None:
            skip = take(s.skip.shape)
        stacks.append(StackParams(v, b, w, c, skip))
    return NetworkParams(tuple(stacks))


# -- plain-text serialisation -------------------------------------------------


def _write_block(out, name: str, arr: np.ndarray):
    arr = np.atleast_2d(arr) if arr.ndim == 2 else arr
    shape = " ".join(str(s) for s in arr.shape)
    out.write(f"{name} {shape}\n")
    flat = arr.ravel()
    if flat.size:
        out.write(" ".join(repr(float(x)) for x in flat) + "\n")


def dumps(net: NetworkParams, arch: Architecture | None = None) -> str:
    """Serialise parameters to the plain-text format.

    Layout::

        # relurep-params 1
        activation <identity|relu>
        stacks <count>
        stack <j> in <d_in> out <d_out> width <n> skip <kind>
        v <n> <d_in>
        <row-major numbers>
        b <n>
        ...

    Numbers use Python's shortest round-trip repr; a block with zero entries
    has no data line.
    """
    out = io.StringIO()
    out.write(FORMAT_HEADER + "\n")
    out.write(f"activation {arch.inner_activation if arch else 'identity'}\n")
    out.write(f"stacks {len(net)}\n")
    for j, s in enumerate(net, start=1):
        out.write(f"stack {j} in {s.in_dim} out {s.out_dim} width {s.width} skip {s.skip_kind}\n")
        _write_block(out, "v", s.v)
        _write_block(out, "b", s.b)
        _write_block(out, "w", s.w)
        _write_block(out, "c", s.c)
        if s.skip_kind == "linear":
            _write_block(out, "A", s.skip)
        elif s.skip_kind == "factored_linear":
            _write_block(out, "A2", s.skip[0])
            _write_block(out, "A1", s.skip[1])
    return out.getvalue()


def loads(text: str) -> tuple[NetworkParams, Architecture]:
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines or lines[0] != FORMAT_HEADER:
        raise ValueError("not a relurep parameter file")
    it = iter(lines[1:])

    def expect(key):
        parts = next(it).split()
        if parts[0] != key:
            raise ValueError(f"expected {key!r}, got {parts[0]!r}")
        return parts[1:]

    def block(key):
        shape = tuple(int(s) for s in expect(key))
        size = int(np.prod(shape))
        data = np.array([float(t) for t in next(it).split()]) if size else np.zeros(0)
        if data.size != size:
            raise ValueError(f"block {key} has {data.size} numbers, expected {size}")
        return data.reshape(shape)

    activation = expect("activation")[0]
    count = int(expect("stacks")[0])
    stacks = []
    for _ in range(count):
        hdr = expect("stack")
        kind = hdr[hdr.index("skip") + 1]
        v, b, w, c = block("v"), block("b"), block("w"), block("c")
        skip = None
        if kind == "linear":
            skip = block("A")
        elif kind == "factored_linear":
            skip = (block("A2"), block("A1"))
        stacks.append(StackParams(v, b, w, c, skip))
    net = NetworkParams(tuple(stacks))
    return net, architecture_of(net, activation)


def make_stack(
    v: Sequence, b: Sequence, w: Sequence, c: Sequence, skip=None
) -> StackParams:
    """Build a stack from nested lists, promoting scalars for 1-d convenience."""
    v = np.asarray(v, dtype=float)
    b = np.atleast_1d(np.asarray(b, dtype=float))
    w = np.asarray(w, dtype=float)
    c = np.atleast_1d(np.asarray(c, dtype=float))
    n = b.shape[0]
    if v.ndim < 2:
        v = v.reshape(n, -1)
    if w.ndim < 2:
        w = w.reshape(c.shape[0], n)
    if skip is not None and not isinstance(skip, tuple):
        skip = np.asarray(skip, dtype=float).reshape(c.shape[0], v.shape[1])
    return StackParams(v, b, w, c, skip)
