import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relurep import net as nn
from relurep.net import make_stack

from conftest import naive_forward, random_arch, random_net


def one_neuron(v=1.0, b=0.0, w=2.0, c=0.0, skip=None):
    return make_stack([[v]], [b], [[w]], [c], skip)


# -- stack_forward ------------------------------------------------------------


def test_zero_stack_gives_zero():
    s = nn.zero_network(nn.Architecture((3, 2), (4,)))[0]
    assert np.array_equal(nn.stack_forward(s, [1.0, -2.0, 5.0]), np.zeros(2))


def test_single_neuron_relu():
    s = one_neuron()
    assert nn.stack_forward(s, 3.0)[0] == 6.0
    assert nn.stack_forward(s, -3.0)[0] == 0.0


def test_linear_skip_hand_value():
    s = one_neuron(v=1.0, b=-1.0, w=1.0, c=0.5, skip=[[2.0]])
    # relu(2 - 1) + 0.5 + 2 * 2
    assert nn.stack_forward(s, 2.0)[0] == pytest.approx(5.5, abs=1e-15)


def test_relu_at_zero_is_zero():
    s = one_neuron(v=1.0, b=-1.0, w=3.0)
    assert nn.stack_forward(s, 1.0)[0] == 0.0


def test_shape_mismatch_raises():
    s = nn.zero_network(nn.Architecture((3, 2), (4,)))[0]
    with pytest.raises(nn.ShapeError):
        nn.stack_forward(s, [1.0, 2.0])
    with pytest.raises(nn.ShapeError):
        nn.StackParams(np.zeros((4, 3)), np.zeros(5), np.zeros((2, 4)), np.zeros(2))


def test_non_finite_params_rejected():
    with pytest.raises(ValueError):
        one_neuron(v=np.nan)


# -- forward ------------------------------------------------------------------


def test_one_stack_forward_equals_stack_forward(rng):
    arch = nn.Architecture((2, 3), (5,), skips=("linear",))
    net = random_net(rng, arch)
    X = rng.standard_normal((100, 2))
    batch = nn.forward(net, arch, X)
    for x, y in zip(X, batch):
        assert np.allclose(nn.stack_forward(net[0], x), y, rtol=0, atol=1e-14)


def test_two_stacks_constant_only_by_hand():
    # stack 1 outputs its constant c1 = 3; stack 2 sees 3 and has one neuron
    s1 = make_stack([[0.0]], [0.0], [[0.0]], [3.0])
    s2 = make_stack([[2.0]], [-1.0], [[0.5]], [1.0])
    net = nn.NetworkParams((s1, s2))
    arch = nn.architecture_of(net)
    # 0.5 * relu(2 * 3 - 1) + 1
    assert nn.forward(net, arch, 7.0)[0] == pytest.approx(3.5, abs=1e-15)


def test_three_stacks_match_naive_evaluator(rng):
    arch = nn.Architecture((3, 5, 4, 2), (16, 7, 9), skips=("linear", "factored_linear", "none"))
    net = random_net(rng, arch)
    for x in rng.standard_normal((25, 3)):
        assert np.allclose(nn.forward(net, arch, x), naive_forward(net, arch, x), rtol=1e-12, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_forward_matches_naive_on_random_architectures(seed):
    rng = np.random.default_rng(seed)
    arch = random_arch(rng, max_dim=5, max_width=16)
    net = random_net(rng, arch)
    x = rng.standard_normal(arch.d_in)
    ref = naive_forward(net, arch, x)
    got = nn.forward(net, arch, x)
    assert np.allclose(got, ref, rtol=1e-12, atol=1e-12 * max(1.0, np.abs(ref).max()))


def test_inconsistent_arch_rejected(rng):
    arch = nn.Architecture((1, 2), (3,))
    net = random_net(rng, arch)
    with pytest.raises(nn.ShapeError):
        nn.forward(net, nn.Architecture((1, 2), (4,)), 0.5)


def test_stack_chaining_checked():
    s1 = make_stack([[1.0]], [0.0], [[1.0], [1.0]], [0.0, 0.0])  # 1 -> 2
    s2 = make_stack([[1.0]], [0.0], [[1.0]], [0.0])  # 1 -> 1
    with pytest.raises(nn.ShapeError):
        nn.NetworkParams((s1, s2))


def test_architecture_validation():
    with pytest.raises(ValueError):
        nn.Architecture((1, 2, 3), (4,))
    with pytest.raises(ValueError):
        nn.Architecture((1, 0), (4,))
    with pytest.raises(ValueError):
        nn.Architecture((1, 2), (4,), inner_activation="tanh")


def test_stack_outputs_end_with_forward(rng):
    arch = nn.Architecture((1, 1, 1, 3), (4, 4, 4), skips=("factored_linear",) * 3)
    net = random_net(rng, arch)
    X = rng.standard_normal((10, 1))
    outs = nn.stack_outputs(net, arch, X)
    assert [o.shape for o in outs] == [(10, 1), (10, 1), (10, 3)]
    assert np.array_equal(outs[-1], nn.forward(net, arch, X))


# -- rescaling and balancing --------------------------------------------------


def test_rescale_identity():
    s = one_neuron(v=1.5, b=-0.3, w=2.0)
    r = nn.rescale_neuron(s, 0, 1.0)
    for a, b in zip(s.arrays(), r.arrays()):
        assert np.array_equal(a, b)


def test_rescale_by_two():
    s = one_neuron(v=1.0, b=0.0, w=2.0)
    r = nn.rescale_neuron(s, 0, 2.0)
    assert (r.v[0, 0], r.b[0], r.w[0, 0]) == (2.0, 0.0, 1.0)
    xs = np.linspace(-5, 5, 1000)[:, None]
    assert np.allclose(nn.stack_forward(s, xs), nn.stack_forward(r, xs), rtol=0, atol=1e-12)


def test_rescale_tiny_alpha_keeps_function(rng):
    arch = nn.Architecture((2, 3), (6,))
    net = random_net(rng, arch)
    r = nn.rescale_neuron(net[0], 2, 1e-3)
    assert nn.param_norm_sq(r) != pytest.approx(nn.param_norm_sq(net[0]))
    X = rng.standard_normal((50, 2))
    a, b = nn.stack_forward(net[0], X), nn.stack_forward(r, X)
    assert np.allclose(a, b, rtol=1e-9, atol=1e-12)


@pytest.mark.parametrize("alpha", [0.0, -1.0])
def test_rescale_rejects_nonpositive(alpha):
    with pytest.raises(ValueError):
        nn.rescale_neuron(one_neuron(), 0, alpha)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
def test_positive_homogeneity(seed, alpha):
    rng = np.random.default_rng(seed)
    arch = random_arch(rng)
    net = random_net(rng, arch)
    j = int(rng.integers(arch.num_stacks))
    k = int(rng.integers(arch.widths[j]))
    stacks = list(net)
    stacks[j] = nn.rescale_neuron(stacks[j], k, alpha)
    other = nn.NetworkParams(tuple(stacks))
    X = rng.standard_normal((1000, arch.d_in))
    a, b = nn.forward(net, arch, X), nn.forward(other, arch, X)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12 * max(1.0, np.abs(a).max()))


def test_balance_hand_example():
    s = one_neuron(v=4.0, b=3.0, w=1.0)
    assert nn.param_norm_sq(s) == pytest.approx(26.0)
    bal = nn.balance(s)
    assert nn.param_norm_sq(bal) == pytest.approx(10.0, rel=1e-14)
    xs = np.linspace(-3, 3, 101)[:, None]
    assert np.allclose(nn.stack_forward(s, xs), nn.stack_forward(bal, xs), atol=1e-14)


def test_balance_minimises_over_alpha_numerically():
    # independent route: brute-force the best rescaling on a fine grid
    s = one_neuron(v=4.0, b=3.0, w=1.0)
    alphas = np.geomspace(0.05, 5, 200_001)
    norms = alphas**2 * 25.0 + 1.0 / alphas**2
    assert nn.param_norm_sq(nn.balance(s)) == pytest.approx(norms.min(), rel=1e-8)


def test_balance_fixed_point(rng):
    arch = nn.Architecture((2, 3), (5,))
    bal = nn.balance(random_net(rng, arch)[0])
    again = nn.balance(bal)
    for a, b in zip(bal.arrays(), again.arrays()):
        assert np.allclose(a, b, rtol=0, atol=1e-15 * max(1.0, np.abs(a).max()))


def test_balance_zero_stack():
    s = nn.zero_network(nn.Architecture((2, 2), (3,), skips=("factored_linear",)))[0]
    bal = nn.balance(s)
    assert all(np.all(a == 0) for a in bal.arrays())


def test_balance_zeroes_dead_neurons():
    s = make_stack([[1.0], [2.0]], [0.5, 1.0], [[0.0, 1.0]], [0.0])
    bal = nn.balance(s)
    assert bal.v[0, 0] == 0 and bal.b[0] == 0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_balance_never_increases_norm_and_keeps_function(seed):
    rng = np.random.default_rng(seed)
    arch = random_arch(rng)
    net = random_net(rng, arch, scale=float(rng.uniform(0.1, 3)))
    bal = nn.balance_network(net)
    assert nn.param_norm_sq(bal) <= nn.param_norm_sq(net) * (1 + 1e-12)
    X = rng.standard_normal((200, arch.d_in))
    a, b = nn.forward(net, arch, X), nn.forward(bal, arch, X)
    assert np.allclose(a, b, rtol=1e-10, atol=1e-10 * max(1.0, np.abs(a).max()))


def test_balanced_neurons_have_equal_halves(rng):
    bal = nn.balance(random_net(rng, nn.Architecture((3, 2), (7,)))[0])
    inner = np.sqrt(np.sum(bal.v**2, axis=1) + bal.b**2)
    assert np.allclose(inner, np.linalg.norm(bal.w, axis=0), rtol=1e-13)


def test_balance_factorization_reaches_twice_nuclear_norm(rng):
    A = rng.standard_normal((4, 3))
    A2, A1 = nn.balance_factorization(A, 3)
    assert np.allclose(A2 @ A1, A, atol=1e-13)
    nuc = np.linalg.svd(A, compute_uv=False).sum()
    assert np.sum(A2**2) + np.sum(A1**2) == pytest.approx(2 * nuc, rel=1e-12)


def test_factored_inner_dim():
    assert nn.factored_inner_dim(1, 7) == 1
    assert nn.factored_inner_dim(5, 3) == 3


# -- norms, kinks -------------------------------------------------------------


def test_param_norm_sq_examples(rng):
    assert nn.param_norm_sq(nn.zero_network(nn.Architecture((2, 2, 1), (3, 4)))) == 0.0
    assert nn.param_norm_sq(one_neuron(v=4.0, b=3.0, w=1.0)) == 26.0
    s = random_net(rng, nn.Architecture((2, 3), (6,), skips=("linear",)))[0]
    perm = rng.permutation(6)
    p = s.replace(v=s.v[perm], b=s.b[perm], w=s.w[:, perm])
    assert nn.param_norm_sq(p) == pytest.approx(nn.param_norm_sq(s), rel=1e-15)


def test_kinks_examples():
    view = nn.kinks(one_neuron(v=1.0, b=-1.0))
    assert view.direction[0, 0] == 1.0 and view.offset[0] == 1.0
    view = nn.kinks(one_neuron(v=-2.0, b=4.0))
    assert view.direction[0, 0] == -1.0
    # the kink sits where -2 x + 4 = 0
    assert view.position[0, 0] == 2.0
    assert view.offset[0] == -2.0
    view = nn.kinks(one_neuron(v=0.0, b=1.0))
    assert view.degenerate[0]


def test_kink_directions_are_unit(rng):
    s = random_net(rng, nn.Architecture((3, 1), (10,)))[0]
    view = nn.kinks(s)
    assert np.allclose(np.linalg.norm(view.direction, axis=1), 1.0, atol=1e-15)
    # each foot point lies on its neuron's hyperplane
    assert np.allclose(np.sum(s.v * view.position, axis=1) + s.b, 0.0, atol=1e-12)


def test_kinks_rejects_bad_tol():
    with pytest.raises(ValueError):
        nn.kinks(one_neuron(), tol=0.0)


# -- vector view and text format ----------------------------------------------


def test_vector_round_trip(rng):
    arch = nn.Architecture((2, 3, 1), (4, 5), skips=("linear", "factored_linear"))
    net = random_net(rng, arch)
    back = nn.from_vector(net, nn.to_vector(net))
    for a, b in zip(net.arrays(), back.arrays()):
        assert np.array_equal(a, b)
    with pytest.raises(nn.ShapeError):
        nn.from_vector(net, np.zeros(3))


def test_text_round_trip_is_exact(rng):
    arch = nn.Architecture((2, 3, 2), (4, 5), inner_activation="relu",
                           skips=("factored_linear", "linear"))
    net = random_net(rng, arch)
    text = nn.dumps(net, arch)
    assert text.startswith(nn.FORMAT_HEADER)
    back, arch2 = nn.loads(text)
    assert arch2 == arch
    for a, b in zip(net.arrays(), back.arrays()):
        assert np.array_equal(a, b)
    assert nn.dumps(back, arch2) == text


def test_loads_rejects_garbage():
    with pytest.raises(ValueError):
        nn.loads("hello")


def test_params_are_immutable():
    s = one_neuron()
    with pytest.raises(ValueError):
        s.v[0, 0] = 5.0
