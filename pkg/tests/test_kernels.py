import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from stepmono import kernels as K
from stepmono.gradcheck import numerical_gradient, relative_error


def zero_params(a=4, dq=3, dk=2, bias=0.0, noise=0.0):
    return K.EnergyParams(
        query_weight=np.zeros((a, dq)), key_weight=np.zeros((a, dk)),
        hidden_bias=np.zeros(a), direction=np.zeros(a), gain=1.0, bias=bias, noise_scale=noise)


def random_params(rng, a=4, dq=3, dk=2, loc=0, noise=0.0):
    return K.EnergyParams(
        query_weight=rng.uniform(-1, 1, (a, dq)), key_weight=rng.uniform(-1, 1, (a, dk)),
        hidden_bias=rng.uniform(-1, 1, a), direction=rng.uniform(-1, 1, a),
        gain=rng.uniform(0.5, 1.5), bias=rng.uniform(-1, 1), noise_scale=noise,
        location_weight=rng.uniform(-1, 1, (a, loc)) if loc else None)


# -- energies ------------------------------------------------------------------

@pytest.mark.parametrize("bias", [3.5, 0.0])
def test_energy_only_bias_survives(bias):
    e = K.compute_energy(np.zeros(3), np.zeros((5, 2)), zero_params(bias=bias))
    assert np.array_equal(e, np.full(5, bias))


def test_energy_noise_matches_seeded_stream():
    params = zero_params(noise=2.0)
    e = K.compute_energy(np.zeros(3), np.zeros((6, 2)), params, training=True,
                         rng=np.random.default_rng(11))
    expected = 2.0 * np.random.default_rng(11).standard_normal(6)
    assert np.array_equal(e, expected)
    again = K.compute_energy(np.zeros(3), np.zeros((6, 2)), params, training=True,
                             rng=np.random.default_rng(11))
    assert np.array_equal(e, again)


def test_energy_noise_off_at_inference():
    params = zero_params(bias=1.0, noise=2.0)
    e = K.compute_energy(np.zeros(3), np.zeros((4, 2)), params, training=False)
    assert np.array_equal(e, np.ones(4))


def test_energy_rejects_bad_inputs():
    params = zero_params()
    with pytest.raises(K.RejectedInput):
        K.compute_energy(np.zeros(4), np.zeros((5, 2)), params)
    with pytest.raises(K.RejectedInput):
        K.compute_energy(np.zeros(3), np.zeros((5, 7)), params)
    with pytest.raises(K.RejectedInput):
        K.compute_energy(np.zeros(3), np.zeros((5, 2)), zero_params(noise=1.0), training=True)
    with pytest.raises(K.RejectedInput):
        K.EnergyParams(np.zeros((1, 1)), np.zeros((1, 1)), np.zeros(1), np.ones(1), gain=0.0)


def test_energy_direction_is_weight_normalised():
    rng = np.random.default_rng(0)
    params = random_params(rng)
    scaled = K.EnergyParams(**{**params.__dict__, "direction": params.direction * 7.3})
    q, m = rng.normal(size=3), rng.normal(size=(5, 2))
    assert np.allclose(K.compute_energy(q, m, params), K.compute_energy(q, m, scaled))
    assert np.linalg.norm(params.unit_direction()) == pytest.approx(1.0)


# -- softmax, context, location --------------------------------------------------

def test_softmax_examples():
    assert np.allclose(K.softmax_alignment(np.zeros(3)), [1 / 3] * 3)
    big = K.softmax_alignment(np.array([1000.0, 0.0, 0.0]))
    assert np.all(np.isfinite(big)) and big[0] == pytest.approx(1.0)
    # exp(ln k) / sum = k / 6
    assert np.allclose(K.softmax_alignment(np.log([1.0, 2.0, 3.0])), [1 / 6, 2 / 6, 3 / 6])


def test_context_vector_examples():
    memory = np.arange(12.0).reshape(4, 3)
    assert np.array_equal(K.context_vector(K.one_hot(4, 2), memory), memory[2])
    r = np.array([1.5, -2.0, 0.25])
    assert np.allclose(K.context_vector(np.full(5, 0.2), np.tile(r, (5, 1))), r)
    out = K.context_vector(np.array([0.25, 0.75]), np.array([[0.0, 0.0], [4.0, 8.0]]))
    assert np.allclose(out, [3.0, 6.0])
    with pytest.raises(K.RejectedInput):
        K.context_vector(np.ones(3) / 3, memory)


def test_location_features_examples():
    prev = np.array([0.1, 0.6, 0.3])
    assert np.allclose(K.location_features(prev, np.array([[0.0, 1.0, 0.0]]))[:, 0], prev)
    assert np.array_equal(K.location_features(prev, np.zeros((2, 3))), np.zeros((3, 2)))
    box = K.location_features(K.one_hot(4, 1), np.array([[1.0, 1.0, 1.0]]))
    assert np.array_equal(box[:, 0], [1.0, 1.0, 1.0, 0.0])
    with pytest.raises(K.RejectedInput):
        K.location_features(prev, np.ones((1, 2)))


# -- selection probabilities --------------------------------------------------------

def test_selection_probability_examples():
    assert K.selection_probabilities(np.array(0.0)) == 0.5
    assert K.selection_probabilities(np.array(3.5)) == pytest.approx(1 / (1 + math.exp(-3.5)), abs=1e-15)
    assert K.selection_probabilities(np.array(3.5)) == pytest.approx(0.9707, abs=5e-5)
    assert K.selection_probabilities(np.array(1e9)) == 1 - K.EPS_PROB
    assert K.selection_probabilities(np.array(-1e9)) == K.EPS_PROB


# -- monotonic attention -------------------------------------------------------------

def test_ma_recursive_examples():
    assert np.allclose(K.ma_alignment_recursive([1.0], [0.7]), [0.7])
    # stop at 1 w.p. .5, move then stop at 2 w.p. .5 * .5
    assert np.allclose(K.ma_alignment_recursive([1.0, 0.0], [0.5, 0.5]), [0.5, 0.25])
    assert np.allclose(K.ma_alignment_recursive([0.0, 1.0], [0.9, 0.4]), [0.0, 0.4])


def test_ma_parallel_examples():
    out, clamped = K.ma_alignment_parallel([1.0, 0.0], [0.5, 0.5])
    assert np.allclose(out, [0.5, 0.25]) and not clamped


def test_ma_parallel_matches_recursive_on_nondegenerate_inputs():
    rng = np.random.default_rng(3)
    for _ in range(200):
        n = int(rng.integers(1, 65))
        prev = rng.dirichlet(np.ones(n)) * rng.uniform(0.2, 1.0)
        p = rng.uniform(0.01, 0.99, n)
        par, _ = K.ma_alignment_parallel(prev, p)
        assert np.max(np.abs(par - K.ma_alignment_recursive(prev, p))) <= 1e-10


@pytest.mark.parametrize("stay,floor", [(0.99, 1e-10), (1 - 1e-8, K.EPS_DENOM)])
def test_ma_parallel_underflow_stress(stay, floor):
    n = 50
    prev = K.one_hot(n, 0)
    p = np.full(n, stay)
    par, clamped = K.ma_alignment_parallel(prev, p, eps_denom=floor)
    assert clamped
    assert np.max(np.abs(par - K.ma_alignment_recursive(prev, p))) <= 1e-6


def test_ma_parallel_coarse_floor_breaks_agreement():
    rng = np.random.default_rng(3)
    prev = rng.dirichlet(np.ones(64))
    p = rng.uniform(0.01, 0.99, 64)
    coarse, clamped = K.ma_alignment_parallel(prev, p, eps_denom=1e-10)
    assert clamped
    assert np.max(np.abs(coarse - K.ma_alignment_recursive(prev, p))) > 1e-10
    fine, clamped = K.ma_alignment_parallel(prev, p)
    assert not clamped


def test_ma_recursive_handles_leading_axes():
    rng = np.random.default_rng(5)
    prev = rng.dirichlet(np.ones(6), size=(3, 2))
    p = rng.uniform(0.05, 0.95, (3, 2, 6))
    batched = K.ma_alignment_recursive(prev, p)
    for a in range(3):
        for b in range(2):
            assert np.allclose(batched[a, b], K.ma_alignment_recursive(prev[a, b], p[a, b]))


# -- stepwise monotonic attention ---------------------------------------------------

def test_sma_examples():
    assert np.array_equal(K.sma_alignment([1.0], [0.3], "clamp"), [1.0])
    row = K.one_hot(3, 0)
    zeros = np.zeros(3)
    row = K.sma_alignment(row, zeros, "clamp")
    assert np.array_equal(row, [0, 1, 0])
    row = K.sma_alignment(row, zeros, "clamp")
    assert np.array_equal(row, [0, 0, 1])
    # j=1: .5*.2; j=2: .5*.8 + .5*.6; j=3: .5*.4
    assert np.allclose(K.sma_alignment([0.5, 0.5, 0.0], [0.2, 0.6, 0.9]), [0.1, 0.7, 0.2])


def test_sma_degenerate_limits():
    prev = np.array([0.1, 0.2, 0.3, 0.4])
    for policy in K.EDGE_POLICIES:
        assert np.array_equal(K.sma_alignment(prev, np.ones(4), policy), prev)
    assert np.allclose(K.sma_alignment(prev, np.zeros(4), "clamp"), [0.0, 0.1, 0.2, 0.7])
    assert np.allclose(K.sma_alignment(prev, np.zeros(4), "leak"), [0.0, 0.1, 0.2, 0.3])


def test_sma_rejects_unknown_policy():
    with pytest.raises(K.RejectedInput):
        K.sma_alignment([1.0], [0.5], "wrap")


unit_floats = st.floats(min_value=1e-7, max_value=1 - 1e-7)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 12).flatmap(lambda n: st.tuples(
    arrays(float, n, elements=st.floats(0, 1)), arrays(float, n, elements=unit_floats))))
def test_sma_mass_laws_and_support(case):
    prev, p = case
    leak = K.sma_alignment(prev, p, "leak")
    clamp = K.sma_alignment(prev, p, "clamp")
    assert np.all(leak >= 0) and np.all(clamp >= 0)
    assert abs(leak.sum() - (prev.sum() - prev[-1] * (1 - p[-1]))) <= 1e-12
    assert abs(clamp.sum() - prev.sum()) <= 1e-12
    allowed = prev > 0
    allowed[1:] |= prev[:-1] > 0
    assert np.all(leak[~allowed] == 0) and np.all(clamp[~allowed] == 0)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 12).flatmap(lambda n: st.tuples(
    arrays(float, n, elements=st.floats(0, 1)), arrays(float, n, elements=unit_floats))))
def test_ma_mass_never_grows(case):
    prev, p = case
    out = K.ma_alignment_recursive(prev, p)
    assert np.all(out >= 0)
    assert out.sum() <= prev.sum() + 1e-12


def test_sma_clamp_keeps_distribution_proper():
    rng = np.random.default_rng(9)
    row = K.one_hot(7)
    for _ in range(500):
        row = K.sma_alignment(row, rng.uniform(1e-7, 1 - 1e-7, 7), "clamp")
        assert abs(row.sum() - 1.0) <= 1e-12 and np.all(row >= 0)


def test_kernels_deterministic():
    rng = np.random.default_rng(1)
    prev, p = rng.dirichlet(np.ones(9)), rng.uniform(0.01, 0.99, 9)
    for fn in (K.ma_alignment_recursive, K.sma_alignment):
        assert np.array_equal(fn(prev, p), fn(prev.copy(), p.copy()))


# -- forward attention ------------------------------------------------------------

def test_forward_attention_examples():
    state = K.ForwardAttentionState(K.one_hot(2, 0))
    row, _, fb = K.forward_attention_step(state, np.array([0.5, 0.5]))
    assert np.allclose(row, [0.5, 0.5]) and not fb

    state = K.ForwardAttentionState(K.one_hot(3, 0))
    y = K.one_hot(3, 2)
    row, _, fb = K.forward_attention_step(state, y)
    assert fb and np.array_equal(row, y)

    state = K.ForwardAttentionState(K.one_hot(2, 0), transition_prob=1.0)
    row, new_state, fb = K.forward_attention_step(state, np.array([0.5, 0.5]), use_transition_agent=True)
    assert np.allclose(row, [0.0, 1.0]) and not fb
    assert new_state.transition_prob == 1.0


def test_forward_attention_requires_u_with_agent():
    with pytest.raises(K.RejectedInput):
        K.forward_attention_step(K.ForwardAttentionState(K.one_hot(2)), np.ones(2) / 2, True)


# -- GMM attention ------------------------------------------------------------------

def gmm_single(center, width, n, normalize=False):
    state = K.GmmAttentionState(np.ones(1), np.array([center]), np.ones(1))
    # zero shift would still move centres by exp(raw); push raw shift to -inf
    upd = K.GmmUpdates(np.zeros(1), np.array([-np.inf]), np.array([np.log(width)]))
    return K.gmm_attention_step(state, upd, n, normalize)


def test_gmm_examples():
    row, _ = gmm_single(2.0, 50.0, 3)
    assert np.allclose(row, [0.0, 1.0, 0.0], atol=1e-12)
    row, _ = gmm_single(1.5, 1e-9, 3, normalize=True)
    assert np.allclose(row, [1 / 3] * 3, atol=1e-6)

    state = K.GmmAttentionState(np.ones(2) / 2, np.array([1.0, 3.0]), np.ones(2))
    upd = K.GmmUpdates(np.zeros(2), np.full(2, -np.inf), np.zeros(2))
    row, _ = K.gmm_attention_step(state, upd, 3)
    assert row[0] == pytest.approx(row[2]) and row[1] != pytest.approx(row[0])


def test_gmm_centres_move_forward():
    rng = np.random.default_rng(2)
    state = K.GmmAttentionState.initial()
    for _ in range(10):
        upd = K.GmmUpdates(*(rng.normal(size=K.DEFAULT_COMPONENTS) for _ in range(3)))
        row, new = K.gmm_attention_step(state, upd, 8)
        assert np.all(new.centers >= state.centers) and np.all(new.widths > 0)
        assert np.all(row >= 0)
        state = new


# -- adjoints vs central finite differences ---------------------------------------

def fd_check(loss, analytic, arrays_, tol=1e-4):
    for a, x in zip(analytic, arrays_):
        assert relative_error(a, numerical_gradient(loss, x)) <= tol


@pytest.mark.parametrize("seed", range(5))
def test_adjoint_energy(seed):
    rng = np.random.default_rng(seed)
    params = random_params(rng, loc=2)
    q, m = rng.uniform(-1, 1, 3), rng.uniform(-1, 1, (5, 2))
    loc = rng.uniform(-1, 1, (5, 2))
    up = rng.uniform(-1, 1, 5)

    def loss():
        return float(up @ K.compute_energy(q, m, params, location=loc))

    g = K.adjoint_energy(q, m, params, up, location=loc)
    fd_check(loss, [g.query, g.memory, g.location, g.query_weight, g.key_weight, g.hidden_bias,
                    g.direction, g.location_weight],
             [q, m, loc, params.query_weight, params.key_weight, params.hidden_bias,
              params.direction, params.location_weight])
    for name in ("gain", "bias"):
        base = getattr(params, name)

        def scalar_loss(v):
            setattr(params, name, v)
            out = loss()
            setattr(params, name, base)
            return out

        num = (scalar_loss(base + 1e-5) - scalar_loss(base - 1e-5)) / 2e-5
        assert relative_error(getattr(g, name), num) <= 1e-4


def test_adjoint_energy_batched():
    rng = np.random.default_rng(7)
    params = random_params(rng)
    q, m = rng.uniform(-1, 1, (2, 3)), rng.uniform(-1, 1, (2, 4, 2))
    up = rng.uniform(-1, 1, (2, 4))
    g = K.adjoint_energy(q, m, params, up)
    fd_check(lambda: float(np.sum(up * K.compute_energy(q, m, params))),
             [g.query, g.memory, g.key_weight], [q, m, params.key_weight])


@pytest.mark.parametrize("seed", range(5))
def test_adjoint_softmax_and_context(seed):
    rng = np.random.default_rng(seed)
    e, up = rng.uniform(-1, 1, 6), rng.uniform(-1, 1, 6)
    fd_check(lambda: float(up @ K.softmax_alignment(e)), [K.adjoint_softmax_alignment(e, up)], [e])

    a, m, upc = rng.uniform(-1, 1, 5), rng.uniform(-1, 1, (5, 3)), rng.uniform(-1, 1, 3)
    ga, gm = K.adjoint_context_vector(a, m, upc)
    assert np.allclose(ga, m @ upc)  # bilinearity: <upstream, memory row j>
    fd_check(lambda: float(upc @ K.context_vector(a, m)), [ga, gm], [a, m])


def test_adjoint_softmax_symmetry():
    g = K.adjoint_softmax_alignment(np.array([0.3, 0.3, 0.3]), np.array([1.0, -2.0, 1.0]))
    assert g[0] == pytest.approx(g[2])


@pytest.mark.parametrize("seed", range(5))
def test_adjoint_location_and_probs(seed):
    rng = np.random.default_rng(seed)
    prev, filt, up = rng.uniform(-1, 1, 7), rng.uniform(-1, 1, (3, 5)), rng.uniform(-1, 1, (7, 3))
    gp, gf = K.adjoint_location_features(prev, filt, up)
    fd_check(lambda: float(np.sum(up * K.location_features(prev, filt))), [gp, gf], [prev, filt])

    e, upp = rng.uniform(-3, 3, 6), rng.uniform(-1, 1, 6)
    fd_check(lambda: float(upp @ K.selection_probabilities(e)),
             [K.adjoint_selection_probabilities(e, upp)], [e])


@pytest.mark.parametrize("seed", range(5))
def test_adjoint_ma(seed):
    rng = np.random.default_rng(seed)
    prev, p, up = rng.uniform(-1, 1, 6), rng.uniform(0.05, 0.95, 6), rng.uniform(-1, 1, 6)
    gprev, gp = K.adjoint_ma_alignment_recursive(prev, p, up)
    fd_check(lambda: float(up @ K.ma_alignment_recursive(prev, p)), [gprev, gp], [prev, p])
    gprev2, gp2 = K.adjoint_ma_alignment_parallel(prev, p, up)
    fd_check(lambda: float(up @ K.ma_alignment_parallel(prev, p)[0]), [gprev2, gp2], [prev, p])


@pytest.mark.parametrize("policy", K.EDGE_POLICIES)
@pytest.mark.parametrize("seed", range(5))
def test_adjoint_sma_iterated_4x5(policy, seed):
    rng = np.random.default_rng(seed)
    prev0 = rng.uniform(-1, 1, 5)
    p = rng.uniform(0.05, 0.95, (4, 5))
    up = rng.uniform(-1, 1, (4, 5))

    def forward():
        rows, prev = [], prev0
        for t in range(4):
            prev = K.sma_alignment(prev, p[t], policy)
            rows.append(prev)
        return rows

    rows = forward()
    g_prev = up[3].copy()
    g_p = np.zeros_like(p)
    for t in range(3, -1, -1):
        inp = prev0 if t == 0 else rows[t - 1]
        gi, g_p[t] = K.adjoint_sma_alignment(inp, p[t], g_prev, policy)
        g_prev = gi + (up[t - 1] if t > 0 else 0.0)
    fd_check(lambda: float(sum(up[t] @ r for t, r in enumerate(forward()))), [g_prev, g_p], [prev0, p])


@pytest.mark.parametrize("agent", [False, True])
@pytest.mark.parametrize("seed", range(5))
def test_adjoint_forward_attention(agent, seed):
    rng = np.random.default_rng(seed)
    prev, y, up = rng.dirichlet(np.ones(5)), rng.dirichlet(np.ones(5)), rng.uniform(-1, 1, 5)
    u = np.array(rng.uniform(0.1, 0.9))

    def loss():
        state = K.ForwardAttentionState(prev, float(u) if agent else None)
        return float(up @ K.forward_attention_step(state, y, agent)[0])

    gprev, gy, gu = K.adjoint_forward_attention_step(prev, y, up, float(u) if agent else None)
    fd_check(loss, [gprev, gy], [prev, y])
    if agent:
        assert relative_error(gu, numerical_gradient(loss, u)) <= 1e-4
    else:
        assert gu is None


def test_adjoint_forward_attention_fallback():
    prev, y = K.one_hot(3, 0), np.array([1e-40, 1e-40, 1.0])
    up = np.array([0.3, -0.2, 0.5])
    _, _, fb = K.forward_attention_step(K.ForwardAttentionState(prev), y)
    assert fb
    gprev, gy, _ = K.adjoint_forward_attention_step(prev, y, up)
    assert np.array_equal(gprev, np.zeros(3))
    # the fallback branch is y / sum(y); its own finite differences are the oracle
    y_fd = y.copy()
    fd_check(lambda: float(up @ (y_fd / y_fd.sum())), [gy], [y_fd])


@pytest.mark.parametrize("normalize", [False, True])
@pytest.mark.parametrize("seed", range(5))
def test_adjoint_gmm(normalize, seed):
    rng = np.random.default_rng(seed)
    k, n = 3, 6
    centers = rng.uniform(0, 4, k)
    upd = K.GmmUpdates(rng.uniform(-1, 1, k), rng.uniform(-1, 1, k), rng.uniform(-2, 0, k))
    up_row, up_c = rng.uniform(-1, 1, n), rng.uniform(-1, 1, k)

    def loss():
        row, st_ = K.gmm_attention_step(K.GmmAttentionState(None, centers, None), upd, n, normalize)
        return float(up_row @ row + up_c @ st_.centers)

    gc, gu = K.adjoint_gmm_attention_step(centers, upd, n, up_row, up_c, normalize)
    fd_check(loss, [gc, gu.raw_weights, gu.raw_shift, gu.raw_widths],
             [centers, upd.raw_weights, upd.raw_shift, upd.raw_widths])
