import numpy as np
import pytest

from neuralrr import autodiff as ad
from neuralrr.autodiff import Tensor, finite_difference_check
from neuralrr.data import generate_dataset
from neuralrr.fairdiv import AgentPermutation, bundles, from_bundles, is_ef1, round_robin_induced
from neuralrr.model import (
    SVDConvergenceError,
    agent_features,
    hard_order,
    init_params,
    load_checkpoint,
    nrr_forward_train,
    nrr_infer,
    nrr_order,
    rank_vector,
    save_checkpoint,
    score_agents,
    score_agents_np,
    soft_sort,
    svd_embeddings,
    tie_break,
)
from neuralrr.training import cross_entropy_alloc_loss

from conftest import EXAMPLE_PROFILE, separated_profile


def _random_params(seed, rank=3, tau=1.0, tau_prime=1.0, spread=1.0):
    p = init_params(rank, seed, tau=tau, tau_prime=tau_prime)
    rng = np.random.default_rng([seed, 7])
    for t in p.tensors():
        t.data = rng.normal(scale=spread, size=t.shape)
    return p


# -- svd_embeddings ---------------------------------------------------------------


def test_svd_identity_has_unit_norm_column():
    E = svd_embeddings(np.eye(3), 1)
    assert E.shape == (3, 1)
    assert np.linalg.norm(E[:, 0]) == pytest.approx(1.0, abs=1e-9)


def test_svd_rank_one_is_u_times_norm_w():
    u = np.array([0.5, 1.0, 2.0, 0.25])
    w = np.array([3.0, 1.0, 2.0])
    E = svd_embeddings(np.outer(u, w), 1)
    np.testing.assert_allclose(E[:, 0], u * np.linalg.norm(w), rtol=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_svd_matches_dense_eigendecomposition(seed):
    V = np.random.default_rng(seed).uniform(size=(5, 8))
    r = 3
    E = svd_embeddings(V, r)
    # oracle: right singular vectors from eigh of V^T V
    evals, W = np.linalg.eigh(V.T @ V)
    W = W[:, np.argsort(evals)[::-1][:r]]
    best = V @ W @ W.T
    # U S = V W, so U_r S_r W_r^T = E W^T with E's own W recovered by projection
    U = E / np.linalg.norm(E, axis=0)
    recon = U @ U.T @ V
    assert np.abs(recon - best).max() < 1e-6
    sv = np.sqrt(np.sort(evals)[::-1][:r])
    np.testing.assert_allclose(np.linalg.norm(E, axis=0), sv, rtol=1e-8)


def test_svd_sign_convention_and_order():
    V = np.random.default_rng(3).uniform(size=(6, 9))
    E = svd_embeddings(V, 3)
    norms = np.linalg.norm(E, axis=0)
    assert np.all(np.diff(norms) <= 1e-12)
    lead = np.argmax(np.abs(E), axis=0)
    assert np.all(E[lead, np.arange(3)] >= 0)


def test_svd_rejects_bad_rank():
    for r in (0, 4):
        with pytest.raises(ValueError):
            svd_embeddings(np.ones((3, 5)), r)


def test_svd_names_iteration_cap():
    V = np.random.default_rng(0).uniform(size=(6, 6))
    with pytest.raises(SVDConvergenceError, match="2 iterations"):
        svd_embeddings(V, 3, max_iter=2, tol=0.0)


# -- features and scoring -----------------------------------------------------------


def test_agent_features_table1():
    F = agent_features(EXAMPLE_PROFILE, 1)
    assert F.shape == (3, 3)
    np.testing.assert_array_equal(F[:, 1], [0, 0, 1])
    np.testing.assert_array_equal(F[:, 2], [3, 3, 4])


def test_agent_features_constant_profile():
    F = agent_features(np.full((4, 5), 1.7), 2)
    assert F.shape == (4, 4)
    np.testing.assert_array_equal(F[:, 2:], 1.7)


def test_score_agents_zero_weights():
    p = init_params(2, 0)
    for t in p.tensors():
        t.data[:] = 0.0
    s = score_agents(agent_features(EXAMPLE_PROFILE, 2), p)
    np.testing.assert_array_equal(s.data, np.zeros((3, 1)))


def test_score_agents_linear_row_max():
    p = init_params(1, 0, hidden=())
    p.weights[0].data[:] = [[0.0], [0.0], [1.0]]
    p.biases[0].data[:] = 0.0
    s = score_agents(agent_features(EXAMPLE_PROFILE, 1), p)
    np.testing.assert_array_equal(s.data[:, 0], EXAMPLE_PROFILE.max(axis=1))


def test_score_agents_width_mismatch():
    with pytest.raises(ValueError, match="width"):
        score_agents(np.ones((3, 4)), init_params(3, 0))


@pytest.mark.parametrize("seed", range(3))
def test_score_agents_gradient(seed):
    p = _random_params(seed, rank=2, spread=0.5)
    F = agent_features(np.random.default_rng(seed).uniform(size=(4, 6)), 2)
    assert finite_difference_check(lambda: ad.total(score_agents(F, p)), p.tensors()) < 1e-4


def test_score_agents_np_is_bit_identical():
    for seed in range(10):
        p = _random_params(seed)
        F = agent_features(np.random.default_rng(seed).uniform(size=(7, 9)), 3)
        np.testing.assert_array_equal(score_agents(F, p).data, score_agents_np(F, p))


# -- rank, tie break, soft sort, hard order ---------------------------------------------


def test_rank_vector_examples():
    assert rank_vector([2, 1, 2]).tolist() == [1, 0, 2]
    assert rank_vector([0.1, 0.5, 3.0, 7.0]).tolist() == [0, 1, 2, 3]
    assert rank_vector([4, 4, 4, 4]).tolist() == [0, 1, 2, 3]


def test_rank_vector_is_permutation():
    rng = np.random.default_rng(0)
    for _ in range(50):
        a = rng.integers(0, 4, size=int(rng.integers(1, 10)))
        assert sorted(rank_vector(a).tolist()) == list(range(a.size))


def test_tie_break_examples():
    np.testing.assert_array_equal(tie_break(Tensor([[2.0], [1.0], [2.0]])).data[:, 0], [3, 1, 4])
    a = np.array([0.3, -1.2, 0.9, 0.1])
    out = tie_break(Tensor(a.reshape(-1, 1))).data[:, 0]
    assert np.argsort(out).tolist() == np.argsort(a).tolist()


def test_tie_break_gradient_is_ones():
    a = Tensor(np.array([[0.5], [0.2], [0.5]]), requires_grad=True)
    ad.total(tie_break(a)).backward()
    np.testing.assert_array_equal(a.grad, np.ones((3, 1)))


def test_tie_break_is_injective():
    rng = np.random.default_rng(1)
    for _ in range(100):
        a = rng.integers(0, 3, size=(6, 1)).astype(float)
        assert np.unique(tie_break(Tensor(a)).data).size == 6


def test_soft_sort_examples():
    assert np.abs(soft_sort(Tensor([[0.0], [1.0]]), 1e-3).data - [[0, 1], [1, 0]]).max() < 1e-3
    assert np.abs(soft_sort(Tensor([[1.0], [0.0]]), 1e-3).data - np.eye(2)).max() < 1e-3
    rng = np.random.default_rng(0)
    for tp in (10.0, 1.0, 0.1):
        P = soft_sort(Tensor(rng.normal(size=(5, 1))), tp).data
        np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-9)
        assert np.all((P > 0) & (P < 1))


def test_soft_sort_rejects_nonpositive_temperature():
    with pytest.raises(ValueError):
        soft_sort(Tensor([[1.0], [0.0]]), 0.0)


def test_hard_order_examples():
    assert hard_order([0.0, 1.0]).order == (1, 0)
    assert hard_order([2.0, 1.0, 2.0]).order == (2, 0, 1)
    # the rank tie-break lifts later agents, so equal scores sort by descending index
    assert hard_order([5.0, 5.0, 5.0]).order == (2, 1, 0)


def test_hard_order_puts_argmax_first():
    rng = np.random.default_rng(2)
    for _ in range(100):
        a = rng.normal(size=int(rng.integers(1, 9)))
        assert hard_order(a).order[0] == int(np.argmax(a))


# -- forward pass ----------------------------------------------------------------------


def test_forward_single_agent_is_all_ones():
    V = np.array([[0.3, 0.8, 0.1, 0.5]])
    for tau, tp in [(1.0, 1.0), (0.01, 0.1)]:
        p = _random_params(0, rank=1, tau=tau, tau_prime=tp)
        np.testing.assert_allclose(nrr_forward_train(V, p).data, np.ones((1, 4)), atol=1e-12)


def test_forward_columns_on_simplex():
    rng = np.random.default_rng(0)
    for seed in range(10):
        V = rng.uniform(size=(4, 8))
        A = nrr_forward_train(V, _random_params(seed)).data
        assert np.all(A >= 0)
        np.testing.assert_allclose(A.sum(axis=0), 1.0, atol=1e-9)


def test_forward_low_temperature_matches_hard_path():
    rng = np.random.default_rng(5)
    for seed in range(20):
        n = int(rng.integers(2, 6))
        V = separated_profile(rng, n, n * int(rng.integers(1, 4)))
        p = _random_params(seed, rank=min(2, n), tau=1e-3, tau_prime=1e-3)
        hard = round_robin_induced(V, nrr_order(V, p))
        assert np.abs(nrr_forward_train(V, p).data - hard).max() < 1e-2


def test_soft_hard_agreement_on_separated_profiles():
    rng = np.random.default_rng(9)
    agree = total = 0
    for seed in range(100):
        V = separated_profile(rng, 5, 10)
        p = _random_params(seed, tau=1e-3, tau_prime=1e-3)
        soft = nrr_forward_train(V, p).data.argmax(axis=0)
        hard = nrr_infer(V, p).argmax(axis=0)
        agree += int((soft == hard).sum())
        total += soft.size
    assert agree / total >= 0.95


@pytest.mark.xfail(strict=True, reason="within-row value gaps of ~1e-3 on the synthetic distribution are comparable "
                   "to tau=1e-3, so soft picks split and cascade; measured agreement is about half")
def test_soft_hard_agreement_on_synthetic_data():
    ds = generate_dataset(5, 10, 100, seed=77)
    p = init_params(3, 0, tau=1e-3, tau_prime=1e-3)
    agree = total = 0
    for V, _ in ds.samples:
        soft = nrr_forward_train(V, p).data.argmax(axis=0)
        hard = nrr_infer(V, p).argmax(axis=0)
        agree += int((soft == hard).sum())
        total += soft.size
    assert agree / total >= 0.95


@pytest.mark.parametrize("seed", range(5))
def test_full_loss_gradient(seed):
    rng = np.random.default_rng([seed, 3])
    V = rng.uniform(size=(4, 8))
    target = np.zeros((4, 8))
    target[rng.integers(0, 4, size=8), np.arange(8)] = 1.0
    p = _random_params(seed, spread=0.5)
    F = agent_features(V, 3)
    err = finite_difference_check(lambda: cross_entropy_alloc_loss(target, nrr_forward_train(V, p, F)), p.tensors())
    assert err < 1e-4


# -- inference -----------------------------------------------------------------------------


def test_infer_is_ef1_for_random_parameters():
    rng = np.random.default_rng(42)
    for k in range(1000):
        n = int(rng.integers(2, 9))
        m = int(rng.integers(1, 17))
        V = rng.uniform(size=(n, m))
        p = _random_params(k, rank=min(2, m), spread=2.0)
        assert is_ef1(V, nrr_infer(V, p))


def test_row_mean_order_on_table1():
    means = EXAMPLE_PROFILE.mean(axis=1)
    order = hard_order(means)
    A = round_robin_induced(EXAMPLE_PROFILE, order)
    assert [sorted(b) for b in bundles(A)] == [[2], [1], [0, 3]]
    np.testing.assert_array_equal(A, from_bundles([{2}, {1}, {0, 3}], 4))


def test_infer_single_agent():
    V = np.array([[0.2, 0.4, 0.9]])
    np.testing.assert_array_equal(nrr_infer(V, _random_params(0, rank=1)), np.ones((1, 3)))


def test_infer_is_rr_in_learned_order():
    V = np.random.default_rng(0).uniform(size=(5, 7))
    p = _random_params(4)
    order = nrr_order(V, p)
    assert isinstance(order, AgentPermutation)
    np.testing.assert_array_equal(nrr_infer(V, p), round_robin_induced(V, order))


# -- checkpoints ---------------------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    p = _random_params(3, tau=0.1, tau_prime=0.01)
    path = tmp_path / "ckpt.json"
    save_checkpoint(p, path)
    q = load_checkpoint(path)
    assert (q.rank, q.tau, q.tau_prime, q.seed) == (p.rank, p.tau, p.tau_prime, p.seed)
    for a, b in zip(p.tensors(), q.tensors()):
        np.testing.assert_array_equal(a.data, b.data)
    rng = np.random.default_rng(0)
    for _ in range(20):
        V = rng.uniform(size=(6, 10))
        assert nrr_order(V, p) == nrr_order(V, q)
    save_checkpoint(q, tmp_path / "again.json")
    assert (tmp_path / "again.json").read_bytes() == path.read_bytes()


def test_checkpoint_rejects_foreign_document(tmp_path):
    path = tmp_path / "x.json"
    path.write_text('{"format": "something-else"}')
    with pytest.raises(ValueError, match="not a"):
        load_checkpoint(path)
