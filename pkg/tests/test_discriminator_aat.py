import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from labgraph import tensor as T
from labgraph.adversarial import (AatConfig, aat_loss, binary_dist, find_perturbation, project,
                                  symmetric_kl)
from labgraph.discriminator import Discriminator, batch_rewards, reward_for, train_discriminator
from labgraph.optim import Adam
from labgraph.tensor import Tensor


def make(seed=0, n_codes=8, d=3, doc_dim=4, hidden=5):
    rng = np.random.default_rng(seed)
    disc = Discriminator(d, doc_dim, hidden, rng)
    for p in disc.params.values():
        p.data += rng.normal(scale=0.5, size=p.shape)
    return disc, Tensor(rng.normal(size=(n_codes, d))), rng


def test_variable_length_batch_matches_single_paths():
    disc, codes, rng = make()
    paths = [[1, 2, 3], [4], [5, 6]]
    docs = Tensor(rng.normal(size=(3, 4)))
    z = disc.logits(paths, docs, codes).data
    for i, p in enumerate(paths):
        alone = disc.logits([p], Tensor(docs.data[i:i + 1]), codes).data[0]
        assert abs(alone - z[i]) < 1e-12


def test_discriminator_input_checks():
    disc, codes, rng = make()
    docs = Tensor(rng.normal(size=(1, 4)))
    with pytest.raises(ValueError):
        disc.logits([[]], docs, codes)
    with pytest.raises(KeyError):
        disc.logits([[99]], docs, codes)


def test_bce_loss_gradient():
    disc, _, rng = make(seed=1)
    codes = Tensor(rng.normal(size=(8, 3)), requires_grad=True)
    docs = Tensor(rng.normal(size=(4, 4)), requires_grad=True)
    paths = [[1, 2], [3], [4, 5, 6], [7, 1]]
    labels = [1, 0, 1, 0]
    err = T.grad_check(lambda: disc.loss(paths, labels, docs, codes)[0], [codes, docs, *disc.params.values()])
    assert err < 1e-6


def test_bce_matches_closed_form():
    disc, codes, rng = make(seed=2)
    docs = Tensor(rng.normal(size=(2, 4)))
    loss, z = disc.loss([[1], [2, 3]], [1, 0], docs, codes)
    p = 1 / (1 + np.exp(-z.data))
    assert float(loss.data) == pytest.approx(-(np.log(p[0]) + np.log(1 - p[1])) / 2, rel=1e-12)


def test_reward_is_pure_and_matches_batch():
    disc, codes, rng = make(seed=3)
    doc = rng.normal(size=4)
    before = {k: v.data.copy() for k, v in disc.params.items()}
    r1 = reward_for(disc, [1, 2], doc, codes.data)
    r2 = reward_for(disc, [1, 2], doc, codes.data)
    assert r1 == r2 and 0 < r1 < 1
    assert all((before[k] == v.data).all() for k, v in disc.params.items())
    batch = batch_rewards(disc, [[1, 2], [3]], [0, 0], doc[None, :], codes.data)
    assert batch[0] == pytest.approx(r1, abs=1e-12)


def test_training_separates_authentic_from_fake_paths():
    disc, codes, rng = make(seed=4)
    docs = rng.normal(size=(6, 4))
    pos = [(i, [1, 2]) for i in range(6)]
    neg = [(i, [5, 6]) for i in range(6)]
    curve = train_discriminator(disc, pos, neg, lambda rows: Tensor(docs[rows]), codes, Adam(0.05), epochs=60)
    assert curve[-1] < 0.2 * curve[0]
    with pytest.raises(ValueError):
        train_discriminator(disc, pos, [], lambda rows: Tensor(docs[rows]), codes, Adam(0.05))


# ---------------------------------------------------------------- AAT

@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(1e-3, 1.0), st.floats(0.0, 50.0))
def test_projection_stays_in_ball(seed, eps, scale):
    rng = np.random.default_rng(seed)
    r = rng.normal(size=(3, 5, 2)) * scale
    out = project(r, eps, "l2", (1, 2))
    assert (np.sqrt((out ** 2).sum(axis=(1, 2))) <= eps).all()
    out = project(r, eps, "linf")
    assert (np.abs(out) <= eps).all()


def test_projection_keeps_interior_points():
    r = np.array([[0.01, 0.02]])
    np.testing.assert_array_equal(project(r, 1.0, "l2", (1,)), r)


def test_perturbation_increases_loss_and_respects_mask():
    rng = np.random.default_rng(5)
    w = rng.normal(size=(2, 4, 3))
    loss = lambda r: T.tsum(T.tanh(r + 0.3) * w)
    mask = np.ones((2, 4, 1))
    mask[1, 2:] = 0.0
    for norm in ("l2", "linf"):
        cfg = AatConfig(epsilon=0.2, steps=3, norm=norm)
        r = find_perturbation(loss, (2, 4, 3), cfg, mask, (1, 2))
        assert float(loss(Tensor(r)).data) > float(loss(Tensor(np.zeros_like(r))).data)
        assert (r[1, 2:] == 0).all()


def test_symmetric_kl_properties():
    rng = np.random.default_rng(6)
    for _ in range(100):
        p = rng.dirichlet(np.ones(3), size=4)
        q = rng.dirichlet(np.ones(3), size=4)
        a, b = symmetric_kl(p, q).data, symmetric_kl(q, p).data
        assert (a >= 0).all()
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)
        assert np.allclose(symmetric_kl(p, p).data, 0.0)
    with pytest.raises(T.DimensionError):
        symmetric_kl(np.ones((2, 3)) / 3, np.ones((2, 2)) / 2)


def test_symmetric_kl_gradient_and_binary_dist():
    rng = np.random.default_rng(7)
    p = Tensor(rng.uniform(0.1, 0.9, size=5), requires_grad=True)
    q = Tensor(rng.uniform(0.1, 0.9, size=5), requires_grad=True)
    assert T.grad_check(lambda: T.tsum(symmetric_kl(binary_dist(p), binary_dist(q))), [p, q]) < 1e-6
    np.testing.assert_allclose(binary_dist(p).data.sum(axis=-1), 1.0)


def test_aat_loss_gradient_with_fixed_perturbation():
    rng = np.random.default_rng(8)
    w = Tensor(rng.normal(size=(3,)), requires_grad=True)
    e = Tensor(rng.normal(size=(4, 2, 3)), requires_grad=True)
    y = np.array([1.0, 0.0, 1.0, 0.0])
    cfg = AatConfig(epsilon=0.3, kl_weight=0.7)

    def forward(emb):
        z = T.tsum(T.tanh(emb) @ w, axis=1)
        return T.mean(T.softplus(z) - z * y), binary_dist(T.sigmoid(z))

    r = find_perturbation(lambda rr: forward(Tensor(e.data) + rr)[0], e.shape, cfg, axes=(1, 2))
    assert T.grad_check(lambda: aat_loss(forward, e, cfg, axes=(1, 2), r_adv=r)[0], [w, e]) < 1e-6
    total, diag = aat_loss(forward, e, cfg, axes=(1, 2))
    assert diag["r_norm"] <= 0.3 and diag["kl"] >= 0
    assert float(total.data) == pytest.approx(0.5 * diag["clean"] + 0.5 * diag["adv"] + 0.7 * diag["kl"])


def test_bce_non_increasing_under_small_steps():
    disc, codes, rng = make(seed=9)
    docs = Tensor(rng.normal(size=(6, 4)))
    paths = [[1, 2], [3], [4, 5], [6], [7, 2, 1], [5]]
    labels = [1, 0, 1, 0, 1, 0]
    prev = np.inf
    for _ in range(100):
        for p in disc.params.values():
            p.grad = None
        loss, _ = disc.loss(paths, labels, docs, codes)
        assert float(loss.data) <= prev + 1e-15
        prev = float(loss.data)
        loss.backward()
        for p in disc.params.values():
            p.data -= 1e-3 * p.grad


def test_label_swap_with_negated_projection_gives_same_loss():
    disc, codes, rng = make(seed=10)
    docs = Tensor(rng.normal(size=(3, 4)))
    paths = [[1, 2], [3], [4, 5, 6]]
    before, _ = disc.loss(paths, [1, 0, 1], docs, codes)
    disc.params["disc.m_h"].data *= -1
    after, _ = disc.loss(paths, [0, 1, 0], docs, codes)
    assert float(after.data) == pytest.approx(float(before.data), abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(1e-3, 1.0))
def test_projected_norm_is_min_of_norm_and_radius(seed, eps):
    rng = np.random.default_rng(seed)
    g = rng.normal(size=(1, 6)) * rng.uniform(0, 3)
    out = project(g, eps, "l2", (1,))
    assert abs(np.linalg.norm(out) - min(np.linalg.norm(g), eps)) < 1e-12


def test_symmetric_kl_zero_only_on_equal_pairs():
    rng = np.random.default_rng(11)
    p = rng.dirichlet(np.ones(4), size=10_000)
    q = rng.dirichlet(np.ones(4), size=10_000)
    kl = symmetric_kl(p, q).data
    assert (kl > 0).all()
    assert (symmetric_kl(p, p).data == 0).all()


def test_ascent_is_monotone_on_convex_loss():
    rng = np.random.default_rng(12)
    a = rng.normal(size=(2, 5))
    loss = lambda r: T.tsum((r - a) * (r - a))  # convex in r; ascent moves away from a
    values = []
    for steps in range(1, 6):
        r = find_perturbation(loss, a.shape, AatConfig(epsilon=0.5, steps=steps, ascent_lr=0.1), axes=(0, 1))
        values.append(float(loss(Tensor(r)).data))
    assert all(b >= x - 1e-12 for x, b in zip(values, values[1:]))


def test_aat_spec_examples():
    kl = symmetric_kl(np.array([0.9, 0.1]), np.array([0.1, 0.9])).data
    assert float(kl) == pytest.approx(1.6 * np.log(9), abs=1e-12)

    # one ascent step on a quadratic from r = 0 lands on eps * g / |g|
    rng = np.random.default_rng(13)
    a = rng.normal(size=(1, 6))
    quad = lambda r: T.tsum((r - a) * (r - a))
    r = find_perturbation(quad, a.shape, AatConfig(epsilon=0.3), axes=(0, 1))
    g = -2 * a
    np.testing.assert_allclose(r, 0.3 * g / np.linalg.norm(g), atol=1e-12)

    w = Tensor(rng.normal(size=(3,)))
    e = Tensor(rng.normal(size=(4, 2, 3)))
    y = np.array([1.0, 0.0, 1.0, 0.0])

    def forward(emb):
        z = T.tsum(T.tanh(emb) @ w, axis=1)
        return T.mean(T.softplus(z) - z * y), binary_dist(T.sigmoid(z))

    _, diag = aat_loss(forward, e, AatConfig(epsilon=0.2, kl_weight=0.0), axes=(1, 2))
    assert diag["adv"] >= diag["clean"] - 1e-9
    tiny, diag = aat_loss(forward, e, AatConfig(epsilon=1e-12, kl_weight=0.0), axes=(1, 2))
    assert diag["r_norm"] <= 1e-12
    assert float(tiny.data) == pytest.approx(diag["clean"], abs=1e-9)
