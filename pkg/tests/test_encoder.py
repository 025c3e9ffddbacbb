import numpy as np
import pytest

from labgraph import tensor as T
from labgraph.encoder import Batch, EmptyInputError, EncoderConfig, TextEncoder


def make(plain=False, **kw):
    cfg = EncoderConfig(**{"embed_dim": 4, "channels": 3, "residual_blocks": 2, **kw})
    return TextEncoder(cfg, 30, np.random.default_rng(0), plain=plain)


def docs(rng, lengths):
    return [rng.integers(2, 30, n) for n in lengths]


def test_output_shape_and_plain_mode_dim():
    rng = np.random.default_rng(1)
    enc = make()
    out = enc.encode(enc.batch(docs(rng, [9, 12, 4])))
    assert out.shape == (3, enc.cfg.out_dim) == (3, 9)
    plain = make(plain=True)
    assert plain.encode(plain.batch(docs(rng, [9, 3]))).shape == (2, 9)
    assert set(plain.parameters()) == {"encoder.embed", "encoder.plain.w", "encoder.plain.b"}
    assert not any(k.startswith("encoder.plain") for k in enc.parameters())


@pytest.mark.parametrize("plain", [False, True])
def test_batch_and_padding_invariance(plain):
    rng = np.random.default_rng(2)
    enc = make(plain=plain)
    ds = docs(rng, [5, 17, 2, 11])
    together = enc.encode(enc.batch(ds)).data
    for i, d in enumerate(ds):
        alone = enc.encode(enc.batch([d])).data[0]
        np.testing.assert_allclose(together[i], alone, rtol=0, atol=1e-12)


def test_short_document_is_padded_to_widest_kernel():
    enc = make()
    b = enc.batch([np.array([3])])
    assert b.ids.shape[1] == max(enc.cfg.kernel_sizes)
    assert np.isfinite(enc.encode(b).data).all()


def test_empty_document_rejected():
    with pytest.raises(EmptyInputError):
        Batch([np.array([], dtype=int)])


def test_zero_residual_blocks_is_mcf_only():
    rng = np.random.default_rng(3)
    enc = make(residual_blocks=0)
    ds = docs(rng, [8, 10])
    b = enc.batch(ds)
    pooled = T.concat(enc.mcf_forward(enc.embed(b), b), axis=1)
    np.testing.assert_allclose(enc.encode(b).data, pooled.data, atol=1e-12)


def test_residual_block_channel_mismatch():
    enc = make()
    with pytest.raises(T.DimensionError, match="channels"):
        enc.mcb_forward(T.Tensor(np.zeros((1, 5, 8))), np.ones((1, 1, 8)), 0)


@pytest.mark.parametrize("plain", [False, True])
def test_encoder_gradient(plain):
    rng = np.random.default_rng(4)
    enc = make(plain=plain)
    for p in enc.params.values():
        p.data += rng.normal(scale=0.3, size=p.shape)
    b = enc.batch(docs(rng, [9, 6]))
    w = rng.normal(size=(2, enc.cfg.out_dim))
    err = T.grad_check(lambda: T.tsum(T.tanh(enc.encode(b)) * w), list(enc.parameters().values()))
    assert err < 1e-6


def test_padding_embeddings_get_no_gradient():
    rng = np.random.default_rng(5)
    enc = make()
    b = enc.batch(docs(rng, [3, 12]))
    T.tsum(enc.encode(b)).backward()
    np.testing.assert_array_equal(enc.params["encoder.embed"].grad[0], 0.0)


def test_leading_padding_only_adds_windows():
    enc = make(residual_blocks=0)
    rng = np.random.default_rng(9)
    for _ in range(20):
        doc = rng.integers(2, 30, 12)
        n_pad = int(rng.integers(1, 5))
        padded = np.concatenate([np.zeros(n_pad, dtype=np.int64), doc])  # PAD ids up front
        for (m0, k), (m1, _) in zip(enc.mcf_maps(enc.embed(b0 := enc.batch([doc])), b0),
                                    enc.mcf_maps(enc.embed(b1 := enc.batch([padded])), b1)):
            lo = len(doc) - k + 1
            orig = m0.data[0, :, :lo].max(axis=1)
            # convolution is translation-equivariant: the original windows reappear shifted
            np.testing.assert_allclose(m1.data[0, :, n_pad:n_pad + lo], m0.data[0, :, :lo], atol=1e-12)
            full = m1.data[0, :, :lo + n_pad].max(axis=1)
            wins = m1.data[0, :, :lo + n_pad].argmax(axis=1)
            assert (full >= orig - 1e-12).all()
            untouched = wins >= n_pad
            np.testing.assert_allclose(full[untouched], orig[untouched], atol=1e-12)
