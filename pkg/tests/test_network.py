import numpy as np
import pytest

from spectral_tta import network, pca
from spectral_tta.adapt import entropy, entropy_grad
from spectral_tta.errors import ContractViolationError, EmptyBasisError
from spectral_tta.filters import RELU_RIDGE, SpectralFilter
from spectral_tta.network import (
    BN_BATCH,
    BatchNorm2d,
    Conv2d,
    build_model,
    fit_pca_from_source,
    insert_adapter,
    load_model,
    remove_adapter,
    save_model,
)

IN_SHAPE = (2, 4, 4)


def small_model(seed=0):
    return build_model(seed, input_shape=IN_SHAPE, conv_channels=(3, 3), n_classes=3)


def full_rank_basis_at(model, j, rng, n=96):
    """Fit a basis covering the whole feature space at layer j's output."""
    if j < 0:
        shape = model.input_shape
    else:
        shape = model.layer_output_shapes()[j]
    p = int(np.prod(shape))
    batches = [rng.normal(size=(n // 2,) + IN_SHAPE) for _ in range(2)]
    if j < 0:
        flat = [b.reshape(len(b), -1) for b in batches]
        return pca.fit(np.vstack(flat), rank=p)
    return fit_pca_from_source(model, batches, j, rank=p)


def test_forward_zero_propagation():
    model = small_model()
    # bias-free network with centered batch-norm: zero in, zero logits out
    for layer in model.layers:
        if isinstance(layer, (Conv2d, network.Linear)):
            layer.b[:] = 0.0
        if isinstance(layer, BatchNorm2d):
            layer.shift[:] = 0.0
            layer.running_mean[:] = 0.0
    logits, _ = model.forward(np.zeros((3,) + IN_SHAPE))
    assert np.abs(logits).max() <= 1e-12


def test_forward_shape_check():
    model = small_model()
    with pytest.raises(ContractViolationError):
        model.forward(np.zeros((2, 3, 4, 4)))


def test_forward_matches_naive_reimplementation(rng):
    model = small_model(seed=4)
    x = rng.normal(size=(3,) + IN_SHAPE)
    logits, _ = model.forward(x)

    def naive_conv(x, w, b):
        n, c, h, wd = x.shape
        oc, _, k, _ = w.shape
        p = k // 2
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        out = np.zeros((n, oc, h, wd))
        for ni in range(n):
            for o in range(oc):
                for i in range(h):
                    for j in range(wd):
                        acc = b[o]
                        for ci in range(c):
                            for ki in range(k):
                                for kj in range(k):
                                    acc += w[o, ci, ki, kj] * xp[ni, ci, i + ki, j + kj]
                        out[ni, o, i, j] = acc
        return out

    z = x
    for layer in model.layers:
        if isinstance(layer, Conv2d):
            z = naive_conv(z, layer.w, layer.b)
        elif isinstance(layer, BatchNorm2d):
            inv = 1.0 / np.sqrt(layer.running_var + layer.eps)
            z = (z - layer.running_mean[None, :, None, None]) * inv[None, :, None, None]
            z = layer.scale[None, :, None, None] * z + layer.shift[None, :, None, None]
        elif isinstance(layer, network.ReLU):
            z = np.maximum(z, 0.0)
        elif isinstance(layer, network.Flatten):
            z = z.reshape(z.shape[0], -1)
        elif isinstance(layer, network.Linear):
            z = z @ layer.w.T + layer.b
    assert np.allclose(logits, z, atol=1e-10)


def test_insert_identity_filter_preserves_logits(rng):
    model = small_model(seed=1)
    x = rng.normal(size=(5,) + IN_SHAPE)
    base_logits, _ = model.forward(x)
    for j in [0, 1, 2, 3]:
        basis = full_rank_basis_at(model, j - 1, rng)
        filt = SpectralFilter(RELU_RIDGE, basis.singular_values)  # identity
        with_adapter = insert_adapter(model, j, basis, filt)
        logits, _ = with_adapter.forward(x)
        assert np.abs(logits - base_logits).max() <= 1e-8, f"j={j}"


def test_insert_then_remove_is_exact(rng):
    model = small_model(seed=2)
    x = rng.normal(size=(4,) + IN_SHAPE)
    base_logits, _ = model.forward(x)
    basis = full_rank_basis_at(model, 2, rng)
    filt = SpectralFilter(RELU_RIDGE, basis.singular_values, gamma=rng.uniform(0, 2, basis.rank))
    with_adapter = insert_adapter(model, 3, basis, filt)
    restored = remove_adapter(with_adapter)
    logits, _ = restored.forward(x)
    assert np.array_equal(logits, base_logits)
    assert restored.weight_hash() == model.weight_hash()


def test_insert_at_every_legal_position(rng):
    model = small_model(seed=3)
    shapes = model.layer_output_shapes()
    legal = [0] + [j + 1 for j, s in enumerate(shapes) if len(s) == 3]
    assert len(legal) >= 4
    x = rng.normal(size=(2,) + IN_SHAPE)
    for j in legal:
        basis = full_rank_basis_at(model, j - 1, rng, n=80)
        filt = SpectralFilter(RELU_RIDGE, basis.singular_values)
        with_adapter = insert_adapter(model, j, basis, filt)
        logits, _ = with_adapter.forward(x)  # composes without shape errors
        assert logits.shape == (2, 3)


def test_insert_rejects_mismatched_basis(rng):
    model = small_model()
    basis = pca.fit(rng.normal(size=(20, 7)), rank=4)
    with pytest.raises(ContractViolationError):
        insert_adapter(model, 3, basis, SpectralFilter(RELU_RIDGE, basis.singular_values))
    # 2-D position (after flatten) is illegal
    good = full_rank_basis_at(model, 2, rng)
    with pytest.raises(ContractViolationError):
        insert_adapter(model, 7, good, SpectralFilter(RELU_RIDGE, good.singular_values))


def test_backward_adapt_zero_loss_grad(rng):
    model = small_model(seed=5)
    basis = full_rank_basis_at(model, 2, rng)
    filt = SpectralFilter(RELU_RIDGE, basis.singular_values, gamma=rng.uniform(0.2, 1, basis.rank))
    adapted = insert_adapter(model, 3, basis, filt)
    logits, caches = adapted.forward(rng.normal(size=(3,) + IN_SHAPE))
    grads = adapted.backward_adapt(caches, np.zeros_like(logits))
    assert np.array_equal(grads, np.zeros(basis.rank))


def test_backward_adapt_requires_cache_consistency(rng):
    model = small_model(seed=5)
    basis = full_rank_basis_at(model, 2, rng)
    adapted = insert_adapter(model, 3, basis, SpectralFilter(RELU_RIDGE, basis.singular_values))
    with pytest.raises(ContractViolationError):
        adapted.backward_adapt([], np.zeros((3, 3)))
    with pytest.raises(ContractViolationError):
        model.backward_adapt([], np.zeros((3, 3)))  # no adaptation params at all


def test_entropy_gradient_over_gamma_finite_differences(rng):
    model = small_model(seed=6)
    basis = full_rank_basis_at(model, 2, rng)
    gamma = rng.uniform(0.3, 1.5, basis.rank)
    adapted = insert_adapter(
        model, 3, basis, SpectralFilter(RELU_RIDGE, basis.singular_values, gamma)
    )
    x = rng.normal(size=(4,) + IN_SHAPE)
    logits, caches = adapted.forward(x)
    analytic = adapted.backward_adapt(caches, entropy_grad(logits))
    h = 1e-5
    layer = [l for l in adapted.layers if isinstance(l, network.SpectralAdapterLayer)][0]
    for i in range(basis.rank):
        old = layer.filt.gamma[i]
        layer.filt.gamma[i] = old + h
        hp = entropy(adapted.forward(x)[0])
        layer.filt.gamma[i] = old - h
        hm = entropy(adapted.forward(x)[0])
        layer.filt.gamma[i] = old
        fd = (hp - hm) / (2 * h)
        assert abs(fd - analytic[i]) / max(abs(fd), 1e-7) <= 1e-4


def test_theta_frozen_across_adaptation(rng):
    model = small_model(seed=7)
    basis = full_rank_basis_at(model, 2, rng)
    adapted = insert_adapter(
        model, 3, basis, SpectralFilter(RELU_RIDGE, basis.singular_values, np.full(basis.rank, 0.01))
    )
    before = adapted.weight_hash()
    x = rng.normal(size=(4,) + IN_SHAPE)
    for _ in range(100):
        logits, caches = adapted.forward(x)
        grads = adapted.backward_adapt(caches, entropy_grad(logits))
        adapted.set_adapt_params(adapted.adapt_params() - 0.05 * grads)
    assert adapted.weight_hash() == before


def test_bn_mode_algebra(rng):
    model = small_model(seed=8)
    x = rng.normal(size=(16,) + IN_SHAPE)
    # force running statistics to this batch's empirical feature statistics
    z = x
    for layer in model.layers:
        if isinstance(layer, BatchNorm2d):
            layer.running_mean = z.mean(axis=(0, 2, 3))
            layer.running_var = z.var(axis=(0, 2, 3))
        z, _ = layer.forward(z)
    frozen_logits, _ = model.forward(x)
    model.set_bn_mode(BN_BATCH)
    batch_logits, _ = model.forward(x)
    assert np.abs(frozen_logits - batch_logits).max() <= 1e-8


def test_fit_pca_constant_layer_degenerate(rng):
    model = small_model(seed=9)
    conv = model.layers[0]
    conv.w[:] = 0.0
    conv.b[:] = 1.0
    with pytest.raises(EmptyBasisError):
        fit_pca_from_source(model, [rng.normal(size=(8,) + IN_SHAPE)], 0, rank=4)


def test_fit_pca_streamed_vs_concatenated(rng):
    model = small_model(seed=10)
    data = rng.normal(size=(64,) + IN_SHAPE)
    # rank covering the full stream keeps the incremental update lossless
    streamed = fit_pca_from_source(model, np.array_split(data, 4), 2, rank=48)
    flat = model.forward_until(data, 2).reshape(64, -1)
    batch = pca.fit(flat, rank=48)
    assert np.allclose(streamed.singular_values, batch.singular_values, rtol=1e-6)


def test_fit_pca_full_rank_round_trip(rng):
    model = small_model(seed=11)
    data = rng.normal(size=(120,) + IN_SHAPE)
    p = int(np.prod(model.layer_output_shapes()[2]))
    basis = fit_pca_from_source(model, [data], 2, rank=p)
    feats = model.forward_until(data[:10], 2).reshape(10, -1)
    rec = pca.inverse_transform(basis, pca.transform(basis, feats))
    assert np.linalg.norm(rec - feats) / np.linalg.norm(feats) <= 1e-8


def test_checkpoint_round_trip(tmp_path, rng):
    model = small_model(seed=12)
    x = rng.normal(size=(3,) + IN_SHAPE)
    logits, _ = model.forward(x)
    path = tmp_path / "model.npz"
    save_model(model, path)
    loaded = load_model(path)
    logits2, _ = loaded.forward(x)
    assert np.array_equal(logits, logits2)
    assert loaded.weight_hash() == model.weight_hash()
