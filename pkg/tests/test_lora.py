"""LoRA adapter oracles: zero-init equivalence, hand values, merge
equivalence, and parameter accounting against the published counts."""

import numpy as np
import pytest

from burnadapt.autodiff import Rng, Tensor
from burnadapt.errors import ConfigurationError
from burnadapt.lora import (LoraSpec, analytic_count, attach, count_lora_params,
                            iter_adapters, merge_dense)
from burnadapt.nn import Linear


def make_layer(d_in, d_out, seed=0):
    return Linear(d_in, d_out, Rng(seed))


def test_spec_validation():
    with pytest.raises(ConfigurationError):
        LoraSpec(rank=0)
    with pytest.raises(ConfigurationError):
        LoraSpec(targets=())
    with pytest.raises(ConfigurationError):
        LoraSpec(targets=("nonsense",))


def test_attach_warns_when_rank_not_low():
    layer = make_layer(4, 3)
    with pytest.warns(UserWarning):
        attach(layer, LoraSpec(rank=8), Rng(1))


def test_zero_init_forward_equals_base():
    layer = make_layer(16, 8, seed=3)
    x = Tensor(Rng(5).normal((6, 16)))
    base = layer(x).data.copy()
    attach(layer, LoraSpec(rank=4), Rng(7))
    adapted = layer(x).data
    np.testing.assert_array_equal(adapted, base)  # B=0 => exact identity


def test_scalar_hand_values():
    layer = make_layer(1, 1)
    layer.weight.data[:] = 2.0
    layer.bias = None
    adapter = attach(layer, LoraSpec(rank=1, alpha=1.0), Rng(0))
    adapter.A.data[:] = 3.0
    adapter.B.data[:] = 4.0
    out = layer(Tensor([[1.0]]))
    np.testing.assert_allclose(out.data, [[14.0]])  # 2 + 1*4*3

    adapter.alpha = 0.5
    out = layer(Tensor([[1.0]]))
    np.testing.assert_allclose(out.data, [[8.0]])  # 2 + 0.5*12


def test_gradients_flow_only_to_adapter_when_base_frozen():
    layer = make_layer(6, 5, seed=2)
    adapter = attach(layer, LoraSpec(rank=2), Rng(3))
    adapter.B.data[:] = Rng(4).normal(adapter.B.shape, 0.3)
    layer.weight.trainable = False
    x = Tensor(Rng(6).normal((4, 6)))
    loss = (layer(x) * 1.0).sum()
    loss.backward()
    assert layer.weight.grad is None
    assert adapter.A.grad is not None and np.any(adapter.A.grad != 0)
    assert adapter.B.grad is not None and np.any(adapter.B.grad != 0)


def test_merge_dense_identity_cases():
    layer = make_layer(5, 4, seed=8)
    w0 = layer.weight.data.copy()
    attach(layer, LoraSpec(rank=2), Rng(9))
    np.testing.assert_array_equal(merge_dense(layer), w0)  # B=0

    layer.lora.B.data[:] = Rng(10).normal(layer.lora.B.shape)
    layer.lora.alpha = 0.0
    np.testing.assert_array_equal(merge_dense(layer), w0)  # alpha=0


def test_merge_equivalence_random_case():
    layer = make_layer(4, 4, seed=11)
    layer.bias = None
    adapter = attach(layer, LoraSpec(rank=2, alpha=0.7), Rng(12))
    adapter.B.data[:] = Rng(13).normal(adapter.B.shape, 0.5)
    merged = merge_dense(layer)
    rng = Rng(14)
    worst = 0.0
    for _ in range(100):
        x = rng.normal((1, 4))
        via_adapter = layer(Tensor(x)).data
        via_merged = x @ merged.T
        worst = max(worst, np.max(np.abs(via_adapter - via_merged)))
    assert worst < 1e-6


def test_merge_equivalence_many_random_configs():
    import warnings

    rng = Rng(100)
    for trial in range(100):
        d_in = rng.integers(1, 12)
        d_out = rng.integers(1, 12)
        rank = rng.integers(1, max(2, min(d_in, d_out)))
        alpha = float(rng.uniform(0.0, 2.0, ()))
        layer = make_layer(d_in, d_out, seed=trial)
        layer.bias = None
        base = layer.weight.data.copy()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            adapter = attach(layer, LoraSpec(rank=int(rank), alpha=alpha),
                             Rng(trial + 1))
        x = Tensor(rng.normal((3, d_in)))
        np.testing.assert_allclose(layer(x).data, x.data @ base.T, atol=1e-6)
        adapter.B.data[:] = Rng(trial + 2).normal(adapter.B.shape, 0.4)
        np.testing.assert_allclose(layer(x).data, x.data @ merge_dense(layer).T,
                                   atol=1e-5)


def test_adapter_param_counts():
    layer = make_layer(768, 768)
    adapter = attach(layer, LoraSpec(rank=8), Rng(0))
    assert adapter.num_params() == 12_288  # 8*768 + 768*8

    qkv = make_layer(768, 2304)
    adapter = attach(qkv, LoraSpec(rank=8), Rng(1))
    assert adapter.num_params() == 24_576

    tiny = make_layer(2, 3)
    adapter = attach(tiny, LoraSpec(rank=1), Rng(2))
    assert adapter.num_params() == 5


def test_count_against_summation_oracle_table_configs():
    # ViT-B-like: d=768, depth 12, targets {qkv_fused, attn_out}
    dims = [(768, 2304), (768, 768)] * 12
    assert analytic_count(dims, 8) == 442_368
    # ViT-L-like: d=1024, depth 24, attention + MLP targets (mlp_ratio 4)
    dims = [(1024, 3072), (1024, 1024), (1024, 4096), (4096, 1024)] * 24
    assert analytic_count(dims, 8) == 3_145_728


def test_count_lora_params_walks_adapters():
    class Holder:
        pass

    from burnadapt.nn import Module

    class Pair(Module):
        def __init__(self):
            self.a = make_layer(768, 2304, seed=1)
            self.b = make_layer(768, 768, seed=2)

    pair = Pair()
    attach(pair.a, LoraSpec(rank=8), Rng(3))
    attach(pair.b, LoraSpec(rank=8), Rng(4))
    counts = count_lora_params(pair)
    assert counts["total"] == 36_864
    assert set(counts["per_adapter"]) == {"a.lora", "b.lora"}
    assert len(list(iter_adapters(pair))) == 2
