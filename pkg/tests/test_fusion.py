import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import fd_gradcheck
from salmrec.errors import ShapeMismatchError
from salmrec.fusion import (
    AggregateAll,
    FeatureAggregation,
    Gate,
    GlobalAttention,
    fixed_gate,
    fuse_for_decoder,
    weight_branches,
)
from salmrec.segnet import TASKS

C, S = 8, 4  # toy config: 4x4 spatial grid, 8 channels


def feats(n, batch=2, seed=0):
    g = torch.Generator().manual_seed(seed)
    return [torch.randn(batch, C, S, S, dtype=torch.float64, generator=g) for _ in range(n)]


def _randomize(module, seed=0):
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in module.parameters():
            p.copy_(torch.randn(p.shape, dtype=p.dtype, generator=g) * 0.5)
    return module


class TestFeatureAggregation:
    def test_identity_at_init(self):
        fa = FeatureAggregation(C).double()
        target, *others = feats(4)
        assert torch.equal(fa(target, others), target)

    def test_shape_preserved(self):
        fa = _randomize(FeatureAggregation(C).double())
        target, *others = feats(4)
        assert fa(target, others).shape == target.shape

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_attention_bounded(self, seed):
        att = _randomize(GlobalAttention(C).double(), seed)
        a = att(feats(1, seed=seed)[0] * 10)
        assert a.min() >= 0 and a.max() <= 1

    def test_shape_mismatch(self):
        fa = FeatureAggregation(C).double()
        target, *others = feats(4)
        others[1] = others[1][:, :, :3]
        with pytest.raises(ShapeMismatchError):
            fa(target, others)

    def test_permutation_invariant_with_symmetric_reduction(self):
        fa = _randomize(FeatureAggregation(C).double()).eval()
        conv = fa.reduce[0]
        with torch.no_grad():
            block = conv.weight[:, :C].clone()
            conv.weight.copy_(torch.cat([block, block, block], dim=1))
        target, a, b, c = feats(4)
        ref = fa(target, [a, b, c])
        for perm in ([b, a, c], [c, b, a], [b, c, a]):
            assert torch.allclose(fa(target, perm), ref, atol=1e-12)

    def test_context_sensitivity(self):
        """Once the residual branch is active, the output depends on every context feature."""
        fa = _randomize(FeatureAggregation(C).double()).eval()
        target, *others = feats(4)
        others = [o.requires_grad_() for o in others]
        fa(target, others).square().sum().backward()
        for o in others:
            assert o.grad.abs().sum() > 0

    def test_gradcheck_all_parameters(self):
        fa = _randomize(FeatureAggregation(C).double())
        target, *others = feats(4)
        w = feats(1, seed=9)[0]
        params = list(fa.parameters())
        assert fd_gradcheck(lambda: (fa(target, others) * w).sum(), params, max_entries=12) <= 1e-3

    def test_gradcheck_inputs(self):
        fa = _randomize(FeatureAggregation(C).double())
        xs = [x.requires_grad_() for x in feats(4)]
        w = feats(1, seed=9)[0]
        assert fd_gradcheck(lambda: (fa(xs[0], xs[1:]) * w).sum(), xs, max_entries=12) <= 1e-3


class TestAggregateAll:
    def _inputs(self):
        return dict(zip(TASKS, feats(4)))

    def test_identity_at_init(self):
        agg = AggregateAll(C).double()
        x = self._inputs()
        out = agg(x)
        assert all(torch.equal(out[t], x[t]) for t in TASKS)

    def test_order_independent(self):
        agg = _randomize(AggregateAll(C).double()).eval()
        x = self._inputs()
        ref = agg(x)
        for t in reversed(TASKS):
            alone = agg.blocks[t](x[t], [x[o] for o in TASKS if o != t])
            assert torch.equal(alone, ref[t])

    def test_refined_3d_depends_on_other_tasks(self):
        agg = _randomize(AggregateAll(C).double()).eval()
        x = {t: v.requires_grad_() for t, v in self._inputs().items()}
        agg(x)["3d"].sum().backward()
        for t in ("uv", "hline", "vline"):
            assert x[t].grad.abs().sum() > 0


def _gate_with_bias(b0, b1):
    gate = Gate(C, C).double()
    final = gate.squeeze[-1]
    with torch.no_grad():
        final.weight.zero_()
        final.bias.copy_(torch.tensor([b0, b1], dtype=torch.float64))
    return gate


class TestGate:
    def test_equal_logits(self):
        fa, a, b = feats(3)
        out = _gate_with_bias(0.3, 0.3)(fa, a, b)
        assert torch.allclose(out.weights, torch.full_like(out.weights, 0.5), atol=1e-15)

    def test_saturation(self):
        fa, a, b = feats(3)
        w = _gate_with_bias(20.0, -20.0)(fa, a, b).weights
        assert torch.allclose(w, torch.tensor([[1.0, 0.0]] * 2, dtype=torch.float64), atol=1e-6)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_simplex(self, seed):
        gate = _randomize(Gate(C, C).double(), seed)
        fa, a, b = feats(3, seed=seed)
        out = gate(fa * 5, a, b)
        assert out.weights.min() >= 0
        assert torch.allclose(out.weights.sum(1), torch.ones(2, dtype=torch.float64), atol=1e-6)
        assert torch.allclose(out.stacked[:, 0], out.weights[:, 0, None, None, None] * a)

    @settings(max_examples=20, deadline=None)
    @given(st.floats(-50, 50))
    def test_shift_invariance(self, c):
        fa, a, b = feats(3)
        w1 = _gate_with_bias(0.7, -0.2)(fa, a, b).weights
        w2 = _gate_with_bias(0.7 + c, -0.2 + c)(fa, a, b).weights
        assert torch.allclose(w1, w2, atol=1e-12)

    def test_per_pixel_variant(self):
        gate = _randomize(Gate(C, C, per_pixel=True).double())
        fa, a, b = feats(3)
        out = gate(fa, a, b)
        assert out.weights.shape == (2, 2, S, S)
        assert torch.allclose(out.weights.sum(1), torch.ones(2, S, S, dtype=torch.float64))

    def test_shape_mismatch(self):
        fa, a, b = feats(3)
        with pytest.raises(ShapeMismatchError):
            Gate(C, C).double()(fa, a, b[:, :, :2])

    def test_gradcheck(self):
        gate = _randomize(Gate(C, C).double())
        fa, a, b = feats(3)
        w = feats(1, seed=4)[0]
        params = list(gate.parameters())
        fn = lambda: (gate(fa, a, b).stacked.sum(1) * w).sum()
        assert fd_gradcheck(fn, params, max_entries=12) <= 1e-3


class TestFuse:
    def test_channels(self):
        a, b, c, d = feats(4)
        out = fuse_for_decoder(fixed_gate(a, b), fixed_gate(c, d))
        assert out.shape == (2, 2 * C, S, S)

    def test_one_hot_weights_pass_branch(self):
        a, b, c, d = feats(4)
        w = torch.tensor([[1.0, 0.0]] * 2, dtype=torch.float64)
        out = fuse_for_decoder(weight_branches(w, a, b), fixed_gate(c, d))
        assert torch.equal(out[:, :C], a)

    def test_zero_branches(self):
        z = torch.zeros(2, C, S, S, dtype=torch.float64)
        assert torch.equal(fuse_for_decoder(fixed_gate(z, z), fixed_gate(z, z)), torch.zeros(2, 2 * C, S, S, dtype=torch.float64))

    def test_fixed_gate_is_half(self):
        a, b = feats(2)
        out = fixed_gate(a, b)
        assert torch.allclose(out.stacked.sum(1), 0.5 * (a + b))

    def test_mismatch(self):
        a, b = feats(2)
        small = torch.zeros(2, C, 2, 2, dtype=torch.float64)
        with pytest.raises(ShapeMismatchError):
            fuse_for_decoder(fixed_gate(a, b), fixed_gate(small, small))
