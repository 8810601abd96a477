import numpy as np
import pytest
import torch

from salmrec.checkpoint import load_checkpoint, save_checkpoint
from salmrec.errors import CheckpointError
from salmrec.inference import evaluate, predict_backward, task_predictions
from salmrec.model import SalmRec
from salmrec.segnet import TASKS, ModelConfig


@pytest.fixture(scope="module")
def model():
    torch.manual_seed(0)
    return SalmRec(ModelConfig(input_size=32, width=0.125, attn_layers=1, attn_heads=2, flow_depth=1, flow_heads=2)).eval()


def test_forward_contract(model):
    with torch.no_grad():
        out = model(torch.rand(2, 3, 32, 32))
    c = model.cfg.fuse
    for t in TASKS:
        assert out.features[t].shape == (2, c, 2, 2)
        assert torch.equal(out.refined[t], out.features[t])  # aggregation starts as identity
    assert out.gate_global.weights.shape == (2, 2)
    assert torch.allclose(out.gate_local.weights.sum(1), torch.ones(2))
    assert out.flow.full.shape == (2, 32, 32, 2)


def test_ablated_model_runs():
    cfg = ModelConfig(input_size=32, width=0.125, attn_layers=1, attn_heads=2, flow_depth=1, flow_heads=2, use_fa=False, use_gate=False)
    m = SalmRec(cfg).eval()
    assert m.fa is None and not hasattr(m, "gate_global")
    with torch.no_grad():
        out = m(torch.rand(1, 3, 32, 32))
    assert torch.equal(out.gate_global.weights, torch.full((1, 2), 0.5))


class TestCheckpoint:
    def test_round_trip(self, model, tmp_path):
        with torch.no_grad():
            model.flowdec.head.weight.normal_()
        save_checkpoint(model, tmp_path, step=7, extra={"preset": "all"})
        loaded, meta = load_checkpoint(tmp_path)
        assert meta["step"] == 7 and meta["preset"] == "all"
        for (k, a), (k2, b) in zip(model.state_dict().items(), loaded.state_dict().items()):
            assert k == k2 and torch.equal(a, b)
        x = torch.rand(1, 3, 32, 32)
        with torch.no_grad():
            assert torch.equal(model(x).flow.full, loaded(x).flow.full)
        with torch.no_grad():
            model.flowdec.head.weight.zero_()

    def test_missing_name(self, model, tmp_path):
        save_checkpoint(model, tmp_path)
        with np.load(tmp_path / "model.npz") as npz:
            arrays = {k: npz[k] for k in npz.files if k != "flowdec.bias_map"}
        np.savez(tmp_path / "model.npz", **arrays)
        with pytest.raises(CheckpointError, match="missing"):
            load_checkpoint(tmp_path)

    def test_shape_mismatch(self, model, tmp_path):
        save_checkpoint(model, tmp_path)
        with np.load(tmp_path / "model.npz") as npz:
            arrays = {k: npz[k] for k in npz.files}
        arrays["flowdec.bias_map"] = np.zeros((3, 3, 2), np.float32)
        np.savez(tmp_path / "model.npz", **arrays)
        with pytest.raises(CheckpointError, match="shape"):
            load_checkpoint(tmp_path)

    def test_unexpected_name(self, model, tmp_path):
        save_checkpoint(model, tmp_path)
        with np.load(tmp_path / "model.npz") as npz:
            arrays = {k: npz[k] for k in npz.files}
        arrays["extra.weight"] = np.zeros(1, np.float32)
        np.savez(tmp_path / "model.npz", **arrays)
        with pytest.raises(CheckpointError, match="unexpected"):
            load_checkpoint(tmp_path)

    def test_bad_sidecar(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path)
        (tmp_path / "config.json").write_text('{"format": "other"}')
        with pytest.raises(CheckpointError, match="format"):
            load_checkpoint(tmp_path)


class TestInference:
    def test_identity_prediction_at_image_resolution(self, model, sample):
        bm = predict_backward(model, [sample.distorted_image])[0]
        assert bm.shape == (256, 256, 2) and bm.dtype == np.float64
        assert np.abs(bm - np.stack(np.meshgrid(np.linspace(-1, 1, 256), np.linspace(-1, 1, 256)), -1)).max() < 1e-6

    def test_task_predictions(self, model, sample):
        shown = task_predictions(model, sample.distorted_image)
        assert set(shown) == set(TASKS)
        assert shown["uv"].shape == (32, 32, 3) and shown["hline"].shape == (32, 32)
        assert all(v.min() >= 0 and v.max() <= 1 for v in shown.values())

    def test_oracle_evaluation(self, samples4):
        rep = evaluate(samples4, oracle=True)
        agg = rep.aggregate()
        assert agg["ld"] < 1e-12 and agg["ms_ssim"] >= 0.95
        assert agg["cer"] <= agg["ed"]

    def test_untrained_matches_identity_baseline(self, model, samples4):
        agg = evaluate(samples4, model=model).aggregate()
        assert agg["ld"] == pytest.approx(agg["ld_identity"], rel=0.05)

    def test_needs_model(self, samples4):
        with pytest.raises(ValueError):
            evaluate(samples4)
