import numpy as np
import pytest
import torch

from approxtrain import export as ex
from approxtrain.model import RESNET8_SMALL, ArchConfig, ResidualNet, conv_bn_relu


class TestFolding:
    def test_conv_bn_fold_matches_module(self):
        torch.manual_seed(0)
        seq = conv_bn_relu(3, 5, stride=1)
        seq.eval()
        bn = seq[1]
        bn.running_mean.uniform_(-1, 1)
        bn.running_var.uniform_(0.5, 2.0)
        bn.weight.data.uniform_(0.5, 1.5)
        bn.bias.data.uniform_(-1, 1)
        w, b = ex.fold_conv_bn(seq[0], bn)
        x = torch.rand(2, 3, 8, 8)
        with torch.no_grad():
            want = bn(seq[0](x)).numpy()
        cols, ho, wo = ex._im2col(x.numpy().astype(np.float64), 3, 3, 1, 1)
        got = (cols @ w.reshape(5, -1).T + b).transpose(0, 2, 1).reshape(2, 5, ho, wo)
        assert np.allclose(got, want, atol=1e-5)


class TestChain:
    def test_chain_layout_and_conv_count(self):
        arch = RESNET8_SMALL
        model = ResidualNet(arch)
        chain = ex._chain_from_model(model)
        convs = [r for r in chain if isinstance(r, ex._ConvRec)]
        assert len(convs) == arch.conv_count == 9
        adds = [r for r in chain if isinstance(r, ex._AddRec)]
        assert len(adds) == 3  # one identity block per stage
        for add in adds:
            assert isinstance(chain[add.other], (ex._ConvRec,) + (ex._AddRec,))

    def test_float_forward_matches_torch(self):
        torch.manual_seed(1)
        model = ResidualNet(RESNET8_SMALL)
        model.eval()
        x = np.random.default_rng(0).integers(0, 256, (4, 3, 32, 32)) \
            .astype(np.uint8)
        chain = ex._chain_from_model(model)
        got = ex._float_forward(chain, x, calibrate=False)
        with torch.no_grad():
            want = model(torch.from_numpy(x).float()).numpy()
        assert np.allclose(got, want, atol=1e-4)


class TestQuantizedSemantics:
    def test_round_half_away(self):
        v = np.array([0.5, -0.5, 2.5, -2.5, 0.49])
        assert ex._round_half_away(v).tolist() == [1, -1, 3, -3, 0]

    def test_int8_forward_close_to_float(self):
        torch.manual_seed(2)
        model = ResidualNet(RESNET8_SMALL)
        model.eval()
        rng = np.random.default_rng(1)
        calib = rng.integers(0, 256, (64, 3, 32, 32)).astype(np.uint8)
        chain = ex._chain_from_model(model)
        float_logits = ex._float_forward(chain, calib[:8], calibrate=True)
        layers = ex._quantize_chain(chain)
        int_logits = ex.int8_forward(layers, calib[:8])
        # logits live on different scales; compare argmax agreement
        agree = (float_logits.argmax(1) == int_logits.argmax(1)).mean()
        assert agree >= 0.5  # untrained net, loose structural check

    def test_quality_gate_refuses_large_gap(self, tmp_path, monkeypatch):
        # Force the measured quantized accuracy to chance level; the gap
        # gate must refuse the export.
        from approxtrain.datasets import make_textures
        monkeypatch.setattr(ex, "int8_accuracy", lambda *a, **k: 0.0)
        train_x, train_y, eval_x, eval_y = make_textures(
            n_train=600, n_eval=100, seed=3)
        with pytest.raises(ex.ExportRefused, match="refusing"):
            ex.train_and_export(
                arch=RESNET8_SMALL, train_x=train_x, train_y=train_y,
                eval_x=eval_x, eval_y=eval_y, epochs=2, seed=3,
                out_dir=str(tmp_path), log=lambda s: None)
