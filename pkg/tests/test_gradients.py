"""Analytic gradients against central finite differences in float64."""

import numpy as np
import pytest
import torch

from s2svo.model import COMBINERS, INPUT_MODES, ModelConfig, build_model
from s2svo.train import Sample, batch_loss
from s2svo.wordvec import EmbeddingTable

from .oracles import central_difference, max_rel_error

H = 1e-5
TOL = 1e-4


def small_model(mode="s2s", **kw):
    chans = 3 if mode == "rgb" else 4
    cfg = dict(input_mode=mode, in_channels=chans, word_dim=5, d_v=6, tiny_width=2, q_hidden=5, c_hidden=7, seed=11)
    cfg.update(kw)
    return build_model(ModelConfig(**cfg)).double()


def check_params(model, params, loss_fn):
    """Compare autograd with finite differences for every entry of ``params``."""
    model.zero_grad()
    loss_fn().backward()
    worst = 0.0
    for name, p in params:
        analytic = p.grad.detach().numpy().copy()

        def f(values, p=p):
            with torch.no_grad():
                saved = p.detach().clone()
                p.copy_(torch.from_numpy(values))
                out = float(loss_fn())
                p.copy_(saved)
            return out

        numeric = central_difference(f, p.detach().numpy(), H)
        err = max_rel_error(analytic, numeric)
        assert err < TOL, f"{name}: rel err {err:.2e}"
        worst = max(worst, err)
    return worst


def named(module, prefix):
    return [(f"{prefix}.{n}", p) for n, p in module.named_parameters()]


@pytest.mark.parametrize("mode", INPUT_MODES)
def test_vnet_gradients(mode):
    m = small_model(mode)
    rng = np.random.default_rng(0)
    x = torch.from_numpy(rng.normal(size=(2, 8, 8, m.config.in_channels)))
    w = torch.from_numpy(rng.normal(size=(2, m.config.d_v)))
    check_params(m, named(m.vnet, "vnet"), lambda: (m.forward_vnet(x) * w).sum())


def test_vnet_input_gradient():
    m = small_model()
    rng = np.random.default_rng(1)
    x0 = rng.normal(size=(8, 8, 4))
    w = torch.from_numpy(rng.normal(size=m.config.d_v))
    x = torch.from_numpy(x0.copy()).requires_grad_(True)
    (m.forward_vnet(x) * w).sum().backward()
    numeric = central_difference(lambda v: float((m.forward_vnet(torch.from_numpy(v)) * w).sum().detach()), x0, H)
    assert max_rel_error(x.grad.numpy(), numeric) < TOL


@pytest.mark.parametrize("combiner", COMBINERS)
def test_qnet_gradients(combiner):
    m = small_model(combiner=combiner)
    rng = np.random.default_rng(2)
    a, b = rng.normal(size=(3, 5)), rng.normal(size=(3, 5))
    w = torch.from_numpy(rng.normal(size=(3, 6)))
    check_params(m, named(m.qnet, "qnet"), lambda: (m.encode_query(a, b) * w).sum())


def test_separate_qnet_gradients():
    m = small_model(separate_qnets=True)
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(3, 5)), rng.normal(size=(3, 5))
    w = torch.from_numpy(rng.normal(size=(3, 6)))
    params = named(m.qnet_verb, "qnet_verb") + named(m.qnet_obj, "qnet_obj")
    check_params(m, params, lambda: (m.forward_qnet_separate(a, b) * w).sum())


def test_cnet_and_feature_gradients():
    m = small_model()
    rng = np.random.default_rng(4)
    fv0, fq0 = rng.normal(size=(4, 6)), rng.normal(size=(4, 6))
    fv, fq = torch.from_numpy(fv0), torch.from_numpy(fq0)
    check_params(m, named(m.cnet, "cnet"), lambda: m.closeness(fv, fq).sum())
    fv_req = fv.clone().requires_grad_(True)
    m.closeness(fv_req, fq).sum().backward()
    numeric = central_difference(lambda v: float(m.closeness(torch.from_numpy(v), fq).sum().detach()), fv0, H)
    assert max_rel_error(fv_req.grad.numpy(), numeric) < TOL


@pytest.mark.parametrize("separate", [False, True])
def test_full_loss_gradients(separate):
    m = small_model(separate_qnets=separate, combiner="catV")
    rng = np.random.default_rng(5)
    table = EmbeddingTable(5, {w: rng.normal(size=5) for w in ["ride", "wash", "horse", "cow"]})
    images = {f"img{i}": rng.normal(size=(8, 8, 4)) for i in range(3)}
    batch = [
        Sample("img0", "ride", "horse", 1.0), Sample("img0", "wash", "cow", 0.0),
        Sample("img1", "wash", "cow", 1.0), Sample("img1", "ride", "cow", 0.0),
        Sample("img2", "ride", "cow", 1.0), Sample("img2", "wash", "horse", 0.0),
    ]
    inputs = lambda ids: np.stack([images[i] for i in ids])
    # a large decay keeps the penalty's contribution well above FD noise
    check_params(m, list(m.named_parameters()), lambda: batch_loss(m, batch, inputs, table, 0.3)[0])
