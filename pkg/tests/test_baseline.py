import numpy as np
import pytest
import torch
from torch import nn

from burstdiff.baseline import BaselineSR, InitSource, baseline_forward, bicubic_init
from burstdiff.burst import DegradationParams, generate_dataset, process_reference, stack_samples
from burstdiff.resample import resize_numpy


@pytest.fixture(scope="module")
def bursts():
    raw, hr = stack_samples(generate_dataset(2, DegradationParams(), 0, hr_size=64))
    return torch.from_numpy(raw), torch.from_numpy(hr)


def test_output_shape_and_clamp(bursts):
    raw, hr = bursts
    torch.manual_seed(0)
    model = BaselineSR(feat_dim=8)
    assert model(raw).shape == hr.shape
    init = baseline_forward(raw, model)
    assert init.source is InitSource.BASELINE_SR
    assert init.image.min() >= 0 and init.image.max() <= 1


def test_zero_network_outputs_zero(bursts):
    model = BaselineSR(feat_dim=8)
    for p in model.parameters():
        nn.init.zeros_(p)
    assert torch.count_nonzero(model(bursts[0])) == 0


def test_output_depends_on_every_frame(bursts):
    raw = bursts[0][:1]
    torch.manual_seed(0)
    model = BaselineSR(feat_dim=8, search_radius=0)
    base = model(raw)
    for j in range(raw.shape[1]):
        bumped = raw.clone()
        bumped[0, j] += 0.1
        assert not torch.allclose(model(bumped), base)


def test_scale_validation():
    with pytest.raises(ValueError):
        BaselineSR(scale=6)
    with pytest.raises(ValueError):
        BaselineSR(burst_size=4)(torch.zeros(1, 8, 4, 4, 4))


def test_overfits_single_burst(bursts):
    raw, hr = bursts[0][:1], bursts[1][:1]
    torch.manual_seed(0)
    model = BaselineSR(feat_dim=16)
    opt = torch.optim.Adam(model.parameters(), lr=2e-3)
    first = None
    for _ in range(60):
        loss = torch.mean((model(raw) - hr) ** 2)
        first = first if first is not None else loss.item()
        opt.zero_grad()
        loss.backward()
        opt.step()
    assert loss.item() < 0.2 * first


def test_bicubic_init_matches_manual_pipeline(bursts):
    raw = bursts[0].numpy()
    out = bicubic_init(raw)
    assert out.source is InitSource.BICUBIC and out.image.shape == (2, 3, 64, 64)
    manual = np.clip(resize_numpy(process_reference(raw[1]), (64, 64)), 0, 1).transpose(2, 0, 1)
    np.testing.assert_allclose(out.image[1].numpy(), manual, atol=1e-6)
    assert bicubic_init(raw[0]).image.shape == (1, 3, 64, 64)
    with pytest.raises(ValueError):
        bicubic_init(raw[:, :, :3])
