import numpy as np
import pytest
import torch
import torchvision

from uta.backbone import ASPP, TinyBackbone, build_backbone, convert_torchvision_resnet50, extract_stages
from uta.core import ShapeError
from uta.weights import WeightFileError, load_arrays, save_arrays


def test_tiny_stage_sizes():
    bb = build_backbone("tiny", seed=0).eval()
    feats = extract_stages(bb, torch.randn(1, 3, 64, 64))
    assert [f.shape[-1] for f in feats] == [64, 32, 16, 8, 4]
    assert [f.shape[1] for f in feats] == list(TinyBackbone.channels)


def test_tiny_is_deterministic():
    x = torch.randn(1, 3, 64, 64)
    a = build_backbone("tiny", seed=7).eval()
    b = build_backbone("tiny", seed=7).eval()
    for fa, fb in zip(extract_stages(a, x), extract_stages(b, x)):
        assert torch.equal(fa, fb)
    for fa, fb in zip(extract_stages(a, x), extract_stages(a, x)):
        assert torch.equal(fa, fb)


def test_indivisible_input_rejected():
    with pytest.raises(ShapeError):
        extract_stages(build_backbone("tiny", seed=0), torch.randn(1, 3, 60, 64))


@pytest.fixture(scope="module")
def resnet_weights(tmp_path_factory):
    torch.manual_seed(0)
    net = torchvision.models.resnet50(weights=None)
    src = tmp_path_factory.mktemp("w") / "resnet50.pth"
    torch.save(net.state_dict(), src)
    dst = src.with_suffix(".utaw")
    convert_torchvision_resnet50(src, dst)
    return net, dst


def test_resnet_stage_sizes_and_weight_load(resnet_weights):
    net, path = resnet_weights
    bb = build_backbone("resnet50", weights=path).eval()
    assert torch.equal(bb.resnet.conv1.weight, net.conv1.weight)
    with torch.no_grad():
        feats = extract_stages(bb, torch.randn(1, 3, 352, 352))
    assert [f.shape[-1] for f in feats] == [176, 88, 44, 22, 11]
    assert [f.shape[1] for f in feats] == [64, 256, 512, 1024, 2048]
    with pytest.raises(ShapeError):
        extract_stages(bb, torch.randn(1, 3, 336, 352))


def test_resnet_missing_and_corrupt_weights(tmp_path, resnet_weights):
    with pytest.raises(WeightFileError):
        build_backbone("resnet50", weights=tmp_path / "nope.utaw")
    bad = tmp_path / "bad.utaw"
    bad.write_bytes(b"not a container")
    with pytest.raises(WeightFileError):
        build_backbone("resnet50", weights=bad)
    _, good = resnet_weights
    truncated = tmp_path / "trunc.utaw"
    truncated.write_bytes(good.read_bytes()[:5000])
    with pytest.raises(WeightFileError):
        build_backbone("resnet50", weights=truncated)
    partial = tmp_path / "partial.utaw"
    save_arrays(partial, {"resnet.conv1.weight": np.zeros((64, 3, 7, 7), np.float32)})
    with pytest.raises(WeightFileError, match="missing"):
        build_backbone("resnet50", weights=partial)


def test_weight_container_round_trip(tmp_path):
    arrays = {"a": np.arange(6, dtype=np.float32).reshape(2, 3), "b": np.array([1, 2], dtype=np.int64)}
    save_arrays(tmp_path / "x.utaw", arrays, {"note": "hi"})
    back, meta = load_arrays(tmp_path / "x.utaw")
    assert meta == {"note": "hi"}
    for k in arrays:
        assert back[k].dtype == arrays[k].dtype
        np.testing.assert_array_equal(back[k], arrays[k])
    save_arrays(tmp_path / "y.utaw", back, meta)
    assert (tmp_path / "x.utaw").read_bytes() == (tmp_path / "y.utaw").read_bytes()


def test_aspp_shape():
    torch.manual_seed(0)
    aspp = ASPP(2048, 64).eval()
    with torch.no_grad():
        assert aspp(torch.randn(1, 2048, 11, 11)).shape == (1, 64, 11, 11)
    small = ASPP(16, 8).train()
    assert small(torch.randn(1, 16, 3, 3)).shape == (1, 8, 3, 3)


def test_aspp_pooled_branch_on_constant_field():
    aspp = ASPP(4, 4)
    x = torch.full((1, 4, 9, 9), 2.5)
    pooled = aspp.pool[0](x)
    assert torch.allclose(pooled, torch.full((1, 4, 1, 1), 2.5))


def scalar_dilated_conv(img, kernel, rate):
    h, w = img.shape
    k = kernel.shape[0] // 2
    out = np.zeros_like(img)
    for i in range(h):
        for j in range(w):
            acc = 0.0
            for a in range(-k, k + 1):
                for b in range(-k, k + 1):
                    y, x = i + a * rate, j + b * rate
                    if 0 <= y < h and 0 <= x < w:
                        acc += kernel[a + k, b + k] * img[y, x]
            out[i, j] = acc
    return out


def test_aspp_dilated_branch_footprint():
    aspp = ASPP(1, 1, rates=(2, 4, 6)).double()
    conv = aspp.branches[1][0]
    assert conv.dilation == (2, 2)
    kernel = torch.arange(1, 10, dtype=torch.float64).view(1, 1, 3, 3)
    with torch.no_grad():
        conv.weight.copy_(kernel)
    img = np.zeros((5, 5))
    img[2, 2] = 1.0
    got = conv(torch.from_numpy(img)[None, None])[0, 0].detach().numpy()
    want = scalar_dilated_conv(img, kernel[0, 0].numpy(), 2)
    np.testing.assert_allclose(got, want, atol=1e-12)
    footprint = {tuple(p) for p in np.argwhere(got != 0)}
    assert footprint == {(i, j) for i in (0, 2, 4) for j in (0, 2, 4)}
