"""Real architectures with randomly initialized checkpoints.

Pretrained ImageNet weights are not bundled; these tests check wiring only:
layer lookup, feature width, checkpoint loading and determinism.
"""

import numpy as np
import pytest

from cartoon_screen.backends import build_torchvision_net, get_backend
from cartoon_screen.errors import ConfigurationError
from cartoon_screen.features import descriptor_from_dict, extract_features, shipped_descriptor
from cartoon_screen.ingest import InputTensor

torch = pytest.importorskip("torch")
pytest.importorskip("torchvision")


def _tensors(n=3):
    rng = np.random.default_rng(0)
    return [InputTensor(rng.normal(size=(224, 224, 3)).astype(np.float32)) for _ in range(n)]


def _torch_checkpoint(tmp_path, name):
    torch.manual_seed(0)
    net = build_torchvision_net(shipped_descriptor(name))
    path = tmp_path / f"{name}.pt"
    torch.save(net.state_dict(), path)
    return shipped_descriptor(name, path)


@pytest.mark.slow
@pytest.mark.parametrize("name, dim", [("googlenet", 1024), ("squeezenet_2class", 1000), ("mobilenet_v2", 1280)])
def test_torchvision_dims_and_determinism(tmp_path, name, dim):
    d = _torch_checkpoint(tmp_path, name)
    ts = _tensors()
    a = extract_features(ts, d, batch_size=2)
    b = extract_features(ts, d, get_backend(d), batch_size=2)
    assert all(f.dim == dim for f in a)
    for x, y in zip(a, b):
        assert x.values.tobytes() == y.values.tobytes()


@pytest.mark.slow
def test_squeezenet_accepts_plain_imagenet_checkpoint(tmp_path):
    from torchvision import models

    torch.manual_seed(0)
    path = tmp_path / "sq.pt"
    torch.save(models.squeezenet1_0(weights=None).state_dict(), path)
    backend = get_backend(shipped_descriptor("squeezenet_2class", path))
    assert backend.output_width() == 1000


@pytest.mark.slow
def test_torchvision_dim_mismatch(tmp_path):
    d = _torch_checkpoint(tmp_path, "mobilenet_v2")
    wrong = descriptor_from_dict({**d.to_dict(), "feature_dim": 1000})
    with pytest.raises(ConfigurationError, match="width 1280"):
        get_backend(wrong)
    missing = descriptor_from_dict({**d.to_dict(), "feature_layer": "no_such_layer"})
    with pytest.raises(ConfigurationError, match="not found"):
        get_backend(missing)


@pytest.mark.slow
def test_torchvision_incomplete_checkpoint(tmp_path):
    path = tmp_path / "partial.pt"
    torch.save({"features.0.0.weight": torch.zeros(32, 3, 3, 3)}, path)
    with pytest.raises(ConfigurationError, match="missing"):
        get_backend(shipped_descriptor("mobilenet_v2", path))


@pytest.mark.slow
def test_nasnet_dim(tmp_path):
    keras = pytest.importorskip("keras")
    net = keras.applications.NASNetMobile(weights=None, include_top=True, input_shape=(224, 224, 3))
    path = tmp_path / "nasnet.weights.h5"
    net.save_weights(str(path))
    d = shipped_descriptor("nasnet_a_mobile", path)
    feats = extract_features(_tensors(2), d)
    assert [f.dim for f in feats] == [1056, 1056]
