import numpy as np
import pytest

from mscd.network import Architecture, SiameseCDModel, build_model
from mscd.tensor import BatchNorm2d, CheckpointError, Conv2d, ReLU, Rng


def small_arch(**kw):
    defaults = dict(l1=2, l2=1, k=4, width=8)
    defaults.update(kw)
    return Architecture(**defaults)


def test_output_shape_matches_input_spatial_dims():
    model = build_model(Architecture(), Rng(0))
    x = np.random.default_rng(0).standard_normal((2, 3, 64, 64)).astype(np.float32)
    y = model.forward_opt(x, train=True)
    assert y.shape == (2, 4, 64, 64)


def test_fully_convolutional_on_large_scene():
    model = build_model(Architecture(), Rng(0))
    x = np.zeros((1, 3, 824, 716), dtype=np.float32)
    y = model.forward_opt(x, train=False)
    assert y.shape == (1, 4, 824, 716)


def test_odd_spatial_sizes_preserved():
    model = build_model(small_arch(), Rng(1))
    x = np.random.default_rng(1).standard_normal((1, 3, 13, 17)).astype(np.float32)
    assert model.forward_sar(x, train=True).shape == (1, 4, 13, 17)


def test_branch_symmetry_with_copied_weights():
    model = build_model(small_arch(), Rng(2))
    # copy optical branch parameters and BN state onto the SAR branch
    for name, t in model.params.items():
        if name.startswith("f_opt."):
            model.params["f_sar." + name[len("f_opt."):]].data = t.data.copy()
    for name, bn in model._bn_layers:
        if name.startswith("f_opt."):
            twin = dict(model._bn_layers)["f_sar." + name[len("f_opt."):]]
            twin.load_state(bn.running_mean.copy(), bn.running_var.copy())
    x = np.random.default_rng(3).standard_normal((2, 3, 16, 16)).astype(np.float32)
    y1 = model.forward_opt(x, train=False)
    y2 = model.forward_sar(x, train=False)
    assert np.array_equal(y1, y2)


def test_default_parameter_count_golden():
    model = build_model(Architecture(), Rng(0))
    # two branches of (3->64 conv, 3x 64->64 convs, 4 BN pairs) plus 1x1 head
    branch = (64 * 3 * 9 + 64) + 3 * (64 * 64 * 9 + 64) + 4 * (2 * 64)
    assert model.params.count() == 2 * branch + (64 * 4 + 4)
    assert model.params.count() == 226436


def test_same_seed_identical_checkpoints(tmp_path):
    for i, seed in enumerate([5, 5, 6]):
        build_model(Architecture(l1=2, width=8), Rng(seed)).save(tmp_path / f"m{i}.ckpt")
    a = (tmp_path / "m0.ckpt").read_bytes()
    b = (tmp_path / "m1.ckpt").read_bytes()
    c = (tmp_path / "m2.ckpt").read_bytes()
    assert a == b
    assert a != c


def test_shared_projections_single_storage():
    model = build_model(small_arch(shared_projections=True), Rng(0))
    assert model.f_sar is model.f_opt
    assert not any(name.startswith("f_sar.") for name in model.params.names())
    unshared = build_model(small_arch(), Rng(0))
    assert unshared.f_sar is not unshared.f_opt


def test_gradient_routing_between_branches():
    model = build_model(small_arch(), Rng(4))
    x = np.random.default_rng(5).standard_normal((1, 3, 8, 8)).astype(np.float32)
    tape = []
    y = model.forward_opt(x, train=True, tape=tape)
    model.backward(tape, np.ones_like(y))
    for name, t in model.params.items():
        if name.startswith("f_sar."):
            assert t.grad is None, name
        else:
            assert t.grad is not None, name
    # the shared head then accumulates from the SAR branch as well
    h_before = {n: t.grad.copy() for n, t in model.params.items() if n.startswith("h.")}
    tape = []
    y = model.forward_sar(x, train=True, tape=tape)
    model.backward(tape, np.ones_like(y))
    for name, grad in h_before.items():
        assert not np.array_equal(model.params[name].grad, grad)


def test_checkpoint_roundtrip_preserves_outputs(tmp_path):
    model = build_model(small_arch(), Rng(6))
    x = np.random.default_rng(7).standard_normal((1, 3, 12, 12)).astype(np.float32)
    model.forward_opt(x, train=True)  # move the BN running stats off their init
    y = model.forward_opt(x, train=False)
    path = tmp_path / "m.ckpt"
    model.save(path)
    back = SiameseCDModel.load(path)
    assert back.arch == model.arch
    assert np.array_equal(back.forward_opt(x, train=False), y)


def test_checkpoint_arch_mismatch_detected(tmp_path):
    model = build_model(small_arch(), Rng(0))
    path = tmp_path / "m.ckpt"
    model.save(path)
    blob = path.read_bytes()
    (tmp_path / "bad.ckpt").write_bytes(blob.replace(b"meta l1=2", b"meta l1=3"))
    with pytest.raises(CheckpointError):
        SiameseCDModel.load(tmp_path / "bad.ckpt")


def test_deep_head_layer_structure():
    model = build_model(small_arch(l2=3), Rng(0))
    kinds = [type(layer).__name__ for layer in model.head]
    assert kinds == ["Conv2d", "ReLU", "BatchNorm2d", "Conv2d", "ReLU", "BatchNorm2d", "Conv2d"]
    assert model.head[-1].kernel.shape == (4, 8, 1, 1)
    x = np.random.default_rng(8).standard_normal((1, 3, 6, 6)).astype(np.float32)
    assert model.forward_opt(x, train=True).shape == (1, 4, 6, 6)


def test_projection_layer_structure_and_final_layer_bare():
    model = build_model(Architecture(), Rng(0))
    kinds = [type(layer).__name__ for layer in model.f_opt]
    assert kinds == ["Conv2d", "ReLU", "BatchNorm2d"] * 4
    assert [type(l).__name__ for l in model.head] == ["Conv2d"]
    assert isinstance(model.f_opt[0], Conv2d)
    assert isinstance(model.f_opt[1], ReLU)
    assert isinstance(model.f_opt[2], BatchNorm2d)
    assert model.f_opt[0].kernel.shape == (64, 3, 3, 3)
    assert model.head[0].kernel.shape == (4, 64, 1, 1)


def test_invalid_arch_rejected():
    for bad in (dict(l1=0), dict(l2=0), dict(k=1), dict(width=0)):
        with pytest.raises(ValueError):
            build_model(small_arch(**bad), Rng(0))


def test_input_channel_validation():
    model = build_model(small_arch(), Rng(0))
    with pytest.raises(ValueError):
        model.forward_opt(np.zeros((1, 4, 8, 8), dtype=np.float32))
    with pytest.raises(ValueError):
        model.forward_opt(np.zeros((3, 8, 8), dtype=np.float32))


def test_receptive_halo():
    assert build_model(Architecture(), Rng(0)).receptive_halo() == 4
    assert build_model(small_arch(l1=3), Rng(0)).receptive_halo() == 3
