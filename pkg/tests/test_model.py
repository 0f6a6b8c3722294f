"""Model assembly, forward composition, gradient integrity, checkpoints."""

import numpy as np
import pytest

from burstnet import ops
from burstnet.model import (
    Checkpoint,
    CheckpointError,
    InceptionResBlockSpec,
    Model,
    NetworkSpec,
    build_model,
    count_params,
    default_network_spec,
    forward,
    forward_with_tape,
    inception_res_block,
    load_checkpoint,
    parameter_shapes,
    save_checkpoint,
    shape_audit,
    small_network_spec,
)
from tests.test_ops import assert_close, numerical_grad


def toy_spec(num_classes=3, input_length=32):
    return NetworkSpec(
        num_classes=num_classes,
        input_length=input_length,
        stem_kernel=5,
        stem_channels=4,
        stem_stride=2,
        stem_pool_window=3,
        stem_pool_stride=2,
        stages=(
            (InceptionResBlockSpec((1, 3), (2, 2), 4),),
            (InceptionResBlockSpec((1, 3), (3, 3), 6, downsample=True),),
        ),
    )


# --- spec validation ---


def test_spec_rejects_bad_branch_sum():
    bad = InceptionResBlockSpec((1, 3), (2, 2), 5)
    with pytest.raises(ValueError, match="output_channels"):
        bad.validate()


def test_spec_rejects_inconsistent_chaining():
    spec = NetworkSpec(
        num_classes=3,
        stages=(
            (InceptionResBlockSpec((1, 3), (2, 2), 4, input_channels=99),),
        ),
    )
    with pytest.raises(ValueError, match="stage 0 block 0"):
        spec.validate()


def test_spec_json_round_trip():
    spec = toy_spec()
    assert NetworkSpec.from_json(spec.to_json()) == spec
    # canonical: serializing twice is identical
    assert spec.to_json() == NetworkSpec.from_json(spec.to_json()).to_json()


# --- build_model ---


def test_build_model_deterministic():
    spec = toy_spec()
    m1 = build_model(spec, 42)
    m2 = build_model(spec, 42)
    assert m1.checksum() == m2.checksum()
    assert m1.checksum() != build_model(spec, 43).checksum()


def test_num_classes_changes_only_head():
    s3 = toy_spec(num_classes=3)
    s7 = toy_spec(num_classes=7)
    sh3, sh7 = parameter_shapes(s3), parameter_shapes(s7)
    assert sh3["head/fc/w"] == (6, 3) and sh7["head/fc/w"] == (6, 7)
    assert sh3["head/fc/b"] == (3,) and sh7["head/fc/b"] == (7,)
    for name in sh3:
        if not name.startswith("head/"):
            assert sh3[name] == sh7[name]


def test_count_params_matches_hand_audit():
    # 2-stage toy spec, shapes summed by hand:
    # stem: conv 4x2x5=40 + bias 4, bn gamma 4 + beta 4 -> 52
    # stage0 block0 (in 4, out 4, no proj):
    #   branch k=1: 2x4x1=8 +2, bn 2+2 -> 14;  branch k=3: 2x4x3=24 +2, bn 2+2 -> 30
    #   merge: 4x4x1=16 +4, bn 4+4 -> 28
    # stage1 block0 (in 4, out 6, /2, proj):
    #   branch k=1: 3x4x1=12 +3, bn 3+3 -> 21;  branch k=3: 3x4x3=36 +3, bn 3+3 -> 45
    #   merge: 6x6x1=36 +6, bn 6+6 -> 54;  proj: 6x4x1=24 +6, bn 6+6 -> 42
    # head: fc 6x3=18 + 3 -> 21
    expected = 52 + (14 + 30 + 28) + (21 + 45 + 54 + 42) + 21
    assert count_params(toy_spec()) == expected


def test_param_count_invariant_to_input_length():
    assert count_params(default_network_spec(10, 256)) == count_params(
        default_network_spec(10, 13500)
    )


# --- forward ---


def test_forward_output_shape():
    model = build_model(toy_spec(num_classes=5), 0)
    x = np.random.default_rng(0).normal(size=(4, 2, 32))
    assert forward(model, x, "train").shape == (4, 5)


def test_forward_rejects_wrong_length():
    model = build_model(toy_spec(), 0)
    with pytest.raises(ValueError, match="does not match spec"):
        forward(model, np.zeros((1, 2, 33)), "train")


def test_eval_forward_deterministic_and_pure():
    model = build_model(toy_spec(), 1)
    x = np.random.default_rng(1).normal(size=(2, 2, 32))
    forward(model, x, "train")  # populate BN stats
    before = model.checksum()
    y1 = forward(model, x, "eval")
    y2 = forward(model, x, "eval")
    np.testing.assert_array_equal(y1, y2)
    assert model.checksum() == before


def test_forward_matches_hand_composed_chain():
    # 1-block toy network recomposed layer-by-layer from numeric-core ops
    spec = NetworkSpec(
        num_classes=3,
        input_length=16,
        stem_kernel=3,
        stem_channels=4,
        stem_stride=2,
        stem_pool_window=2,
        stem_pool_stride=2,
        stages=((InceptionResBlockSpec((1, 3), (2, 2), 4),),),
    )
    model = build_model(spec, 5)
    x = np.random.default_rng(5).normal(size=(2, 2, 16))
    got = forward(model, x, "train")

    p = model.params
    fresh = {k: ops.BatchNormStats.create(v.shape[0]) for k, v in p.items() if k.endswith("gamma")}
    def bn(h, prefix):
        return ops.batchnorm1d(
            h, p[f"{prefix}/gamma"], p[f"{prefix}/beta"], fresh[f"{prefix}/gamma"], "train"
        )[0]

    h = ops.conv1d(x, p["stem/conv/w"], p["stem/conv/b"], 2)[0]
    h = ops.relu(bn(h, "stem/bn"))[0]
    h = ops.maxpool1d(h, 2, 2)[0]
    b0 = ops.relu(bn(ops.conv1d(h, p["stage0/block0/branch0/conv/w"], p["stage0/block0/branch0/conv/b"], 1)[0], "stage0/block0/branch0/bn"))[0]
    b1 = ops.relu(bn(ops.conv1d(h, p["stage0/block0/branch1/conv/w"], p["stage0/block0/branch1/conv/b"], 1)[0], "stage0/block0/branch1/bn"))[0]
    cat = ops.depth_concat([b0, b1])[0]
    main = bn(ops.conv1d(cat, p["stage0/block0/merge/conv/w"], p["stage0/block0/merge/conv/b"], 1)[0], "stage0/block0/merge/bn")
    h = ops.relu(ops.residual_add(main, h)[0])[0]
    h = ops.global_avgpool(h)[0]
    expected = ops.dense(h, p["head/fc/w"], p["head/fc/b"])[0]
    np.testing.assert_allclose(got, expected, rtol=1e-12)


def test_shape_audit_matches_forward_internals():
    spec = default_network_spec(4, 256)
    trace = shape_audit(spec)
    # stem conv /2 -> 128; pool(3,/2) -> 63; stage1 /2 -> 32; stage2 /2 -> 16
    assert trace[0] == ("stem/conv", 64, 128)
    assert trace[1] == ("stem/pool", 64, 63)
    assert trace[-1] == ("stage2/block1", 256, 16)
    # the predicted final length is what global avgpool actually sees:
    # verify by checking a single block's output length against the audit
    model = build_model(spec, 2)
    x = np.random.default_rng(2).normal(size=(1, 2, 256))
    h, _ = ops.conv1d(x, model.params["stem/conv/w"], model.params["stem/conv/b"], 2)
    assert h.shape[2] == trace[0][2]
    h, _ = ops.maxpool1d(h, 3, 2)
    assert h.shape[2] == trace[1][2]
    assert forward(model, x, "train").shape == (1, 4)


# --- block semantics ---


def test_block_zeroed_residual_is_relu_of_input():
    spec = InceptionResBlockSpec((1, 3), (2, 2), 4)
    model = build_model(
        NetworkSpec(
            num_classes=2,
            input_length=16,
            stem_channels=4,
            stages=((spec,),),
        ),
        7,
    )
    prefix = "stage0/block0"
    # zero the merge conv so the main path contributes nothing
    model.params[f"{prefix}/merge/conv/w"][:] = 0.0
    model.params[f"{prefix}/merge/conv/b"][:] = 0.0
    model.params[f"{prefix}/merge/bn/beta"][:] = 0.0
    x = np.random.default_rng(7).normal(size=(2, 4, 16))
    y, _ = inception_res_block(model, x, spec, prefix, "train")
    np.testing.assert_allclose(y, np.maximum(x, 0.0), atol=1e-12)


def test_block_downsample_halves_length():
    spec = InceptionResBlockSpec((1, 3), (2, 2), 4, downsample=True)
    model = build_model(
        NetworkSpec(num_classes=2, input_length=16, stem_channels=2, stages=((spec,),)),
        9,
    )
    x = np.random.default_rng(9).normal(size=(1, 2, 16))
    y, _ = inception_res_block(model, x, spec, "stage0/block0", "train")
    assert y.shape == (1, 4, 8)


def test_block_gradient_check():
    spec = InceptionResBlockSpec((1, 3), (2, 2), 4, downsample=True)
    net = NetworkSpec(num_classes=2, input_length=16, stem_channels=3, stages=((spec,),))
    model = build_model(net, 11)
    rng = np.random.default_rng(11)
    x = rng.normal(size=(2, 3, 8))
    gy = rng.normal(size=inception_res_block(model, x, spec, "stage0/block0", "train")[0].shape)

    def loss():
        y, _ = inception_res_block(model, x, spec, "stage0/block0", "train")
        return float((y * gy).sum())

    _, back = inception_res_block(model, x, spec, "stage0/block0", "train")
    grads = {}
    gx = back(gy, grads)
    assert_close(gx, numerical_grad(loss, x))
    for name in [f"stage0/block0/branch0/conv/w", "stage0/block0/merge/bn/gamma",
                 "stage0/block0/proj/conv/w"]:
        assert_close(grads[name], numerical_grad(loss, model.params[name]))


def test_full_network_gradient_check():
    spec = NetworkSpec(
        num_classes=3,
        input_length=12,
        stem_kernel=3,
        stem_channels=3,
        stem_stride=2,
        stem_pool_window=2,
        stem_pool_stride=2,
        stages=((InceptionResBlockSpec((1, 3), (2, 2), 4, downsample=True),),),
    )
    model = build_model(spec, 13)
    rng = np.random.default_rng(13)
    x = rng.normal(size=(2, 2, 12))
    labels = np.array([0, 2])

    def loss():
        logits, _ = forward_with_tape(model, x, "train")
        return ops.softmax_crossentropy(logits, labels)[0]

    logits, back = forward_with_tape(model, x, "train")
    _, _, ctx = ops.softmax_crossentropy(logits, labels)
    grads = {}
    gx = back(ops.softmax_crossentropy_backward(ctx), grads)
    assert_close(gx, numerical_grad(loss, x))
    for name in model.params:
        assert_close(grads[name], numerical_grad(loss, model.params[name]))


# --- checkpoints ---


def test_checkpoint_round_trip_bit_exact(tmp_path):
    model = build_model(toy_spec(), 17)
    x = np.random.default_rng(17).normal(size=(2, 2, 32))
    forward(model, x, "train")  # populate BN stats
    vel = {k: np.random.default_rng(1).normal(size=v.shape) for k, v in model.params.items()}
    p1 = tmp_path / "a.ckpt"
    p2 = tmp_path / "b.ckpt"
    save_checkpoint(model, vel, p1, iteration=10, rng_state={"x": 1})
    ck = load_checkpoint(p1)
    restored = ck.to_model()
    save_checkpoint(restored, ck.velocity, p2, iteration=ck.iteration, rng_state=ck.rng_state)
    assert p1.read_bytes() == p2.read_bytes()
    assert ck.iteration == 10 and ck.rng_state == {"x": 1}
    batch = np.random.default_rng(3).normal(size=(3, 2, 32))
    np.testing.assert_array_equal(forward(model, batch), forward(restored, batch))


def test_checkpoint_truncated_rejected(tmp_path):
    model = build_model(toy_spec(), 19)
    path = tmp_path / "c.ckpt"
    save_checkpoint(model, None, path)
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) // 2])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_checkpoint_bad_magic_rejected(tmp_path):
    path = tmp_path / "d.ckpt"
    path.write_bytes(b"nonsense data that is not a checkpoint")
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)


def test_untrained_model_equals_restored(tmp_path):
    model = build_model(toy_spec(), 23)
    path = tmp_path / "e.ckpt"
    save_checkpoint(model, None, path)
    assert load_checkpoint(path).to_model().checksum() == model.checksum()
