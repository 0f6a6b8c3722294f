"""Inception-residual 1D network: declarative specs, init, forward, backward.

A network is: stem conv -> BN -> ReLU -> maxpool, then three stages of
inception-residual blocks, then global average pooling and a fully
connected head. Each block runs parallel conv branches with different
kernel sizes, depth-concatenates them, merges with a linear 1x1 conv + BN,
and adds a shortcut (identity when shapes match, otherwise a linear 1x1
projection conv + BN), finishing with ReLU.

Forward passes return a backward closure so training needs no general
autodiff: ``logits, back = forward_with_tape(model, x, "train")`` then
``grads = {}; back(dlogits, grads)``.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field, asdict

import numpy as np

from . import ops
from .ops import BatchNormStats

CHECKPOINT_MAGIC = b"BNCK"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class InceptionResBlockSpec:
    branch_kernel_sizes: tuple[int, ...]
    branch_channels: tuple[int, ...]
    output_channels: int
    downsample: bool = False
    input_channels: int | None = None  # optional redundancy; checked against chaining

    def validate(self):
        if len(self.branch_kernel_sizes) != len(self.branch_channels):
            raise ValueError("branch kernel and channel lists differ in length")
        if len(self.branch_kernel_sizes) < 2:
            raise ValueError("inception block needs at least 2 branches")
        if any(k < 1 or k % 2 == 0 for k in self.branch_kernel_sizes):
            raise ValueError(f"branch kernels must be odd, got {self.branch_kernel_sizes}")
        if sum(self.branch_channels) != self.output_channels:
            raise ValueError(
                f"branch channels {self.branch_channels} sum to "
                f"{sum(self.branch_channels)}, not output_channels={self.output_channels}"
            )


@dataclass(frozen=True)
class NetworkSpec:
    num_classes: int
    input_channels: int = 2
    input_length: int = 1024
    stem_kernel: int = 7
    stem_channels: int = 64
    stem_stride: int = 2
    stem_pool_window: int = 3
    stem_pool_stride: int = 2
    stages: tuple[tuple[InceptionResBlockSpec, ...], ...] = ()

    def validate(self):
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if not self.stages:
            raise ValueError("network needs at least one stage")
        prev = self.stem_channels
        for si, stage in enumerate(self.stages):
            for bi, block in enumerate(stage):
                block.validate()
                if block.input_channels is not None and block.input_channels != prev:
                    raise ValueError(
                        f"stage {si} block {bi}: declared input_channels "
                        f"{block.input_channels} but chain provides {prev}"
                    )
                prev = block.output_channels

    def to_json(self) -> str:
        d = asdict(self)
        d["stages"] = [[asdict(b) for b in stage] for stage in self.stages]
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "NetworkSpec":
        d = json.loads(text)
        d["stages"] = tuple(
            tuple(
                InceptionResBlockSpec(
                    branch_kernel_sizes=tuple(b["branch_kernel_sizes"]),
                    branch_channels=tuple(b["branch_channels"]),
                    output_channels=b["output_channels"],
                    downsample=b["downsample"],
                    input_channels=b.get("input_channels"),
                )
                for b in stage
            )
            for stage in d["stages"]
        )
        return cls(**d)


def default_network_spec(num_classes: int, input_length: int = 1024) -> NetworkSpec:
    """Desk-scale default: 3 stages of 2 blocks, widths 64/128/256."""

    def stage(width, scale, downsample_first):
        widths = (16 * scale, 32 * scale, 16 * scale)
        return tuple(
            InceptionResBlockSpec((1, 3, 5), widths, width, downsample=(i == 0 and downsample_first))
            for i in range(2)
        )

    return NetworkSpec(
        num_classes=num_classes,
        input_length=input_length,
        stages=(stage(64, 1, False), stage(128, 2, True), stage(256, 4, True)),
    )


def small_network_spec(num_classes: int, input_length: int = 512) -> NetworkSpec:
    """Compact variant for fast experiments (one block per stage)."""
    return NetworkSpec(
        num_classes=num_classes,
        input_length=input_length,
        stem_channels=32,
        stages=(
            (InceptionResBlockSpec((1, 3, 5), (8, 16, 8), 32),),
            (InceptionResBlockSpec((1, 3, 5), (16, 32, 16), 64, downsample=True),),
            (InceptionResBlockSpec((1, 3, 5), (32, 64, 32), 128, downsample=True),),
        ),
    )


def _block_param_shapes(prefix, in_ch, block):
    shapes = {}
    for i, (k, ch) in enumerate(zip(block.branch_kernel_sizes, block.branch_channels)):
        shapes[f"{prefix}/branch{i}/conv/w"] = (ch, in_ch, k)
        shapes[f"{prefix}/branch{i}/conv/b"] = (ch,)
        shapes[f"{prefix}/branch{i}/bn/gamma"] = (ch,)
        shapes[f"{prefix}/branch{i}/bn/beta"] = (ch,)
    out = block.output_channels
    shapes[f"{prefix}/merge/conv/w"] = (out, out, 1)
    shapes[f"{prefix}/merge/conv/b"] = (out,)
    shapes[f"{prefix}/merge/bn/gamma"] = (out,)
    shapes[f"{prefix}/merge/bn/beta"] = (out,)
    if block.downsample or in_ch != out:
        shapes[f"{prefix}/proj/conv/w"] = (out, in_ch, 1)
        shapes[f"{prefix}/proj/conv/b"] = (out,)
        shapes[f"{prefix}/proj/bn/gamma"] = (out,)
        shapes[f"{prefix}/proj/bn/beta"] = (out,)
    return shapes


def parameter_shapes(spec: NetworkSpec) -> dict[str, tuple[int, ...]]:
    """Every trainable parameter's shape, fully determined by the spec."""
    spec.validate()
    shapes = {
        "stem/conv/w": (spec.stem_channels, spec.input_channels, spec.stem_kernel),
        "stem/conv/b": (spec.stem_channels,),
        "stem/bn/gamma": (spec.stem_channels,),
        "stem/bn/beta": (spec.stem_channels,),
    }
    in_ch = spec.stem_channels
    for si, stage in enumerate(spec.stages):
        for bi, block in enumerate(stage):
            shapes.update(_block_param_shapes(f"stage{si}/block{bi}", in_ch, block))
            in_ch = block.output_channels
    shapes["head/fc/w"] = (in_ch, spec.num_classes)
    shapes["head/fc/b"] = (spec.num_classes,)
    return shapes


def shape_audit(spec: NetworkSpec) -> list[tuple[str, int, int]]:
    """Predicted (name, channels, length) after each composition step."""
    spec.validate()
    length = -(-spec.input_length // spec.stem_stride)
    trace = [("stem/conv", spec.stem_channels, length)]
    if length < spec.stem_pool_window:
        raise ValueError(f"stem pool window {spec.stem_pool_window} exceeds length {length}")
    length = (length - spec.stem_pool_window) // spec.stem_pool_stride + 1
    trace.append(("stem/pool", spec.stem_channels, length))
    for si, stage in enumerate(spec.stages):
        for bi, block in enumerate(stage):
            if block.downsample:
                length = -(-length // 2)
            if length < 1:
                raise ValueError(f"stage {si} block {bi} reduces length below 1")
            trace.append((f"stage{si}/block{bi}", block.output_channels, length))
    return trace


def count_params(spec: NetworkSpec) -> int:
    return sum(int(np.prod(s)) for s in parameter_shapes(spec).values())


def _bn_names(shapes) -> list[str]:
    return sorted({n.rsplit("/", 1)[0] for n in shapes if n.endswith("/gamma")})


class Model:
    """A network spec plus its parameters and BN running statistics."""

    def __init__(self, spec: NetworkSpec, params: dict, bn_stats: dict, init_seed: int):
        self.spec = spec
        self.params = params
        self.bn_stats = bn_stats
        self.init_seed = init_seed

    @property
    def feature_dim(self) -> int:
        return self.params["head/fc/w"].shape[0]

    def count_params(self) -> int:
        return count_params(self.spec)

    def checksum(self) -> int:
        """CRC over parameters and BN stats, for determinism/purity checks."""
        crc = 0
        for name in sorted(self.params):
            crc = zlib.crc32(name.encode() + self.params[name].tobytes(), crc)
        for name in sorted(self.bn_stats):
            s = self.bn_stats[name]
            crc = zlib.crc32(
                name.encode() + s.mean.tobytes() + s.var.tobytes() + bytes([s.initialized]),
                crc,
            )
        return crc


def build_model(spec: NetworkSpec, seed: int) -> Model:
    """Deterministic He-style initialization from (spec, seed)."""
    spec.validate()
    shapes = parameter_shapes(spec)
    rng = np.random.default_rng(seed)
    params = {}
    for name in shapes:  # insertion order is deterministic
        shape = shapes[name]
        if name.endswith("/conv/w"):
            fan_in = shape[1] * shape[2]
            params[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
        elif name.endswith("/fc/w"):
            fan_in = shape[0]
            params[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
        elif name.endswith("/gamma"):
            params[name] = np.ones(shape)
        else:  # biases and betas
            params[name] = np.zeros(shape)
    bn_stats = {n: BatchNormStats.create(shapes[n + "/gamma"][0]) for n in _bn_names(shapes)}
    return Model(spec, params, bn_stats, seed)


# --- forward / backward ---


def _conv_bn(model, x, prefix, stride, mode, activate):
    p = model.params
    y, cctx = ops.conv1d(x, p[f"{prefix}/conv/w"], p[f"{prefix}/conv/b"], stride)
    y, bctx = ops.batchnorm1d(
        y, p[f"{prefix}/bn/gamma"], p[f"{prefix}/bn/beta"], model.bn_stats[prefix + "/bn"], mode
    )
    mask = None
    if activate:
        y, mask = ops.relu(y)

    def back(gy, grads):
        if mask is not None:
            gy = ops.relu_backward(mask, gy)
        gy, ggamma, gbeta = ops.batchnorm1d_backward(bctx, gy)
        _accum(grads, f"{prefix}/bn/gamma", ggamma)
        _accum(grads, f"{prefix}/bn/beta", gbeta)
        gx, gw, gb = ops.conv1d_backward(cctx, gy)
        _accum(grads, f"{prefix}/conv/w", gw)
        _accum(grads, f"{prefix}/conv/b", gb)
        return gx

    return y, back


def _accum(grads, name, g):
    if name in grads:
        grads[name] += g
    else:
        grads[name] = g


def inception_res_block(model, x, block: InceptionResBlockSpec, prefix: str, mode: str):
    """One block: parallel branches -> concat -> linear 1x1 merge -> shortcut -> ReLU."""
    in_ch = x.shape[1]
    stride = 2 if block.downsample else 1
    branch_outs, branch_backs = [], []
    for i in range(len(block.branch_kernel_sizes)):
        y, bk = _conv_bn(model, x, f"{prefix}/branch{i}", stride, mode, activate=True)
        branch_outs.append(y)
        branch_backs.append(bk)
    cat, channels = ops.depth_concat(branch_outs)
    main, merge_back = _conv_bn(model, cat, f"{prefix}/merge", 1, mode, activate=False)
    if block.downsample or in_ch != block.output_channels:
        shortcut, proj_back = _conv_bn(model, x, f"{prefix}/proj", stride, mode, activate=False)
    else:
        shortcut, proj_back = x, None
    z, _ = ops.residual_add(main, shortcut)
    out, mask = ops.relu(z)

    def back(gy, grads):
        gy = ops.relu_backward(mask, gy)
        gcat = merge_back(gy, grads)
        parts = ops.depth_concat_backward(channels, gcat)
        gx = branch_backs[0](parts[0], grads)
        for bk, part in zip(branch_backs[1:], parts[1:]):
            gx += bk(part, grads)
        if proj_back is not None:
            gx += proj_back(gy, grads)
        else:
            gx += gy
        return gx

    return out, back


def forward_with_tape(model: Model, batch: np.ndarray, mode: str):
    """Run the network; returns (logits, backward closure).

    The closure maps d(loss)/d(logits) to parameter gradients accumulated
    into a caller-supplied dict, and returns d(loss)/d(input).
    """
    spec = model.spec
    if batch.ndim != 3 or batch.shape[1] != spec.input_channels or batch.shape[2] != spec.input_length:
        raise ValueError(
            f"batch shape {batch.shape} does not match spec "
            f"(N, {spec.input_channels}, {spec.input_length})"
        )
    backs = []
    x, bk = _conv_bn(model, batch, "stem", spec.stem_stride, mode, activate=True)
    backs.append(bk)
    x, pctx = ops.maxpool1d(x, spec.stem_pool_window, spec.stem_pool_stride)
    backs.append(lambda gy, grads: ops.maxpool1d_backward(pctx, gy))
    for si, stage in enumerate(spec.stages):
        for bi, block in enumerate(stage):
            x, bk = inception_res_block(model, x, block, f"stage{si}/block{bi}", mode)
            backs.append(bk)
    x, gctx = ops.global_avgpool(x)
    backs.append(lambda gy, grads: ops.global_avgpool_backward(gctx, gy))
    logits, dctx = ops.dense(x, model.params["head/fc/w"], model.params["head/fc/b"])

    def back(dlogits, grads):
        g, gw, gb = ops.dense_backward(dctx, dlogits)
        _accum(grads, "head/fc/w", gw)
        _accum(grads, "head/fc/b", gb)
        for bk in reversed(backs):
            g = bk(g, grads)
        return g

    return logits, back


def forward(model: Model, batch: np.ndarray, mode: str = "eval") -> np.ndarray:
    logits, _ = forward_with_tape(model, batch, mode)
    return logits


# --- checkpoint serialization ---


@dataclass
class Checkpoint:
    format_version: int
    spec: NetworkSpec
    params: dict
    bn_stats: dict
    velocity: dict
    iteration: int
    rng_state: dict | None
    init_seed: int

    def to_model(self) -> Model:
        params = {k: v.copy() for k, v in self.params.items()}
        stats = {
            k: BatchNormStats(v.mean.copy(), v.var.copy(), v.initialized)
            for k, v in self.bn_stats.items()
        }
        return Model(self.spec, params, stats, self.init_seed)


def _write_record(out: list, name: str, arr: np.ndarray):
    data = np.ascontiguousarray(arr, dtype="<f8")
    name_b = name.encode()
    out.append(struct.pack("<H", len(name_b)))
    out.append(name_b)
    out.append(struct.pack("<B", data.ndim))
    out.append(struct.pack(f"<{data.ndim}I", *data.shape))
    out.append(data.tobytes())


def save_checkpoint(model: Model, optimizer_state: dict | None, path,
                    iteration: int = 0, rng_state: dict | None = None) -> None:
    """Write a bit-exact snapshot of model + optimizer state."""
    records: dict[str, np.ndarray] = {}
    for name in sorted(model.params):
        records[f"param/{name}"] = model.params[name]
    for name in sorted(model.bn_stats):
        s = model.bn_stats[name]
        records[f"stats/{name}/mean"] = s.mean
        records[f"stats/{name}/var"] = s.var
        records[f"stats/{name}/init"] = np.array([float(s.initialized)])
    if optimizer_state:
        for name in sorted(optimizer_state):
            records[f"velocity/{name}"] = optimizer_state[name]
    meta = json.dumps(
        {"iteration": iteration, "init_seed": model.init_seed, "rng_state": rng_state},
        sort_keys=True,
        separators=(",", ":"),
    ).encode()
    spec_b = model.spec.to_json().encode()

    out = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION)]
    out.append(struct.pack("<I", len(spec_b)))
    out.append(spec_b)
    out.append(struct.pack("<I", len(meta)))
    out.append(meta)
    out.append(struct.pack("<I", len(records)))
    for name, arr in records.items():
        _write_record(out, name, arr)
    blob = b"".join(out)
    blob += struct.pack("<I", zlib.crc32(blob))
    with open(path, "wb") as f:
        f.write(blob)


class CheckpointError(Exception):
    pass


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError("truncated checkpoint file")
        chunk = self.blob[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 12 or blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    body, crc_b = blob[:-4], blob[-4:]
    if len(blob) < 8 or struct.unpack("<I", crc_b)[0] != zlib.crc32(body):
        raise CheckpointError("checkpoint CRC mismatch (truncated or corrupted file)")
    r = _Reader(body)
    r.take(4)
    version = r.u32()
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    spec = NetworkSpec.from_json(r.take(r.u32()).decode())
    meta = json.loads(r.take(r.u32()).decode())
    n_records = r.u32()
    records: dict[str, np.ndarray] = {}
    for _ in range(n_records):
        name_len = struct.unpack("<H", r.take(2))[0]
        name = r.take(name_len).decode()
        ndim = struct.unpack("<B", r.take(1))[0]
        shape = struct.unpack(f"<{ndim}I", r.take(4 * ndim))
        count = int(np.prod(shape)) if ndim else 1
        records[name] = np.frombuffer(r.take(8 * count), dtype="<f8").reshape(shape).copy()

    expected = parameter_shapes(spec)
    params, velocity, stats = {}, {}, {}
    for name, arr in records.items():
        kind, rest = name.split("/", 1)
        if kind == "param":
            if rest not in expected or arr.shape != expected[rest]:
                raise CheckpointError(
                    f"parameter {rest} shape {arr.shape} inconsistent with spec"
                )
            params[rest] = arr
        elif kind == "velocity":
            velocity[rest] = arr
    missing = set(expected) - set(params)
    if missing:
        raise CheckpointError(f"checkpoint missing parameters: {sorted(missing)[:3]}...")
    for bn_name in _bn_names(expected):
        stats[bn_name] = BatchNormStats(
            records[f"stats/{bn_name}/mean"],
            records[f"stats/{bn_name}/var"],
            bool(records[f"stats/{bn_name}/init"][0]),
        )
    return Checkpoint(
        format_version=version,
        spec=spec,
        params=params,
        bn_stats=stats,
        velocity=velocity,
        iteration=meta["iteration"],
        rng_state=meta["rng_state"],
        init_seed=meta.get("init_seed", 0),
    )
