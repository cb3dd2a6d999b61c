"""CSCDNet, SSCDNet and CSSCDNet builders, forward passes and checkpoints.

All three share one encoder/decoder layout:

* encoder: ``len(stage_widths)`` stages, each halving the resolution with a
  stride-2 3x3 conv followed by ``blocks_per_stage - 1`` residual 3x3 convs;
* decoder: deepest-first, each stage concatenates the upsampled decoder
  stream with the encoder skip features (both branches for the siamese nets)
  and, where configured, a correlation volume between the two branches;
* head: upsample to full resolution, one 3x3 conv, one 1x1 output conv.
"""

import io
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .engine import ops
from .engine.tensor import ShapeError, Tensor

KINDS = ("cscdnet", "sscdnet", "csscdnet")


@dataclass(frozen=True)
class EncoderConfig:
    stage_widths: tuple = (16, 32, 64, 128)
    blocks_per_stage: int = 2
    use_batchnorm: bool = True

    def __post_init__(self):
        object.__setattr__(self, "stage_widths", tuple(int(w) for w in self.stage_widths))
        if not self.stage_widths or any(w <= 0 for w in self.stage_widths):
            raise ValueError(f"stage_widths must be non-empty and positive, got {self.stage_widths}")
        if self.blocks_per_stage < 1:
            raise ValueError(f"blocks_per_stage must be >= 1, got {self.blocks_per_stage}")

    @classmethod
    def toy(cls, **kw):
        return cls(stage_widths=(16, 32, 64, 128), **kw)

    @classmethod
    def full(cls, **kw):
        return cls(stage_widths=(64, 128, 256, 512), **kw)

    @property
    def num_stages(self):
        return len(self.stage_widths)

    @property
    def downsample(self):
        return 2 ** self.num_stages


@dataclass(frozen=True)
class CSCDNetConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    correlation_max_disp: int = 4
    correlation_stages: tuple | None = None  # None: the two deepest stages
    upsample: str = "bilinear"
    output_channels: int = 2

    def __post_init__(self):
        s = self.encoder.num_stages
        stages = self.correlation_stages
        if stages is None:
            stages = tuple(range(max(0, s - 2), s))
        stages = tuple(sorted({int(i) for i in stages}))
        bad = [i for i in stages if not 0 <= i < s]
        if bad:
            raise ValueError(f"correlation_stages {bad} out of range for {s} encoder stages")
        object.__setattr__(self, "correlation_stages", stages)
        if self.correlation_max_disp < 0:
            raise ValueError("correlation_max_disp must be >= 0")
        if self.upsample not in ("nearest", "bilinear"):
            raise ValueError(f"unknown upsample mode {self.upsample!r}")


@dataclass(frozen=True)
class SSCDNetConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    num_classes: int = 11
    upsample: str = "bilinear"
    input_channels: int = 7

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.input_channels != 7:
            raise ValueError("SSCDNet takes exactly 7 input channels (I1, I2, mask)")
        if self.upsample not in ("nearest", "bilinear"):
            raise ValueError(f"unknown upsample mode {self.upsample!r}")

    @property
    def output_channels(self):
        return 2 * self.num_classes


@dataclass(frozen=True)
class CSSCDNetConfig(CSCDNetConfig):
    num_classes: int = 11

    def __post_init__(self):
        super().__post_init__()
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        object.__setattr__(self, "output_channels", 2 * self.num_classes)


CONFIG_TYPES = {"cscdnet": CSCDNetConfig, "sscdnet": SSCDNetConfig, "csscdnet": CSSCDNetConfig}


@dataclass(frozen=True)
class LayerSpec:
    name: str
    op: str  # "conv" or "bn"
    cin: int
    cout: int
    k: int = 0
    stride: int = 1

    @property
    def n_params(self):
        if self.op == "conv":
            return self.cout * self.cin * self.k * self.k + self.cout
        return 2 * self.cout


def layer_table(kind, config):
    """Ordered layer list; parameter names and init order follow it."""
    if kind not in KINDS:
        raise ValueError(f"unknown model kind {kind!r}; expected one of {KINDS}")
    if not isinstance(config, CONFIG_TYPES[kind]) or (kind == "cscdnet" and isinstance(config, CSSCDNetConfig)):
        raise TypeError(f"{kind} needs a {CONFIG_TYPES[kind].__name__}, got {type(config).__name__}")
    enc = config.encoder
    widths = enc.stage_widths
    siamese = kind != "sscdnet"
    layers = []

    def conv_block(name, cin, cout, k=3, stride=1):
        layers.append(LayerSpec(f"{name}.conv", "conv", cin, cout, k, stride))
        if enc.use_batchnorm:
            layers.append(LayerSpec(f"{name}.bn", "bn", cout, cout))

    cin = 3 if siamese else config.input_channels
    for s, w in enumerate(widths):
        for b in range(enc.blocks_per_stage):
            conv_block(f"enc.s{s}.b{b}", cin if b == 0 else w, w, stride=2 if b == 0 else 1)
        cin = w

    corr_ch = 0
    if siamese:
        corr_ch = (2 * config.correlation_max_disp + 1) ** 2
    branches = 2 if siamese else 1
    for s in reversed(range(len(widths))):
        c = branches * widths[s]
        if s < len(widths) - 1:
            c += widths[s + 1]
        if siamese and s in config.correlation_stages:
            c += corr_ch
        conv_block(f"dec.s{s}", c, widths[s])
    conv_block("head.mid", widths[0], widths[0])
    layers.append(LayerSpec("head.out.conv", "conv", widths[0], config.output_channels, 1, 1))
    return layers


def parameter_count(kind, config):
    return sum(layer.n_params for layer in layer_table(kind, config))


class Model:
    """Named parameters plus batch-norm buffers for one architecture."""

    def __init__(self, kind, config, params, buffers, layers):
        self.kind = kind
        self.config = config
        self.params = params
        self.buffers = buffers
        self.layers = layers
        self.training = True

    def train(self, mode=True):
        self.training = mode
        return self

    def eval(self):
        return self.train(False)

    def named_parameters(self):
        return list(self.params.items())

    def num_parameters(self):
        return int(sum(p.size for p in self.params.values()))

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def __repr__(self):
        return f"Model(kind={self.kind!r}, params={self.num_parameters()})"

    # layers -------------------------------------------------------------

    def _conv_block(self, name, x, stride=1, act=True):
        p = self.params
        k = p[f"{name}.conv.weight"].shape[-1]
        y = ops.conv2d(x, p[f"{name}.conv.weight"], p[f"{name}.conv.bias"], stride=stride, padding=k // 2)
        if f"{name}.bn.weight" in p:
            y = ops.batch_norm2d(
                y,
                p[f"{name}.bn.weight"],
                p[f"{name}.bn.bias"],
                self.buffers[f"{name}.bn.running_mean"],
                self.buffers[f"{name}.bn.running_var"],
                training=self.training,
            )
        return ops.relu(y) if act else y

    def encode(self, x):
        """Per-stage feature maps, shallowest first."""
        enc = self.config.encoder
        feats = []
        for s in range(enc.num_stages):
            x = self._conv_block(f"enc.s{s}.b0", x, stride=2)
            for b in range(1, enc.blocks_per_stage):
                y = self._conv_block(f"enc.s{s}.b{b}", x, act=False)
                x = ops.relu(ops.add(x, y))
            feats.append(x)
        return feats

    def decode(self, skips, corr=None):
        """Run the decoder; ``skips[s]`` is a list of tensors to concatenate at stage s."""
        mode = self.config.upsample
        d = None
        for s in reversed(range(len(skips))):
            parts = list(skips[s])
            if d is not None:
                parts.insert(0, ops.upsample2x(d, mode))
            if corr is not None and s in corr:
                parts.append(corr[s])
            d = self._conv_block(f"dec.s{s}", ops.channel_concat(*parts))
        d = self._conv_block("head.mid", ops.upsample2x(d, mode))
        p = self.params
        return ops.conv2d(d, p["head.out.conv.weight"], p["head.out.conv.bias"])


def _init_params(layers, seed, dtype=np.float32):
    rng = np.random.default_rng(seed)
    params, buffers = {}, {}
    for layer in layers:
        if layer.op == "conv":
            fan_in = layer.cin * layer.k * layer.k
            w = rng.standard_normal((layer.cout, layer.cin, layer.k, layer.k)) * np.sqrt(2.0 / fan_in)
            params[f"{layer.name}.weight"] = Tensor(w.astype(dtype), requires_grad=True, name=f"{layer.name}.weight")
            params[f"{layer.name}.bias"] = Tensor(
                np.zeros(layer.cout, dtype), requires_grad=True, name=f"{layer.name}.bias"
            )
        else:
            params[f"{layer.name}.weight"] = Tensor(np.ones(layer.cout, dtype), requires_grad=True, name=f"{layer.name}.weight")
            params[f"{layer.name}.bias"] = Tensor(np.zeros(layer.cout, dtype), requires_grad=True, name=f"{layer.name}.bias")
            buffers[f"{layer.name}.running_mean"] = np.zeros(layer.cout, dtype)
            buffers[f"{layer.name}.running_var"] = np.ones(layer.cout, dtype)
    return params, buffers


def build_model(kind, config=None, seed=0):
    """Build a model with Kaiming fan-in initialization drawn from ``seed``."""
    if config is None:
        config = CONFIG_TYPES[kind]()
    layers = layer_table(kind, config)
    params, buffers = _init_params(layers, seed)
    return Model(kind, config, params, buffers, layers)


# forward passes ----------------------------------------------------------


def _as_input(x, name):
    if not isinstance(x, Tensor):
        x = Tensor(np.asarray(x, dtype=np.float32), dtype=np.float32)
    if x.data.ndim == 3:
        x = Tensor(x.data[None], dtype=x.dtype)
    if x.data.ndim != 4:
        raise ShapeError(f"{name} must be (N,C,H,W), got {x.shape}")
    return x


def _check_spatial(model, *images):
    div = model.config.encoder.downsample
    ref = images[0].shape
    for img in images:
        if img.shape != ref:
            raise ShapeError(f"input shapes differ: {img.shape} vs {ref}")
    h, w = ref[2], ref[3]
    if h % div or w % div:
        raise ShapeError(f"spatial size {h}x{w} must be divisible by {div} (encoder downsampling factor)")


def _siamese_trunk(model, I1, I2):
    I1, I2 = _as_input(I1, "I1"), _as_input(I2, "I2")
    if I1.shape[1] != 3:
        raise ShapeError(f"images must have 3 channels, got {I1.shape}")
    _check_spatial(model, I1, I2)
    n = I1.shape[0]
    # one pass over the stacked batch: both branches use the same parameter tensors
    feats = model.encode(ops.batch_concat(I1, I2))
    f1 = [ops.batch_slice(f, 0, n) for f in feats]
    f2 = [ops.batch_slice(f, n, 2 * n) for f in feats]
    cfg = model.config
    corr = {s: ops.correlation2d(f1[s], f2[s], cfg.correlation_max_disp) for s in cfg.correlation_stages}
    return model.decode([[a, b] for a, b in zip(f1, f2)], corr)


def forward_change(model, I1, I2):
    """CSCDNet change logits (N,2,H,W); softmax channel 1 is the change probability."""
    if model.kind != "cscdnet":
        raise ValueError(f"forward_change needs a cscdnet model, got {model.kind}")
    return _siamese_trunk(model, I1, I2)


def _mask_tensor(M, like):
    m = np.asarray(getattr(M, "data", M))
    if m.ndim == 2:
        m = m[None, None]
    elif m.ndim == 3:
        m = m[:, None]
    if not np.isin(m, (0, 1)).all():
        raise ValueError("change mask must be binary (values 0 or 1)")
    if m.shape != (like.shape[0], 1, like.shape[2], like.shape[3]):
        raise ShapeError(f"mask shape {m.shape} does not match images {like.shape}")
    return Tensor(m.astype(like.dtype), dtype=like.dtype)


def _split(model, logits):
    k = model.config.num_classes
    return ops.channel_slice(logits, 0, k), ops.channel_slice(logits, k, 2 * k)


def semantic_logits(model, I1, I2, M):
    """SSCDNet raw (N,2K,H,W) logits from the 7-channel [I1, I2, M] input."""
    if model.kind != "sscdnet":
        raise ValueError(f"forward_semantic needs an sscdnet model, got {model.kind}")
    I1, I2 = _as_input(I1, "I1"), _as_input(I2, "I2")
    _check_spatial(model, I1, I2)
    x = ops.channel_concat(I1, I2, _mask_tensor(M, I1))
    feats = model.encode(x)
    return model.decode([[f] for f in feats])


def forward_semantic(model, I1, I2, M):
    """SSCDNet per-time logits (P1, P2), each (N,K,H,W)."""
    return _split(model, semantic_logits(model, I1, I2, M))


def direct_logits(model, I1, I2):
    if model.kind != "csscdnet":
        raise ValueError(f"forward_semantic_direct needs a csscdnet model, got {model.kind}")
    return _siamese_trunk(model, I1, I2)


def forward_semantic_direct(model, I1, I2):
    """CSSCDNet per-time logits (P1, P2) from the image pair alone."""
    return _split(model, direct_logits(model, I1, I2))


# config text -----------------------------------------------------------------


def config_to_text(kind, config):
    enc = config.encoder
    lines = [
        f"kind={kind}",
        f"stage_widths={','.join(str(w) for w in enc.stage_widths)}",
        f"blocks_per_stage={enc.blocks_per_stage}",
        f"use_batchnorm={int(enc.use_batchnorm)}",
        f"upsample={config.upsample}",
    ]
    if kind in ("cscdnet", "csscdnet"):
        lines.append(f"correlation_max_disp={config.correlation_max_disp}")
        lines.append(f"correlation_stages={','.join(str(s) for s in config.correlation_stages)}")
    if kind in ("sscdnet", "csscdnet"):
        lines.append(f"num_classes={config.num_classes}")
    return "\n".join(lines) + "\n"


def parse_key_values(text):
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _int_list(value):
    return tuple(int(v) for v in value.split(",") if v.strip())


def config_from_text(text):
    kv = parse_key_values(text)
    kind = kv.get("kind")
    if kind not in KINDS:
        raise ValueError(f"config has unknown kind {kind!r}")
    enc = EncoderConfig(
        stage_widths=_int_list(kv["stage_widths"]),
        blocks_per_stage=int(kv.get("blocks_per_stage", 2)),
        use_batchnorm=kv.get("use_batchnorm", "1") not in ("0", "false", "False"),
    )
    upsample = kv.get("upsample", "bilinear")
    if kind == "sscdnet":
        return kind, SSCDNetConfig(encoder=enc, num_classes=int(kv["num_classes"]), upsample=upsample)
    common = dict(
        encoder=enc,
        correlation_max_disp=int(kv.get("correlation_max_disp", 4)),
        correlation_stages=_int_list(kv["correlation_stages"]) if "correlation_stages" in kv else None,
        upsample=upsample,
    )
    if kind == "cscdnet":
        return kind, CSCDNetConfig(**common)
    return kind, CSSCDNetConfig(num_classes=int(kv["num_classes"]), **common)


# checkpoints -------------------------------------------------------------------

MAGIC = b"SSCDCKPT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Malformed, truncated or mismatched checkpoint file."""


def checkpoint_bytes(model):
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    kind = model.kind.encode()
    cfg = config_to_text(model.kind, model.config).encode()
    buf.write(struct.pack("<I", len(kind)) + kind)
    buf.write(struct.pack("<I", len(cfg)) + cfg)
    records = [(k, t.data) for k, t in model.params.items()] + list(model.buffers.items())
    buf.write(struct.pack("<I", len(records)))
    for name, arr in records:
        raw = name.encode()
        buf.write(struct.pack("<I", len(raw)) + raw)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return buf.getvalue()


def save_weights(model, path):
    """Write the binary checkpoint and a ``<path>.cfg`` key=value echo."""
    path = Path(path)
    path.write_bytes(checkpoint_bytes(model))
    Path(str(path) + ".cfg").write_text(config_to_text(model.kind, model.config))
    return path


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise CheckpointError(f"truncated checkpoint: need {n} bytes for {what} at offset {self.pos}, "
                                  f"file has {len(self.data)}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]


def model_from_bytes(data, expected_kind=None, expected_config=None):
    r = _Reader(data)
    magic = r.take(len(MAGIC), "magic")
    if magic != MAGIC:
        raise CheckpointError(f"not a checkpoint: expected magic {MAGIC!r}, found {magic!r}")
    version = r.u32("version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version: expected {FORMAT_VERSION}, found {version}")
    kind = r.take(r.u32("kind length"), "kind").decode()
    cfg_text = r.take(r.u32("config length"), "config").decode()
    found_kind, config = config_from_text(cfg_text)
    if found_kind != kind:
        raise CheckpointError(f"checkpoint kind {kind!r} disagrees with its config echo {found_kind!r}")
    if expected_kind is not None and kind != expected_kind:
        raise CheckpointError(f"model kind mismatch: expected {expected_kind!r}, found {kind!r}")
    if expected_config is not None and expected_config != config:
        raise CheckpointError(f"config mismatch: expected {expected_config}, found {config}")
    arrays = {}
    for _ in range(r.u32("record count")):
        name = r.take(r.u32("name length"), "name").decode()
        rank = r.u32(f"rank of {name}")
        shape = struct.unpack(f"<{rank}I", r.take(4 * rank, f"shape of {name}"))
        count = int(np.prod(shape, dtype=np.int64))
        payload = r.take(4 * count, f"payload of {name}")
        arrays[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes after last record")

    layers = layer_table(kind, config)
    params, buffers = _init_params(layers, seed=0)
    expected = set(params) | set(buffers)
    if set(arrays) != expected:
        missing = sorted(expected - set(arrays))
        extra = sorted(set(arrays) - expected)
        raise CheckpointError(f"checkpoint records do not match architecture: missing {missing}, unexpected {extra}")
    for name, arr in arrays.items():
        target = params[name].data if name in params else buffers[name]
        if target.shape != arr.shape:
            raise CheckpointError(f"{name}: expected shape {target.shape}, found {arr.shape}")
        target[...] = arr
    return Model(kind, config, params, buffers, layers)


def load_weights(path, expected_kind=None, expected_config=None):
    return model_from_bytes(Path(path).read_bytes(), expected_kind, expected_config)


def with_max_disp(config, max_disp):
    """Copy of a siamese config with a different correlation displacement."""
    return replace(config, correlation_max_disp=max_disp)


__all__ = [
    "CSCDNetConfig",
    "CSSCDNetConfig",
    "CheckpointError",
    "EncoderConfig",
    "Model",
    "SSCDNetConfig",
    "build_model",
    "checkpoint_bytes",
    "config_from_text",
    "config_to_text",
    "forward_change",
    "forward_semantic",
    "forward_semantic_direct",
    "layer_table",
    "load_weights",
    "model_from_bytes",
    "parameter_count",
    "save_weights",
]
