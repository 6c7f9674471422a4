"""The two stream networks and their fused two-stream head.

Both streams are stacks of [Conv-BN-ReLU]xk blocks closed by a pooling
layer. The I-stream flattens its last feature map into a 4,096-wide
vector; the P-stream global-average-pools into a 256-wide vector; the
fused model concatenates both (4,352) and trains only a fresh head on
top of frozen backbones.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from provnet.engine import ops
from provnet.engine.tensor import Tensor
from provnet.errors import ConfigError

BN_MOMENTUM = 0.1
BN_EPS = 1e-5


@dataclass(frozen=True)
class StreamConfig:
    kind: str  # "I" or "P"
    num_classes: int
    input_size: int = 256
    in_channels: int = 1
    channels: tuple = ()
    kernels: tuple = ()
    convs_per_block: tuple = ()
    pool: str = "max"
    global_pool: bool = False
    head_hidden: tuple = ()
    expected_feature_width: int | None = None

    def validate(self):
        if self.kind not in ("I", "P"):
            raise ConfigError(f"unknown stream kind {self.kind!r}")
        if not (len(self.channels) == len(self.kernels) == len(self.convs_per_block)):
            raise ConfigError("channels, kernels and convs_per_block must align")
        if self.pool not in ("max", "avg"):
            raise ConfigError(f"unknown pool {self.pool!r}")
        for k in self.kernels:
            if k not in (3, 5):
                raise ConfigError(f"kernel size {k} unsupported (use 3 or 5)")
        size = self.input_size
        for _ in self.channels:
            if size % 2:
                raise ConfigError(f"spatial size {size} not divisible by pooling window")
            size //= 2
        width = self.feature_width()
        if self.expected_feature_width is not None and width != self.expected_feature_width:
            raise ConfigError(
                f"feature width {width} != expected {self.expected_feature_width}"
            )

    def final_spatial(self) -> int:
        return self.input_size // (2 ** len(self.channels))

    def feature_width(self) -> int:
        if self.global_pool:
            return self.channels[-1]
        return self.channels[-1] * self.final_spatial() ** 2


def indnet_config(num_classes: int = 3, input_size: int = 256) -> StreamConfig:
    """Default I-stream: six blocks, first kernel 5x5, flatten width 4,096."""
    cfg = StreamConfig(
        kind="I",
        num_classes=num_classes,
        input_size=input_size,
        in_channels=1,
        channels=(32, 64, 128, 256, 256, 256),
        kernels=(5, 3, 3, 3, 3, 3),
        convs_per_block=(2, 2, 2, 3, 3, 3),
        pool="max",
        global_pool=False,
        head_hidden=(512, 512),
        expected_feature_width=4096 if input_size == 256 else None,
    )
    cfg.validate()
    return cfg


def prednet_config(num_classes: int = 3, input_size: int = 256) -> StreamConfig:
    """Default P-stream: five blocks, avg pooling, 256-wide pooled feature."""
    cfg = StreamConfig(
        kind="P",
        num_classes=num_classes,
        input_size=input_size,
        in_channels=3,
        channels=(32, 64, 128, 256, 256),
        kernels=(5, 5, 3, 3, 3),
        convs_per_block=(2, 2, 2, 2, 2),
        pool="avg",
        global_pool=True,
        head_hidden=(),
        expected_feature_width=256,
    )
    cfg.validate()
    return cfg


def indnet_reduced_config(num_classes: int = 2, input_size: int = 64) -> StreamConfig:
    """Shallow I-stream variant for CPU-scale experiments on small patches."""
    cfg = StreamConfig(
        kind="I",
        num_classes=num_classes,
        input_size=input_size,
        in_channels=1,
        channels=(16, 32, 64, 64),
        kernels=(5, 3, 3, 3),
        convs_per_block=(1, 1, 1, 1),
        pool="max",
        global_pool=False,
        head_hidden=(128,),
    )
    cfg.validate()
    return cfg


def prednet_reduced_config(num_classes: int = 2, input_size: int = 64) -> StreamConfig:
    """Shallow P-stream variant for CPU-scale experiments."""
    cfg = StreamConfig(
        kind="P",
        num_classes=num_classes,
        input_size=input_size,
        in_channels=3,
        channels=(16, 32, 64, 64),
        kernels=(5, 5, 3, 3),
        convs_per_block=(1, 1, 1, 1),
        pool="avg",
        global_pool=True,
        head_hidden=(),
    )
    cfg.validate()
    return cfg


def config_fingerprint(cfg) -> str:
    """Stable hash of an architecture config (same across processes)."""
    if isinstance(cfg, StreamConfig):
        payload = asdict(cfg)
    else:
        payload = dict(cfg)
    blob = json.dumps(payload, sort_keys=True, default=list)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def plan_shapes(cfg: StreamConfig) -> list[tuple[str, tuple]]:
    """Symbolic per-layer output shapes for a batch of one."""
    cfg.validate()
    shapes = []
    c, s = cfg.in_channels, cfg.input_size
    for b, (out_c, k, reps) in enumerate(
        zip(cfg.channels, cfg.kernels, cfg.convs_per_block), start=1
    ):
        for r in range(1, reps + 1):
            shapes.append((f"block{b}.conv{r}", (1, out_c, s, s)))
            c = out_c
        s //= 2
        shapes.append((f"block{b}.pool", (1, c, s, s)))
    if cfg.global_pool:
        shapes.append(("global_pool", (1, c, 1, 1)))
    shapes.append(("feature", (1, cfg.feature_width())))
    for i, width in enumerate(cfg.head_hidden, start=1):
        shapes.append((f"head.fc{i}", (1, width)))
    shapes.append(("head.out", (1, cfg.num_classes)))
    return shapes


def _he_uniform(rng, shape, fan_in, dtype):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class ConvNet:
    """One stream network: parameter store plus forward graph builder."""

    def __init__(self, cfg: StreamConfig, seed: int = 0, dtype=np.float32):
        cfg.validate()
        self.cfg = cfg
        self.dtype = dtype
        self.fingerprint = config_fingerprint(cfg)
        self.params: dict[str, np.ndarray] = {}
        self.state: dict[str, np.ndarray] = {}
        self.trainable: dict[str, bool] = {}
        self.frozen_blocks = False
        rng = np.random.default_rng(seed)

        in_c = cfg.in_channels
        for b, (out_c, k, reps) in enumerate(
            zip(cfg.channels, cfg.kernels, cfg.convs_per_block), start=1
        ):
            for r in range(1, reps + 1):
                pre = f"block{b}"
                self._add_param(
                    f"{pre}.conv{r}.weight",
                    _he_uniform(rng, (out_c, in_c, k, k), in_c * k * k, dtype),
                )
                self._add_param(f"{pre}.conv{r}.bias", np.zeros(out_c, dtype=dtype))
                self._add_param(f"{pre}.bn{r}.gamma", np.ones(out_c, dtype=dtype))
                self._add_param(f"{pre}.bn{r}.beta", np.zeros(out_c, dtype=dtype))
                self.state[f"{pre}.bn{r}.running_mean"] = np.zeros(out_c, dtype=dtype)
                self.state[f"{pre}.bn{r}.running_var"] = np.ones(out_c, dtype=dtype)
                in_c = out_c

        width = cfg.feature_width()
        for i, hidden in enumerate(cfg.head_hidden, start=1):
            self._add_param(
                f"head.fc{i}.weight", _he_uniform(rng, (hidden, width), width, dtype)
            )
            self._add_param(f"head.fc{i}.bias", np.zeros(hidden, dtype=dtype))
            width = hidden
        self._add_param(
            "head.out.weight", _he_uniform(rng, (cfg.num_classes, width), width, dtype)
        )
        self._add_param("head.out.bias", np.zeros(cfg.num_classes, dtype=dtype))

    def _add_param(self, name, value):
        self.params[name] = value
        self.trainable[name] = True

    # -- forward ---------------------------------------------------------

    def _wrap_params(self):
        return {
            name: Tensor(arr, requires_grad=self.trainable[name])
            for name, arr in self.params.items()
        }

    def _blocks_forward(self, t, tensors, train, record=None):
        cfg = self.cfg
        bn_train = train and not self.frozen_blocks
        for b, (out_c, k, reps) in enumerate(
            zip(cfg.channels, cfg.kernels, cfg.convs_per_block), start=1
        ):
            pre = f"block{b}"
            for r in range(1, reps + 1):
                t = ops.conv2d(
                    t,
                    tensors[f"{pre}.conv{r}.weight"],
                    tensors[f"{pre}.conv{r}.bias"],
                    stride=1,
                    padding=k // 2,
                )
                t = ops.batchnorm2d(
                    t,
                    tensors[f"{pre}.bn{r}.gamma"],
                    tensors[f"{pre}.bn{r}.beta"],
                    self.state[f"{pre}.bn{r}.running_mean"],
                    self.state[f"{pre}.bn{r}.running_var"],
                    train=bn_train,
                    momentum=BN_MOMENTUM,
                    eps=BN_EPS,
                )
                t = ops.relu(t)
                if record is not None:
                    record.append((f"{pre}.conv{r}", t.shape))
            t = ops.pool2d(t, cfg.pool)
            if record is not None:
                record.append((f"{pre}.pool", t.shape))
        if cfg.global_pool:
            t = ops.global_avgpool(t)
            if record is not None:
                record.append(("global_pool", t.shape))
        feat = ops.flatten(t)
        if record is not None:
            record.append(("feature", feat.shape))
        return feat

    def _head_forward(self, feat, tensors, record=None):
        t = feat
        for i in range(1, len(self.cfg.head_hidden) + 1):
            t = ops.relu(
                ops.linear(t, tensors[f"head.fc{i}.weight"], tensors[f"head.fc{i}.bias"])
            )
            if record is not None:
                record.append((f"head.fc{i}", t.shape))
        t = ops.linear(t, tensors["head.out.weight"], tensors["head.out.bias"])
        if record is not None:
            record.append(("head.out", t.shape))
        return t

    def forward(self, x: np.ndarray, train: bool = False, record=None):
        """Run the full network; returns (logits, param tensor table)."""
        tensors = self._wrap_params()
        t = Tensor(np.asarray(x, dtype=self.dtype))
        feat = self._blocks_forward(t, tensors, train, record=record)
        logits = self._head_forward(feat, tensors, record=record)
        return logits, tensors

    def features(self, x: np.ndarray, train: bool = False):
        """Pre-head feature vector (flatten or pooled), with tensor table."""
        tensors = self._wrap_params()
        t = Tensor(np.asarray(x, dtype=self.dtype))
        return self._blocks_forward(t, tensors, train), tensors

    # -- training interface -----------------------------------------------

    def training_step(self, x, y):
        logits, tensors = self.forward(x, train=True)
        loss, probs = ops.softmax_cross_entropy(logits, y)
        loss.backward()
        grads = {
            name: t.grad
            for name, t in tensors.items()
            if self.trainable[name] and t.grad is not None
        }
        return float(loss.data), grads, probs

    def predict_proba(self, x) -> np.ndarray:
        logits, _ = self.forward(x, train=False)
        return ops.softmax(logits.data)

    def trainable_params(self) -> dict[str, np.ndarray]:
        return {n: p for n, p in self.params.items() if self.trainable[n]}

    # -- persistence ------------------------------------------------------

    def named_arrays(self) -> dict[str, np.ndarray]:
        """Parameters plus batchnorm running statistics, one flat table."""
        table = dict(self.params)
        table.update(self.state)
        return table

    def load_arrays(self, table: dict):
        for name in self.params:
            if name not in table:
                raise ConfigError(f"checkpoint missing parameter {name!r}")
            self.params[name][...] = table[name]
        for name in self.state:
            if name not in table:
                raise ConfigError(f"checkpoint missing state {name!r}")
            self.state[name][...] = table[name]

    def backbone_hash(self) -> str:
        return _hash_arrays(self.named_arrays(), prefix="block")

    def head_hash(self) -> str:
        return _hash_arrays(self.named_arrays(), prefix="head")


def _hash_arrays(table: dict, prefix: str = "") -> str:
    h = hashlib.sha256()
    for name in sorted(table):
        if name.startswith(prefix):
            h.update(name.encode("utf-8"))
            h.update(np.ascontiguousarray(table[name], dtype="<f4").tobytes())
    return h.hexdigest()


def build_indnet(cfg: StreamConfig | None = None, num_classes: int = 3, seed: int = 0) -> ConvNet:
    cfg = cfg or indnet_config(num_classes=num_classes)
    if cfg.kind != "I":
        raise ConfigError("build_indnet requires an I-stream config")
    if cfg.input_size == 256 and cfg.feature_width() != 4096:
        raise ConfigError(f"I-stream flatten width {cfg.feature_width()} != 4096")
    return ConvNet(cfg, seed=seed)


def build_prednet(cfg: StreamConfig | None = None, num_classes: int = 3, seed: int = 0) -> ConvNet:
    cfg = cfg or prednet_config(num_classes=num_classes)
    if cfg.kind != "P":
        raise ConfigError("build_prednet requires a P-stream config")
    if cfg.in_channels != 3:
        raise ConfigError("P-stream input must have 3 channels")
    return ConvNet(cfg, seed=seed)


def freeze_backbone(model, scope: str = "conv_blocks"):
    """Clear trainable flags for the named scope and pin its BN statistics."""
    if scope != "conv_blocks":
        raise ConfigError(f"unknown freeze scope {scope!r}")
    for name in model.trainable:
        if name.startswith("block"):
            model.trainable[name] = False
    model.frozen_blocks = True
    return model


class MultiFrameNet:
    """Fused two-stream model: frozen stream backbones, trainable head."""

    def __init__(self, ind: ConvNet, pred: ConvNet, head_hidden=(512,), seed: int = 0,
                 dtype=np.float32):
        if ind.cfg.num_classes != pred.cfg.num_classes:
            raise ConfigError("stream class counts differ")
        self.ind = freeze_backbone(ind)
        self.pred = freeze_backbone(pred)
        self.num_classes = ind.cfg.num_classes
        self.dtype = dtype
        concat_width = ind.cfg.feature_width() + pred.cfg.feature_width()
        if ind.cfg.input_size == 256 and pred.cfg.input_size == 256 and concat_width != 4352:
            raise ConfigError(f"concatenated width {concat_width} != 4352")
        self.concat_width = concat_width
        self.head_hidden = tuple(head_hidden)
        self.fingerprint = config_fingerprint(
            {
                "ind": asdict(ind.cfg),
                "pred": asdict(pred.cfg),
                "head_hidden": list(self.head_hidden),
            }
        )

        rng = np.random.default_rng(seed)
        self.params: dict[str, np.ndarray] = {}
        self.trainable: dict[str, bool] = {}
        width = concat_width
        for i, hidden in enumerate(self.head_hidden, start=1):
            self.params[f"head.fc{i}.weight"] = _he_uniform(rng, (hidden, width), width, dtype)
            self.params[f"head.fc{i}.bias"] = np.zeros(hidden, dtype=dtype)
            width = hidden
        self.params["head.out.weight"] = _he_uniform(
            rng, (self.num_classes, width), width, dtype
        )
        self.params["head.out.bias"] = np.zeros(self.num_classes, dtype=dtype)
        for name in self.params:
            self.trainable[name] = True

    def forward(self, x, train: bool = False):
        xi, xp = x
        fi, _ = self.ind.features(xi, train=train)
        fp, _ = self.pred.features(xp, train=train)
        tensors = {
            name: Tensor(arr, requires_grad=self.trainable[name])
            for name, arr in self.params.items()
        }
        t = ops.concat(fi, fp)
        for i in range(1, len(self.head_hidden) + 1):
            t = ops.relu(
                ops.linear(t, tensors[f"head.fc{i}.weight"], tensors[f"head.fc{i}.bias"])
            )
        logits = ops.linear(t, tensors["head.out.weight"], tensors["head.out.bias"])
        return logits, tensors

    def training_step(self, x, y):
        logits, tensors = self.forward(x, train=True)
        loss, probs = ops.softmax_cross_entropy(logits, y)
        loss.backward()
        grads = {
            name: t.grad
            for name, t in tensors.items()
            if self.trainable[name] and t.grad is not None
        }
        return float(loss.data), grads, probs

    def predict_proba(self, x) -> np.ndarray:
        logits, _ = self.forward(x, train=False)
        return ops.softmax(logits.data)

    def trainable_params(self) -> dict[str, np.ndarray]:
        return {n: p for n, p in self.params.items() if self.trainable[n]}

    def named_arrays(self) -> dict[str, np.ndarray]:
        table = {}
        for name, arr in self.ind.named_arrays().items():
            table[f"ind.{name}"] = arr
        for name, arr in self.pred.named_arrays().items():
            table[f"pred.{name}"] = arr
        table.update(self.params)
        return table

    def load_arrays(self, table: dict):
        self.ind.load_arrays(
            {k[4:]: v for k, v in table.items() if k.startswith("ind.")}
        )
        self.pred.load_arrays(
            {k[5:]: v for k, v in table.items() if k.startswith("pred.")}
        )
        for name in self.params:
            if name not in table:
                raise ConfigError(f"checkpoint missing parameter {name!r}")
            self.params[name][...] = table[name]

    def backbone_hash(self) -> str:
        table = self.named_arrays()
        return _hash_arrays(
            {k: v for k, v in table.items() if k.startswith(("ind.block", "pred.block"))}
        )

    def head_hash(self) -> str:
        return _hash_arrays(self.params, prefix="head")


def build_multiframe(ind: ConvNet, pred: ConvNet, head_hidden=(512,), seed: int = 0) -> MultiFrameNet:
    """Fuse two (pre)trained streams into a frozen-backbone two-stream model."""
    return MultiFrameNet(ind, pred, head_hidden=head_hidden, seed=seed)
