"""Model builders: the 1-D CNN with its pooling knobs, MLP variants, SGAN,
contrastive encoder, dense autoencoder, and 1-D Grad-CAM."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import CollapsedFeatureMap, NoConvLayer
from .nn import tensor as T
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.layers import (
    BatchNorm1d, Conv1d, ConvTranspose1d, Dense, Dropout, Flatten, LeakyReLU, MaxPool1d,
    Module, ReLU, Sequential, Tanh,
)
from .nn.losses import l1_penalty, mse_loss
from .nn.tensor import Tensor, no_grad

MLP_PRESETS = {
    "SMALL": (16, 32, 64),
    "MID": (32, 64, 128),
    "LARGE": (64, 128, 256),
}


@dataclass(frozen=True)
class CnnConfig:
    num_classes: int = 2
    conv_channels: tuple = (16, 32, 64)
    kernel_sizes: tuple = (21, 11, 5)
    pool_size: int = 2
    num_conv_blocks: int = 3
    dense_width: int = 2048
    dropout_p: float = 0.5
    negative_slope: float = 0.01
    use_batchnorm: bool = False
    input_len: int = 1392
    seed: int = 0

    def __post_init__(self):
        if self.num_conv_blocks < 1 or self.pool_size < 1:
            raise ValueError("need num_conv_blocks >= 1 and pool_size >= 1")
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        object.__setattr__(self, "kernel_sizes", tuple(int(k) for k in self.kernel_sizes))

    def block_channels(self) -> tuple:
        """Per-block filter counts. Lists whose length differs from the block
        count are replaced by 16, 32, 64, 64, ... (doubling, capped at 64)."""
        n = self.num_conv_blocks
        if len(self.conv_channels) == n:
            return self.conv_channels
        return tuple(min(16 * 2 ** i, 64) for i in range(n))

    def block_kernels(self) -> tuple:
        n = self.num_conv_blocks
        if len(self.kernel_sizes) == n:
            return self.kernel_sizes
        base = (21, 11, 5)
        return tuple(base[i] if i < len(base) else 5 for i in range(n))

    def pooled_lengths(self) -> list[int]:
        lengths, L = [], self.input_len
        for _ in range(self.num_conv_blocks):
            L = math.ceil(L / self.pool_size)
            lengths.append(L)
        return lengths


def cnn_parameter_count(cfg: CnnConfig) -> int:
    """Closed-form parameter count of :func:`build_cnn` (no batch norm)."""
    total, c_in = 0, 1
    for c, k in zip(cfg.block_channels(), cfg.block_kernels()):
        total += c * c_in * k + c
        c_in = c
    flat = c_in * cfg.pooled_lengths()[-1]
    total += flat * cfg.dense_width + cfg.dense_width
    total += cfg.dense_width * cfg.num_classes + cfg.num_classes
    return total


class Classifier(Module):
    """``body`` (ending in the Tanh feature layer) -> dropout -> linear head.

    ``forward`` returns logits; softmax is applied by :meth:`predict_proba`
    and inside the loss.
    """

    kind = "classifier"

    def __init__(self, body: Sequential, feature_dim: int, num_classes: int, dropout_p: float, rng):
        self.body = body
        self.dropout = Dropout(dropout_p, rng)
        self.head = Dense(feature_dim, num_classes, rng, init="xavier")
        self.feature_dim = feature_dim
        self.num_classes = num_classes

    @staticmethod
    def _as_input(x) -> Tensor:
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=np.float32))
        if x.ndim == 2:
            x = x.reshape(x.shape[0], 1, x.shape[1])
        return x

    def features(self, x) -> Tensor:
        return self.body(self._as_input(x))

    def forward(self, x) -> Tensor:
        return self.head(self.dropout(self.features(x)))

    def replace_head(self, num_classes: int, rng) -> None:
        self.head = Dense(self.feature_dim, num_classes, rng, init="xavier")
        self.num_classes = num_classes

    def predict_proba(self, X, batch_size: int = 256) -> np.ndarray:
        was = self.training
        self.eval()
        out = []
        with no_grad():
            for s in range(0, len(X), batch_size):
                out.append(T.softmax(self.forward(X[s:s + batch_size]), axis=-1).data)
        self.train(was)
        return np.concatenate(out).astype(np.float64)

    def spec(self):
        return {"kind": "CLASSIFIER", "body": self.body.spec(), "head": self.head.spec()}


class CnnClassifier(Classifier):
    kind = "cnn"

    def __init__(self, cfg: CnnConfig):
        rng = np.random.default_rng(cfg.seed)
        layers, c_in = [], 1
        lengths = cfg.pooled_lengths()
        if cfg.input_len < 1 or min(lengths) < 1:
            raise CollapsedFeatureMap(f"pooled lengths {lengths}")
        for i, (c, k) in enumerate(zip(cfg.block_channels(), cfg.block_kernels()), start=1):
            layers.append((f"block{i}.conv", Conv1d(c_in, c, k, rng, cfg.negative_slope)))
            if cfg.use_batchnorm:
                layers.append((f"block{i}.bn", BatchNorm1d(c)))
            layers.append((f"block{i}.act", LeakyReLU(cfg.negative_slope)))
            layers.append((f"block{i}.pool", MaxPool1d(cfg.pool_size)))
            c_in = c
        flat = c_in * lengths[-1]
        layers += [
            ("flatten", Flatten()),
            ("fc", Dense(flat, cfg.dense_width, rng, init="xavier")),
            ("fc_act", Tanh()),
        ]
        super().__init__(Sequential(layers), cfg.dense_width, cfg.num_classes, cfg.dropout_p, rng)
        self.config = cfg

    def block_parameters(self, blocks) -> list:
        """Parameters of the given 1-based conv blocks."""
        out = []
        for name, layer in self.body:
            b = name.split(".")[0]
            if b.startswith("block") and int(b[5:]) in blocks:
                out += layer.parameters()
        return out

    def non_block_parameters(self, blocks) -> list:
        keep = {id(p) for p in self.block_parameters(blocks)}
        return [p for p in self.parameters() if id(p) not in keep]

    def conv_layer_names(self) -> list[str]:
        return [n for n, l in self.body if isinstance(l, Conv1d)]


def build_cnn(cfg: CnnConfig) -> CnnClassifier:
    return CnnClassifier(cfg)


@dataclass(frozen=True)
class MlpConfig:
    num_classes: int = 2
    hidden: tuple = MLP_PRESETS["MID"]
    dense_width: int = 2048
    dropout_p: float = 0.5
    negative_slope: float = 0.01
    input_len: int = 1392
    seed: int = 0

    def __post_init__(self):
        h = self.hidden
        if isinstance(h, str):
            h = MLP_PRESETS[h.upper()]
        object.__setattr__(self, "hidden", tuple(int(x) for x in h))
        if not self.hidden:
            raise ValueError("MLP needs at least one hidden layer")


class MlpClassifier(Classifier):
    kind = "mlp"

    def __init__(self, cfg: MlpConfig):
        rng = np.random.default_rng(cfg.seed)
        layers, n_in = [("flatten", Flatten())], cfg.input_len
        for i, h in enumerate(cfg.hidden, start=1):
            layers.append((f"hidden{i}", Dense(n_in, h, rng, slope=cfg.negative_slope)))
            layers.append((f"hidden{i}.act", LeakyReLU(cfg.negative_slope)))
            n_in = h
        layers += [("fc", Dense(n_in, cfg.dense_width, rng, init="xavier")), ("fc_act", Tanh())]
        super().__init__(Sequential(layers), cfg.dense_width, cfg.num_classes, cfg.dropout_p, rng)
        self.config = cfg


def build_mlp(cfg: MlpConfig) -> MlpClassifier:
    return MlpClassifier(cfg)


def extract_features(model: Classifier, X, batch_size: int = 256) -> np.ndarray:
    """Post-Tanh penultimate activations in eval mode."""
    was = model.training
    model.eval()
    out = []
    with no_grad():
        for s in range(0, len(X), batch_size):
            out.append(model.features(X[s:s + batch_size]).data)
    model.train(was)
    return np.concatenate(out).astype(np.float64)


# -- Grad-CAM -----------------------------------------------------------------------

def gradcam(model: Classifier, x, target_class: int, output_len: int | None = None) -> np.ndarray:
    """Importance curve for one spectrum.

    Channel weights are the position-averaged gradients of the target logit
    with respect to the last convolutional block's activation map ``A``; the
    curve is ``ReLU(sum_k w_k A_k)``, linearly upsampled to the input length
    and scaled so its maximum is 1 (all zeros stay zeros).
    """
    convs = [n for n, l in model.body if isinstance(l, Conv1d)]
    if not convs:
        raise NoConvLayer("Grad-CAM needs a convolutional layer")
    last = convs[-1]
    block = last.split(".")[0]
    act_name = f"{block}.act" if f"{block}.act" in model.body else last

    x = np.asarray(x, dtype=np.float32).reshape(1, 1, -1)
    L = x.shape[-1] if output_len is None else output_len
    was = model.training
    model.eval()
    try:
        a = model.body.forward(Tensor(x), until=act_name)
        A = Tensor(a.data, requires_grad=True)
        rest = model.body.forward(A, after=act_name)
        score = model.head(rest)[0, int(target_class)]
        score.backward()
        grad = A.grad[0]
        weights = grad.mean(axis=1)
        cam = np.maximum((weights[:, None] * A.data[0]).sum(axis=0), 0.0).astype(np.float64)
    finally:
        model.zero_grad()
        model.train(was)
    Lc = cam.size
    pos = (np.arange(L) + 0.5) * Lc / L - 0.5
    curve = np.interp(pos, np.arange(Lc), cam)
    peak = curve.max()
    return curve / peak if peak > 0 else np.zeros(L)


def export_gradcam(path, grid, curve) -> None:
    from .io_utils import atomic_write_text

    lines = [f"{s:.6g}\t{v:.9g}" for s, v in zip(np.asarray(grid), np.asarray(curve))]
    atomic_write_text(path, "# shift_cm-1\timportance\n" + "\n".join(lines) + "\n")


# -- SGAN ----------------------------------------------------------------------------

@dataclass(frozen=True)
class SganConfig:
    num_classes: int = 2
    latent_dim: int = 128
    gen_channels: tuple = (64, 32, 16, 8)
    out_len: int = 1392
    data_range: tuple = (0.0, 1.0)
    backbone: CnnConfig = field(default_factory=CnnConfig)
    head_gain: float = 0.1  # shrinks the initial N+1 logits towards uniform
    seed: int = 0


class Generator(Module):
    """latent -> dense -> reshape -> stride-2 transposed convs -> crop -> Tanh -> data range."""

    def __init__(self, cfg: SganConfig):
        rng = np.random.default_rng(cfg.seed + 7919)
        stages = len(cfg.gen_channels)
        self.L0 = math.ceil(cfg.out_len / 2 ** stages)
        self.crop = self.L0 * 2 ** stages - cfg.out_len
        self.c0 = cfg.gen_channels[0]
        self.cfg = cfg
        self.project = Dense(cfg.latent_dim, self.c0 * self.L0, rng)
        self.act0 = LeakyReLU(0.2)
        chans = list(cfg.gen_channels) + [1]
        layers = []
        for i in range(stages):
            layers.append((f"up{i + 1}", ConvTranspose1d(chans[i], chans[i + 1], 4, rng, stride=2, padding=1)))
            if i < stages - 1:
                layers.append((f"up{i + 1}.act", LeakyReLU(0.2)))
        self.upsample = Sequential(layers)

    def forward(self, z) -> Tensor:
        if not isinstance(z, Tensor):
            z = Tensor(np.asarray(z, dtype=np.float32))
        h = self.act0(self.project(z)).reshape(z.shape[0], self.c0, self.L0)
        h = self.upsample(h)
        if self.crop:
            h = h[:, :, : self.cfg.out_len]
        lo, hi = self.cfg.data_range
        return (T.tanh(h) + 1.0) * (0.5 * (hi - lo)) + lo

    def sample(self, n: int, rng: np.random.Generator) -> Tensor:
        return self.forward(rng.standard_normal((n, self.cfg.latent_dim)).astype(np.float32))


@dataclass
class Sgan:
    generator: Generator
    discriminator: CnnClassifier
    num_classes: int

    def real_probability(self, X) -> np.ndarray:
        """``1 - P(synthetic)`` under the discriminator."""
        p = self.discriminator.predict_proba(X)
        return 1.0 - p[:, self.num_classes]

    def class_proba(self, X) -> np.ndarray:
        """Distribution over the N real classes (synthetic column dropped, renormalized)."""
        p = self.discriminator.predict_proba(X)[:, : self.num_classes]
        return p / np.maximum(p.sum(axis=1, keepdims=True), 1e-300)


def build_sgan(cfg: SganConfig) -> Sgan:
    backbone = replace(cfg.backbone, num_classes=cfg.num_classes + 1, input_len=cfg.out_len, seed=cfg.seed)
    disc = CnnClassifier(backbone)
    disc.head.weight.data *= np.float32(cfg.head_gain)
    return Sgan(Generator(cfg), disc, cfg.num_classes)


# -- contrastive ------------------------------------------------------------------------

@dataclass(frozen=True)
class ContrastiveConfig:
    backbone: CnnConfig = field(default_factory=CnnConfig)
    proj_hidden: int = 256
    proj_dim: int = 128
    temperature: float = 0.5
    seed: int = 0


class ContrastiveModel(Module):
    """Encoder ``f`` (CNN body up to the Tanh features) and projection ``g``.
    The encoder keeps a linear head that is trained after pretraining."""

    def __init__(self, cfg: ContrastiveConfig):
        rng = np.random.default_rng(cfg.seed + 104729)
        self.encoder = CnnClassifier(replace(cfg.backbone, seed=cfg.seed))
        self.projection = Sequential([
            ("g1", Dense(self.encoder.feature_dim, cfg.proj_hidden, rng)),
            ("g1.act", ReLU()),
            ("g2", Dense(cfg.proj_hidden, cfg.proj_dim, rng, init="xavier")),
        ])
        self.cfg = cfg

    def forward(self, x) -> Tensor:
        return self.projection(self.encoder.features(x))


def build_contrastive(cfg: ContrastiveConfig) -> ContrastiveModel:
    return ContrastiveModel(cfg)


# -- autoencoder ----------------------------------------------------------------------

@dataclass(frozen=True)
class AutoencoderConfig:
    input_len: int = 1392
    hidden: tuple = (512,)
    latent_dim: int = 256
    l1: float = 1e-4
    reduction: str = "mean"
    seed: int = 0


class Autoencoder(Module):
    """Fully connected encoder/decoder; the latent code passes through ReLU."""

    def __init__(self, cfg: AutoencoderConfig):
        rng = np.random.default_rng(cfg.seed)
        enc, n_in = [("flatten", Flatten())], cfg.input_len
        for i, h in enumerate(cfg.hidden, start=1):
            enc += [(f"enc{i}", Dense(n_in, h, rng)), (f"enc{i}.act", LeakyReLU())]
            n_in = h
        enc += [("latent", Dense(n_in, cfg.latent_dim, rng)), ("latent.act", ReLU())]
        dec, n_in = [], cfg.latent_dim
        for i, h in enumerate(reversed(cfg.hidden), start=1):
            dec += [(f"dec{i}", Dense(n_in, h, rng)), (f"dec{i}.act", LeakyReLU())]
            n_in = h
        dec.append(("out", Dense(n_in, cfg.input_len, rng, init="xavier")))
        self.encoder = Sequential(enc)
        self.decoder = Sequential(dec)
        self.cfg = cfg

    def encode(self, x) -> Tensor:
        return self.encoder(Classifier._as_input(x))

    def forward(self, x) -> Tensor:
        shape = x.shape if isinstance(x, Tensor) else np.shape(x)
        return self.decoder(self.encoder(Classifier._as_input(x))).reshape(*shape)

    def loss(self, x) -> Tensor:
        """Reconstruction error plus ``l1 * mean_batch ||h||_1``."""
        x = Classifier._as_input(x)
        h = self.encoder(x)
        recon = self.decoder(h).reshape(x.shape)
        loss = mse_loss(x, recon, self.cfg.reduction)
        if self.cfg.l1:
            loss = loss + l1_penalty(h) * self.cfg.l1
        return loss


def build_autoencoder(cfg: AutoencoderConfig) -> Autoencoder:
    return Autoencoder(cfg)


class LatentClassifier(Classifier):
    """Classifier on precomputed latent codes: dense -> Tanh -> dropout -> head."""

    kind = "latent"

    def __init__(self, latent_dim: int, num_classes: int, dense_width: int = 2048, dropout_p: float = 0.5, seed: int = 0):
        rng = np.random.default_rng(seed)
        body = Sequential([("fc", Dense(latent_dim, dense_width, rng, init="xavier")), ("fc_act", Tanh())])
        super().__init__(body, dense_width, num_classes, dropout_p, rng)

    @staticmethod
    def _as_input(x) -> Tensor:
        return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float32))

    def features(self, x) -> Tensor:
        return self.body(self._as_input(x))


# -- persistence ----------------------------------------------------------------------

def save_model(model: Classifier, path, extra: dict | None = None) -> None:
    cfg = asdict(model.config)
    meta = {"format": "SFCKPT1", "model_kind": model.kind, "config": cfg,
            "layers": model.spec(), "num_classes": model.num_classes}
    meta.update(extra or {})
    save_checkpoint(path, model.state_dict(), meta)


def load_model(path) -> tuple[Classifier, dict]:
    state, header = load_checkpoint(path)
    kind, cfg = header["model_kind"], dict(header["config"])
    if kind == "cnn":
        for k in ("conv_channels", "kernel_sizes"):
            cfg[k] = tuple(cfg[k])
        cfg["num_classes"] = header.get("num_classes", cfg["num_classes"])
        model = CnnClassifier(CnnConfig(**cfg))
    elif kind == "mlp":
        cfg["hidden"] = tuple(cfg["hidden"])
        cfg["num_classes"] = header.get("num_classes", cfg["num_classes"])
        model = MlpClassifier(MlpConfig(**cfg))
    else:
        raise ValueError(f"cannot rebuild model kind {kind!r}")
    model.load_state_dict(state)
    return model, header
