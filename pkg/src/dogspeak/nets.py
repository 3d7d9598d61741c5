"""Conversion-model architectures: a generator / discriminator / domain
classifier trio for the adversarial criterion and an encoder / decoder /
auxiliary classifier trio for the variational one.

All six are stacks of 1-D (de)convolutions over time with feature bins as
channels, batch normalization, and GLU activations.  Domain labels are
one-hot vectors repeated along time and concatenated to the input of every
convolution of the conditioned networks.  The time-direction kernel sizes
of the discriminator and domain classifier carry a configurable delta in
[-2, +2] relative to their defaults; the generator is untouched by the
delta unless explicitly enabled.
"""

from __future__ import annotations

import hashlib
import importlib.resources
import json
import math
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

NETWORK_NAMES = ("generator", "discriminator", "classifier",
                 "encoder", "decoder", "aux_classifier")
DELTA_NETWORKS = ("discriminator", "classifier")
CONDITIONED_NETWORKS = ("generator", "discriminator", "encoder", "decoder")

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


@dataclass(frozen=True)
class LayerSpec:
    kernel: int
    channels: int
    stride: int = 1
    norm: str = "none"          # batch | none
    activation: str = "none"    # glu | sigmoid | none
    op: str = "conv"            # conv | deconv
    padding: str = "valid"      # valid | same (time direction)

    def __post_init__(self):
        if self.kernel < 1 or self.stride < 1 or self.channels < 1:
            raise ValueError("kernel, stride, and channels must be >= 1")
        if self.norm not in ("batch", "none"):
            raise ValueError(f"unknown norm: {self.norm!r}")
        if self.activation not in ("glu", "sigmoid", "none"):
            raise ValueError(f"unknown activation: {self.activation!r}")
        if self.op not in ("conv", "deconv"):
            raise ValueError(f"unknown op: {self.op!r}")


@dataclass(frozen=True)
class TensorShape:
    height: int
    width: int
    channels: int

    def __post_init__(self):
        if min(self.height, self.width, self.channels) < 1:
            raise ValueError("all dimensions must be >= 1")


@dataclass(frozen=True)
class GaussianParams:
    """Per-frame diagonal Gaussian: mean and log-variance."""

    mean: Tensor
    logvar: Tensor

    def __post_init__(self):
        if self.mean.shape != self.logvar.shape:
            raise ValueError("mean and logvar shapes must agree")

    def variance(self) -> Tensor:
        return ad.exp(self.logvar)


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture description for all six networks.

    ``base_specs`` always holds the delta-0 kernels; ``specs_for`` applies
    ``kernel_delta`` to the time kernels of the discriminator and domain
    classifier on the fly.
    """

    base_specs: dict[str, tuple[LayerSpec, ...]]
    num_domains: int
    latent_dim: int
    kernel_delta: int = 0
    generator_delta: bool = False

    def __post_init__(self):
        missing = set(NETWORK_NAMES) - set(self.base_specs)
        if missing:
            raise ValueError(f"missing network specs: {sorted(missing)}")
        if not -2 <= self.kernel_delta <= 2:
            raise ValueError("kernel_delta must lie in [-2, +2]")
        for name in self._delta_targets():
            for spec in self.base_specs[name]:
                if spec.kernel + self.kernel_delta < 1:
                    raise ValueError(
                        f"kernel_delta {self.kernel_delta} drops a {name} kernel below 1")

    def _delta_targets(self) -> tuple[str, ...]:
        if self.generator_delta:
            return DELTA_NETWORKS + ("generator",)
        return DELTA_NETWORKS

    def specs_for(self, name: str) -> tuple[LayerSpec, ...]:
        specs = self.base_specs[name]
        if self.kernel_delta and name in self._delta_targets():
            specs = tuple(replace(s, kernel=s.kernel + self.kernel_delta) for s in specs)
        return specs

    def arch_hash(self) -> str:
        payload = json.dumps({
            "specs": {n: [vars_of(s) for s in self.base_specs[n]] for n in NETWORK_NAMES},
            "num_domains": self.num_domains,
            "latent_dim": self.latent_dim,
        }, sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()


def vars_of(spec: LayerSpec) -> dict:
    return {k: getattr(spec, k) for k in
            ("kernel", "channels", "stride", "norm", "activation", "op", "padding")}


def build_with_kernel_delta(base: NetworkConfig, delta: int) -> NetworkConfig:
    """Return the same architecture with the discriminator/classifier time
    kernels offset by ``delta``; errors if any kernel would drop below 1."""
    if not -2 <= delta <= 2:
        raise ValueError("delta must lie in [-2, +2]")
    return replace(base, kernel_delta=delta)


def load_architecture(path=None, feature_dim: int = 80) -> NetworkConfig:
    """Read the declarative architecture file and resolve symbolic channel
    counts against the feature dimensionality."""
    if path is None:
        raw = importlib.resources.files("dogspeak.configs").joinpath(
            "arch_default.json").read_text()
    else:
        with open(path, encoding="utf-8") as fh:
            raw = fh.read()
    doc = json.loads(raw)
    num_domains = int(doc["num_domains"])
    latent_dim = int(doc["latent_dim"])
    symbols = {
        "feature_dim": feature_dim,
        "num_domains": num_domains,
        "gaussian_latent": 2 * latent_dim,
        "gaussian_feature": 2 * feature_dim,
    }
    specs: dict[str, tuple[LayerSpec, ...]] = {}
    for name, layers in doc["networks"].items():
        resolved = []
        for layer in layers:
            ch = layer["channels"]
            ch = symbols[ch] if isinstance(ch, str) else int(ch)
            resolved.append(LayerSpec(
                kernel=int(layer["kernel"]), channels=ch,
                stride=int(layer.get("stride", 1)),
                norm=layer.get("norm", "none"),
                activation=layer.get("activation", "none"),
                op=layer.get("op", "conv"),
                padding=layer.get("padding", "valid"),
            ))
        specs[name] = tuple(resolved)
    return NetworkConfig(specs, num_domains=num_domains, latent_dim=latent_dim)


# ---------------------------------------------------------------------------
# shape and receptive-field arithmetic


def conv_output_len(t: int, spec: LayerSpec) -> int:
    if spec.op == "deconv":
        return t * spec.stride
    if spec.padding == "same":
        return -(-t // spec.stride)  # ceil
    if t < spec.kernel:
        raise ValueError(f"input length {t} shorter than kernel {spec.kernel}")
    return (t - spec.kernel) // spec.stride + 1


def composed_output_len(cfg: NetworkConfig, which: str, t: int) -> int:
    """Time length after the whole stack -- the shape formula composed over
    LayerSpecs with kernel_delta applied."""
    for spec in cfg.specs_for(which):
        t = conv_output_len(t, spec)
    return t


def receptive_field(cfg: NetworkConfig, which: str) -> int:
    """Input frames seen by one output unit: r_l = r_{l-1} + (k_l - 1) * prod(s_j, j<l)."""
    r = 1
    cum_stride = 1
    for spec in cfg.specs_for(which):
        r += (spec.kernel - 1) * cum_stride
        cum_stride *= spec.stride
    return r


# ---------------------------------------------------------------------------
# layer primitives


def glu(a: Tensor, b: Tensor) -> Tensor:
    """Gated linear unit: a * sigmoid(b)."""
    a, b = ad.as_tensor(a), ad.as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"glu shape mismatch: {a.shape} vs {b.shape}")
    return ad.mul(a, ad.sigmoid(b))


def condition_concat(x: Tensor, onehot: np.ndarray) -> Tensor:
    """Append the one-hot label, repeated along time, as extra channels.

    x: (B, C, T); onehot: (num_domains,) shared or (B, num_domains).
    """
    x = ad.as_tensor(x)
    b, _, t = x.shape
    onehot = np.asarray(onehot, dtype=np.float64)
    if onehot.ndim == 1:
        onehot = np.tile(onehot, (b, 1))
    plane = np.repeat(onehot[:, :, None], t, axis=2)
    return ad.concat([x, Tensor(plane)], axis=1)


def batch_norm_forward(x: Tensor, gamma: Tensor, beta: Tensor,
                       state: dict, key: str, mode: str = "train") -> Tensor:
    """Per-channel batch normalization over (batch, time).

    Train mode normalizes by batch statistics and updates the running
    stats in ``state``; infer mode uses the running stats as constants.
    Variance is epsilon-floored so single-frame batches stay finite.
    """
    x = ad.as_tensor(x)
    if mode == "train":
        mu = ad.mean(x, axis=(0, 2), keepdims=True)
        centered = x - mu
        var = ad.mean(ad.square(centered), axis=(0, 2), keepdims=True)
        inv = ad.reciprocal(ad.sqrt(var + BN_EPS))
        norm = ad.mul(centered, inv)
        state[key + ".running_mean"] = (
            BN_MOMENTUM * state[key + ".running_mean"] + (1 - BN_MOMENTUM) * mu.data.ravel())
        state[key + ".running_var"] = (
            BN_MOMENTUM * state[key + ".running_var"] + (1 - BN_MOMENTUM) * var.data.ravel())
    elif mode == "infer":
        mu = state[key + ".running_mean"][None, :, None]
        var = state[key + ".running_var"][None, :, None]
        norm = ad.mul(x - mu, 1.0 / np.sqrt(var + BN_EPS))
    else:
        raise ValueError(f"unknown mode: {mode!r}")
    c = x.shape[1]
    return ad.add(ad.mul(norm, ad.reshape(gamma, (1, c, 1))),
                  ad.reshape(beta, (1, c, 1)))


def _same_pad(t: int, kernel: int, stride: int) -> tuple[int, int]:
    out = -(-t // stride)
    total = max(0, (out - 1) * stride + kernel - t)
    return total // 2, total - total // 2


# ---------------------------------------------------------------------------
# the model


class ConversionModel:
    """Six networks plus their weights and batch-norm state.

    Weights live in ``params`` (autodiff tensors, names like
    ``generator.2.w``); non-trainable running statistics live in ``state``.
    Forward passes are pure given weights, inputs, and explicit noise.
    """

    def __init__(self, cfg: NetworkConfig, feature_dim: int, seed: int = 0):
        self.cfg = cfg
        self.feature_dim = feature_dim
        self.params: dict[str, Tensor] = {}
        self.state: dict[str, np.ndarray] = {}
        self.mode = "train"
        self.step = 0
        rng = np.random.default_rng(seed)
        for name in NETWORK_NAMES:
            self._init_network(name, rng)

    # -- construction -------------------------------------------------------

    def _input_channels(self, name: str) -> int:
        if name in ("generator", "discriminator", "classifier", "aux_classifier",
                    "encoder"):
            return self.feature_dim
        if name == "decoder":
            return self.cfg.latent_dim
        raise ValueError(name)

    def _init_network(self, name: str, rng: np.random.Generator) -> None:
        conditioned = name in CONDITIONED_NETWORKS
        c_in = self._input_channels(name)
        specs = self.cfg.specs_for(name)
        for i, spec in enumerate(specs):
            layer_in = c_in + (self.cfg.num_domains if conditioned else 0)
            c_out = 2 * spec.channels if spec.activation == "glu" else spec.channels
            bound = math.sqrt(1.0 / (layer_in * spec.kernel))
            if spec.op == "deconv":
                w = rng.uniform(-bound, bound, size=(layer_in, c_out, spec.kernel))
            else:
                w = rng.uniform(-bound, bound, size=(c_out, layer_in, spec.kernel))
            if name == "generator" and i == len(specs) - 1:
                w = np.zeros_like(w)  # stable GAN warm-up
            key = f"{name}.{i}"
            self.params[key + ".w"] = Tensor(w, requires_grad=True, name=key + ".w")
            self.params[key + ".b"] = Tensor(np.zeros(c_out), requires_grad=True,
                                             name=key + ".b")
            if spec.norm == "batch":
                self.params[key + ".gamma"] = Tensor(np.ones(c_out),
                                                     requires_grad=True,
                                                     name=key + ".gamma")
                self.params[key + ".beta"] = Tensor(np.zeros(c_out),
                                                    requires_grad=True,
                                                    name=key + ".beta")
                self.state[key + ".running_mean"] = np.zeros(c_out)
                self.state[key + ".running_var"] = np.ones(c_out)
            c_in = spec.channels

    def parameters(self, networks=None) -> dict[str, Tensor]:
        if networks is None:
            return dict(self.params)
        prefixes = tuple(f"{n}." for n in networks)
        return {k: v for k, v in self.params.items() if k.startswith(prefixes)}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    # -- generic stack runner -------------------------------------------------

    def _run_stack(self, name: str, x: Tensor, onehot=None) -> Tensor:
        specs = self.cfg.specs_for(name)
        conditioned = name in CONDITIONED_NETWORKS
        h = ad.as_tensor(x)
        for i, spec in enumerate(specs):
            key = f"{name}.{i}"
            if conditioned:
                if onehot is None:
                    raise ValueError(f"{name} requires a conditioning label")
                h = condition_concat(h, onehot)
            w = self.params[key + ".w"]
            b = self.params[key + ".b"]
            if spec.op == "deconv":
                h = ad.conv1d_transpose(h, w, b, stride=spec.stride)
                # crop full output back to stride * T
                excess = spec.kernel - spec.stride
                if excess > 0:
                    h = ad.narrow(h, 2, excess // 2, h.shape[2] - excess)
                elif excess < 0:
                    raise ValueError("deconv kernel must be >= stride")
            else:
                t = h.shape[2]
                if spec.padding == "same":
                    left, right = _same_pad(t, spec.kernel, spec.stride)
                    if left or right:
                        h = ad.pad_last(h, left, right)
                elif t < spec.kernel:
                    raise ValueError(
                        f"{name} input of {t} frames is shorter than its receptive "
                        f"field; needs at least {receptive_field(self.cfg, name)}")
                h = ad.conv1d(h, w, b, stride=spec.stride)
            if spec.norm == "batch":
                h = batch_norm_forward(h, self.params[key + ".gamma"],
                                       self.params[key + ".beta"],
                                       self.state, key, self.mode)
            if spec.activation == "glu":
                half = spec.channels
                h = glu(ad.narrow(h, 1, 0, half), ad.narrow(h, 1, half, half))
            elif spec.activation == "sigmoid":
                h = ad.sigmoid(h)
        return h

    # -- public forwards ------------------------------------------------------

    def generator_forward(self, x, c_tgt) -> Tensor:
        """Convert features toward a target domain; output length == input length."""
        x = ad.as_tensor(x)
        self._check_feature_dim(x, "generator")
        t_in = x.shape[2]
        out = self._run_stack("generator", x, onehot=_onehot_of(c_tgt))
        if out.shape[2] < t_in:
            raise AssertionError("generator stack shrank the sequence")
        if out.shape[2] > t_in:
            out = ad.narrow(out, 2, 0, t_in)
        return out

    def discriminator_forward(self, x, c) -> Tensor:
        """Patch-wise real/fake scores (logits) for features under domain c."""
        x = ad.as_tensor(x)
        self._check_feature_dim(x, "discriminator")
        return self._run_stack("discriminator", x, onehot=_onehot_of(c))

    def classifier_logits(self, x, network: str = "classifier") -> Tensor:
        x = ad.as_tensor(x)
        self._check_feature_dim(x, network)
        scores = self._run_stack(network, x)
        return ad.mean(scores, axis=2)  # (B, num_domains)

    def classifier_forward(self, x, network: str = "classifier") -> np.ndarray:
        """Distribution over domains, rows summing to 1."""
        logits = self.classifier_logits(x, network)
        return np.exp(ad.log_softmax(logits, axis=1).data)

    def encoder_forward(self, x, c_src) -> GaussianParams:
        x = ad.as_tensor(x)
        self._check_feature_dim(x, "encoder")
        out = self._run_stack("encoder", x, onehot=_onehot_of(c_src))
        dz = self.cfg.latent_dim
        return GaussianParams(ad.narrow(out, 1, 0, dz), ad.narrow(out, 1, dz, dz))

    def decoder_forward(self, z, c_tgt) -> GaussianParams:
        z = ad.as_tensor(z)
        if z.shape[1] != self.cfg.latent_dim:
            raise ValueError(
                f"latent dim {z.shape[1]} does not match model {self.cfg.latent_dim}")
        out = self._run_stack("decoder", z, onehot=_onehot_of(c_tgt))
        f = self.feature_dim
        return GaussianParams(ad.narrow(out, 1, 0, f), ad.narrow(out, 1, f, f))

    def _check_feature_dim(self, x: Tensor, name: str) -> None:
        if x.ndim != 3:
            raise ValueError("expected (batch, channels, time) input")
        if x.shape[1] != self._input_channels(name) and name != "decoder":
            raise ValueError(
                f"feature dim {x.shape[1]} does not match model {self.feature_dim}")


def _onehot_of(label) -> np.ndarray:
    if hasattr(label, "onehot"):
        return label.onehot
    return np.asarray(label, dtype=np.float64)


def reparameterize(g: GaussianParams, eps) -> Tensor:
    """z = mean + exp(logvar / 2) * eps."""
    eps = ad.as_tensor(eps)
    if eps.shape != g.mean.shape:
        raise ValueError("noise shape must match the Gaussian mean")
    return ad.add(g.mean, ad.mul(ad.exp(ad.mul(g.logvar, 0.5)), eps))


# ---------------------------------------------------------------------------
# checkpoints: json header + named float32 little-endian blobs

CHECKPOINT_MAGIC = b"DGCK"


def save_checkpoint(path, model: ConversionModel, extra: dict | None = None) -> None:
    arrays: dict[str, np.ndarray] = {k: v.data for k, v in model.params.items()}
    arrays.update({f"state.{k}": v for k, v in model.state.items()})
    if extra:
        arrays.update({f"extra.{k}": np.asarray(v, dtype=np.float64)
                       for k, v in extra.items()})
    header = {
        "arch_hash": model.cfg.arch_hash(),
        "kernel_delta": model.cfg.kernel_delta,
        "generator_delta": model.cfg.generator_delta,
        "num_domains": model.cfg.num_domains,
        "latent_dim": model.cfg.latent_dim,
        "feature_dim": model.feature_dim,
        "step": model.step,
        "specs": {n: [vars_of(s) for s in model.cfg.base_specs[n]]
                  for n in NETWORK_NAMES},
        "blobs": [{"name": k, "shape": list(v.shape)} for k, v in arrays.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for v in arrays.values():
            fh.write(v.astype("<f4").tobytes(order="C"))


def load_checkpoint(path) -> tuple[ConversionModel, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise ValueError(f"not a checkpoint file: {path}")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen))
        arrays = {}
        for entry in header["blobs"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(4 * count), dtype="<f4")
            arrays[entry["name"]] = data.reshape(shape).astype(np.float64)
    specs = {n: tuple(LayerSpec(**d) for d in header["specs"][n])
             for n in NETWORK_NAMES}
    cfg = NetworkConfig(specs, num_domains=header["num_domains"],
                        latent_dim=header["latent_dim"],
                        kernel_delta=header["kernel_delta"],
                        generator_delta=header.get("generator_delta", False))
    model = ConversionModel(cfg, feature_dim=header["feature_dim"])
    model.step = header["step"]
    extra: dict[str, np.ndarray] = {}
    for name, arr in arrays.items():
        if name.startswith("state."):
            model.state[name[len("state."):]] = arr
        elif name.startswith("extra."):
            extra[name[len("extra."):]] = arr
        else:
            model.params[name] = Tensor(arr, requires_grad=True, name=name)
    if header["arch_hash"] != cfg.arch_hash():
        raise ValueError("checkpoint architecture hash mismatch")
    return model, extra
