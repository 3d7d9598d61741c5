"""Training criteria and loop for the two non-parallel conversion methods.

* ``acvae`` -- conditional VAE objective (reconstruction likelihood +
  KL to a standard-normal prior) regularized by an auxiliary domain
  classifier that must recognize the conditioning label from decoder
  output, on reconstructions and on label-swapped decodes.
* ``stargan`` -- adversarial real/fake criterion with a domain
  classification term, plus cycle and identity L1 terms on the generator.

The loop is seed-deterministic: same config + data produce a
bit-identical loss log.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import dsp, nets
from .autodiff import Tensor
from .corpus import DomainSet, Manifest, default_domains
from .nets import ConversionModel, GaussianParams, NetworkConfig

LOG2PI = math.log(2.0 * math.pi)


class TrainingDiverged(RuntimeError):
    """Raised when a loss term goes non-finite; carries the last report."""

    def __init__(self, report):
        super().__init__(f"non-finite loss at step {report.step}: {report.terms}")
        self.report = report


@dataclass(frozen=True)
class LossReport:
    terms: dict[str, float]
    step: int = 0

    def __getitem__(self, key: str) -> float:
        return self.terms[key]

    def finite(self) -> bool:
        return all(math.isfinite(v) for v in self.terms.values())


@dataclass
class TrainConfig:
    method: str = "acvae"            # acvae | stargan
    feature_kind: str = "melspec"
    lambda_kl: float = 1.0
    lambda_aux: float = 1.0
    lambda_cls: float = 1.0
    lambda_cyc: float = 10.0
    lambda_id: float = 5.0
    lr: float = 1e-4
    lr_discriminator: float = 5e-5
    grad_clip: float = 10.0
    batch: int = 8
    crop_frames: int = 128
    steps: int = 1000
    seed: int = 0
    checkpoint_every: int = 500
    kernel_delta: int = 0
    arch_path: str | None = None
    domain_names: tuple = ()
    composites: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in ("acvae", "stargan"):
            raise ValueError(f"unknown method: {self.method!r}")
        if self.feature_kind not in ("melspec", "mcc"):
            raise ValueError(f"unknown feature kind: {self.feature_kind!r}")
        for name in ("lambda_kl", "lambda_aux", "lambda_cls", "lambda_cyc", "lambda_id"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def domain_set(self) -> DomainSet:
        if not self.domain_names:
            return default_domains()
        return DomainSet(self.domain_names, self.composites)


# ---------------------------------------------------------------------------
# loss primitives


def kl_diag_gaussian(g: GaussianParams) -> Tensor:
    """KL(q || N(0, I)): 0.5 * sum_d (var + mean^2 - 1 - logvar), averaged
    over batch and frames."""
    lv, mu = g.logvar, g.mean
    per = ad.mul(ad.sum_(ad.exp(lv) + ad.square(mu) - lv + (-1.0), axis=1), 0.5)
    return ad.mean(per)


def gaussian_nll(x, g: GaussianParams) -> Tensor:
    """Negative log-likelihood under a diagonal Gaussian, averaged over
    batch and frames: 0.5 * sum_d (logvar + (x-mean)^2/var + log 2pi)."""
    x = ad.as_tensor(x)
    if x.shape != g.mean.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {g.mean.shape}")
    diff = x - g.mean
    per = ad.sum_(g.logvar + ad.mul(ad.square(diff), ad.exp(-g.logvar)) + LOG2PI,
                  axis=1)
    return ad.mean(ad.mul(per, 0.5))


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean -log softmax probability of the integer labels; logits (B, K)."""
    logp = ad.log_softmax(logits, axis=1)
    onehot = np.zeros(logp.shape)
    onehot[np.arange(len(labels)), np.asarray(labels, dtype=int)] = 1.0
    return -ad.mean(ad.sum_(ad.mul(logp, onehot), axis=1))


def l1_loss(a: Tensor, b) -> Tensor:
    return ad.mean(ad.absolute(a - b))


def _onehot_rows(labels: np.ndarray, num_domains: int) -> np.ndarray:
    rows = np.zeros((len(labels), num_domains))
    rows[np.arange(len(labels)), np.asarray(labels, dtype=int)] = 1.0
    return rows


# ---------------------------------------------------------------------------
# method criteria


def acvae_loss(batch, model, cfg: TrainConfig, rng: np.random.Generator):
    """Variational criterion on (features, source-label) pairs.

    Returns (total loss tensor, LossReport).  batch is (x, labels) with
    x shaped (B, F, T) and integer labels.
    """
    x, labels = batch
    x = ad.as_tensor(x)
    k = model.cfg.num_domains
    src = _onehot_rows(labels, k)
    post = model.encoder_forward(x, src)
    eps = rng.standard_normal(post.mean.shape)
    z = nets.reparameterize(post, eps)
    recon = model.decoder_forward(z, src)
    t_in = x.shape[2]
    recon = GaussianParams(ad.narrow(recon.mean, 2, 0, t_in),
                           ad.narrow(recon.logvar, 2, 0, t_in))
    nll = gaussian_nll(x, recon)
    kl = kl_diag_gaussian(post)

    swapped = (np.asarray(labels) + rng.integers(1, k, size=len(labels))) % k
    swap_dec = model.decoder_forward(z, _onehot_rows(swapped, k))
    swap_mean = ad.narrow(swap_dec.mean, 2, 0, t_in)
    aux_recon = cross_entropy(model.classifier_logits(recon.mean, "aux_classifier"),
                              labels)
    aux_swap = cross_entropy(model.classifier_logits(swap_mean, "aux_classifier"),
                             swapped)
    aux = ad.mul(aux_recon + aux_swap, 0.5)

    total = nll + ad.mul(kl, cfg.lambda_kl) + ad.mul(aux, cfg.lambda_aux)
    report = LossReport({
        "recon": nll.item(), "kl": kl.item(), "aux": aux.item(),
        "total": nll.item() + cfg.lambda_kl * kl.item() + cfg.lambda_aux * aux.item(),
    })
    if not report.finite():
        raise TrainingDiverged(report)
    return total, report


def stargan_losses(batch, model, cfg: TrainConfig, rng: np.random.Generator):
    """Adversarial criterion on (features, source-label) pairs with sampled
    target labels distinct from the source.

    Returns (g_loss, g_report, d_loss, d_report).  The discriminator step
    sees the converted features detached, so its gradients stay within the
    discriminator and classifier.
    """
    x, labels = batch
    x = ad.as_tensor(x)
    k = model.cfg.num_domains
    labels = np.asarray(labels, dtype=int)
    targets = (labels + rng.integers(1, k, size=len(labels))) % k
    src = _onehot_rows(labels, k)
    tgt = _onehot_rows(targets, k)

    fake = model.generator_forward(x, tgt)

    # discriminator / classifier step
    d_real = model.discriminator_forward(x, src)
    d_fake = model.discriminator_forward(Tensor(fake.data), tgt)
    adv_d = ad.mean(ad.softplus(-d_real)) + ad.mean(ad.softplus(d_fake))
    cls_real = cross_entropy(model.classifier_logits(x), labels)
    d_loss = adv_d + ad.mul(cls_real, cfg.lambda_cls)
    d_report = LossReport({
        "adv_d": adv_d.item(), "cls_real": cls_real.item(),
        "total": adv_d.item() + cfg.lambda_cls * cls_real.item(),
    })

    # generator step
    adv_g = ad.mean(ad.softplus(-model.discriminator_forward(fake, tgt)))
    cls_fake = cross_entropy(model.classifier_logits(fake), targets)
    cycle = l1_loss(model.generator_forward(fake, src), x)
    identity = l1_loss(model.generator_forward(x, src), x)
    g_loss = (adv_g + ad.mul(cls_fake, cfg.lambda_cls)
              + ad.mul(cycle, cfg.lambda_cyc) + ad.mul(identity, cfg.lambda_id))
    g_report = LossReport({
        "adv_g": adv_g.item(), "cls_fake": cls_fake.item(),
        "cycle": cycle.item(), "identity": identity.item(),
        "total": (adv_g.item() + cfg.lambda_cls * cls_fake.item()
                  + cfg.lambda_cyc * cycle.item() + cfg.lambda_id * identity.item()),
    })
    for report in (d_report, g_report):
        if not report.finite():
            raise TrainingDiverged(report)
    return g_loss, g_report, d_loss, d_report


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Adaptive-moment optimizer with global-norm gradient clipping."""

    def __init__(self, params: dict[str, Tensor], lr: float,
                 betas=(0.9, 0.999), eps: float = 1e-8, clip_norm: float = 10.0):
        self.params = dict(sorted(params.items()))
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.clip_norm = clip_norm
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in self.params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in self.params.items()}

    def step(self) -> None:
        grads = {k: p.grad for k, p in self.params.items() if p.grad is not None}
        if not grads:
            return
        if self.clip_norm:
            norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
            if norm > self.clip_norm:
                scale = self.clip_norm / norm
                grads = {k: g * scale for k, g in grads.items()}
        self.t += 1
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            mhat = self.m[k] / (1 - self.b1**self.t)
            vhat = self.v[k] / (1 - self.b2**self.t)
            self.params[k].data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


# ---------------------------------------------------------------------------
# data plumbing


class FeatureStore:
    """Features for the train split, grouped by atomic domain."""

    def __init__(self, manifest: Manifest, featdir, cfg: TrainConfig):
        featdir = Path(featdir)
        with open(featdir / "stats.json", encoding="utf-8") as fh:
            self.stats = json.load(fh)
        if self.stats["kind"] != cfg.feature_kind:
            raise ValueError(
                f"feature dir holds {self.stats['kind']}, config wants {cfg.feature_kind}")
        self.by_domain: dict[str, list[np.ndarray]] = {}
        scope = "domain" if cfg.method == "acvae" else "global"
        for clip in manifest.subset("train"):
            fs = dsp.load_features(featdir / f"{clip.id}.dgf")
            stats = self._norm_stats(clip.domain, scope)
            self.by_domain.setdefault(clip.domain, []).append(
                (fs.frames - stats[0]) / stats[1])
        if not self.by_domain:
            raise ValueError("manifest has no training clips")
        dims = {mats[0].shape[1] for mats in self.by_domain.values()}
        self.feature_dim = dims.pop()

    def _norm_stats(self, domain: str, scope: str):
        entry = (self.stats["domains"].get(domain)
                 if scope == "domain" else None) or self.stats["global"]
        return np.asarray(entry["mean"]), np.maximum(np.asarray(entry["std"]), 1e-8)

    def norm_arrays(self, scope: str) -> dict[str, np.ndarray]:
        out = {}
        src = self.stats["domains"] if scope == "domain" else {"global": self.stats["global"]}
        for name, entry in src.items():
            out[f"norm.{name}.mean"] = np.asarray(entry["mean"])
            out[f"norm.{name}.std"] = np.asarray(entry["std"])
        out["norm.global.mean"] = np.asarray(self.stats["global"]["mean"])
        out["norm.global.std"] = np.asarray(self.stats["global"]["std"])
        return out

    def f0_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name, entry in self.stats["domains"].items():
            if "f0_log_mean" in entry:
                out[f"f0.{name}"] = np.asarray(
                    [entry["f0_log_mean"], entry["f0_log_std"]])
        return out

    def sample_batch(self, domains: DomainSet, cfg: TrainConfig,
                     rng: np.random.Generator):
        """Random (x, labels) batch of fixed-length crops.

        Labels are uniform over label slots that have data; composite slots
        draw a member atomic domain uniformly.
        """
        usable = [i for i, name in enumerate(domains.names)
                  if any(d in self.by_domain for d in domains.clip_domains(name))]
        x = np.empty((cfg.batch, self.feature_dim, cfg.crop_frames))
        labels = np.empty(cfg.batch, dtype=int)
        for i in range(cfg.batch):
            slot = usable[rng.integers(len(usable))]
            members = [d for d in domains.clip_domains(domains.names[slot])
                       if d in self.by_domain]
            mats = self.by_domain[members[rng.integers(len(members))]]
            mat = mats[rng.integers(len(mats))]
            x[i] = _crop(mat, cfg.crop_frames, rng).T
            labels[i] = slot
        return x, labels


def _crop(mat: np.ndarray, length: int, rng: np.random.Generator) -> np.ndarray:
    t = mat.shape[0]
    if t < length:
        reps = -(-length // t)
        mat = np.tile(mat, (reps, 1))
        t = mat.shape[0]
    start = int(rng.integers(0, t - length + 1))
    return mat[start:start + length]


# ---------------------------------------------------------------------------
# the loop


def train_loop(manifest: Manifest, featdir, cfg: TrainConfig, out_dir):
    """Train one model; writes config snapshot, checkpoints/, and log.csv.

    Returns the path of the final checkpoint.
    """
    out_dir = Path(out_dir)
    (out_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
    store = FeatureStore(manifest, featdir, cfg)
    domains = cfg.domain_set()

    arch = nets.load_architecture(cfg.arch_path, feature_dim=store.feature_dim)
    if arch.num_domains != len(domains):
        arch = nets.NetworkConfig(arch.base_specs, num_domains=len(domains),
                                  latent_dim=arch.latent_dim)
    arch = nets.build_with_kernel_delta(arch, cfg.kernel_delta)
    model = ConversionModel(arch, feature_dim=store.feature_dim, seed=cfg.seed)

    gate = "discriminator" if cfg.method == "stargan" else "aux_classifier"
    rf = nets.receptive_field(arch, gate)
    if cfg.crop_frames < rf:
        raise ValueError(f"crop_frames {cfg.crop_frames} below the {gate} "
                         f"receptive field {rf}")

    snapshot = {
        "train": asdict(cfg),
        "feature_dim": store.feature_dim,
        "feature_kind": cfg.feature_kind,
        "extraction": store.stats.get("config", {}),
        "extraction_hash": store.stats.get("config_hash", ""),
        "domains": {"names": list(domains.names),
                    "composites": {k: list(v) for k, v in domains.composites.items()}},
        "arch_hash": arch.arch_hash(),
    }
    snapshot["train"]["domain_names"] = list(cfg.domain_names)
    with open(out_dir / "config.json", "w", encoding="utf-8") as fh:
        json.dump(snapshot, fh, indent=2, sort_keys=True)

    scope = "domain" if cfg.method == "acvae" else "global"
    extra = store.norm_arrays(scope)
    extra.update(store.f0_arrays())
    extra["feature_kind_code"] = np.asarray(
        [1.0 if cfg.feature_kind == "melspec" else 2.0])

    rng = np.random.default_rng(cfg.seed)
    if cfg.method == "acvae":
        opt = Adam(model.parameters(("encoder", "decoder", "aux_classifier")),
                   lr=cfg.lr, clip_norm=cfg.grad_clip)
        opt_d = None
    else:
        opt = Adam(model.parameters(("generator",)), lr=cfg.lr,
                   clip_norm=cfg.grad_clip)
        opt_d = Adam(model.parameters(("discriminator", "classifier")),
                     lr=cfg.lr_discriminator, clip_norm=cfg.grad_clip)

    log_path = out_dir / "log.csv"
    final = None
    with open(log_path, "w", newline="", encoding="utf-8") as log_fh:
        writer = csv.writer(log_fh)
        writer.writerow(["step", "term", "value"])
        for step in range(1, cfg.steps + 1):
            batch = store.sample_batch(domains, cfg, rng)
            if cfg.method == "acvae":
                total, report = acvae_loss(batch, model, cfg, rng)
                model.zero_grad()
                total.backward()
                opt.step()
                reports = [report]
            else:
                g_loss, g_report, d_loss, d_report = stargan_losses(
                    batch, model, cfg, rng)
                model.zero_grad()
                d_loss.backward()
                opt_d.step()
                model.zero_grad()
                g_loss.backward()
                opt.step()
                reports = [d_report, g_report]
            for report in reports:
                for term, value in report.terms.items():
                    writer.writerow([step, term, repr(value)])
            model.step = step
            if step % cfg.checkpoint_every == 0 or step == cfg.steps:
                final = _write_checkpoint(out_dir, model, extra, step)
    return final


def _write_checkpoint(out_dir: Path, model: ConversionModel, extra: dict,
                      step: int):
    path = out_dir / "checkpoints" / f"step{step:06d}.ckpt"
    tmp = path.with_suffix(".tmp")
    nets.save_checkpoint(tmp, model, extra=extra)
    os.replace(tmp, path)
    return path


def read_loss_log(path) -> list[tuple[int, str, float]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        return [(int(s), t, float(v)) for s, t, v in reader]
