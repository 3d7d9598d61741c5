"""
Training both conversion models on a toy corpus
===============================================

Train the variational model (encoder/decoder with an auxiliary domain
classifier) on log-mel features and the adversarial model (generator,
patch critic, domain classifier) on mel-cepstra, watch the losses fall,
then push a held-out clip through each trained run.
"""

import json

import numpy as np

from dogspeak import extraction
from dogspeak.convert import ConversionRequest, convert_file
from dogspeak.train import TrainConfig, read_loss_log, train_loop

from _tones import DEMO_ARCH, DEMO_CFG, output_dir, write_demo_corpus

out = output_dir(__file__)

# ---------------------------------------------------------------------------
# Corpus and features.  Extraction writes one feature file per clip plus
# per-domain normalization and F0 statistics alongside them.

manifest = write_demo_corpus(out / "corpus")
mel_dir, mcc_dir = out / "feat_mel", out / "feat_mcc"
extraction.extract_corpus(manifest, mel_dir, DEMO_CFG, kind="melspec")
extraction.extract_corpus(manifest, mcc_dir, DEMO_CFG, kind="mcc")
print(f"corpus: {len(manifest.clips)} clips, domains {manifest.domains()}")

arch_path = out / "arch.json"
arch_path.write_text(json.dumps(DEMO_ARCH, indent=2))


def loss_drop(rundir, term):
    steps = [v for _, t, v in read_loss_log(rundir / "log.csv") if t == term]
    head, tail = np.mean(steps[:10]), np.mean(steps[-10:])
    return head, tail


# ---------------------------------------------------------------------------
# Variational run.  The reported "recon" term is the negative
# log-likelihood of the input under the decoder's Gaussian.

cfg_v = TrainConfig(method="acvae", feature_kind="melspec", steps=300,
                    lr=5e-3, lambda_kl=0.01, batch=12, crop_frames=16,
                    seed=3, checkpoint_every=1000, arch_path=str(arch_path),
                    domain_names=manifest.domains())
final_v = train_loop(manifest, mel_dir, cfg_v, out / "run_acvae")
head, tail = loss_drop(out / "run_acvae", "recon")
print(f"acvae: recon NLL {head:.2f} -> {tail:.2f} over {cfg_v.steps} steps")

# ---------------------------------------------------------------------------
# Adversarial run.  "adv_d" is the critic's softplus loss; "cls_real"
# tracks how well the domain classifier reads real features.

cfg_a = TrainConfig(method="stargan", feature_kind="mcc", steps=150,
                    lr=1e-3, lr_discriminator=3e-3, batch=4, crop_frames=32,
                    seed=3, checkpoint_every=1000, arch_path=str(arch_path),
                    domain_names=manifest.domains())
final_a = train_loop(manifest, mcc_dir, cfg_a, out / "run_stargan")
head, tail = loss_drop(out / "run_stargan", "cls_real")
print(f"stargan: classifier CE {head:.2f} -> {tail:.2f} over {cfg_a.steps} steps")

# ---------------------------------------------------------------------------
# Conversion.  A request names the source clip, the trained checkpoint,
# and the domain pair; the backend (mel inversion vs source-filter) is
# chosen from the run's feature kind.  A sidecar JSON records the full
# provenance of the output file.

src = [c for c in manifest.subset("eval") if c.domain == "human"][0]
for name, ckpt in (("acvae", final_v), ("stargan", final_a)):
    out_wav = out / f"converted_{name}.wav"
    report = convert_file(ConversionRequest(
        source=src.path, checkpoint=str(ckpt), source_domain="human",
        target_domain="dog", output=str(out_wav), seed=0))
    print(f"{name}: wrote {out_wav.name} (backend {report['backend']}, "
          f"method {report['method']}/{report['feature_kind']})")

sidecar = json.loads((out / "converted_acvae.wav.json").read_text())
print(f"sidecar records: {sorted(sidecar)}")
