"""dogspeak: a research pipeline for converting human speech toward
dog-like vocalizations while trying to keep the words intelligible.

Layers, bottom to top:

* :mod:`dogspeak.audio` -- wav I/O and resampling.
* :mod:`dogspeak.corpus` -- clip curation, domains, manifests, splits.
* :mod:`dogspeak.dsp` -- spectrograms, F0, envelopes, cepstra, feature files.
* :mod:`dogspeak.autodiff` -- the reverse-mode array engine the models run on.
* :mod:`dogspeak.nets` -- the six convolutional networks and checkpoints.
* :mod:`dogspeak.train` -- the two training criteria and the loop.
* :mod:`dogspeak.extraction` -- batch feature extraction over a manifest.
* :mod:`dogspeak.convert` -- feature mapping and waveform synthesis.
* :mod:`dogspeak.evaluate` -- CER/MOS metrics and the two study grids.
* :mod:`dogspeak.listen` -- the blinded listening-test HTTP service.
"""

__version__ = "0.1.0"

from .audio import PROJECT_SAMPLE_RATE, Waveform, load_wav, save_wav
from .dsp import ExtractionConfig, FeatureSequence

__all__ = [
    "PROJECT_SAMPLE_RATE",
    "Waveform",
    "load_wav",
    "save_wav",
    "ExtractionConfig",
    "FeatureSequence",
    "__version__",
]
