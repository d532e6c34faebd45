"""Desk-scale laboratory for calibration-aware sim-to-real adaptation.

Library layout:

* `numerics` — seeded named-stream RNG, FFT helpers, stable softmax
* `data` — dataset containers, on-disk format, synthetic shift generators
* `augment` — amplitude-spectrum jitter and the photometric pipeline
* `losses` — task/adaptation/calibration objectives with exact gradients
* `model` — MLP, trainer, temperature scaling, checkpoints
* `analysis` — calibration metrics, rejection curves, MMD, divergence bounds
* `figures` — matplotlib renderers for the report artifacts
* `cli` — the `augcal-lab` command-line surface
"""

__version__ = "0.1.0"

from .numerics import Rng, fft2, ifft2, fftshift2, ifftshift2, softmax
from .data import (LabeledDataset, DensityPair, SpectralShiftConfig,
                   GaussianShiftConfig, generate_spectral_shift,
                   generate_gaussian_shift, save_dataset, load_dataset)
from .augment import PastaConfig, RandAugConfig, pasta, randaugment, augment_batch
from .losses import (LossOutput, ObjectiveConfig, cross_entropy, dca, mdca,
                     mbls, entmin, selftrain, augcal_objective)
from .model import (MlpParams, TrainConfig, TrainResult, Temperature,
                    init_mlp, forward, backward, predict, hidden_features,
                    train, fit_temperature, apply_temperature)
from .analysis import (PredictionRecord, BinStats, CalibrationReport,
                       BoundReport, records_from_probs, ece, ic_ece, oc, prr,
                       report, mmd2_rbf, renyi_d2, verify_bound)
