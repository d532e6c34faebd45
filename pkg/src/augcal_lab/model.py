"""A small ReLU MLP with hand-written forward/backward, an SGD-with-momentum
trainer running the augmented-source + calibration objective, and post-hoc
temperature scaling.

The trainer owns all mutable state (parameters, momentum buffers, the EMA
teacher for self-training) and is fully determined by its config: named RNG
streams per consumer (init, source/target batching, augmentation) mean that
toggling one feature never perturbs the draws of another.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics import Rng, softmax, log_softmax
from .augment import PastaConfig, RandAugConfig
from .losses import ObjectiveConfig, augcal_objective
from .data import LabeledDataset


class TrainingDiverged(RuntimeError):
    """Raised when the training loss turns non-finite."""


@dataclass
class MlpParams:
    layer_sizes: list            # [d_in, hidden..., K]
    weights: list                # weights[i]: [layer_sizes[i], layer_sizes[i+1]]
    biases: list

    def copy(self) -> "MlpParams":
        return MlpParams(list(self.layer_sizes),
                         [w.copy() for w in self.weights],
                         [b.copy() for b in self.biases])

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(w)) for w in self.weights) and \
            all(np.all(np.isfinite(b)) for b in self.biases)


def init_mlp(layer_sizes, rng: Rng) -> MlpParams:
    """He-uniform weights (limit sqrt(6/fan_in)), zero biases."""
    layer_sizes = [int(s) for s in layer_sizes]
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        limit = math.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(layer_sizes, weights, biases)


def forward(params: MlpParams, x: np.ndarray):
    """Return (logits, cache); ReLU on hidden layers, linear output layer."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.layer_sizes[0]:
        raise ValueError(
            f"input shape {x.shape} incompatible with layer sizes {params.layer_sizes}")
    activations = [x]
    pre = []
    a = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w + b
        pre.append(z)
        a = z if i == last else np.maximum(z, 0.0)
        activations.append(a)
    return pre[-1], (activations, pre)


def backward(params: MlpParams, cache, grad_logits: np.ndarray):
    """Gradients of a scalar loss w.r.t. every weight and bias, given the
    loss gradient at the logits."""
    activations, pre = cache
    grads_w = [None] * len(params.weights)
    grads_b = [None] * len(params.biases)
    delta = np.asarray(grad_logits, dtype=np.float64)
    for i in range(len(params.weights) - 1, -1, -1):
        grads_w[i] = activations[i].T @ delta
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params.weights[i].T) * (pre[i - 1] > 0.0)
    return grads_w, grads_b


class Mlp:
    """Thin forward wrapper so loss code can stay parameter-agnostic."""

    def __init__(self, params: MlpParams):
        self.params = params

    def forward(self, x):
        return forward(self.params, x)


def predict(params: MlpParams, features_flat: np.ndarray):
    """(logits, probs, predicted labels, confidences) for a flat feature array."""
    logits, _ = forward(params, features_flat)
    probs = softmax(logits)
    pred = np.argmax(probs, axis=1)
    conf = probs[np.arange(len(pred)), pred]
    return logits, probs, pred, conf


def hidden_features(params: MlpParams, features_flat: np.ndarray) -> np.ndarray:
    """Last hidden-layer activations: the feature-extraction hook used to
    measure distributional distances at trained-representation parity rather
    than on raw pixels. Falls back to the input for a linear model."""
    _, (activations, _) = forward(params, features_flat)
    return activations[-2]


# ---------------------------------------------------------------------------
# trainer
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    hidden_sizes: tuple = (64,)
    steps: int = 2000
    batch_size: int = 64
    learning_rate: float = 0.05
    momentum: float = 0.9
    seed: int = 0
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    aug_choice: str = "none"        # none | pasta | randaugment
    pasta: PastaConfig = field(default_factory=PastaConfig)
    randaugment: RandAugConfig = field(default_factory=RandAugConfig)
    eval_every: int = 200
    eval_subset: int = 512          # source slice used for history metrics

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.aug_choice not in ("none", "pasta", "randaugment"):
            raise ValueError(f"unknown aug_choice {self.aug_choice!r}")

    def aug_config(self):
        if self.aug_choice == "pasta":
            return self.pasta
        if self.aug_choice == "randaugment":
            return self.randaugment
        return None


@dataclass
class TrainResult:
    params: MlpParams
    history: list                   # one dict per evaluation snapshot
    final_step: int


def _source_eval_metrics(params: MlpParams, x_flat, labels):
    logits, _, pred, conf = predict(params, x_flat)
    acc = float(np.mean(pred == labels))
    logp = log_softmax(logits)
    nll = float(-np.mean(logp[np.arange(len(labels)), labels]))
    return acc, nll


def train(source: LabeledDataset, target_features_only: np.ndarray,
          cfg: TrainConfig) -> TrainResult:
    """Run the full training loop; deterministic given cfg. Target labels are
    not part of the inputs, so the trainer cannot read them. The final
    parameters come from the last step (no target-based model selection)."""
    d = source.feature_dim
    k = source.num_classes
    layer_sizes = [d, *cfg.hidden_sizes, k]

    rng_init = Rng(cfg.seed, "init")
    rng_bs = Rng(cfg.seed, "batch-source")
    rng_bt = Rng(cfg.seed, "batch-target")
    rng_aug = Rng(cfg.seed, "augment")

    params = init_mlp(layer_sizes, rng_init)
    model = Mlp(params)
    velocity_w = [np.zeros_like(w) for w in params.weights]
    velocity_b = [np.zeros_like(b) for b in params.biases]

    obj_cfg = cfg.objective
    use_selftrain = obj_cfg.uda_choice == "selftrain" and obj_cfg.lambda_uda > 0
    teacher = Mlp(params.copy()) if use_selftrain else None

    src_feats = source.features
    src_labels = source.labels
    tgt_feats = np.asarray(target_features_only, dtype=np.float64)
    n_src = src_feats.shape[0]
    n_tgt = tgt_feats.shape[0]

    eval_n = min(cfg.eval_subset, n_src)
    eval_x = src_feats[:eval_n].reshape(eval_n, -1)
    eval_y = src_labels[:eval_n]

    history = []
    aug_cfg = cfg.aug_config()
    for step in range(cfg.steps):
        idx_s = rng_bs.integers(0, n_src, size=cfg.batch_size)
        idx_t = rng_bt.integers(0, n_tgt, size=cfg.batch_size)
        try:
            out = augcal_objective(
                (src_feats[idx_s], src_labels[idx_s]), tgt_feats[idx_t],
                model, obj_cfg, cfg.aug_choice, rng_aug.substream(str(step)),
                aug_cfg=aug_cfg, teacher=teacher,
                selftrain_active=step >= obj_cfg.selftrain_warmup)
        except ValueError as exc:
            if "non-finite" in str(exc):
                raise TrainingDiverged(f"step {step}: {exc}") from None
            raise

        if not math.isfinite(out.value):
            raise TrainingDiverged(f"non-finite loss at step {step}: {out.value}")

        gw, gb = backward(params, out.source_cache, out.grad_source_logits)
        if np.any(out.grad_target_logits):
            gw_t, gb_t = backward(params, out.target_cache, out.grad_target_logits)
            gw = [a + b for a, b in zip(gw, gw_t)]
            gb = [a + b for a, b in zip(gb, gb_t)]

        for i in range(len(params.weights)):
            velocity_w[i] = cfg.momentum * velocity_w[i] + gw[i]
            velocity_b[i] = cfg.momentum * velocity_b[i] + gb[i]
            params.weights[i] -= cfg.learning_rate * velocity_w[i]
            params.biases[i] -= cfg.learning_rate * velocity_b[i]
        if not all(np.all(np.isfinite(w)) for w in params.weights):
            raise TrainingDiverged(f"non-finite parameters after step {step}")

        if teacher is not None:
            a = obj_cfg.ema_alpha
            for i in range(len(params.weights)):
                teacher.params.weights[i] = a * teacher.params.weights[i] + (1 - a) * params.weights[i]
                teacher.params.biases[i] = a * teacher.params.biases[i] + (1 - a) * params.biases[i]

        if step % cfg.eval_every == 0 or step == cfg.steps - 1:
            acc, nll = _source_eval_metrics(params, eval_x, eval_y)
            history.append({
                "step": step,
                "total": out.value,
                "ce": out.parts["ce"].value,
                "uda": out.parts["uda"].value,
                "cal": out.parts["cal"].value,
                "source_eval_accuracy": acc,
                "source_eval_nll": nll,
            })

    if not params.all_finite():
        raise TrainingDiverged("non-finite parameters after training")
    return TrainResult(params=params, history=history, final_step=cfg.steps - 1)


# ---------------------------------------------------------------------------
# temperature scaling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Temperature:
    t: float
    degenerate: bool = False   # constant logits: T unidentifiable, T=1 reported


def _nll_at_temperature(logits: np.ndarray, labels: np.ndarray, t: float) -> float:
    logp = log_softmax(logits / t)
    return float(-np.mean(logp[np.arange(len(labels)), labels]))


def fit_temperature(logits: np.ndarray, labels: np.ndarray,
                    bounds=(0.05, 10.0)) -> Temperature:
    """Golden-section search for the temperature minimizing held-out NLL.

    The NLL is convex in 1/T, hence unimodal over the bracket, so the search
    converges to the minimizer; the result never has higher NLL than T=1.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.shape[0] < 2:
        raise ValueError("need at least 2 rows to tune a temperature")
    if np.max(np.ptp(logits, axis=1)) < 1e-12:
        return Temperature(1.0, degenerate=True)

    lo, hi = float(bounds[0]), float(bounds[1])
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc = _nll_at_temperature(logits, labels, c)
    fd = _nll_at_temperature(logits, labels, d)
    while b - a > 1e-4:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = _nll_at_temperature(logits, labels, c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = _nll_at_temperature(logits, labels, d)
    t_star = (a + b) / 2.0
    if lo <= 1.0 <= hi and _nll_at_temperature(logits, labels, t_star) > \
            _nll_at_temperature(logits, labels, 1.0):
        t_star = 1.0
    return Temperature(float(t_star))


def apply_temperature(logits: np.ndarray, t: float) -> np.ndarray:
    """softmax(logits / T). Rescaling never changes the row argmax when the
    untempered maximum is unique."""
    if t <= 0:
        raise ValueError("temperature must be > 0")
    return softmax(np.asarray(logits, dtype=np.float64) / t)


# ---------------------------------------------------------------------------
# checkpoint format: manifest.json + weights.bin (f64 LE blobs in layer order)
# ---------------------------------------------------------------------------

def save_checkpoint(params: MlpParams, directory, extra: dict | None = None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    blobs = []
    for w, b in zip(params.weights, params.biases):
        blobs.append(w.astype("<f8").tobytes(order="C"))
        blobs.append(b.astype("<f8").tobytes(order="C"))
    (directory / "weights.bin").write_bytes(b"".join(blobs))
    manifest = {"layer_sizes": [int(s) for s in params.layer_sizes],
                "dtype": "f64", "byte_order": "LE"}
    manifest.update(extra or {})
    (directory / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_checkpoint(directory):
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    sizes = manifest["layer_sizes"]
    raw = (directory / "weights.bin").read_bytes()
    weights, biases = [], []
    offset = 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        nw = fan_in * fan_out * 8
        weights.append(np.frombuffer(raw, dtype="<f8", count=fan_in * fan_out,
                                     offset=offset).reshape(fan_in, fan_out).copy())
        offset += nw
        biases.append(np.frombuffer(raw, dtype="<f8", count=fan_out,
                                    offset=offset).copy())
        offset += fan_out * 8
    if offset != len(raw):
        raise ValueError("checkpoint weight blob size mismatch")
    return MlpParams(sizes, weights, biases), manifest
