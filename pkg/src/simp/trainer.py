"""Training loop, model checkpoints and inference."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import mdn
from .data import Dataset
from .errors import InputError, SchemaError, TrainingError
from .features import FEATURE_HASH, N_FEATURES
from .network import DenseNet, Optimizer, OptimizerConfig

log = logging.getLogger(__name__)

MODEL_VERSION = 1


@dataclass
class TrainConfig:
    hidden: tuple = (400, 400, 400)
    dropout: float = 0.5
    n_components: int = 1
    n_areas: int = mdn.N_AREAS
    w1: float = 1.0
    w2: float = 1.0
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    clip_norm: Optional[float] = 10.0
    batch_size: int = 128
    epochs: int = 100
    patience: int = 20
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.n_components < 1 or self.n_areas < 1:
            raise InputError("need at least one area and one mixture component")
        if self.w1 < 0 or self.w2 < 0:
            raise InputError("loss weights must be non-negative")
        if self.batch_size < 1 or self.epochs < 0:
            raise InputError("batch size must be positive and epochs non-negative")

    @property
    def output_width(self) -> int:
        return mdn.output_width(self.n_areas, self.n_components)

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise InputError(f"unknown training option(s): {sorted(unknown)}")
        return cls(**doc)


@dataclass
class Standardizer:
    """Per-column affine map ``(value - mean) / std`` fitted on the training set."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, values) -> "Standardizer":
        values = np.asarray(values, dtype=np.float64)
        std = values.std(axis=0)
        return cls(values.mean(axis=0), np.where(std > 1e-12, std, 1.0))

    def apply(self, values):
        return (np.asarray(values, dtype=np.float64) - self.mean) / self.std

    def fingerprint(self) -> str:
        payload = json.dumps([self.mean.tolist(), self.std.tolist()])
        return hashlib.sha256(payload.encode()).hexdigest()

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "hash": self.fingerprint()}

    @classmethod
    def from_dict(cls, doc: dict) -> "Standardizer":
        out = cls(np.asarray(doc["mean"], dtype=np.float64), np.asarray(doc["std"], dtype=np.float64))
        if "hash" in doc and doc["hash"] != out.fingerprint():
            raise SchemaError("normalization constants do not match their stored hash")
        return out


@dataclass
class Model:
    """Network plus the feature and target standardization it was trained with.

    The mixture head works on standardized targets; :func:`predict` maps its
    output back to feet and seconds.
    """

    net: DenseNet
    config: TrainConfig
    features: Standardizer
    targets: Standardizer

    @property
    def sigma_floor(self):
        return (mdn.SIGMA_FLOOR / self.targets.std[0], mdn.SIGMA_FLOOR / self.targets.std[1])

    def raw(self, features) -> np.ndarray:
        features = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if features.shape[1] != N_FEATURES:
            raise InputError(f"expected {N_FEATURES} features, got {features.shape[1]}")
        out, _ = self.net.forward(self.features.apply(features), mode="infer")
        return out

    def to_dict(self) -> dict:
        doc = self.net.to_dict()
        doc.update({
            "model_version": MODEL_VERSION,
            "feature_hash": FEATURE_HASH,
            "feature_normalization": self.features.to_dict(),
            "target_normalization": self.targets.to_dict(),
            "train_config": asdict(self.config),
        })
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "Model":
        if doc.get("model_version") != MODEL_VERSION:
            raise SchemaError(f"unsupported model version {doc.get('model_version')!r}")
        if doc.get("feature_hash") != FEATURE_HASH:
            raise SchemaError("model was trained on a different feature ordering")
        return cls(DenseNet.from_dict(doc), TrainConfig.from_dict(doc["train_config"]),
                   Standardizer.from_dict(doc["feature_normalization"]),
                   Standardizer.from_dict(doc["target_normalization"]))

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path) -> "Model":
        path = Path(path)
        if path.is_dir():
            path = path / "model.json"
        try:
            return cls.from_dict(json.loads(path.read_text()))
        except FileNotFoundError:
            raise InputError(f"no model file at {path}") from None


def initial_model(train_set: Dataset, config: TrainConfig) -> Model:
    sizes = (N_FEATURES, *config.hidden, config.output_width)
    net = DenseNet.create(sizes, dropout=config.dropout, seed=config.seed)
    return Model(net, config, Standardizer.fit(train_set.features), Standardizer.fit(train_set.targets))


def _prepared(model: Model, dataset: Dataset):
    x = model.features.apply(dataset.features)
    y = model.targets.apply(dataset.targets)
    return x, mdn.one_hot(dataset.area, model.config.n_areas), y


def evaluate_loss(model: Model, dataset: Dataset):
    """Mean per-frame (W1 term, W2 term, total, area-argmax accuracy) in inference mode."""
    if len(dataset) == 0:
        return math.nan, math.nan, math.nan, math.nan
    cfg = model.config
    x, labels, y = _prepared(model, dataset)
    raw, _ = model.net.forward(x, mode="infer")
    nll, ce, _ = mdn.loss_and_gradient(raw, labels, y, cfg.w1, cfg.w2, cfg.n_areas, cfg.n_components,
                                       model.sigma_floor)
    params = mdn.constrain(raw, cfg.n_areas, cfg.n_components, model.sigma_floor)
    acc = float(np.mean(params.weights.argmax(axis=1) + 1 == dataset.area))
    a, b = cfg.w1 * float(nll.mean()), cfg.w2 * float(ce.mean())
    return a, b, a + b, acc


@dataclass
class TrainingLog:
    epochs: list = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def train(train_set: Dataset, validation_set: Optional[Dataset], config: TrainConfig = TrainConfig(),
          model: Optional[Model] = None):
    """Fit the network on ``train_set`` with mini-batch updates of the joint loss.

    Returns the checkpoint with the lowest validation loss (training loss when
    no validation set is given) and the per-epoch log.
    """
    if len(train_set) == 0:
        raise InputError("empty training set")
    model = model or initial_model(train_set, config)
    cfg = model.config
    opt = Optimizer(OptimizerConfig(kind=cfg.optimizer, learning_rate=cfg.learning_rate, clip_norm=cfg.clip_norm))
    x, labels, y = _prepared(model, train_set)
    rng = np.random.default_rng(cfg.seed + 1)
    use_val = validation_set is not None and len(validation_set) > 0
    history = TrainingLog()

    init = evaluate_loss(model, validation_set if use_val else train_set)
    best = (init[2], model.net.copy())
    history.epochs.append(_log_row(0, evaluate_loss(model, train_set), init if use_val else None))
    stale = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_set))
        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            rows = order[start:start + cfg.batch_size]
            raw, tape = model.net.forward(x[rows], mode="train")
            nll, ce, grad = mdn.loss_and_gradient(raw, labels[rows], y[rows], cfg.w1, cfg.w2,
                                                  cfg.n_areas, cfg.n_components, model.sigma_floor)
            loss = cfg.w1 * nll.mean() + cfg.w2 * ce.mean()
            if not math.isfinite(loss):
                model.net = best[1]
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}", model=model, batch=b)
            grads = model.net.backward(tape, grad / rows.size)
            try:
                opt.step(model.net, grads)
            except TrainingError as exc:
                model.net = best[1]
                raise TrainingError(f"{exc} at epoch {epoch}, batch {b}", model=model, batch=b) from None
        tr = evaluate_loss(model, train_set)
        va = evaluate_loss(model, validation_set) if use_val else None
        history.epochs.append(_log_row(epoch, tr, va))
        score = (va or tr)[2]
        if score < best[0]:
            best = (score, model.net.copy())
            history.best_epoch = epoch
            stale = 0
        else:
            stale += 1
        log.info("epoch %d  w1-term %.4f  w2-term %.4f  total %.4f%s", epoch, tr[0], tr[1], tr[2],
                 f"  val %.4f acc %.3f" % (va[2], va[3]) if va else "")
        if cfg.patience and stale >= cfg.patience:
            history.stopped_early = True
            break
    model.net = best[1]
    return model, history


def _log_row(epoch, tr, va):
    row = {"epoch": epoch, "train_w1_term": tr[0], "train_w2_term": tr[1], "train_total": tr[2],
           "train_accuracy": tr[3]}
    if va is not None:
        row.update({"val_w1_term": va[0], "val_w2_term": va[1], "val_total": va[2], "val_accuracy": va[3]})
    return row


def predict(model: Model, features) -> mdn.MixtureParams:
    """Mixture parameters in feet/seconds for one (25,) or many (n, 25) frames."""
    cfg = model.config
    params = mdn.constrain(model.raw(features), cfg.n_areas, cfg.n_components, model.sigma_floor)
    return params.rescaled(model.targets.mean, model.targets.std)
