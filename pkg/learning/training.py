import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import pandas as pd

import config
from experiments.metrics import classifier_rmse
from learning.dataset import fit_constants, make_folds, prepare
from learning.mtl_network import Architecture, MtlNetwork, loss, make_variant, predict_class
from utils.errors import InvalidConfigError
from utils.helpers import parallel_map, read_json, write_csv, write_json

logger = logging.getLogger(__name__)
train_logger = logging.getLogger("Training")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = config.EPOCHS
    learning_rate: float = config.LEARNING_RATE
    dropout_rate: float = config.DROPOUT_RATE
    batch_size: int = config.BATCH_SIZE
    hidden_layers: tuple = config.HIDDEN_LAYERS
    seed: int = config.SEED
    heads: tuple = config.TASKS
    name: str = "mtlcv"

    def __post_init__(self):
        if self.epochs < 0:
            raise InvalidConfigError(f"epochs must be >= 0, got {self.epochs}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise InvalidConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.batch_size <= 0 or self.learning_rate <= 0:
            raise InvalidConfigError("batch_size and learning_rate must be positive")
        object.__setattr__(self, "hidden_layers", tuple(int(u) for u in self.hidden_layers))
        object.__setattr__(self, "heads", tuple(self.heads))
        self.architecture()

    def architecture(self):
        return Architecture(self.hidden_layers, self.heads, name=self.name)

    @classmethod
    def for_variant(cls, kind, **overrides):
        arch = make_variant(kind)
        defaults = {"hidden_layers": arch.hidden_layers, "heads": arch.heads, "name": arch.name}
        if arch.name == "ann":
            defaults["epochs"] = config.ANN_EPOCHS
        defaults.update(overrides)
        return cls(**defaults)

    def to_dict(self):
        data = asdict(self)
        data["hidden_layers"] = list(self.hidden_layers)
        data["heads"] = list(self.heads)
        return data

    @classmethod
    def from_dict(cls, data, kind=None):
        allowed = set(cls.__dataclass_fields__)
        unknown = set(data) - allowed
        if unknown:
            raise InvalidConfigError(f"Unknown training config keys: {sorted(unknown)}")
        if kind is not None:
            return cls.for_variant(kind, **data)
        return cls(**data)

    @classmethod
    def load(cls, path, kind=None):
        return cls.from_dict(read_json(path), kind)

    def save(self, path):
        write_json(self.to_dict(), path)


@dataclass
class TrainResult:
    network: MtlNetwork
    curve: list = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = float("nan")


def evaluate_loss(network, prepared):
    if len(prepared) == 0:
        return float("nan")
    return loss(network.forward(prepared.x), prepared.targets)


def train(train_set, train_config, val_set=None):
    """
    Mini-batch gradient descent on the MSE-through-softmax loss.
    :param train_set: Prepared training partition
    :param train_config: TrainConfig
    :param val_set: Prepared partition used to pick the returned parameters; the training set when omitted
    :return: TrainResult holding the parameters with the lowest validation loss seen
    """
    cfg = train_config
    network = MtlNetwork(cfg.architecture(), seed=cfg.seed)
    monitor = val_set if val_set is not None and len(val_set) else train_set
    rng = np.random.default_rng([cfg.seed, 1])

    best = network.copy()
    best_loss = evaluate_loss(network, monitor)
    best_epoch = 0
    curve = []
    n = len(train_set)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            targets = {task: train_set.targets[task][batch] for task in network.arch.heads}
            _, grads = network.gradients(train_set.x[batch], targets, cfg.dropout_rate, rng)
            network.apply_gradients(grads, cfg.learning_rate)

        train_loss = evaluate_loss(network, train_set)
        val_loss = evaluate_loss(network, monitor)
        curve.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss})
        train_logger.debug(f"{cfg.name} epoch {epoch}: train {train_loss:.6f} val {val_loss:.6f}")
        if not np.isfinite(train_loss):
            logger.error(f"{cfg.name}: loss diverged at epoch {epoch} (lr={cfg.learning_rate})")
            break
        if val_loss < best_loss:
            best, best_loss, best_epoch = network.copy(), val_loss, epoch

    train_logger.info(f"{cfg.name}: {cfg.epochs} epochs, best validation loss {best_loss:.6f} at epoch {best_epoch}")
    return TrainResult(best, curve, best_epoch, best_loss)


def export_loss_curve(curve, path):
    write_csv(pd.DataFrame(curve, columns=["epoch", "train_loss", "val_loss"]), path)


def predict_classes(network, x):
    pred = network.forward(np.atleast_2d(x))
    return {task: predict_class(pred, task) for task in network.arch.heads}


def head_rmse(network, prepared):
    """Per-head RMSE of the predicted class midpoints against the true ones."""
    predicted = predict_classes(network, prepared.x)
    scores = {}
    for j, task in enumerate(config.TASKS):
        if task in predicted:
            scores[task] = classifier_rmse(predicted[task], prepared.classes[:, j], prepared.binning,
                                           prepared.normalizer)
    return scores


def validation_rmse(network, prepared):
    return float(np.mean(list(head_rmse(network, prepared).values())))


# --- Hyperparameter search ---

def ann_search_space():
    """Single hidden layer of 5..150 units, 25..250 epochs, every learning rate of the grid."""
    return [{"hidden_layers": (units,), "epochs": epochs, "learning_rate": lr}
            for units in config.UNIT_GRID for epochs in config.ANN_EPOCH_GRID for lr in config.LEARNING_RATE_GRID]


def mtl_search_space(budget=config.SEARCH_BUDGET, seed=config.SEED):
    """
    Budgeted sample of the deep grid: 2..5 hidden layers of 5..150 units, 50..300 epochs.
    The 20-40-20 / 100 epoch point is always part of the sample.
    """
    rng = np.random.default_rng(seed)
    space = [{"hidden_layers": config.HIDDEN_LAYERS, "epochs": config.EPOCHS, "learning_rate": config.LEARNING_RATE}]
    seen = {_candidate_key(space[0])}
    while len(space) < budget:
        depth = int(rng.choice(config.DEEP_LAYER_COUNTS))
        candidate = {
            "hidden_layers": tuple(int(u) for u in rng.choice(config.UNIT_GRID, size=depth)),
            "epochs": int(rng.choice(config.DEEP_EPOCH_GRID)),
            "learning_rate": float(rng.choice(config.LEARNING_RATE_GRID)),
        }
        if _candidate_key(candidate) not in seen:
            seen.add(_candidate_key(candidate))
            space.append(candidate)
    return space


def sample_space(space, budget, seed=config.SEED, keep=None):
    """Seeded subset of an exhaustive grid; `keep` is always included."""
    if budget is None or budget >= len(space):
        return list(space)
    rng = np.random.default_rng(seed)
    picked = [space[i] for i in sorted(rng.choice(len(space), size=budget, replace=False))]
    if keep is not None and _candidate_key(keep) not in {_candidate_key(c) for c in picked}:
        picked[0] = keep
    return picked


def _candidate_key(candidate):
    return tuple(sorted((k, tuple(v) if isinstance(v, (list, tuple)) else v) for k, v in candidate.items()))


def _fold_score(job):
    dataset, train_index, val_index, cfg = job
    train_part, val_part = dataset.subset(train_index), dataset.subset(val_index)
    binning, normalizer = fit_constants(train_part)
    result = train(prepare(train_part, binning, normalizer), cfg, prepare(val_part, binning, normalizer))
    return validation_rmse(result.network, prepare(val_part, binning, normalizer))


@dataclass
class SearchResult:
    best_config: TrainConfig
    best_score: float
    scores: list  # (candidate dict, mean validation RMSE) in evaluation order


def grid_search(dataset, space, base_config=None, folds=None, workers=config.WORKERS):
    """
    Scores every candidate by mean validation RMSE over the folds and keeps the lowest;
    ties go to the earlier candidate.
    """
    if not space:
        raise InvalidConfigError("Empty search space")
    base_config = base_config or TrainConfig()
    if folds is None:
        folds = make_folds(len(dataset), n_repeats=config.SEARCH_REPEATS, seed=base_config.seed)
    configs = [replace(base_config, **candidate) for candidate in space]
    jobs = [(dataset, tr, va, cfg) for cfg in configs for _, _, tr, va in folds]
    fold_scores = parallel_map(_fold_score, jobs, workers)

    per_fold = len(folds)
    scores = []
    for i, candidate in enumerate(space):
        mean = float(np.mean(fold_scores[i * per_fold:(i + 1) * per_fold]))
        scores.append((candidate, mean))
        train_logger.info(f"Search {base_config.name} {candidate}: mean validation RMSE {mean:.4f}")
    best_index = int(np.argmin([s for _, s in scores]))
    logger.info(f"Best {base_config.name} configuration: {space[best_index]} ({scores[best_index][1]:.4f})")
    return SearchResult(configs[best_index], scores[best_index][1], scores)
