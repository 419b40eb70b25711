import json
import logging
from dataclasses import dataclass

import numpy as np

import config
from utils.errors import DimensionMismatchError, InvalidConfigError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Architecture:
    hidden_layers: tuple = config.HIDDEN_LAYERS
    heads: tuple = config.TASKS
    input_dim: int = config.FEATURE_DIM
    n_classes: int = config.N_CLASSES
    name: str = "mtlcv"

    def __post_init__(self):
        if not self.heads:
            raise InvalidConfigError("At least one output head is required")
        if "t15" not in self.heads:
            raise InvalidConfigError(f"Head set {self.heads} must contain t15")
        if set(self.heads) - set(config.TASKS):
            raise InvalidConfigError(f"Unknown heads in {self.heads}")
        if not self.hidden_layers or any(units <= 0 for units in self.hidden_layers):
            raise InvalidConfigError(f"Invalid hidden layers {self.hidden_layers}")

    def to_dict(self):
        return {"hidden_layers": list(self.hidden_layers), "heads": list(self.heads), "input_dim": self.input_dim,
                "n_classes": self.n_classes, "name": self.name}

    @classmethod
    def from_dict(cls, data):
        return cls(tuple(data["hidden_layers"]), tuple(data["heads"]), int(data["input_dim"]),
                   int(data["n_classes"]), data.get("name", "custom"))


VARIANTS = {
    "ann": Architecture((config.ANN_HIDDEN_UNITS,), ("t15",), name="ann"),
    "mtla": Architecture(config.HIDDEN_LAYERS, ("t5", "t15"), name="mtla"),
    "mtlb": Architecture(config.HIDDEN_LAYERS, ("t15", "t20"), name="mtlb"),
    "mtlcv": Architecture(config.HIDDEN_LAYERS, config.TASKS, name="mtlcv"),
}


def make_variant(kind, hidden_layers=None):
    """ANN, MTLa, MTLb or MTL-CV; `hidden_layers` overrides the default shape."""
    key = kind.lower().replace("-", "").replace("_", "")
    if key not in VARIANTS:
        raise InvalidConfigError(f"Unknown model variant '{kind}'")
    arch = VARIANTS[key]
    if hidden_layers is not None:
        arch = Architecture(tuple(hidden_layers), arch.heads, arch.input_dim, arch.n_classes, arch.name)
    return arch


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def softmax(z):
    shifted = z - np.max(z, axis=-1, keepdims=True)
    exps = np.exp(shifted)
    return exps / np.sum(exps, axis=-1, keepdims=True)


class MtlNetwork:
    """
    Shared sigmoid hidden layers feeding one softmax head per task.
    Parameters live in `params`: W0, b0, ... for the trunk and head_<task>_W / head_<task>_b per head.
    """

    def __init__(self, arch, seed=config.SEED, params=None):
        self.arch = arch
        if params is not None:
            self.params = {k: np.array(v, dtype=float) for k, v in params.items()}
        else:
            self.params = self._init_params(np.random.default_rng(seed))

    def _init_params(self, rng):
        params = {}
        sizes = (self.arch.input_dim,) + tuple(self.arch.hidden_layers)
        for layer, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            r = np.sqrt(6.0 / (fan_in + fan_out))
            params[f"W{layer}"] = rng.uniform(-r, r, size=(fan_in, fan_out))
            params[f"b{layer}"] = np.zeros(fan_out)
        last = sizes[-1]
        for task in self.arch.heads:
            r = np.sqrt(6.0 / (last + self.arch.n_classes))
            params[f"head_{task}_W"] = rng.uniform(-r, r, size=(last, self.arch.n_classes))
            params[f"head_{task}_b"] = np.zeros(self.arch.n_classes)
        return params

    @property
    def n_hidden(self):
        return len(self.arch.hidden_layers)

    def param_count(self):
        return int(sum(p.size for p in self.params.values()))

    def copy(self):
        return MtlNetwork(self.arch, params=self.params)

    def _check_input(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.arch.input_dim:
            raise DimensionMismatchError(f"Expected {self.arch.input_dim} features, got {x.shape[-1]}")
        return x

    def _forward(self, x, dropout_rate=0.0, rng=None):
        activations = [x]
        masks = []
        h = x
        for layer in range(self.n_hidden):
            h = sigmoid(h @ self.params[f"W{layer}"] + self.params[f"b{layer}"])
            if dropout_rate > 0 and rng is not None:
                mask = (rng.random(h.shape) >= dropout_rate) / (1.0 - dropout_rate)
                h = h * mask
            else:
                mask = None
            masks.append(mask)
            activations.append(h)
        pred = {task: softmax(h @ self.params[f"head_{task}_W"] + self.params[f"head_{task}_b"])
                for task in self.arch.heads}
        return pred, activations, masks

    def forward(self, x, dropout_rate=0.0, rng=None):
        """Class probabilities per head; dropout applies only when an rng is given."""
        x = self._check_input(x)
        single = x.ndim == 1
        pred, _, _ = self._forward(np.atleast_2d(x), dropout_rate, rng)
        if single:
            return {task: p[0] for task, p in pred.items()}
        return pred

    def gradients(self, x, targets, dropout_rate=0.0, rng=None):
        """Loss and its exact gradient for a batch; `targets` maps task -> one-hot (n, K)."""
        x = np.atleast_2d(self._check_input(x))
        n = x.shape[0]
        pred, activations, masks = self._forward(x, dropout_rate, rng)
        grads = {}
        top = activations[-1]
        delta_top = np.zeros_like(top)
        total = 0.0
        for task in self.arch.heads:
            y = np.atleast_2d(targets[task])
            p = pred[task]
            g = p - y
            total += 0.5 * np.sum(g ** 2)
            # softmax Jacobian applied to the MSE gradient
            dz = p * (g - np.sum(g * p, axis=1, keepdims=True)) / n
            grads[f"head_{task}_W"] = top.T @ dz
            grads[f"head_{task}_b"] = dz.sum(axis=0)
            delta_top += dz @ self.params[f"head_{task}_W"].T

        delta = delta_top
        for layer in reversed(range(self.n_hidden)):
            h = activations[layer + 1]
            mask = masks[layer]
            if mask is not None:
                # h already carries the mask; recover the pre-dropout activation for the sigmoid slope
                raw = np.divide(h, mask, out=np.zeros_like(h), where=mask != 0)
                da = delta * mask * raw * (1.0 - raw)
            else:
                da = delta * h * (1.0 - h)
            grads[f"W{layer}"] = activations[layer].T @ da
            grads[f"b{layer}"] = da.sum(axis=0)
            delta = da @ self.params[f"W{layer}"].T
        return total / n, grads

    def apply_gradients(self, grads, learning_rate):
        for key, grad in grads.items():
            self.params[key] -= learning_rate * grad


def forward(network, x, dropout=False, rng=None, dropout_rate=config.DROPOUT_RATE):
    return network.forward(x, dropout_rate if dropout else 0.0, rng if dropout else None)


def loss(pred, targets):
    """0.5 * squared error summed over heads and classes, averaged over the batch."""
    total = 0.0
    n = 1
    for task, p in pred.items():
        p = np.atleast_2d(p)
        y = np.atleast_2d(targets[task])
        n = p.shape[0]
        total += 0.5 * np.sum((y - p) ** 2)
    return float(total / n)


def backward(network, x, targets):
    _, grads = network.gradients(x, targets)
    return grads


def predict_class(pred, head):
    """Argmax of one head; ties go to the lowest class index."""
    return np.argmax(np.asarray(pred[head]), axis=-1)


def save_model(network, path, extra=None):
    descriptor = {"format_version": config.MODEL_FORMAT_VERSION, "architecture": network.arch.to_dict()}
    if extra:
        descriptor.update(extra)
    np.savez(path, __descriptor__=np.array(json.dumps(descriptor, sort_keys=True)), **network.params)
    logger.info(f"Saved {network.arch.name} model ({network.param_count()} parameters) to {path}")


def load_model(path):
    with np.load(path, allow_pickle=False) as data:
        descriptor = json.loads(str(data["__descriptor__"]))
        if descriptor.get("format_version") != config.MODEL_FORMAT_VERSION:
            raise InvalidConfigError(f"Unsupported model format {descriptor.get('format_version')} in {path}")
        params = {k: data[k] for k in data.files if k != "__descriptor__"}
    network = MtlNetwork(Architecture.from_dict(descriptor["architecture"]), params=params)
    return network, descriptor
