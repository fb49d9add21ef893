"""
Oracle classifier for edit alignment.

A small MLP judges which of the 36 (shape, colour) classes occupies a masked
region. It must reach the accuracy gate on held-out clean crops before any
score is trusted.
"""

import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
from sklearn.neural_network import MLPClassifier
from sklearn.preprocessing import StandardScaler

from src.ai.probe import TokenMask
from src.ai.vocab import CLASSES, ObjectClass, class_index
from src.bench.shapes import CELL, gen_scene, random_spec
from src.core.errors import ConfigError, OracleError
from src.core.rng import Rng

logger = logging.getLogger(__name__)

ACCURACY_GATE = 0.98
N_CLASSES = len(CLASSES)


def crop_features(image: np.ndarray, mask: np.ndarray, patch: int = 4) -> np.ndarray:
    """
    Feature vector of a masked region.

    The cell containing the mask centroid is cropped and weighted by the
    mask dilated by one token; the mask-weighted mean colour is appended.

    Raises:
        ConfigError: If the mask is empty.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ConfigError("oracle needs a nonempty mask")
    ys, xs = np.nonzero(mask)
    row = min(int(ys.mean() // CELL), image.shape[0] // CELL - 1)
    col = min(int(xs.mean() // CELL), image.shape[1] // CELL - 1)
    window = (slice(row * CELL, (row + 1) * CELL), slice(col * CELL, (col + 1) * CELL))
    weight = TokenMask.from_pixels(mask, patch).dilate(1).to_pixels(patch)[window].astype(np.float64)
    crop = np.asarray(image, dtype=np.float64)[window] * weight[..., None]
    mean_color = np.asarray(image, dtype=np.float64)[mask].mean(axis=0)
    return np.concatenate([crop.reshape(-1), mean_color])


class OracleClassifier:
    """
    Scaler + MLP over masked crops.

    Args:
        hidden (Tuple[int, ...]): Hidden layer widths.
        seed (int): Seeds the MLP initialization and shuffling.
        max_iter (int): Training epochs.
    """

    def __init__(self, hidden: Tuple[int, ...] = (128,), seed: int = 0, max_iter: int = 300):
        self.model = MLPClassifier(hidden_layer_sizes=hidden, max_iter=max_iter,
                                   random_state=seed % (2 ** 32), alpha=1e-4)
        self.scaler = StandardScaler()
        self.accuracy: Optional[float] = None

    @property
    def is_trained(self) -> bool:
        return self.accuracy is not None

    def train(self, features: np.ndarray, labels: np.ndarray,
              holdout: np.ndarray, holdout_labels: np.ndarray,
              gate: float = ACCURACY_GATE) -> float:
        """
        Fit on ``features`` and measure held-out accuracy.

        Raises:
            OracleError: If the held-out accuracy is below ``gate``.
        """
        scaled = self.scaler.fit_transform(features)
        self.model.fit(scaled, labels)
        accuracy = float(np.mean(self.model.predict(self.scaler.transform(holdout)) == holdout_labels))
        logger.info("oracle trained", extra={"fields": {"accuracy": accuracy, "gate": gate,
                                                          "samples": int(len(labels))}})
        if accuracy < gate:
            raise OracleError(f"oracle accuracy {accuracy:.4f} below gate {gate}")
        self.accuracy = accuracy
        return accuracy

    def predict_proba(self, image: np.ndarray, mask: np.ndarray) -> np.ndarray:
        """Probabilities over all classes, in class-index order."""
        if not self.is_trained:
            raise OracleError("oracle used before passing its accuracy gate")
        feats = self.scaler.transform(crop_features(image, mask)[None, :])
        probs = self.model.predict_proba(feats)[0]
        full = np.zeros(N_CLASSES, dtype=np.float64)
        full[self.model.classes_.astype(int)] = probs
        return full

    def predict(self, image: np.ndarray, mask: np.ndarray) -> ObjectClass:
        return CLASSES[int(np.argmax(self.predict_proba(image, mask)))]


def oracle_dataset(n: int, rng: Rng) -> Tuple[np.ndarray, np.ndarray]:
    """Features and labels of ``n`` single-object clean scenes."""
    feats: List[np.ndarray] = []
    labels: List[int] = []
    for i in range(n):
        spec = random_spec(rng.spawn(i), min_objects=1, max_objects=1)
        scene = gen_scene(spec)
        obj = spec.objects[0]
        feats.append(crop_features(scene.image, scene.mask_for(obj.cell)))
        labels.append(class_index(obj.object_class))
    return np.stack(feats), np.asarray(labels)


def noise_dataset(n: int, rng: Rng) -> np.ndarray:
    """Features of uniform-noise crops under random single-object masks."""
    feats = []
    for i in range(n):
        sub = rng.spawn(i)
        spec = random_spec(sub.spawn(0), min_objects=1, max_objects=1)
        mask = gen_scene(spec).mask_for(spec.objects[0].cell)
        image = sub.spawn(1).uniform((32, 32, 3), -1.0, 1.0)
        feats.append(crop_features(image, mask))
    return np.stack(feats)


def train_oracle(rng: Rng, n_train: int = 3000, n_holdout: int = 600, n_noise: int = 100,
                 gate: float = ACCURACY_GATE) -> OracleClassifier:
    """
    Train and gate the oracle on generated scenes.

    Noise crops are added once per class label so that the classifier
    spreads its probability on inputs that show no object.

    Raises:
        OracleError: If the held-out accuracy misses the gate.
    """
    x_train, y_train = oracle_dataset(n_train, rng.spawn(0))
    x_hold, y_hold = oracle_dataset(n_holdout, rng.spawn(1))
    if n_noise:
        noise = noise_dataset(n_noise, rng.spawn(2))
        x_train = np.concatenate([x_train, np.repeat(noise, N_CLASSES, axis=0)])
        y_train = np.concatenate([y_train, np.tile(np.arange(N_CLASSES), n_noise)])
    oracle = OracleClassifier(seed=rng.spawn(3).next_seed())
    oracle.train(x_train, y_train, x_hold, y_hold, gate=gate)
    return oracle


def oracle_score(oracle: OracleClassifier, image: np.ndarray, pixel_mask: np.ndarray,
                 cls: ObjectClass) -> float:
    """Probability the oracle assigns to ``cls`` for the masked region."""
    return float(oracle.predict_proba(image, pixel_mask)[class_index(cls)])


def score_batch(oracle: OracleClassifier, images: Sequence[np.ndarray],
                masks: Sequence[np.ndarray]) -> np.ndarray:
    """Probability rows for many regions at once."""
    if not oracle.is_trained:
        raise OracleError("oracle used before passing its accuracy gate")
    feats = oracle.scaler.transform(np.stack([crop_features(i, m) for i, m in zip(images, masks)]))
    probs = oracle.model.predict_proba(feats)
    full = np.zeros((len(feats), N_CLASSES), dtype=np.float64)
    full[:, oracle.model.classes_.astype(int)] = probs
    return full
