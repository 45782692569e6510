"""Prediction-phase and training-phase defenses.

* ``ConsensusDefense``: answer a query only when most of several perturbed
  views of the input agree on a class.
* ``StreamMonitor``: flag clients whose recent queries look like the
  trajectory of an iterative attack (near-duplicate runs), or whose queries
  exceed a served-iteration budget.
* ``VotingEnsemble``: majority vote over models trained with different
  hyperparameters; ties are rejected.
"""

from collections import Counter, deque
from dataclasses import dataclass
from itertools import combinations

import numpy as np
from sklearn.base import BaseEstimator

from .errors import ConfigurationError, InputError
from .pgm import read_pgm

VARIANT_GENERATORS = ("pixel_shift", "gaussian_jitter")


@dataclass
class ConsensusDecision:
    accepted: bool
    label: int | None
    votes: dict  # class -> count


class ConsensusDefense(BaseEstimator):
    """Multi-query consensus prediction.

    ``q`` seeded variants of the input are generated (integer pixel shifts
    with zero padding, or Gaussian jitter clipped to [0, 1]) and predicted;
    the answer is accepted only when one class collects at least
    ``threshold`` of the votes (strict majority when ``threshold`` is None).
    Variants depend only on (seed, q, generator parameters), so identical
    inputs always produce identical votes.
    """

    def __init__(self, q=5, generator="pixel_shift", max_offset=1, sigma=0.05,
                 threshold=None, seed=0):
        self.q = q
        self.generator = generator
        self.max_offset = max_offset
        self.sigma = sigma
        self.threshold = threshold
        self.seed = seed

    def _check_config(self, image_shape):
        if self.q < 3:
            raise ConfigurationError(f"q must be >= 3, got {self.q}")
        if self.generator not in VARIANT_GENERATORS:
            raise ConfigurationError(
                f"generator must be one of {VARIANT_GENERATORS}, got {self.generator!r}")
        if self.generator == "pixel_shift" and not 0 <= self.max_offset < min(image_shape):
            raise ConfigurationError(
                f"max_offset {self.max_offset} outside image bounds {image_shape}")
        if self.generator == "gaussian_jitter" and self.sigma < 0:
            raise ConfigurationError(f"sigma must be >= 0, got {self.sigma}")
        if self.threshold is not None and not 0.0 < self.threshold <= 1.0:
            raise ConfigurationError(f"threshold must be in (0, 1], got {self.threshold}")

    def variants(self, x) -> np.ndarray:
        """The q deterministic query views of one input."""
        x = np.asarray(x, dtype=np.float64)
        self._check_config(x.shape)
        rng = np.random.default_rng(self.seed)
        out = np.empty((self.q,) + x.shape)
        for i in range(self.q):
            if self.generator == "pixel_shift":
                dy, dx = rng.integers(-self.max_offset, self.max_offset + 1, size=2)
                out[i] = _shift(x, int(dy), int(dx))
            else:
                out[i] = np.clip(x + self.sigma * rng.standard_normal(x.shape), 0.0, 1.0)
        return out

    def decide(self, model, x) -> ConsensusDecision:
        labels = model.predict(self.variants(x))
        votes = Counter(int(c) for c in labels)
        top, top_count = votes.most_common(1)[0]
        needed = (self.q // 2 + 1) if self.threshold is None \
            else int(np.ceil(self.threshold * self.q))
        unique = sum(1 for c in votes.values() if c == top_count) == 1
        accepted = top_count >= needed and unique
        return ConsensusDecision(accepted, top if accepted else None, dict(votes))


def _shift(x, dy: int, dx: int) -> np.ndarray:
    """Integer translation with zero fill."""
    out = np.zeros_like(x)
    h, w = x.shape
    ys = slice(max(dy, 0), min(h + dy, h))
    xs = slice(max(dx, 0), min(w + dx, w))
    yo = slice(max(-dy, 0), min(h - dy, h))
    xo = slice(max(-dx, 0), min(w - dx, w))
    out[ys, xs] = x[yo, xo]
    return out


# ---------------------------------------------------------------------------
# query-stream monitor


@dataclass
class MonitorVerdict:
    flagged: bool
    reason: str | None = None  # "near_duplicate" | "time_out"

    def __bool__(self):
        return self.flagged


CLEAR = MonitorVerdict(False)


class StreamMonitor(BaseEstimator):
    """Per-client query monitor.

    Keeps the last ``window`` queries per client and flags when any ``k`` of
    them lie pairwise within L2 distance ``tau`` (the signature of an
    iterative crafting loop replayed against the service), or when a query
    reports more served iterations than ``iteration_budget`` (or a longer
    serving time than ``seconds_budget``; off by default). Clients are
    independent; one client's history is a plain deque, so calls for the
    same client must be serialized by the caller.
    """

    def __init__(self, tau, k=3, window=10, iteration_budget=None,
                 seconds_budget=None):
        self.tau = tau
        self.k = k
        self.window = window
        self.iteration_budget = iteration_budget
        self.seconds_budget = seconds_budget
        self._history = {}

    def _check_config(self):
        if not self.window >= self.k >= 2:
            raise ConfigurationError(
                f"need window >= k >= 2, got window={self.window}, k={self.k}")
        if self.tau < 0:
            raise ConfigurationError(f"tau must be >= 0, got {self.tau}")

    def reset(self, client_id=None):
        if client_id is None:
            self._history.clear()
        else:
            self._history.pop(client_id, None)

    def observe(self, client_id, image, served_iterations=None,
                served_seconds=None) -> MonitorVerdict:
        self._check_config()
        image = np.asarray(image, dtype=np.float64).ravel()
        if self.iteration_budget is not None and served_iterations is not None \
                and served_iterations > self.iteration_budget:
            return MonitorVerdict(True, "time_out")
        if self.seconds_budget is not None and served_seconds is not None \
                and served_seconds > self.seconds_budget:
            return MonitorVerdict(True, "time_out")
        hist = self._history.setdefault(client_id, deque(maxlen=self.window))
        hist.append(image)
        if len(hist) >= self.k and self._has_close_group(list(hist)):
            return MonitorVerdict(True, "near_duplicate")
        return CLEAR

    def _has_close_group(self, images) -> bool:
        n = len(images)
        stack = np.stack(images)
        d2 = ((stack[:, np.newaxis] - stack[np.newaxis]) ** 2).sum(axis=-1)
        close = d2 <= self.tau ** 2
        # windows are small (default 10); exhaustive group search is fine
        for group in combinations(range(n), self.k):
            if all(close[a, b] for a, b in combinations(group, 2)):
                return True
        return False


def replay_monitor(monitor: StreamMonitor, replay_path) -> list:
    """Feed a newline-delimited "client_id,image_path" file into the monitor.

    Returns one (client_id, MonitorVerdict) per line; image paths are PGM
    files, resolved relative to the replay file.
    """
    from pathlib import Path
    base = Path(replay_path).parent
    verdicts = []
    with open(replay_path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            client_id, _, rel = line.partition(",")
            if not rel:
                raise InputError(f"replay line {line!r} is not 'client_id,path'")
            image = read_pgm(base / rel if not Path(rel).is_absolute() else rel)
            verdicts.append((client_id, monitor.observe(client_id, image)))
    return verdicts


# ---------------------------------------------------------------------------
# hyperparameter ensemble


class VotingEnsemble(BaseEstimator):
    """Majority vote over member models; ties are rejected (label None)."""

    def __init__(self, models):
        self.models = models

    def _check_config(self):
        if len(self.models) < 2:
            raise ConfigurationError("an ensemble needs at least 2 members")
        shapes = {tuple(m.arch_.input_shape) for m in self.models}
        if len(shapes) != 1:
            raise ConfigurationError(f"members accept different input shapes: {shapes}")

    def decide(self, x) -> tuple:
        """(accepted, label) for one image."""
        self._check_config()
        votes = Counter(int(m.predict(x)[0]) for m in self.models)
        top, top_count = votes.most_common(1)[0]
        if sum(1 for c in votes.values() if c == top_count) > 1:
            return False, None
        return True, top

    def predict(self, X) -> np.ndarray:
        """Batch vote; rejected inputs yield -1."""
        self._check_config()
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 2:
            X = X[np.newaxis]
        all_votes = np.stack([m.predict(X) for m in self.models])  # (members, n)
        out = np.empty(X.shape[0], dtype=np.int64)
        for i in range(X.shape[0]):
            votes = Counter(int(v) for v in all_votes[:, i])
            top, top_count = votes.most_common(1)[0]
            tie = sum(1 for c in votes.values() if c == top_count) > 1
            out[i] = -1 if tie else top
        return out


# ---------------------------------------------------------------------------
# defense evaluation


@dataclass
class MitigationReport:
    benign_rejection_rate: float
    adversarial_rejection_rate: float
    post_defense_misclassification_rate: float
    benign_count: int
    adversarial_count: int

    def to_dict(self):
        return {
            "benign_rejection_rate": self.benign_rejection_rate,
            "adversarial_rejection_rate": self.adversarial_rejection_rate,
            "post_defense_misclassification_rate":
                self.post_defense_misclassification_rate,
            "benign_count": self.benign_count,
            "adversarial_count": self.adversarial_count,
        }


def evaluate_defense(decide, benign_images, adversarial) -> MitigationReport:
    """Measure a defense on benign inputs and adversarial (image, source) pairs.

    ``decide`` maps an image to (accepted, label). The post-defense
    misclassification rate is the fraction of adversarial inputs that are
    both accepted and labeled as something other than their source class.
    """
    benign_images = list(benign_images)
    adversarial = list(adversarial)
    if not benign_images or not adversarial:
        raise InputError("evaluation needs nonempty benign and adversarial sets")
    benign_rejects = sum(1 for x in benign_images if not decide(x)[0])
    adv_rejects = 0
    still_fooled = 0
    for image, source in adversarial:
        accepted, label = decide(image)
        if not accepted:
            adv_rejects += 1
        elif label != source:
            still_fooled += 1
    return MitigationReport(
        benign_rejection_rate=benign_rejects / len(benign_images),
        adversarial_rejection_rate=adv_rejects / len(adversarial),
        post_defense_misclassification_rate=still_fooled / len(adversarial),
        benign_count=len(benign_images),
        adversarial_count=len(adversarial))
