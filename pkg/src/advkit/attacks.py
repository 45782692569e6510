"""Gradient-based input perturbation attacks.

Three crafting families share one outcome record:

* ``FastGradientSign``: one step of size theta along the sign of the
  objective gradient (added for untargeted attacks, subtracted for targeted
  ones), clipped to [0, 1].
* ``IterativeFastGradientSign``: the same update applied repeatedly with the
  gradient recomputed on each iterate, stopping early on success.
* ``SaliencyMapAttack``: multi-step, L0-style crafting driven by per-class
  input Jacobians; each step saturates the best pixel (or pixel pair) to 1.0
  inside a shrinking search domain, under a hard changed-pixel budget.

Attacks never mutate the model or the benign input.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .errors import ConfigurationError, InputError
from .metrics import degree_of_change
from .model import PredictionBundle
from .validation import as_image, check_label

GRAY_LEVEL = 127.0 / 255.0  # "no change" level in sign noise maps

STOP_SUCCESS = "success"
STOP_MAX_ITERATIONS = "max_iterations"
STOP_BUDGET = "budget_exhausted"
STOP_EMPTY_DOMAIN = "empty_domain"
STOP_ZERO_SALIENCY = "zero_saliency"


@dataclass
class TraceStep:
    """State after one crafting iteration."""

    iteration: int
    logits: np.ndarray
    prediction: np.ndarray
    pixels_changed: np.ndarray  # flat pixel indices touched this step


@dataclass
class AttackOutcome:
    original: np.ndarray
    adversarial: np.ndarray
    source_class: int
    destination_class: int
    target_class: int | None
    success: bool
    iterations_used: int
    doc_l0: float
    doc_l2: float
    doc_linf: float
    final_prediction: PredictionBundle
    trace: list = field(default_factory=list)
    stop_reason: str = STOP_SUCCESS


def _safe_doc(x, x_adv, p) -> float:
    try:
        return degree_of_change(x, x_adv, p)
    except InputError:
        return float("nan")


def _finish(x, x_adv, source, target, bundle, trace, stop_reason) -> AttackOutcome:
    dest = bundle.predicted_class
    if target is None:
        success = dest != source
    else:
        success = dest == target and dest != source
    x_adv = x_adv.copy()
    x_adv.flags.writeable = False
    return AttackOutcome(
        original=x, adversarial=x_adv,
        source_class=source, destination_class=dest, target_class=target,
        success=success, iterations_used=len(trace),
        doc_l0=_safe_doc(x, x_adv, 0),
        doc_l2=_safe_doc(x, x_adv, 2),
        doc_linf=_safe_doc(x, x_adv, np.inf),
        final_prediction=bundle, trace=trace,
        stop_reason=STOP_SUCCESS if success else stop_reason)


class BaseAttack(BaseEstimator):
    """Common surface: ``run`` one image, ``run_many``/``perturb`` a batch."""

    def run(self, model, x) -> AttackOutcome:
        raise NotImplementedError

    def run_many(self, model, X) -> list:
        return [self.run(model, x) for x in np.asarray(X)]

    def perturb(self, model, X) -> np.ndarray:
        """Adversarial images only, stacked like the input batch."""
        return np.stack([o.adversarial for o in self.run_many(model, X)])


# ---------------------------------------------------------------------------
# sign-of-gradient family


def sign_noise_map(grad) -> np.ndarray:
    """Three-level visualization of a gradient map.

    0.0 (dark) where the gradient is negative, 127/255 (gray) where it is
    exactly zero, 1.0 (light) where it is positive.
    """
    grad = np.asarray(grad, dtype=np.float64)
    return np.where(grad < 0, 0.0, np.where(grad > 0, 1.0, GRAY_LEVEL))


def _run_sign_attack(model, x, theta, max_steps, target, objective) -> AttackOutcome:
    if theta < 0:
        raise InputError(f"theta must be >= 0, got {theta}")
    if max_steps < 1:
        raise InputError(f"max_iterations must be >= 1, got {max_steps}")
    x = as_image(x, model.arch_.input_shape)
    source = model.predict_bundle(x).predicted_class
    if target is not None:
        target = check_label(target, model.n_classes_)
        if target == source:
            raise InputError(
                f"target class {target} already equals the predicted class")
        label, direction = target, -1.0  # descend toward the target
    else:
        label, direction = source, +1.0  # ascend away from the source

    current = x.copy()
    trace = []
    bundle = None
    stop = STOP_MAX_ITERATIONS
    for it in range(1, max_steps + 1):
        grad = model.loss_gradient(current, label, objective=objective)
        stepped = np.clip(current + direction * theta * np.sign(grad), 0.0, 1.0)
        changed = np.flatnonzero(stepped != current)
        current = stepped
        bundle = model.predict_bundle(current)
        trace.append(TraceStep(it, bundle.logits, bundle.prediction, changed))
        dest = bundle.predicted_class
        if (dest == target != source) if target is not None else (dest != source):
            stop = STOP_SUCCESS
            break
    return _finish(x, current, source, target, bundle, trace, stop)


class FastGradientSign(BaseAttack):
    """One-step sign attack.

    theta is the per-pixel step in dynamic-range units (and the L-infinity
    perturbation bound). ``target=None`` runs the untargeted variant;
    ``objective`` picks the loss whose input gradient drives the step
    ("cross_entropy", "l2" or "margin").
    """

    def __init__(self, theta=0.2, target=None, objective="cross_entropy"):
        self.theta = theta
        self.target = target
        self.objective = objective

    def run(self, model, x) -> AttackOutcome:
        return _run_sign_attack(model, x, self.theta, 1, self.target, self.objective)


class IterativeFastGradientSign(BaseAttack):
    """Multi-step sign attack; stops at success or ``max_iterations``."""

    def __init__(self, theta=0.005, max_iterations=5, target=None,
                 objective="cross_entropy"):
        self.theta = theta
        self.max_iterations = max_iterations
        self.target = target
        self.objective = objective

    def run(self, model, x) -> AttackOutcome:
        return _run_sign_attack(model, x, self.theta, self.max_iterations,
                                self.target, self.objective)


# ---------------------------------------------------------------------------
# saliency-map family


def saliency_scores(jacobian: np.ndarray, target: int, domain: np.ndarray) -> np.ndarray:
    """Targeted per-pixel scores from a flattened (classes, pixels) Jacobian.

    A pixel scores target_grad * |sum of other-class grads| when the target
    gradient is nonnegative and the other-class sum is nonpositive; otherwise
    (or outside the domain) it scores zero.
    """
    alpha = jacobian[target]
    beta = jacobian.sum(axis=0) - alpha
    scores = np.where((alpha < 0) | (beta > 0), 0.0, alpha * np.abs(beta))
    scores[~domain] = 0.0
    return scores


def pairwise_scores(jacobian: np.ndarray, target: int, domain: np.ndarray):
    """Best pixel pair (p, q) maximizing -A*B with A > 0 and B < 0.

    A (resp. B) sums the target-class (resp. other-class) gradients over the
    pair. Returns None when no in-domain pair qualifies; ties resolve to the
    lexicographically smallest pair of flat pixel indices.
    """
    idx = np.flatnonzero(domain)
    if idx.size < 2:
        return None
    alpha = jacobian[target][idx]
    beta = jacobian.sum(axis=0)[idx] - alpha
    pair_a = alpha[:, np.newaxis] + alpha[np.newaxis, :]
    pair_b = beta[:, np.newaxis] + beta[np.newaxis, :]
    score = np.where((pair_a > 0) & (pair_b < 0), -pair_a * pair_b, -np.inf)
    iu, ju = np.triu_indices(idx.size, k=1)
    flat = score[iu, ju]
    best = int(np.argmax(flat))  # first maximum = lexicographically smallest pair
    if not np.isfinite(flat[best]):
        return None
    return int(idx[iu[best]]), int(idx[ju[best]])


def descent_scores(jacobian: np.ndarray, source: int, domain: np.ndarray) -> np.ndarray:
    """Untargeted per-pixel scores: how strongly raising a pixel lowers the
    source-class output (clamped at zero)."""
    scores = np.maximum(0.0, -jacobian[source])
    scores[~domain] = 0.0
    return scores


def _full_domain(model, x, domain):
    shape = model.arch_.input_shape
    if domain is None:
        return np.ones(shape[0] * shape[1], dtype=bool)
    domain = np.asarray(domain, dtype=bool).ravel()
    if domain.size != shape[0] * shape[1]:
        raise InputError(f"domain has {domain.size} entries, expected {shape[0] * shape[1]}")
    return domain


def saliency_map(model, x, target, domain=None, basis="prediction") -> np.ndarray:
    """Targeted saliency map as an image-shaped array (zero outside the domain)."""
    target = check_label(target, model.n_classes_)
    domain = _full_domain(model, x, domain)
    jac = model.input_jacobian(x, basis=basis).reshape(model.n_classes_, -1)
    return saliency_scores(jac, target, domain).reshape(model.arch_.input_shape)


def pairwise_select(model, x, target, domain=None, basis="prediction"):
    """Best crafting pair for a target class, or None (see ``pairwise_scores``)."""
    target = check_label(target, model.n_classes_)
    domain = _full_domain(model, x, domain)
    jac = model.input_jacobian(x, basis=basis).reshape(model.n_classes_, -1)
    return pairwise_scores(jac, target, domain)


def untargeted_descent_map(model, x, domain=None, basis="prediction") -> np.ndarray:
    """Untargeted saliency map descending the predicted class's own gradients."""
    domain = _full_domain(model, x, domain)
    source = model.predict_bundle(x).predicted_class
    jac = model.input_jacobian(x, basis=basis).reshape(model.n_classes_, -1)
    return descent_scores(jac, source, domain).reshape(model.arch_.input_shape)


class SaliencyMapAttack(BaseAttack):
    """Jacobian-driven L0 attack saturating chosen pixels to 1.0.

    The search domain starts as every pixel below 1.0 and loses each chosen
    pixel. Crafting stops on success, on exhausting the changed-pixel budget
    ``floor(max_change_fraction * pixels)``, on an empty domain, or when no
    pixel (pair) has positive saliency; the outcome's ``stop_reason`` records
    which. ``crafting_rule="pairwise"`` requires a target class.
    """

    def __init__(self, target=None, max_change_fraction=0.15,
                 crafting_rule="single_pixel", basis="prediction"):
        self.target = target
        self.max_change_fraction = max_change_fraction
        self.crafting_rule = crafting_rule
        self.basis = basis

    def _check_config(self):
        if not 0.0 < self.max_change_fraction <= 1.0:
            raise ConfigurationError(
                f"max_change_fraction must be in (0, 1], got {self.max_change_fraction}")
        if self.crafting_rule not in ("single_pixel", "pairwise"):
            raise ConfigurationError(
                f"crafting_rule must be 'single_pixel' or 'pairwise', "
                f"got {self.crafting_rule!r}")
        if self.crafting_rule == "pairwise" and self.target is None:
            raise ConfigurationError("pairwise crafting requires a target class")

    def run(self, model, x) -> AttackOutcome:
        self._check_config()
        x = as_image(x, model.arch_.input_shape)
        m = model.n_classes_
        bundle = model.predict_bundle(x)
        source = bundle.predicted_class
        target = self.target
        if target is not None:
            target = check_label(target, m)
            if target == source:
                raise InputError(
                    f"target class {target} already equals the predicted class")

        pixels = x.size
        budget = math.floor(self.max_change_fraction * pixels)
        per_step = 2 if self.crafting_rule == "pairwise" else 1
        domain = (x.ravel() < 1.0).copy()
        current = x.copy()
        spent = 0
        trace = []
        while True:
            if int(domain.sum()) < per_step:
                stop = STOP_EMPTY_DOMAIN
                break
            if budget - spent < per_step:
                stop = STOP_BUDGET
                break
            jac = model.input_jacobian(current, basis=self.basis).reshape(m, -1)
            if target is None:
                scores = descent_scores(jac, source, domain)
                if scores.max() <= 0.0:
                    stop = STOP_ZERO_SALIENCY
                    break
                chosen = [int(scores.argmax())]
            elif self.crafting_rule == "single_pixel":
                scores = saliency_scores(jac, target, domain)
                if scores.max() <= 0.0:
                    stop = STOP_ZERO_SALIENCY
                    break
                chosen = [int(scores.argmax())]
            else:
                pair = pairwise_scores(jac, target, domain)
                if pair is None:
                    stop = STOP_ZERO_SALIENCY
                    break
                chosen = list(pair)

            flat = current.ravel()
            flat[chosen] = 1.0
            domain[chosen] = False
            spent += len(chosen)
            bundle = model.predict_bundle(current)
            trace.append(TraceStep(len(trace) + 1, bundle.logits,
                                   bundle.prediction, np.array(chosen)))
            dest = bundle.predicted_class
            if (dest == target != source) if target is not None else (dest != source):
                stop = STOP_SUCCESS
                break
        return _finish(x, current, source, target, bundle, trace, stop)
