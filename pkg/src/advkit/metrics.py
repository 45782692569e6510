"""Effectiveness measures: success rate, source/destination matrices,
degree of change, prediction entropy, and easy/hard rankings."""

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .validation import check_probability_vector


def success_rate(outcomes) -> float:
    """Fraction of outcomes flagged successful."""
    outcomes = list(outcomes)
    if not outcomes:
        raise InputError("success_rate of an empty outcome list")
    return sum(1 for o in outcomes if o.success) / len(outcomes)


# ---------------------------------------------------------------------------
# degree of change


def degree_of_change(x, x_adv, p, l0_denominator: str = "pixels") -> float:
    """Normalized perturbation size between a benign image and its crafted twin.

    p=0 counts changed pixels; by convention the denominator is the total
    pixel count (``l0_denominator="nonzero"`` switches to the benign image's
    nonzero-pixel count). p=2 and p=inf divide the perturbation norm by the
    same norm of the benign image.
    """
    x = np.asarray(x, dtype=np.float64)
    x_adv = np.asarray(x_adv, dtype=np.float64)
    if x.shape != x_adv.shape:
        raise InputError(f"shape mismatch {x.shape} vs {x_adv.shape}")
    delta = x_adv - x
    if p == 0:
        changed = int(np.count_nonzero(delta))
        denom = int(np.count_nonzero(x)) if l0_denominator == "nonzero" else x.size
        if denom == 0:
            raise InputError("L0 degree of change undefined: empty denominator")
        return changed / denom
    if p == 2:
        norm = float(np.linalg.norm(x))
        if norm == 0.0:
            raise InputError("L2 degree of change undefined for an all-zero image")
        return float(np.linalg.norm(delta)) / norm
    if p in (np.inf, float("inf")):
        norm = float(np.abs(x).max()) if x.size else 0.0
        if norm == 0.0:
            raise InputError("Linf degree of change undefined for an all-zero image")
        return float(np.abs(delta).max()) / norm
    raise InputError(f"unsupported norm order {p!r}; use 0, 2 or inf")


def average_doc(outcomes, p, include_failures: bool = False) -> float:
    """Mean degree of change over outcomes (successful ones by default).

    Outcomes whose value is undefined (NaN) are excluded with a warning.
    """
    field = {0: "doc_l0", 2: "doc_l2", np.inf: "doc_linf"}.get(p)
    if field is None:
        raise InputError(f"unsupported norm order {p!r}; use 0, 2 or inf")
    pool = [o for o in outcomes if include_failures or o.success]
    if not pool:
        raise InputError("no outcomes to average over")
    values = np.array([getattr(o, field) for o in pool], dtype=np.float64)
    bad = int(np.isnan(values).sum())
    if bad:
        warnings.warn(f"excluded {bad} outcomes with undefined degree of change")
    if bad == values.size:
        raise InputError("all degree-of-change values are undefined")
    return float(np.nanmean(values))


# ---------------------------------------------------------------------------
# entropy


def entropy(prediction) -> float:
    """Shannon entropy (bits) of a prediction vector; 0*log2(0) contributes 0."""
    p = check_probability_vector(prediction)
    nz = p[p > 0.0]
    return float(-(nz * np.log2(nz)).sum())


def average_entropy(predictions) -> float:
    predictions = list(predictions)
    if not predictions:
        raise InputError("average_entropy of an empty list")
    return sum(entropy(p) for p in predictions) / len(predictions)


# ---------------------------------------------------------------------------
# source/destination matrix and rankings


@dataclass
class SourceDestMatrix:
    """Row i: how class-i inputs redistributed after the attack.

    Off-diagonal cell (i, j) is the fraction of class-i inputs whose crafted
    image was predicted as class j; the diagonal holds the fraction that kept
    their original prediction (failed untargeted attacks). Rows with no
    inputs are absent (NaN) rather than zero-filled.
    """

    fractions: np.ndarray  # (m, m), rows sum to 1 where present
    counts: np.ndarray     # (m,) inputs per source class

    @property
    def num_classes(self) -> int:
        return self.fractions.shape[0]

    def row_present(self, i: int) -> bool:
        return self.counts[i] > 0

    def per_class_sr(self) -> np.ndarray:
        """SR per source class: 1 - diagonal; NaN for absent rows."""
        return 1.0 - np.diagonal(self.fractions)

    def overall_sr(self) -> float:
        total = int(self.counts.sum())
        if total == 0:
            raise InputError("matrix has no populated rows")
        present = self.counts > 0
        hits = (self.per_class_sr()[present] * self.counts[present]).sum()
        return float(hits / total)


def source_dest_matrix(outcomes, num_classes: int) -> SourceDestMatrix:
    """Tally destination classes per source class and normalize each row."""
    counts = np.zeros(num_classes, dtype=np.int64)
    cells = np.zeros((num_classes, num_classes), dtype=np.int64)
    for o in outcomes:
        s, d = o.source_class, o.destination_class
        if not (0 <= s < num_classes and 0 <= d < num_classes):
            raise InputError(f"class pair ({s}, {d}) outside [0, {num_classes})")
        counts[s] += 1
        cells[s, d] += 1
    fractions = np.full((num_classes, num_classes), np.nan)
    present = counts > 0
    fractions[present] = cells[present] / counts[present, np.newaxis]
    return SourceDestMatrix(fractions, counts)


@dataclass
class EasyHardRanking:
    """Per source class: destinations sorted by captured fraction.

    ``easy`` descends (largest fraction first), ``hard`` ascends; ties break
    toward the lower class index. ``source_sr`` and ``dest_mass`` give the
    row SRs and off-diagonal column sums used for vulnerability/hardness
    comparisons.
    """

    easy: dict       # source -> [(dest, fraction), ...] top-k
    hard: dict       # source -> [(dest, fraction), ...] bottom-k
    source_sr: np.ndarray
    dest_mass: np.ndarray


def top_k_easy_hard(matrix: SourceDestMatrix, k: int) -> EasyHardRanking:
    m = matrix.num_classes
    if not 0 < k < m:
        raise InputError(f"k must be in [1, {m - 1}], got {k}")
    easy, hard = {}, {}
    for i in range(m):
        if not matrix.row_present(i):
            continue
        dests = [j for j in range(m) if j != i]
        fracs = matrix.fractions[i]
        descending = sorted(dests, key=lambda j: (-fracs[j], j))
        ascending = sorted(dests, key=lambda j: (fracs[j], j))
        easy[i] = [(j, float(fracs[j])) for j in descending[:k]]
        hard[i] = [(j, float(fracs[j])) for j in ascending[:k]]
    off_diag = np.where(np.isnan(matrix.fractions), 0.0, matrix.fractions).copy()
    np.fill_diagonal(off_diag, 0.0)
    return EasyHardRanking(easy, hard,
                           source_sr=matrix.per_class_sr(),
                           dest_mass=off_diag.sum(axis=0))
