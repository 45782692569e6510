"""Outcome persistence and report emission.

`OutcomeRecord` is the flat, serializable projection of an attack outcome
that every aggregate is computed from; reports regenerated from the record
stream are therefore byte-identical to the ones emitted right after the
campaign. Wall-clock timings are deliberately kept out of report.json and
outcomes.bin so identical configurations reproduce identical bytes.

outcomes.bin layout (little-endian):

    "ADVO" | u32 version=1 | u32 classes | u32 height | u32 width | u64 count
    per record:
        u32 input_index | u8 status | i16 source | i16 dest | i16 target
        u8 success | u8 stop_code | u32 iterations
        f64 doc_l0 | f64 doc_l2 | f64 doc_linf
        f64[classes] benign prediction
        if status == 0 (attacked):
            f64[classes] final prediction | f64[height*width] adversarial pixels
"""

import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, InputError
from .metrics import SourceDestMatrix, source_dest_matrix, top_k_easy_hard, entropy

MAGIC = b"ADVO"
VERSION = 1

STATUS_ATTACKED = 0
SKIP_MISCLASSIFIED = 1
SKIP_TARGET_EQUALS_SOURCE = 2
SKIP_NAMES = {SKIP_MISCLASSIFIED: "benign_misclassified",
              SKIP_TARGET_EQUALS_SOURCE: "target_equals_source"}

STOP_CODES = ("success", "budget_exhausted", "empty_domain",
              "zero_saliency", "max_iterations")
_STOP_TO_CODE = {name: i for i, name in enumerate(STOP_CODES)}
NO_STOP = 255

_PREFIX = struct.Struct("<IBhhhBBIddd")


@dataclass
class OutcomeRecord:
    input_index: int
    status: int
    source_class: int
    destination_class: int      # -1 when skipped
    target_class: int           # -1 when untargeted
    success: bool
    stop_code: int              # index into STOP_CODES, NO_STOP when skipped
    iterations: int
    doc_l0: float
    doc_l2: float
    doc_linf: float
    benign_prediction: np.ndarray
    final_prediction: np.ndarray | None = None
    adversarial: np.ndarray | None = None  # flattened pixels

    @property
    def attacked(self) -> bool:
        return self.status == STATUS_ATTACKED

    @property
    def stop_reason(self) -> str:
        return STOP_CODES[self.stop_code] if self.stop_code != NO_STOP else "skipped"


def record_from_outcome(input_index: int, outcome, benign_prediction) -> OutcomeRecord:
    return OutcomeRecord(
        input_index=input_index,
        status=STATUS_ATTACKED,
        source_class=outcome.source_class,
        destination_class=outcome.destination_class,
        target_class=-1 if outcome.target_class is None else outcome.target_class,
        success=outcome.success,
        stop_code=_STOP_TO_CODE[outcome.stop_reason],
        iterations=outcome.iterations_used,
        doc_l0=outcome.doc_l0, doc_l2=outcome.doc_l2, doc_linf=outcome.doc_linf,
        benign_prediction=np.asarray(benign_prediction, dtype=np.float64),
        final_prediction=outcome.final_prediction.prediction,
        adversarial=np.asarray(outcome.adversarial, dtype=np.float64).ravel())


def skip_record(input_index: int, status: int, source_class: int,
                target_class: int, benign_prediction) -> OutcomeRecord:
    return OutcomeRecord(
        input_index=input_index, status=status, source_class=source_class,
        destination_class=-1, target_class=target_class, success=False,
        stop_code=NO_STOP, iterations=0,
        doc_l0=float("nan"), doc_l2=float("nan"), doc_linf=float("nan"),
        benign_prediction=np.asarray(benign_prediction, dtype=np.float64))


# ---------------------------------------------------------------------------
# binary stream


def write_outcomes(path, records, num_classes: int, image_shape) -> None:
    h, w = image_shape
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIIIQ", VERSION, num_classes, h, w, len(records)))
        for r in records:
            fh.write(_PREFIX.pack(
                r.input_index, r.status, r.source_class, r.destination_class,
                r.target_class, int(r.success), r.stop_code, r.iterations,
                r.doc_l0, r.doc_l2, r.doc_linf))
            fh.write(np.ascontiguousarray(r.benign_prediction, dtype="<f8").tobytes())
            if r.status == STATUS_ATTACKED:
                fh.write(np.ascontiguousarray(r.final_prediction, dtype="<f8").tobytes())
                fh.write(np.ascontiguousarray(r.adversarial, dtype="<f8").tobytes())


def read_outcomes(path):
    """Returns (records, num_classes, image_shape)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise FormatError(f"bad outcome-stream magic {blob[:4]!r}", offset=0)
    if len(blob) < 28:
        raise FormatError("truncated outcome-stream header", offset=len(blob))
    version, m, h, w, count = struct.unpack_from("<IIIIQ", blob, 4)
    if version != VERSION:
        raise FormatError(f"unsupported outcome-stream version {version}", offset=4)
    offset = 28
    records = []
    for _ in range(count):
        if offset + _PREFIX.size > len(blob):
            raise FormatError("truncated outcome record", offset=offset)
        (idx, status, src, dst, tgt, success, stop, iters,
         d0, d2, dinf) = _PREFIX.unpack_from(blob, offset)
        offset += _PREFIX.size

        def take(n):
            nonlocal offset
            if offset + 8 * n > len(blob):
                raise FormatError("truncated outcome payload", offset=offset)
            arr = np.frombuffer(blob, dtype="<f8", count=n, offset=offset).copy()
            offset += 8 * n
            return arr

        benign = take(m)
        final = adv = None
        if status == STATUS_ATTACKED:
            final = take(m)
            adv = take(h * w)
        records.append(OutcomeRecord(idx, status, src, dst, tgt, bool(success),
                                     stop, iters, d0, d2, dinf, benign, final, adv))
    if offset != len(blob):
        raise FormatError(f"{len(blob) - offset} trailing bytes", offset=offset)
    return records, m, (h, w)


# ---------------------------------------------------------------------------
# aggregation


def _mean_or_none(values):
    values = [v for v in values if not np.isnan(v)]
    return float(np.mean(values)) if values else None


def build_report(records, num_classes: int, config: dict | None = None) -> dict:
    """Aggregate a record list into the deterministic report dictionary."""
    attacked = [r for r in records if r.attacked]
    successes = [r for r in attacked if r.success]
    failures = [r for r in attacked if not r.success]
    skipped = {}
    for r in records:
        if not r.attacked:
            name = SKIP_NAMES.get(r.status, f"status_{r.status}")
            skipped[name] = skipped.get(name, 0) + 1

    report = {
        "schema": "advkit-report-v1",
        "config": config or {},
        "counts": {
            "records": len(records),
            "attacked": len(attacked),
            "successes": len(successes),
            "failures": len(failures),
            "skipped": skipped,
        },
        "stop_reasons": {},
        "overall_sr": None,
        "per_class_sr": None,
        "row_counts": None,
        "matrix": None,
        "avg_doc_success": None,
        "avg_entropy": {
            "benign": _mean_or_none([entropy(r.benign_prediction) for r in attacked]),
            "successful": _mean_or_none([entropy(r.final_prediction) for r in successes]),
            "unsuccessful": _mean_or_none([entropy(r.final_prediction) for r in failures]),
        },
        "easy_top": None,
        "hard_top": None,
        "targeted_sr": None,
        "avg_iterations_success": _mean_or_none(
            [float(r.iterations) for r in successes]),
    }
    for r in attacked:
        name = r.stop_reason
        report["stop_reasons"][name] = report["stop_reasons"].get(name, 0) + 1

    if attacked:
        matrix = source_dest_matrix(attacked, num_classes)
        report["overall_sr"] = float(np.mean([r.success for r in attacked]))
        report["per_class_sr"] = [None if not matrix.row_present(i) else float(sr)
                                  for i, sr in enumerate(matrix.per_class_sr())]
        report["row_counts"] = [int(c) for c in matrix.counts]
        report["matrix"] = [[None if np.isnan(v) else float(v) for v in row]
                            for row in matrix.fractions]
        k = min(3, num_classes - 1)
        ranking = top_k_easy_hard(matrix, k)
        report["easy_top"] = {str(s): [[d, f] for d, f in pairs]
                              for s, pairs in ranking.easy.items()}
        report["hard_top"] = {str(s): [[d, f] for d, f in pairs]
                              for s, pairs in ranking.hard.items()}

    if successes:
        report["avg_doc_success"] = {
            "l0": _mean_or_none([r.doc_l0 for r in successes]),
            "l2": _mean_or_none([r.doc_l2 for r in successes]),
            "linf": _mean_or_none([r.doc_linf for r in successes]),
        }

    targeted = [r for r in attacked if r.target_class >= 0]
    if targeted:
        cells = {}
        for r in targeted:
            key = (r.source_class, r.target_class)
            hit, n = cells.get(key, (0, 0))
            cells[key] = (hit + int(r.success), n + 1)
        report["targeted_sr"] = {
            f"{s}->{t}": {"sr": hit / n, "count": n}
            for (s, t), (hit, n) in sorted(cells.items())}
    return report


def matrix_from_records(records, num_classes: int) -> SourceDestMatrix:
    return source_dest_matrix([r for r in records if r.attacked], num_classes)


# ---------------------------------------------------------------------------
# emission


def report_json_bytes(report: dict) -> bytes:
    return (json.dumps(report, sort_keys=True, indent=2, allow_nan=False)
            + "\n").encode("utf-8")


def matrix_csv_bytes(matrix: SourceDestMatrix) -> bytes:
    lines = ["source,dest,fraction,count"]
    for i in range(matrix.num_classes):
        if not matrix.row_present(i):
            continue
        for j in range(matrix.num_classes):
            lines.append(f"{i},{j},{matrix.fractions[i, j]:.17g},{int(matrix.counts[i])}")
    return ("\n".join(lines) + "\n").encode("ascii")


def parse_matrix_csv(data: bytes, num_classes: int) -> SourceDestMatrix:
    lines = data.decode("ascii").strip().split("\n")
    if lines[0] != "source,dest,fraction,count":
        raise InputError(f"unexpected CSV header {lines[0]!r}")
    fractions = np.full((num_classes, num_classes), np.nan)
    counts = np.zeros(num_classes, dtype=np.int64)
    for line in lines[1:]:
        s, d, frac, count = line.split(",")
        fractions[int(s), int(d)] = float(frac)
        counts[int(s)] = int(count)
    return SourceDestMatrix(fractions, counts)
