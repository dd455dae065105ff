"""Detection metrics, line-level IoU and report aggregation."""

from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence

from .errors import DataError


@dataclass
class ConfusionCounts:
    TP: int = 0
    FP: int = 0
    TN: int = 0
    FN: int = 0

    def add(self, actual: bool, predicted: bool):
        if actual and predicted:
            self.TP += 1
        elif actual:
            self.FN += 1
        elif predicted:
            self.FP += 1
        else:
            self.TN += 1

    @property
    def total(self):
        return self.TP + self.FP + self.TN + self.FN


def _ratio(num, den):
    return None if den == 0 else num / den


def f1_from(precision, fnr):
    """F1 from precision and false-negative rate; None if undefined."""
    if precision is None or fnr is None:
        return None
    recall = 1.0 - fnr
    if precision + recall == 0:
        return None
    return 2.0 * precision * recall / (precision + recall)


def detection_metrics(counts: ConfusionCounts) -> Dict[str, Optional[float]]:
    """FPR, FNR, accuracy, precision and F1; None marks a zero denominator."""
    c = counts
    fpr = _ratio(c.FP, c.FP + c.TN)
    fnr = _ratio(c.FN, c.TP + c.FN)
    acc = _ratio(c.TP + c.TN, c.total)
    prec = _ratio(c.TP, c.TP + c.FP)
    return {"FPR": fpr, "FNR": fnr, "A": acc, "P": prec, "F1": f1_from(prec, fnr)}


def iou(U: Iterable, V: Iterable) -> float:
    U, V = set(U), set(V)
    union = U | V
    if not union:
        return 1.0
    return len(U & V) / len(union)


@dataclass
class SampleResult:
    sample_id: str
    actual: bool
    predicted: bool
    truth_lines: frozenset
    detected_lines: frozenset
    program: str = ""

    @property
    def iou(self):
        return iou(self.truth_lines, self.detected_lines)


def aggregate_report(results: Sequence[SampleResult], program_level=False) -> dict:
    """Counts, metrics, mean IoU and mean |V| over samples flagged vulnerable."""
    ids = [r.sample_id for r in results]
    if len(set(ids)) != len(ids):
        raise DataError("duplicate sample ids in report")
    counts = ConfusionCounts()
    if program_level:
        progs: Dict[str, List[bool]] = {}
        for r in results:
            a, p = progs.get(r.program, [False, False])
            progs[r.program] = [a or r.actual, p or r.predicted]
        for prog in sorted(progs):
            counts.add(*progs[prog])
    else:
        for r in results:
            counts.add(r.actual, r.predicted)
    detected = [r for r in results if r.predicted]
    mean_iou = sum(r.iou for r in detected) / len(detected) if detected else None
    mean_v = sum(len(r.detected_lines) for r in detected) / len(detected) if detected else None
    out = {"TP": counts.TP, "FP": counts.FP, "TN": counts.TN, "FN": counts.FN, "samples": len(results)}
    out.update(detection_metrics(counts))
    out["IoU"] = mean_iou
    out["mean_V"] = mean_v
    return out


def match_results(entries, truth: Dict[str, dict]) -> List[SampleResult]:
    """Join detection entries with per-sample truth {id: {"label":..., "lines":..., "program":...}}."""
    out = []
    for e in entries:
        if e.sample_id not in truth:
            raise DataError(f"no truth for sample {e.sample_id}")
        t = truth[e.sample_id]
        out.append(SampleResult(
            e.sample_id, bool(t["label"]), e.vulnerable,
            frozenset(t["lines"]), frozenset(e.locations), t.get("program", ""),
        ))
    if len(out) != len(truth):
        missing = sorted(set(truth) - {e.sample_id for e in entries})
        raise DataError(f"report lacks {len(missing)} sample(s), e.g. {missing[0]}")
    return out


def fmt_metric(x):
    if x is None:
        return "undefined"
    if isinstance(x, float):
        return f"{x:.6f}"
    return str(x)


def format_summary(summary: dict, results: Sequence[SampleResult]) -> str:
    lines = ["# summary"]
    for key in ("samples", "TP", "FP", "TN", "FN", "FPR", "FNR", "A", "P", "F1", "IoU", "mean_V"):
        lines.append(f"{key}\t{fmt_metric(summary[key])}")
    lines.append("# samples")
    lines.append("id\tlabel\tprediction\tIoU\tdetected")
    for r in results:
        det = ",".join(sorted(r.detected_lines)) or "-"
        lines.append(f"{r.sample_id}\t{int(r.actual)}\t{int(r.predicted)}\t{fmt_metric(r.iou)}\t{det}")
    return "\n".join(lines) + "\n"
