"""Per-line scoring of encoded samples with a trained model."""

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .model import Model, kmax_average


@dataclass
class DetectionEntry:
    sample_id: str
    score: float
    line_scores: List[Optional[float]]
    detected: List[int]  # 1-based statement indices
    locations: List[str] = field(default_factory=list)
    threshold: float = 0.5

    @property
    def vulnerable(self):
        return bool(self.detected)


def line_scores(A, spans, kappa):
    """Mean of the κ largest activations inside each line span (None for empty spans)."""
    out = []
    for s, e in spans:
        if e <= s:
            out.append(None)
            continue
        seg = np.asarray(A[s:e], dtype=np.float64)
        out.append(float(kmax_average(seg, min(kappa, len(seg)))))
    return out


def detect_from_activations(A, sample, threshold=0.5, kappa=1):
    n = max(sample.n_tokens, 1)
    score = float(kmax_average(A[:n], min(kappa, n)))
    scores = line_scores(A, sample.line_spans, kappa)
    detected = [i + 1 for i, sc in enumerate(scores) if sc is not None and sc > threshold]
    locs = []
    for i in detected:
        loc = sample.lines[i - 1] if i - 1 < len(sample.lines) else None
        if loc and loc != "no-debug-info" and loc not in locs:
            locs.append(loc)
    return DetectionEntry(sample.sample_id, score, scores, detected, locs, threshold)


def detect(model: Model, sample, threshold=0.5, kappa=None) -> DetectionEntry:
    kappa = model.cfg.kappa if kappa is None else kappa
    A = model.activations(sample.matrix[None])[0]
    return detect_from_activations(A, sample, threshold, kappa)


def detect_all(model: Model, samples, threshold=0.5, kappa=None, batch_size=64):
    kappa = model.cfg.kappa if kappa is None else kappa
    out = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        A = model.activations(np.stack([s.matrix for s in chunk]))
        for a, s in zip(A, chunk):
            out.append(detect_from_activations(a, s, threshold, kappa))
    return out
