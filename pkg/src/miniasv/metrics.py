"""Verification-trial scoring: EER and minimum normalized detection cost.

Conventions pinned here (they matter at small trial counts):

* A trial is accepted when its score is >= the threshold.
* Thresholds sweep the sorted unique scores. EER is reported as the
  midpoint (FAR + FRR) / 2 at the sweep point minimizing |FAR - FRR|,
  ties resolved toward the lower threshold. No interpolation.
* minDCF additionally considers the reject-all operating point and is
  normalized by the cost of the best trivial system
  min(c_miss * p_target, c_fa * (1 - p_target)), so it never exceeds 1.

Both metrics depend on scores only through their ranks, so any strictly
increasing transform of the scores leaves them unchanged.
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError, NumericError
from .tensor import Tensor, as_tensor


@dataclass
class TrialList:
    """Labeled verification trials: parallel label/enroll/test columns."""

    labels: np.ndarray  # bool, True = target (same speaker)
    enroll: list[str]
    test: list[str]

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=bool)
        if not (len(self.labels) == len(self.enroll) == len(self.test)):
            raise InputError("trial columns have mismatched lengths")

    def __len__(self) -> int:
        return len(self.labels)


@dataclass
class EvalReport:
    eer: float
    eer_threshold: float
    min_dcf: dict[float, float] = field(default_factory=dict)
    num_target: int = 0
    num_nontarget: int = 0

    def to_dict(self) -> dict:
        return {
            "eer": self.eer,
            "eer_threshold": self.eer_threshold,
            "min_dcf": {str(p): v for p, v in self.min_dcf.items()},
            "num_target": self.num_target,
            "num_nontarget": self.num_nontarget,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(
            eer=d["eer"],
            eer_threshold=d["eer_threshold"],
            min_dcf={float(p): v for p, v in d["min_dcf"].items()},
            num_target=d["num_target"],
            num_nontarget=d["num_nontarget"],
        )


def cosine_score(e1: Tensor, e2: Tensor) -> float:
    """Cosine similarity of two embedding vectors."""
    e1 = as_tensor(e1).ravel()
    e2 = as_tensor(e2).ravel()
    n1 = np.linalg.norm(e1)
    n2 = np.linalg.norm(e2)
    if n1 == 0 or n2 == 0:
        raise NumericError("cosine score of a zero vector is undefined")
    return float(e1 @ e2 / (n1 * n2))


def _split_scores(scores, labels):
    scores = as_tensor(scores).ravel()
    labels = np.asarray(labels, dtype=bool).ravel()
    if scores.shape != labels.shape:
        raise InputError("scores and labels must have equal length")
    tar = np.sort(scores[labels])
    non = np.sort(scores[~labels])
    if tar.size == 0 or non.size == 0:
        raise InputError("need at least one target and one nontarget trial")
    return scores, tar, non


def _rates_at(thresholds, tar, non):
    """FAR and FRR at each threshold under the accept-when->=-threshold rule."""
    far = (non.size - np.searchsorted(non, thresholds, side="left")) / non.size
    frr = np.searchsorted(tar, thresholds, side="left") / tar.size
    return far, frr


def compute_eer(scores, labels) -> tuple[float, float]:
    """Equal error rate and the threshold attaining it.

    Sweeps the sorted unique scores; at the point where |FAR - FRR| is
    smallest (first such point, i.e. lowest threshold) returns
    ((FAR + FRR) / 2, threshold).
    """
    _, tar, non = _split_scores(scores, labels)
    thresholds = np.unique(np.concatenate([tar, non]))
    far, frr = _rates_at(thresholds, tar, non)
    i = int(np.argmin(np.abs(far - frr)))
    return float((far[i] + frr[i]) / 2.0), float(thresholds[i])


def compute_min_dcf(scores, labels, p_target: float, c_miss: float = 1.0, c_fa: float = 1.0) -> float:
    """Minimum detection cost over the threshold sweep, normalized to [0, 1].

    The sweep covers every unique score plus the reject-all point; the raw
    cost c_miss * P_miss * p_target + c_fa * P_fa * (1 - p_target) is divided
    by the better of the accept-all / reject-all trivial systems.
    """
    if not 0.0 < p_target < 1.0:
        raise InputError(f"p_target must be in (0, 1), got {p_target}")
    _, tar, non = _split_scores(scores, labels)
    thresholds = np.unique(np.concatenate([tar, non]))
    far, frr = _rates_at(thresholds, tar, non)
    # reject-all: threshold above every score
    far = np.append(far, 0.0)
    frr = np.append(frr, 1.0)
    dcf = c_miss * frr * p_target + c_fa * far * (1.0 - p_target)
    floor = min(c_miss * p_target, c_fa * (1.0 - p_target))
    return float(dcf.min() / floor)


def evaluate_scores(scores, labels, p_targets=(0.01, 0.05)) -> EvalReport:
    """EER plus minDCF at each requested target prior."""
    eer, thr = compute_eer(scores, labels)
    labels = np.asarray(labels, dtype=bool)
    return EvalReport(
        eer=eer,
        eer_threshold=thr,
        min_dcf={p: compute_min_dcf(scores, labels, p) for p in p_targets},
        num_target=int(labels.sum()),
        num_nontarget=int((~labels).sum()),
    )


def read_trials(path) -> TrialList:
    """Parse a trial file: one `<label 0|1> <enroll-id> <test-id>` per line."""
    labels, enroll, test = [], [], []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 3 or parts[0] not in ("0", "1"):
            raise InputError(f"{path}:{lineno}: expected '<0|1> <enroll> <test>', got {line!r}")
        labels.append(parts[0] == "1")
        enroll.append(parts[1])
        test.append(parts[2])
    return TrialList(labels=np.asarray(labels, dtype=bool), enroll=enroll, test=test)


def write_trials(trials: TrialList, path) -> None:
    lines = [
        f"{int(lab)} {e} {t}"
        for lab, e, t in zip(trials.labels, trials.enroll, trials.test)
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_scores(trials: TrialList, scores, path) -> None:
    """Score file: `<enroll-id> <test-id> <score>` per line, trial order."""
    scores = as_tensor(scores).ravel()
    if scores.size != len(trials):
        raise InputError("one score per trial required")
    lines = [
        f"{e} {t} {s:.17g}" for e, t, s in zip(trials.enroll, trials.test, scores)
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_scores(path) -> tuple[list[tuple[str, str]], np.ndarray]:
    pairs, scores = [], []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 3:
            raise InputError(f"{path}:{lineno}: expected '<enroll> <test> <score>'")
        pairs.append((parts[0], parts[1]))
        scores.append(float(parts[2]))
    return pairs, np.asarray(scores, dtype=np.float64)
