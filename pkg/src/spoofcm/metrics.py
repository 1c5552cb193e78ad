"""Countermeasure scoring: EER, normalized minimum t-DCF, DET points, histograms.

Score convention: higher means more bonafide-like.  A threshold tau accepts
(labels bonafide) every trial with score >= tau, so FAR(tau) = P(spoof >= tau)
and FRR(tau) = P(bonafide < tau).  The sweep grid is every distinct score plus
a +inf endpoint: tau = min(score) already realizes (FAR=1, FRR=0), and +inf
realizes (FAR=0, FRR=1), so nothing else is needed for exactness on finite
score sets.
"""

from dataclasses import dataclass

import numpy as np

KEYS = ("bonafide", "spoof")


@dataclass
class ScoreSet:
    """Scored trials with ground-truth keys."""

    utt_ids: list
    scores: np.ndarray
    keys: np.ndarray  # array of "bonafide"/"spoof" strings

    @classmethod
    def from_records(cls, records) -> "ScoreSet":
        utts, scores, keys = [], [], []
        for utt, score, key in records:
            utts.append(str(utt))
            scores.append(float(score))
            keys.append(key)
        s = cls(utt_ids=utts, scores=np.asarray(scores, dtype=np.float64),
                keys=np.asarray(keys, dtype=object))
        s.validate()
        return s

    def validate(self) -> None:
        if len(self.utt_ids) != self.scores.shape[0] != self.keys.shape[0]:
            raise ValueError("ragged score set")
        if self.scores.size and not np.all(np.isfinite(self.scores)):
            raise ValueError("scores must be finite")
        bad = set(self.keys.tolist()) - set(KEYS)
        if bad:
            raise ValueError(f"unknown keys: {sorted(bad)}")

    def bonafide_scores(self) -> np.ndarray:
        return self.scores[self.keys == "bonafide"]

    def spoof_scores(self) -> np.ndarray:
        return self.scores[self.keys == "spoof"]

    def records(self):
        return list(zip(self.utt_ids, self.scores.tolist(), self.keys.tolist()))


def _two_class(s: ScoreSet):
    bona, spoof = s.bonafide_scores(), s.spoof_scores()
    if bona.size == 0 or spoof.size == 0:
        raise ValueError("need at least one bonafide and one spoof trial")
    return bona, spoof


def _sweep(bona: np.ndarray, spoof: np.ndarray):
    """Threshold grid with FAR/FRR at each point, vectorized by sorting."""
    grid = np.unique(np.concatenate([bona, spoof]))
    grid = np.append(grid, np.inf)
    spoof_sorted = np.sort(spoof)
    bona_sorted = np.sort(bona)
    # searchsorted-left = count of elements < tau
    far = (spoof.size - np.searchsorted(spoof_sorted, grid, side="left")) / spoof.size
    frr = np.searchsorted(bona_sorted, grid, side="left") / bona.size
    return grid, far, frr


def compute_eer(s: ScoreSet):
    """EER with linear interpolation between adjacent sweep points.

    Returns (eer, threshold).  FAR - FRR starts at +1 (tau = min score) and
    is non-increasing, so the first sign change brackets the crossing.  If
    the crossing falls in the final open segment (only possible with heavy
    score ties), the last finite sweep point is reported as the threshold.
    """
    bona, spoof = _two_class(s)
    grid, far, frr = _sweep(bona, spoof)
    diff = far - frr
    idx = int(np.nonzero(diff <= 0)[0][0])
    if diff[idx] == 0.0:
        return float(0.5 * (far[idx] + frr[idx])), float(grid[idx])
    t = diff[idx - 1] / (diff[idx - 1] - diff[idx])
    eer = far[idx - 1] + t * (far[idx] - far[idx - 1])
    if np.isinf(grid[idx]):
        thr = grid[idx - 1]
    else:
        thr = grid[idx - 1] + t * (grid[idx] - grid[idx - 1])
    return float(eer), float(thr)


@dataclass
class TdcfCostModel:
    """Constrained-ASV tandem cost model.

    Every constant is configuration; the defaults mirror the public
    ASVspoof 2019 evaluation convention (priors 0.9405/0.0095/0.05, ASV
    operating rates fixed at 0.05).
    """

    pi_tar: float = 0.9405
    pi_non: float = 0.0095
    pi_spoof: float = 0.05
    c_miss_asv: float = 1.0
    c_fa_asv: float = 10.0
    c_miss_cm: float = 1.0
    c_fa_cm: float = 10.0
    p_miss_asv: float = 0.05
    p_fa_asv: float = 0.05
    p_miss_spoof_asv: float = 0.05

    def validate(self) -> None:
        priors = (self.pi_tar, self.pi_non, self.pi_spoof)
        if min(priors) < 0 or abs(sum(priors) - 1.0) > 1e-9:
            raise ValueError("priors must be nonnegative and sum to 1")
        if min(self.c_miss_asv, self.c_fa_asv, self.c_miss_cm, self.c_fa_cm) <= 0:
            raise ValueError("costs must be positive")
        for r in (self.p_miss_asv, self.p_fa_asv, self.p_miss_spoof_asv):
            if not 0.0 <= r <= 1.0:
                raise ValueError("ASV operating rates must lie in [0,1]")


def tdcf_constants(cm: TdcfCostModel):
    """The two tandem cost coefficients (miss side, false-accept side)."""
    cm.validate()
    c1 = cm.pi_tar * (cm.c_miss_cm - cm.c_miss_asv * cm.p_miss_asv) \
        - cm.pi_non * cm.c_fa_asv * cm.p_fa_asv
    c2 = cm.c_fa_cm * cm.pi_spoof * (1.0 - cm.p_miss_spoof_asv)
    if c1 <= 0 or c2 <= 0:
        raise ValueError(f"ill-posed tandem: C1={c1:.6g}, C2={c2:.6g}")
    return float(c1), float(c2)


def compute_min_tdcf(s: ScoreSet, cm: TdcfCostModel):
    """Minimum normalized tandem cost over the EER sweep grid.

    Returns (min_norm_tdcf, threshold); ties go to the lowest threshold.
    """
    c1, c2 = tdcf_constants(cm)
    bona, spoof = _two_class(s)
    grid, far, frr = _sweep(bona, spoof)
    norm = (c1 * frr + c2 * far) / min(c1, c2)
    idx = int(np.argmin(norm))
    return float(norm[idx]), float(grid[idx])


def det_points(s: ScoreSet):
    """(FAR, FRR, tau) triples over the sweep grid; FAR falls, FRR rises."""
    bona, spoof = _two_class(s)
    grid, far, frr = _sweep(bona, spoof)
    return [(float(a), float(r), float(t)) for a, r, t in zip(far, frr, grid)]


def score_histogram(s: ScoreSet, bins: int):
    """Per-class counts over equal-width bins spanning all scores.

    Returns dict with "edges" (bins+1 floats), "bonafide", "spoof" counts.
    """
    if bins < 1:
        raise ValueError("bins must be >= 1")
    s.validate()
    if s.scores.size == 0:
        raise ValueError("empty score set")
    lo, hi = float(s.scores.min()), float(s.scores.max())
    # np.histogram widens a zero-width range by +-0.5 on its own
    counts_b, edges = np.histogram(s.bonafide_scores(), bins=bins, range=(lo, hi))
    counts_s, _ = np.histogram(s.spoof_scores(), bins=bins, range=(lo, hi))
    return {"edges": edges, "bonafide": counts_b, "spoof": counts_s}


# -- score file IO -------------------------------------------------------------

def write_scores(path, utt_ids, scores) -> None:
    """One "UTT_ID SCORE" line per trial, 12 significant digits."""
    with open(path, "w") as f:
        for utt, score in zip(utt_ids, scores):
            f.write(f"{utt} {float(score):.12g}\n")


def read_scores(path):
    """Returns (utt_ids, scores) from a score file."""
    utts, scores = [], []
    with open(path) as f:
        for ln, line in enumerate(f, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 2:
                raise ValueError(f"{path}:{ln}: expected 'UTT_ID SCORE'")
            utts.append(parts[0])
            try:
                scores.append(float(parts[1]))
            except ValueError as e:
                raise ValueError(f"{path}:{ln}: bad score {parts[1]!r}") from e
    return utts, np.asarray(scores, dtype=np.float64)


def join_keys(utt_ids, scores, entries) -> ScoreSet:
    """Attach protocol keys to scored trials; every utt must be covered."""
    key_by_utt = {e.utt: e.key for e in entries}
    records = []
    for utt, score in zip(utt_ids, scores):
        if utt not in key_by_utt:
            raise KeyError(f"scored utterance {utt!r} missing from protocol")
        records.append((utt, score, key_by_utt[utt]))
    return ScoreSet.from_records(records)
