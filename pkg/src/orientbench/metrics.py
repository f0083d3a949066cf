"""Detection and prediction evaluation on oriented boxes.

Greedy score-descending matching at a rotated-IoU threshold, a pooled
precision/recall sweep over all frames, average precision and average
orientation similarity, operating-point error metrics (full-/half-range
orientation error at 0 s and trajectory l2 at 3 s, sliced by moving and
static actors), and flip-probability binning.

Record-level angles are degrees, matching the file formats; box geometry
stays in radians inside :class:`~orientbench.geom.OrientedBox`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .geom import OrientedBox, foe_deg, hoe_deg, rotated_iou, wrap_full_deg

MOVING_SPEED_MPS = 0.5  # actors above this ground-truth speed count as moving
SPEED_WINDOW_S = 0.5    # speed is displacement over the first half second


def actor_speed(track_xy: np.ndarray, hz: float = 10.0) -> float:
    """Speed in m/s from a position track whose first row is the 0 s pose.

    Displacement between the 0 s and 0.5 s waypoints divided by the
    elapsed time; tracks shorter than half a second use their last point.
    """
    track = np.asarray(track_xy, dtype=float)
    if track.ndim != 2 or track.shape[1] != 2:
        raise ValueError("track must be a (k, 2) array of positions")
    idx = min(int(round(SPEED_WINDOW_S * hz)), len(track) - 1)
    if idx <= 0:
        return 0.0
    dt = idx / hz
    return float(np.linalg.norm(track[idx] - track[0]) / dt)


@dataclass(frozen=True)
class GtActor:
    """Ground-truth actor: box at 0 s, future yaws/waypoints, derived motion."""

    frame: int
    actor_id: str
    box: OrientedBox
    yaws_deg: np.ndarray
    waypoints: np.ndarray
    speed: float
    moving: bool

    @classmethod
    def build(cls, frame, actor_id, box, yaws_deg, waypoints, hz: float = 10.0):
        yaws = np.asarray(yaws_deg, dtype=float)
        wps = np.asarray(waypoints, dtype=float)
        if len(yaws) != len(wps):
            raise ValueError("yaw and waypoint sequences must have equal length")
        track = np.vstack([[box.cx, box.cy], wps])
        speed = actor_speed(track, hz)
        return cls(frame, str(actor_id), box, yaws, wps, speed, speed > MOVING_SPEED_MPS)

    @property
    def horizon(self) -> int:
        return len(self.yaws_deg)


@dataclass(frozen=True)
class DetectionRecord:
    """One detection: box at 0 s, score, future yaws/waypoints, flip prob.

    ``flip_prob`` is the post-processed probability that the reported
    orientation is 180 degrees off, in [0, 0.5]; absent for methods that
    cannot express it.
    """

    frame: int
    actor_id: str
    box: OrientedBox
    score: float
    yaws_deg: np.ndarray
    waypoints: np.ndarray
    flip_prob: Optional[float] = None

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise ValueError("detection score must be finite")
        yaws = np.asarray(self.yaws_deg, dtype=float)
        wps = np.asarray(self.waypoints, dtype=float)
        if len(yaws) != len(wps):
            raise ValueError("yaw and waypoint sequences must have equal length")
        if self.flip_prob is not None and not 0.0 <= self.flip_prob <= 0.5:
            raise ValueError("flip_prob must lie in [0, 0.5] after post-processing")
        object.__setattr__(self, "yaws_deg", yaws)
        object.__setattr__(self, "waypoints", wps)


@dataclass
class MatchSet:
    """Greedy matching outcome at one IoU/score threshold."""

    tp: list          # (detection, gt, iou) triples
    fp: list          # unmatched detections
    fn: list          # unmatched ground-truth actors
    iou_threshold: float
    score_threshold: float


def _match_frame(dets, gts, iou_threshold):
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    taken = [False] * len(gts)
    tp, fp = [], []
    for i in order:
        det = dets[i]
        best_iou, best_j = 0.0, -1
        for j, gt in enumerate(gts):
            if taken[j]:
                continue
            iou = rotated_iou(det.box, gt.box)
            if iou >= iou_threshold and iou > best_iou:
                best_iou, best_j = iou, j
        if best_j >= 0:
            taken[best_j] = True
            tp.append((det, gts[best_j], best_iou))
        else:
            fp.append(det)
    fn = [g for j, g in enumerate(gts) if not taken[j]]
    return tp, fp, fn


def _by_frame(records):
    frames = {}
    for r in records:
        frames.setdefault(r.frame, []).append(r)
    return frames


def match_detections(dets, gts, iou_threshold: float,
                     score_threshold: float = -math.inf) -> MatchSet:
    """Match detections to ground truth per frame, best score first.

    Each detection and each ground-truth actor is matched at most once;
    a detection takes the highest-IoU unmatched actor with IoU >= the
    threshold (ties at the threshold count as matches).
    """
    kept = [d for d in dets if d.score >= score_threshold]
    det_frames = _by_frame(kept)
    gt_frames = _by_frame(gts)
    out = MatchSet([], [], [], iou_threshold, score_threshold)
    for frame in sorted(set(det_frames) | set(gt_frames)):
        tp, fp, fn = _match_frame(det_frames.get(frame, []), gt_frames.get(frame, []),
                                  iou_threshold)
        out.tp.extend(tp)
        out.fp.extend(fp)
        out.fn.extend(fn)
    return out


def orientation_similarity(delta_deg) -> float:
    """Cosine similarity of an orientation difference, normalized to [0, 1]."""
    return 0.5 * (1.0 + math.cos(math.radians(delta_deg)))


@dataclass
class PrCurve:
    """Cumulative precision/recall/similarity at each distinct score cutoff."""

    recalls: np.ndarray
    precisions: np.ndarray
    similarities: np.ndarray
    scores: np.ndarray
    num_gt: int


def pr_curve(dets, gts, iou_threshold: float) -> PrCurve:
    """Sweep score cutoffs over all detection scores, pooled across frames.

    Matching is greedy in global score order; similarity at a cutoff is
    the mean over its true positives of (1 + cos(dyaw)) / 2 with dyaw the
    full-range orientation difference at 0 s.
    """
    if not gts:
        raise ValueError("cannot build a PR curve without ground truth")
    ms = match_detections(dets, gts, iou_threshold)
    rows = []
    for det, gt, _iou in ms.tp:
        sim = orientation_similarity(wrap_full_deg(gt.box.yaw_deg - det.box.yaw_deg))
        rows.append((det.score, 1, sim))
    for det in ms.fp:
        rows.append((det.score, 0, 0.0))
    rows.sort(key=lambda r: -r[0])

    n_gt = len(gts)
    recalls, precisions, sims, scores = [], [], [], []
    tp_cum = 0
    sim_cum = 0.0
    for k, (score, is_tp, sim) in enumerate(rows):
        tp_cum += is_tp
        sim_cum += sim
        if k + 1 < len(rows) and rows[k + 1][0] == score:
            continue  # merge ties: cutoffs sit at distinct scores
        recalls.append(tp_cum / n_gt)
        precisions.append(tp_cum / (k + 1))
        sims.append(sim_cum / tp_cum if tp_cum else 0.0)
        scores.append(score)
    return PrCurve(np.asarray(recalls), np.asarray(precisions), np.asarray(sims),
                   np.asarray(scores), n_gt)


def _all_point_integral(recalls, values):
    if len(recalls) == 0:
        return 0.0
    env = np.maximum.accumulate(values[::-1])[::-1]
    prev = np.concatenate([[0.0], recalls[:-1]])
    return float(np.sum((recalls - prev) * env))


def _sampled_integral(recalls, values, points):
    if len(recalls) == 0:
        return 0.0
    total = 0.0
    for i in range(1, points + 1):
        r = i / points
        mask = recalls >= r - 1e-12
        total += float(values[mask].max()) if mask.any() else 0.0
    return total / points


def average_precision(curve: PrCurve, mode: str = "all") -> float:
    """AP by all-point interpolation (default) or 40-point sampling."""
    if mode == "all":
        return _all_point_integral(curve.recalls, curve.precisions)
    if mode == "40point":
        return _sampled_integral(curve.recalls, curve.precisions, 40)
    raise ValueError(f"unknown AP mode {mode!r}")


def average_orientation_similarity(curve: PrCurve, mode: str = "all") -> float:
    """AP with precision weighted by mean TP orientation similarity.

    Bounded above by AP since the similarity weight never exceeds 1; a
    completely flipped detection contributes nothing.
    """
    weighted = curve.precisions * curve.similarities
    if mode == "all":
        return _all_point_integral(curve.recalls, weighted)
    if mode == "40point":
        return _sampled_integral(curve.recalls, weighted, 40)
    raise ValueError(f"unknown AOS mode {mode!r}")


def operating_point(dets, gts, recall_target: float = 0.8,
                    iou_threshold: float = 0.5):
    """Score threshold at which recall first reaches the target.

    Returns (threshold, reached, recall_at_threshold).  When the target
    recall is unreachable the threshold admits every detection and
    ``reached`` is False so reports can flag it.
    """
    curve = pr_curve(dets, gts, iou_threshold)
    for r, s in zip(curve.recalls, curve.scores):
        if r >= recall_target - 1e-12:
            return float(s), True, float(r)
    best = float(curve.recalls[-1]) if len(curve.recalls) else 0.0
    return -math.inf, False, best


def traj_direction_convert(theta_deg: float, path_xy: np.ndarray,
                           min_displacement_m: float = 0.5) -> float:
    """Resolve a half-range orientation using the predicted travel direction.

    Chooses between theta and theta+180 by alignment with the overall
    path direction (last point minus first).  Paths displacing less than
    the threshold give no evidence and the input is returned unchanged,
    leaving the flip ambiguity of static actors unresolved.
    """
    path = np.asarray(path_xy, dtype=float)
    if path.ndim != 2 or len(path) < 2:
        return float(theta_deg)
    d = path[-1] - path[0]
    if float(np.linalg.norm(d)) <= min_displacement_m:
        return float(theta_deg)
    heading = math.degrees(math.atan2(d[1], d[0]))
    flipped = wrap_full_deg(theta_deg + 180.0)
    if math.cos(math.radians(theta_deg - heading)) >= math.cos(math.radians(flipped - heading)):
        return float(wrap_full_deg(theta_deg))
    return float(flipped)


@dataclass
class SliceMetrics:
    count: int
    foe_deg: Optional[float]
    hoe_deg: Optional[float]
    l2_m: Optional[float]


def _l2_step_index(horizon: int, hz: float, at_s: float) -> int:
    return min(int(round(at_s * hz)), horizon) - 1


def error_metrics(matchset: MatchSet, hz: float = 10.0, l2_at_s: float = 3.0) -> dict:
    """Mean FOE/HOE at 0 s and trajectory l2 at 3 s over true positives.

    Returns slices keyed ``all`` / ``moving`` / ``static``; empty slices
    carry None means.
    """
    per_tp = []
    for det, gt, _iou in matchset.tp:
        foe = float(foe_deg(gt.box.yaw_deg, det.box.yaw_deg))
        hoe = float(hoe_deg(gt.box.yaw_deg, det.box.yaw_deg))
        idx = _l2_step_index(gt.horizon, hz, l2_at_s)
        l2 = float(np.linalg.norm(det.waypoints[idx] - gt.waypoints[idx]))
        per_tp.append((gt.moving, foe, hoe, l2))

    def reduce(rows):
        if not rows:
            return SliceMetrics(0, None, None, None)
        foes, hoes, l2s = zip(*[(f, h, l) for _m, f, h, l in rows])
        return SliceMetrics(len(rows), float(np.mean(foes)), float(np.mean(hoes)),
                            float(np.mean(l2s)))

    return {
        "all": reduce(per_tp),
        "moving": reduce([r for r in per_tp if r[0]]),
        "static": reduce([r for r in per_tp if not r[0]]),
    }


@dataclass
class FlipBin:
    lo: float
    hi: float
    count: int
    frac: float
    mean_foe_deg: Optional[float]
    mean_speed_mps: Optional[float]


def flip_prob_bins(tps, n_bins: int = 10, p_max: float = 0.5):
    """Bin matched detections by flip probability over [0, p_max].

    Each bin reports its mean FOE, mean ground-truth speed, and its share
    of the actors that carry a flip probability.  Returns None when no
    detection does.
    """
    rows = [(det, gt) for det, gt, _iou in tps if det.flip_prob is not None]
    if not rows:
        return None
    width = p_max / n_bins
    buckets = [[] for _ in range(n_bins)]
    for det, gt in rows:
        idx = min(int(det.flip_prob / width), n_bins - 1)
        buckets[idx].append((float(foe_deg(gt.box.yaw_deg, det.box.yaw_deg)), gt.speed))
    total = len(rows)
    bins = []
    for i, bucket in enumerate(buckets):
        if bucket:
            foes, speeds = zip(*bucket)
            bins.append(FlipBin(i * width, (i + 1) * width, len(bucket),
                                len(bucket) / total, float(np.mean(foes)),
                                float(np.mean(speeds))))
        else:
            bins.append(FlipBin(i * width, (i + 1) * width, 0, 0.0, None, None))
    return bins


@dataclass
class EvalReport:
    """Detection/prediction metrics in the comparison-table layout."""

    ap: float
    aos: float
    hoe_all: Optional[float]
    foe_all: Optional[float]
    foe_moving: Optional[float]
    l2_all: Optional[float]
    l2_moving: Optional[float]
    hoe_moving: Optional[float]
    foe_static: Optional[float]
    l2_static: Optional[float]
    operating_threshold: float
    operating_recall: float
    operating_recall_reached: bool
    counts: dict
    flip_bins: Optional[list]
    settings: dict

    def to_dict(self) -> dict:
        d = {
            "ap": self.ap,
            "aos": self.aos,
            "hoe_all_deg": self.hoe_all,
            "foe_all_deg": self.foe_all,
            "foe_moving_deg": self.foe_moving,
            "l2_all_m": self.l2_all,
            "l2_moving_m": self.l2_moving,
            "hoe_moving_deg": self.hoe_moving,
            "foe_static_deg": self.foe_static,
            "l2_static_m": self.l2_static,
            "operating_threshold": self.operating_threshold,
            "operating_recall": self.operating_recall,
            "operating_recall_reached": self.operating_recall_reached,
            "counts": dict(self.counts),
            "settings": dict(self.settings),
        }
        if self.flip_bins is not None:
            d["flip_bins"] = [
                {
                    "bin_lo": b.lo,
                    "bin_hi": b.hi,
                    "count": b.count,
                    "frac": b.frac,
                    "mean_foe_deg": b.mean_foe_deg,
                    "mean_speed_mps": b.mean_speed_mps,
                }
                for b in self.flip_bins
            ]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        bins = None
        if "flip_bins" in d:
            bins = [
                FlipBin(b["bin_lo"], b["bin_hi"], b["count"], b["frac"],
                        b["mean_foe_deg"], b["mean_speed_mps"])
                for b in d["flip_bins"]
            ]
        return cls(
            ap=d["ap"], aos=d["aos"], hoe_all=d["hoe_all_deg"],
            foe_all=d["foe_all_deg"], foe_moving=d["foe_moving_deg"],
            l2_all=d["l2_all_m"], l2_moving=d["l2_moving_m"],
            hoe_moving=d.get("hoe_moving_deg"), foe_static=d.get("foe_static_deg"),
            l2_static=d.get("l2_static_m"),
            operating_threshold=d["operating_threshold"],
            operating_recall=d["operating_recall"],
            operating_recall_reached=d["operating_recall_reached"],
            counts=d.get("counts", {}), flip_bins=bins, settings=d.get("settings", {}),
        )

    def row(self) -> list:
        """Values in the fixed comparison-column order."""
        return [self.aos, self.ap, self.hoe_all, self.foe_all, self.foe_moving,
                self.l2_all, self.l2_moving]


REPORT_COLUMNS = ("AOS", "AP", "HOE all", "FOE all", "FOE moving",
                  "l2@3s all", "l2@3s moving")


def _fmt_cell(v) -> str:
    return "---" if v is None else f"{v:.3f}"


def render_comparison(rows: dict) -> str:
    """Aligned text table of named reports in the fixed column order."""
    header = ["method", *REPORT_COLUMNS]
    table = [header]
    for name, report in rows.items():
        table.append([name, *[_fmt_cell(v) for v in report.row()]])
    widths = [max(len(r[i]) for r in table) for i in range(len(header))]
    lines = []
    for r in table:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip())
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def evaluate_detections(dets, gts, iou_ap: float = 0.7, iou_op: float = 0.5,
                        recall_target: float = 0.8, flip_bin_count: int = 10,
                        ap_mode: str = "all", hz: float = 10.0,
                        l2_at_s: float = 3.0) -> EvalReport:
    """Full evaluation: AP/AOS sweep plus operating-point error metrics."""
    curve = pr_curve(dets, gts, iou_ap)
    ap = average_precision(curve, ap_mode)
    aos = average_orientation_similarity(curve, ap_mode)

    threshold, reached, recall_at = operating_point(dets, gts, recall_target, iou_op)
    ms = match_detections(dets, gts, iou_op, score_threshold=threshold)
    slices = error_metrics(ms, hz=hz, l2_at_s=l2_at_s)
    bins = flip_prob_bins(ms.tp, n_bins=flip_bin_count)

    return EvalReport(
        ap=ap,
        aos=aos,
        hoe_all=slices["all"].hoe_deg,
        foe_all=slices["all"].foe_deg,
        foe_moving=slices["moving"].foe_deg,
        l2_all=slices["all"].l2_m,
        l2_moving=slices["moving"].l2_m,
        hoe_moving=slices["moving"].hoe_deg,
        foe_static=slices["static"].foe_deg,
        l2_static=slices["static"].l2_m,
        operating_threshold=threshold,
        operating_recall=recall_at,
        operating_recall_reached=reached,
        counts={
            "n_gt": len(gts),
            "n_det": len(dets),
            "n_tp": len(ms.tp),
            "n_tp_moving": slices["moving"].count,
            "n_tp_static": slices["static"].count,
        },
        flip_bins=bins,
        settings={
            "iou_ap": iou_ap,
            "iou_op": iou_op,
            "recall_target": recall_target,
            "ap_mode": ap_mode,
            "flip_bin_count": flip_bin_count,
            "l2_at_s": l2_at_s,
            "hz": hz,
        },
    )
