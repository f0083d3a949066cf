"""Deterministic synthetic scenes of oriented vehicle actors.

Each actor gets a pose, a constant-velocity trajectory, and a feature
vector built from a radial/angular occupancy histogram around the actor:
box sample points from a short pose history (so motion leaves a smear
whose direction encodes travel), with the front half of the box weighted
by (1 + front_signal) and the rear by (1 - front_signal).  front_signal
therefore controls how distinguishable front and back are, and Gaussian
bin noise controls how reliable the cue is.  Reversing actors drive
against their heading, which makes the motion smear point the wrong way.

Also provides detection-perturbation fixtures for exercising the metric
stack without a trained model.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .geom import OrientedBox, wrap_full_deg
from .metrics import DetectionRecord, GtActor

# Box sample grid (along length x along width); point-symmetric so a
# front/back-agnostic histogram is exactly flip-invariant.
_GRID_L = 12
_GRID_W = 6


@dataclass(frozen=True)
class SceneConfig:
    """Generation knobs; the seed fully determines the output."""

    actors_per_frame: int = 20
    frames: int = 100
    static_fraction: float = 0.4
    reversing_fraction: float = 0.1
    speed_range: tuple = (1.0, 12.0)
    length_range: tuple = (3.5, 5.5)
    width_range: tuple = (1.6, 2.2)
    front_signal: float = 0.6
    noise_sigma: float = 0.3
    seed: int = 0
    horizon: int = 30
    hz: float = 10.0
    extent_m: float = 50.0
    radial_bins: int = 8
    angular_bins: int = 8
    radial_max_m: float = 8.0
    sweeps: int = 3
    history_s: float = 0.5
    feature_scale: float = 24.0

    def __post_init__(self):
        if self.actors_per_frame < 1 or self.frames < 1:
            raise ValueError("need at least one actor and one frame")
        for name in ("static_fraction", "reversing_fraction", "front_signal"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.static_fraction + self.reversing_fraction > 1.0 + 1e-12:
            raise ValueError("static and reversing fractions exceed the actor pool")
        for name in ("length_range", "width_range"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ValueError(f"{name} must be positive and ordered")
        lo, hi = self.speed_range
        if not 0 <= lo <= hi:
            raise ValueError("speed_range must be non-negative and ordered")
        if self.horizon < 1:
            raise ValueError("horizon must be at least one step")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")

    @property
    def feature_dim(self) -> int:
        return self.radial_bins * self.angular_bins


@dataclass(frozen=True)
class SynthActor:
    gt: GtActor
    features: np.ndarray
    split: str


def _box_sample_points(length, width):
    # cell centers of a point-symmetric grid in the box frame
    xs = ((np.arange(_GRID_L) + 0.5) / _GRID_L - 0.5) * length
    ys = ((np.arange(_GRID_W) + 0.5) / _GRID_W - 0.5) * width
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def _soft_histogram(points, weights, cfg: SceneConfig):
    """Bilinear (radius x angle) occupancy histogram; angle wraps."""
    r = np.linalg.norm(points, axis=1)
    phi = np.arctan2(points[:, 1], points[:, 0])
    hist = np.zeros((cfg.radial_bins, cfg.angular_bins))

    rho = np.clip(r / cfg.radial_max_m * cfg.radial_bins - 0.5, 0.0,
                  cfg.radial_bins - 1.0)
    r0 = np.floor(rho).astype(int)
    r1 = np.minimum(r0 + 1, cfg.radial_bins - 1)
    fr = rho - r0

    alpha = np.mod((phi + math.pi) / (2.0 * math.pi) * cfg.angular_bins - 0.5,
                   cfg.angular_bins)
    a0 = np.floor(alpha).astype(int) % cfg.angular_bins
    a1 = (a0 + 1) % cfg.angular_bins
    fa = alpha - np.floor(alpha)

    np.add.at(hist, (r0, a0), weights * (1 - fr) * (1 - fa))
    np.add.at(hist, (r0, a1), weights * (1 - fr) * fa)
    np.add.at(hist, (r1, a0), weights * fr * (1 - fa))
    np.add.at(hist, (r1, a1), weights * fr * fa)
    return hist.ravel()


def actor_features(box: OrientedBox, velocity_xy, cfg: SceneConfig,
                   rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Feature vector for one actor; pass a generator to add bin noise."""
    local = _box_sample_points(box.length, box.width)
    weights = np.where(local[:, 0] > 0.0, 1.0 + cfg.front_signal,
                       1.0 - cfg.front_signal)
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    rot = np.array([[c, -s], [s, c]])
    world = local @ rot.T

    v = np.asarray(velocity_xy, dtype=float)
    times = np.linspace(0.0, cfg.history_s, cfg.sweeps) if cfg.sweeps > 1 else [0.0]
    pts = np.concatenate([world - v * t for t in times])
    w = np.tile(weights, len(times))

    hist = _soft_histogram(pts, w, cfg)
    feat = hist / w.sum() * cfg.feature_scale
    if rng is not None and cfg.noise_sigma > 0:
        feat = feat + rng.normal(0.0, cfg.noise_sigma, size=feat.shape)
    return feat


def _mix_counts(cfg: SceneConfig):
    n = cfg.actors_per_frame
    n_static = int(round(cfg.static_fraction * n))
    n_rev = int(round(cfg.reversing_fraction * n))
    n_rev = min(n_rev, n - n_static)
    return n_static, n_rev


def generate_dataset(cfg: SceneConfig) -> list:
    """Generate all actors, deterministically, split 80/20 by frame.

    Every fifth frame goes to the validation split.  Each frame draws
    from its own seed stream so frames could be produced independently.
    """
    n_static, n_rev = _mix_counts(cfg)
    actors = []
    for frame in range(cfg.frames):
        rng = np.random.default_rng([cfg.seed, frame])
        split = "val" if frame % 5 == 4 else "train"
        roles = ["static"] * n_static + ["reversing"] * n_rev
        roles += ["forward"] * (cfg.actors_per_frame - len(roles))
        roles = [roles[i] for i in rng.permutation(len(roles))]
        for idx, role in enumerate(roles):
            cx, cy = rng.uniform(-cfg.extent_m, cfg.extent_m, size=2)
            yaw_deg = float(wrap_full_deg(rng.uniform(-180.0, 180.0)))
            length = rng.uniform(*cfg.length_range)
            width = rng.uniform(*cfg.width_range)
            box = OrientedBox.from_deg(cx, cy, length, width, yaw_deg)
            if role == "static":
                speed = 0.0
            else:
                speed = rng.uniform(*cfg.speed_range)
            heading = np.array([math.cos(box.yaw), math.sin(box.yaw)])
            velocity = speed * heading if role != "reversing" else -speed * heading
            t = (np.arange(cfg.horizon) + 1.0) / cfg.hz
            waypoints = np.array([cx, cy]) + velocity[None, :] * t[:, None]
            yaws = np.full(cfg.horizon, yaw_deg)
            gt = GtActor.build(frame, f"{frame}:{idx}", box, yaws, waypoints, cfg.hz)
            feats = actor_features(box, velocity, cfg, rng)
            actors.append(SynthActor(gt, feats, split))
    return actors


# ---------------------------------------------------------------------------
# detection perturbation fixtures


def _default_score_model(rng, err_norm: float, is_fp: bool) -> float:
    if is_fp:
        return float(0.05 + 0.45 * rng.uniform())
    return float(np.clip(0.95 - 0.15 * err_norm - 0.1 * rng.uniform(), 0.05, 1.0))


def perturb_detections(gts, pos_sigma: float = 0.0, yaw_sigma_deg: float = 0.0,
                       flip_fraction: float = 0.0, fp_rate: float = 0.0,
                       fn_rate: float = 0.0, seed: int = 0,
                       score_model: Optional[Callable] = None) -> list:
    """Detections derived from ground truth with controlled corruption.

    Exact counts (not Bernoulli draws): round(fn_rate * n) actors are
    dropped, round(flip_fraction * kept) orientations rotate 180 degrees,
    and round(fp_rate * n) spurious boxes are added.  Scores come from
    ``score_model(rng, err_norm, is_fp)`` and default to a decreasing
    function of the perturbation size, so clean detections rank first.
    """
    rng = np.random.default_rng(seed)
    score_model = score_model or _default_score_model
    gts = list(gts)
    n = len(gts)
    keep_order = rng.permutation(n)
    n_fn = int(round(fn_rate * n))
    kept = [gts[i] for i in sorted(keep_order[n_fn:])]

    n_flip = int(round(flip_fraction * len(kept)))
    flip_idx = set(rng.permutation(len(kept))[:n_flip].tolist())

    dets = []
    for i, gt in enumerate(kept):
        dpos = rng.normal(0.0, pos_sigma, size=2) if pos_sigma > 0 else np.zeros(2)
        dyaw = float(rng.normal(0.0, yaw_sigma_deg)) if yaw_sigma_deg > 0 else 0.0
        flip = 180.0 if i in flip_idx else 0.0
        yaw = wrap_full_deg(gt.box.yaw_deg + dyaw + flip)
        box = OrientedBox.from_deg(gt.box.cx + dpos[0], gt.box.cy + dpos[1],
                                   gt.box.length, gt.box.width, yaw)
        err_norm = 0.0
        if pos_sigma > 0:
            err_norm += float(np.linalg.norm(dpos)) / pos_sigma
        if yaw_sigma_deg > 0:
            err_norm += abs(dyaw) / yaw_sigma_deg
        dets.append(DetectionRecord(
            frame=gt.frame,
            actor_id=f"det:{gt.actor_id}",
            box=box,
            score=score_model(rng, err_norm, False),
            yaws_deg=wrap_full_deg(gt.yaws_deg + dyaw + flip),
            waypoints=gt.waypoints + dpos,
        ))

    n_fp = int(round(fp_rate * n))
    if n_fp:
        lo = min(g.box.cx for g in gts) - 20.0, min(g.box.cy for g in gts) - 20.0
        hi = max(g.box.cx for g in gts) + 20.0, max(g.box.cy for g in gts) + 20.0
        frames = sorted({g.frame for g in gts})
        horizon = gts[0].horizon
        for k in range(n_fp):
            cx = rng.uniform(lo[0], hi[0])
            cy = rng.uniform(lo[1], hi[1])
            yaw = rng.uniform(-180.0, 180.0)
            box = OrientedBox.from_deg(cx, cy, rng.uniform(3.5, 5.5),
                                       rng.uniform(1.6, 2.2), yaw)
            frame = frames[int(rng.integers(len(frames)))]
            dets.append(DetectionRecord(
                frame=frame,
                actor_id=f"fp:{k}",
                box=box,
                score=score_model(rng, 0.0, True),
                yaws_deg=np.full(horizon, wrap_full_deg(yaw)),
                waypoints=np.tile([cx, cy], (horizon, 1)),
            ))
    return dets


# ---------------------------------------------------------------------------
# JSON-lines file formats


def _round9(x: float) -> float:
    return float(f"{x:.9g}")


def _box_to_json(box: OrientedBox) -> dict:
    return {
        "cx": _round9(box.cx),
        "cy": _round9(box.cy),
        "l": _round9(box.length),
        "w": _round9(box.width),
        "yaw_deg": _round9(box.yaw_deg),
    }


def _box_from_json(d: dict) -> OrientedBox:
    return OrientedBox.from_deg(d["cx"], d["cy"], d["l"], d["w"], d["yaw_deg"])


def _waypoints_to_json(waypoints, yaws_deg) -> list:
    return [[_round9(x), _round9(y), _round9(t)]
            for (x, y), t in zip(np.asarray(waypoints, dtype=float), yaws_deg)]


def write_dataset(path, actors) -> None:
    """One actor per line: frame, id, box, waypoints (x, y, yaw_deg), features, split."""
    with open(path, "w", encoding="utf-8") as fh:
        for a in actors:
            rec = {
                "frame": a.gt.frame,
                "id": a.gt.actor_id,
                "box": _box_to_json(a.gt.box),
                "waypoints": _waypoints_to_json(a.gt.waypoints, a.gt.yaws_deg),
                "features": [_round9(v) for v in a.features],
                "split": a.split,
            }
            fh.write(json.dumps(rec) + "\n")


def read_dataset(path, hz: float = 10.0) -> list:
    actors = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            wps = np.array([[w[0], w[1]] for w in rec["waypoints"]])
            yaws = np.array([w[2] for w in rec["waypoints"]])
            gt = GtActor.build(rec["frame"], rec["id"], _box_from_json(rec["box"]),
                               yaws, wps, hz)
            actors.append(SynthActor(gt, np.asarray(rec["features"], dtype=float),
                                     rec["split"]))
    return actors


def write_detections(path, dets) -> None:
    """Detection records: like the dataset format plus score and flip_prob."""
    with open(path, "w", encoding="utf-8") as fh:
        for d in dets:
            rec = {
                "frame": d.frame,
                "id": d.actor_id,
                "box": _box_to_json(d.box),
                "waypoints": _waypoints_to_json(d.waypoints, d.yaws_deg),
                "score": _round9(d.score),
            }
            if d.flip_prob is not None:
                rec["flip_prob"] = _round9(d.flip_prob)
            fh.write(json.dumps(rec) + "\n")


def read_detections(path) -> list:
    dets = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            wps = np.array([[w[0], w[1]] for w in rec["waypoints"]])
            yaws = np.array([w[2] for w in rec["waypoints"]])
            dets.append(DetectionRecord(
                frame=rec["frame"],
                actor_id=rec["id"],
                box=_box_from_json(rec["box"]),
                score=rec["score"],
                yaws_deg=yaws,
                waypoints=wps,
                flip_prob=rec.get("flip_prob"),
            ))
    return dets


def gt_actors(actors, split: Optional[str] = None) -> list:
    """Ground-truth records of a dataset, optionally filtered by split."""
    return [a.gt for a in actors if split is None or a.split == split]
