"""Toy model and training loop for benchmarking the orientation losses.

One hidden ReLU layer feeds two linear heads: a method-specific
orientation head and a shared waypoint-offset head.  Optimization is
plain minibatch SGD with momentum so runs are deterministic per seed.
A finite-difference gradient checker validates every analytic gradient
in the losses module, and ``evaluate`` turns a trained model into
detection records scored against ground truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import losses, metrics
from .geom import OrientedBox, wrap_full_deg
from .losses import MethodKind, parse_method

WAYPOINT_SCALE_M = 10.0  # waypoint offsets are regressed in units of 10 m


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    method: str = "flip-aware"
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 0.01
    momentum: float = 0.9
    seed: int = 0
    hidden: int = 96
    horizon: int = 30
    no_half: bool = False
    no_flip: bool = False
    waypoint_weight: float = 0.1
    dataset: Optional[str] = None

    def __post_init__(self):
        if self.hidden < 1:
            raise ValueError("hidden width must be positive")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("bad epoch or batch size")
        if self.horizon < 1:
            raise ValueError("horizon must be at least one step")
        kind = parse_method(self.method)
        if (self.no_half or self.no_flip) and kind.name != "flip-aware":
            raise ValueError("no_half/no_flip only apply to flip-aware")
        if self.no_half and self.no_flip:
            raise ValueError("no_half and no_flip are mutually exclusive variants")

    @property
    def kind(self) -> MethodKind:
        return parse_method(self.method)

    @property
    def variant(self) -> str:
        name = str(self.kind)
        if self.no_half:
            return name + "-no-half"
        if self.no_flip:
            return name + "-no-flip"
        return name


@dataclass
class ModelParams:
    """All weights of the two-head perceptron."""

    w_in: np.ndarray
    b_in: np.ndarray
    w_head: np.ndarray
    b_head: np.ndarray
    w_wp: np.ndarray
    b_wp: np.ndarray
    method: str
    horizon: int

    def names(self):
        return ("w_in", "b_in", "w_head", "b_head", "w_wp", "b_wp")

    def copy(self) -> "ModelParams":
        return ModelParams(*(getattr(self, n).copy() for n in self.names()),
                           method=self.method, horizon=self.horizon)

    def to_dict(self) -> dict:
        return {
            "format": "orientbench-checkpoint/1",
            "method": self.method,
            "horizon": self.horizon,
            "feature_dim": int(self.w_in.shape[0]),
            "hidden": int(self.w_in.shape[1]),
            "shapes": {n: list(getattr(self, n).shape) for n in self.names()},
            "params": {n: getattr(self, n).tolist() for n in self.names()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        if d.get("format") != "orientbench-checkpoint/1":
            raise ValueError("not an orientbench checkpoint")
        arrays = {}
        for n, shape in d["shapes"].items():
            a = np.asarray(d["params"][n], dtype=float)
            if list(a.shape) != shape:
                raise ValueError(f"checkpoint shape mismatch for {n}")
            arrays[n] = a
        return cls(**arrays, method=d["method"], horizon=d["horizon"])


def init_model(cfg: TrainConfig, feature_dim: int) -> ModelParams:
    """Uniform fan-in-scaled weights, zero biases, deterministic per seed."""
    rng = np.random.default_rng(cfg.seed)
    kind = cfg.kind
    arity = kind.head_arity(cfg.horizon)

    def layer(n_in, n_out):
        bound = 1.0 / math.sqrt(n_in)
        return rng.uniform(-bound, bound, size=(n_in, n_out)), np.zeros(n_out)

    w_in, b_in = layer(feature_dim, cfg.hidden)
    w_head, b_head = layer(cfg.hidden, arity)
    w_wp, b_wp = layer(cfg.hidden, 2 * cfg.horizon)
    return ModelParams(w_in, b_in, w_head, b_head, w_wp, b_wp,
                       method=str(kind), horizon=cfg.horizon)


def _forward_raw(params: ModelParams, x: np.ndarray):
    pre = x @ params.w_in + params.b_in
    hid = np.maximum(pre, 0.0)
    return pre, hid, hid @ params.w_head + params.b_head, hid @ params.w_wp + params.b_wp


def head_fields(kind: MethodKind, raw: np.ndarray, horizon: int) -> dict:
    """Split the raw orientation-head activations into named arrays."""
    h = horizon
    if kind.name == "sin-cos-2x":
        return {"sin2": raw[..., :h], "cos2": raw[..., h:2 * h]}
    if kind.name == "l1-sin":
        return {"theta": raw[..., :h]}
    if kind.name == "sin-cos":
        return {"sin": raw[..., :h], "cos": raw[..., h:2 * h]}
    if kind.name == "multibin":
        n = kind.num_bins
        cube = raw.reshape(*raw.shape[:-1], h, 3, n)
        return {"logits": cube[..., 0, :], "res_sin": cube[..., 1, :],
                "res_cos": cube[..., 2, :]}
    return {"sin": raw[..., :h], "cos": raw[..., h:2 * h], "flip_logit": raw[..., 2 * h]}


def _pack_like_raw(kind: MethodKind, grads: dict, raw_shape, horizon: int) -> np.ndarray:
    h = horizon
    out = np.zeros(raw_shape)
    if kind.name == "sin-cos-2x":
        out[..., :h] = grads["sin2"]
        out[..., h:2 * h] = grads["cos2"]
    elif kind.name == "l1-sin":
        out[..., :h] = grads["theta"]
    elif kind.name == "sin-cos":
        out[..., :h] = grads["sin"]
        out[..., h:2 * h] = grads["cos"]
    elif kind.name == "multibin":
        n = kind.num_bins
        cube = out.reshape(*raw_shape[:-1], h, 3, n)
        cube[..., 0, :] = grads["logits"]
        cube[..., 1, :] = grads["res_sin"]
        cube[..., 2, :] = grads["res_cos"]
    else:
        out[..., :h] = grads["sin"]
        out[..., h:2 * h] = grads["cos"]
        out[..., 2 * h] = grads["flip_logit"]
    return out


def make_head(kind: MethodKind, raw: np.ndarray, horizon: int) -> losses.HeadOutput:
    """Wrap raw activations (any batch shape) in the method's head type."""
    f = head_fields(kind, raw, horizon)
    if kind.name == "sin-cos-2x":
        return losses.SinCos2xHead(f["sin2"], f["cos2"])
    if kind.name == "l1-sin":
        return losses.L1SinHead(f["theta"])
    if kind.name == "sin-cos":
        return losses.SinCosHead(f["sin"], f["cos"])
    if kind.name == "multibin":
        return losses.MultiBinHead(f["logits"], f["res_sin"], f["res_cos"])
    return losses.FlipAwareHead(f["sin"], f["cos"], f["flip_logit"])


def forward(params: ModelParams, features: np.ndarray):
    """Head output and waypoint offsets (meters) for one feature vector."""
    x = np.asarray(features, dtype=float)
    kind = parse_method(params.method)
    _, _, raw_head, raw_wp = _forward_raw(params, x)
    head = make_head(kind, raw_head, params.horizon)
    offsets = raw_wp.reshape(*x.shape[:-1], params.horizon, 2) * WAYPOINT_SCALE_M
    return head, offsets


def orientation_loss_and_grad(cfg: TrainConfig, raw_head: np.ndarray,
                              theta: np.ndarray):
    """Per-item orientation loss and gradient w.r.t. the raw head, batched."""
    kind = cfg.kind
    f = head_fields(kind, raw_head, cfg.horizon)
    if kind.name == "sin-cos-2x":
        value, (gs, gc) = losses.sincos2x_value_and_grad(f["sin2"], f["cos2"], theta)
        gdict = {"sin2": gs, "cos2": gc}
    elif kind.name == "l1-sin":
        value, (g,) = losses.l1sin_value_and_grad(f["theta"], theta)
        gdict = {"theta": g}
    elif kind.name == "sin-cos":
        value, (gs, gc) = losses.sincos_value_and_grad(f["sin"], f["cos"], theta)
        gdict = {"sin": gs, "cos": gc}
    elif kind.name == "multibin":
        value, (gl, grs, grc) = losses.multibin_value_and_grad(
            f["logits"], f["res_sin"], f["res_cos"], theta,
            kind.bin_centers(), kind.bin_coverage())
        gdict = {"logits": gl, "res_sin": grs, "res_cos": grc}
    else:
        value, (gs, gc, gz) = losses.flipaware_value_and_grad(
            f["sin"], f["cos"], f["flip_logit"], theta,
            include_half=not cfg.no_half, include_flip=not cfg.no_flip)
        gdict = {"sin": gs, "cos": gc, "flip_logit": gz}
    return value, _pack_like_raw(kind, gdict, raw_head.shape, cfg.horizon)


def _prepare(dataset, split: str, horizon: int):
    rows = [a for a in dataset if a.split == split]
    if not rows:
        raise ValueError(f"dataset has no '{split}' actors")
    if rows[0].gt.horizon != horizon:
        raise ValueError(
            f"dataset horizon {rows[0].gt.horizon} != configured horizon {horizon}")
    x = np.stack([a.features for a in rows])
    theta = np.stack([np.radians(a.gt.yaws_deg) for a in rows])
    centers = np.stack([[a.gt.box.cx, a.gt.box.cy] for a in rows])
    offsets = np.stack([a.gt.waypoints for a in rows]) - centers[:, None, :]
    return rows, x, theta, offsets / WAYPOINT_SCALE_M


def train(cfg: TrainConfig, dataset) -> tuple:
    """Minibatch SGD with momentum; returns (params, per-epoch mean loss).

    The batch loss is the mean of per-item losses (orientation plus
    weighted waypoint smooth-L1), so batch gradients are means of item
    gradients.  Aborts with a diagnostic when the loss stops being finite.
    """
    _, x, theta, wp_tgt = _prepare(dataset, "train", cfg.horizon)
    n = len(x)
    params = init_model(cfg, x.shape[1])
    velocity = {name: np.zeros_like(getattr(params, name)) for name in params.names()}
    rng = np.random.default_rng([cfg.seed, 1])
    wp_flat = wp_tgt.reshape(n, -1)
    history = []

    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb, tb, wb = x[idx], theta[idx], wp_flat[idx]
            b = len(idx)

            pre, hid, raw_head, raw_wp = _forward_raw(params, xb)
            orient_loss, g_head = orientation_loss_and_grad(cfg, raw_head, tb)
            wp_diff = raw_wp - wb
            wp_loss = cfg.waypoint_weight * losses.smooth_l1(wp_diff).sum(axis=-1)
            g_wp = cfg.waypoint_weight * losses.smooth_l1_grad(wp_diff)

            batch_loss = float(np.mean(orient_loss + wp_loss))
            if not math.isfinite(batch_loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, batch {start // cfg.batch_size}"
                    f" (method {cfg.variant}, lr {cfg.learning_rate})")
            epoch_losses.append(batch_loss)

            g_head = g_head / b
            g_wp = g_wp / b
            d_hid = g_head @ params.w_head.T + g_wp @ params.w_wp.T
            d_pre = d_hid * (pre > 0.0)
            grads = {
                "w_head": hid.T @ g_head,
                "b_head": g_head.sum(axis=0),
                "w_wp": hid.T @ g_wp,
                "b_wp": g_wp.sum(axis=0),
                "w_in": xb.T @ d_pre,
                "b_in": d_pre.sum(axis=0),
            }
            for name, g in grads.items():
                v = velocity[name]
                v *= cfg.momentum
                v -= cfg.learning_rate * g
                getattr(params, name).__iadd__(v)
        history.append(float(np.mean(epoch_losses)) if epoch_losses else math.nan)
    return params, history


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradcheckReport:
    method: str
    trials: int
    tolerance: float
    max_rel_error: float
    passed: bool
    worst_trial: int = -1

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "trials": self.trials,
            "tolerance": self.tolerance,
            "max_rel_error": self.max_rel_error,
            "passed": self.passed,
            "worst_trial": self.worst_trial,
        }


_KINK_MARGIN = 1e-3


def _sample_head_raw(kind: MethodKind, horizon, rng):
    arity = kind.head_arity(horizon)
    raw = rng.normal(0.0, 1.0, size=arity)
    theta = rng.uniform(-math.pi, math.pi, size=horizon)
    return raw, theta


def _near_kink(cfg: TrainConfig, raw, theta) -> bool:
    """True when any smooth-L1 argument sits near its threshold, the
    min() branch is near a switch, or a multibin residual pair is too
    short for a stable angle."""
    kind = cfg.kind
    f = head_fields(kind, raw, cfg.horizon)

    def l1_args():
        if kind.name == "sin-cos-2x":
            return np.concatenate([f["sin2"] - np.sin(2 * theta),
                                   f["cos2"] - np.cos(2 * theta)])
        if kind.name == "l1-sin":
            return np.sin(f["theta"] - theta)
        if kind.name == "multibin":
            return np.zeros(0)
        args = [f["sin"] - np.sin(theta), f["cos"] - np.cos(theta)]
        if kind.name == "flip-aware":
            args += [-f["sin"] - np.sin(theta), -f["cos"] - np.cos(theta)]
            s2, c2 = losses.half_params_from_full(f["sin"], f["cos"])
            args += [s2 - np.sin(2 * theta), c2 - np.cos(2 * theta)]
        return np.concatenate(args)

    args = l1_args()
    if args.size and np.any(np.abs(np.abs(args) - 1.0) < _KINK_MARGIN):
        return True
    if kind.name == "multibin":
        r2 = f["res_sin"] ** 2 + f["res_cos"] ** 2
        if np.any(r2 < 1e-2):
            return True
    if kind.name == "flip-aware":
        full_v = losses.full_loss_value(f["sin"], f["cos"], theta)
        flip_v = losses.flipped_loss_value(f["sin"], f["cos"], theta)
        if abs(float(full_v - flip_v)) < _KINK_MARGIN:
            return True
    return False


def gradcheck(method: str, trials: int = 100, tolerance: float = 1e-4,
              seed: int = 0, eps: float = 1e-5, horizon: int = 3,
              no_half: bool = False, no_flip: bool = False,
              corrupt_offset: float = 0.0) -> GradcheckReport:
    """Compare analytic gradients to central finite differences.

    Each trial draws a random head and ground truth, skipping draws near
    smooth-L1 kinks or min-branch switches where the loss is not
    differentiable.  Relative error uses max(|analytic|, |numeric|, 1e-6)
    as denominator.  ``corrupt_offset`` shifts every analytic gradient
    and exists for self-tests of the checker.
    """
    cfg = TrainConfig(method=method, horizon=horizon, no_half=no_half, no_flip=no_flip)
    rng = np.random.default_rng(seed)
    max_rel = 0.0
    worst = -1
    for trial in range(trials):
        raw, theta = _sample_head_raw(cfg.kind, horizon, rng)
        attempts = 0
        while _near_kink(cfg, raw, theta) and attempts < 100:
            raw, theta = _sample_head_raw(cfg.kind, horizon, rng)
            attempts += 1

        _, analytic = orientation_loss_and_grad(cfg, raw, theta)
        analytic = analytic + corrupt_offset

        def value_at(vec):
            v, _ = orientation_loss_and_grad(cfg, vec, theta)
            return float(v)

        for i in range(len(raw)):
            bumped = raw.copy()
            bumped[i] += eps
            hi_v = value_at(bumped)
            bumped[i] -= 2 * eps
            lo_v = value_at(bumped)
            numeric = (hi_v - lo_v) / (2 * eps)
            rel = abs(analytic[i] - numeric) / max(abs(analytic[i]), abs(numeric), 1e-6)
            if rel > max_rel:
                max_rel, worst = rel, trial
    return GradcheckReport(cfg.variant, trials, tolerance, max_rel,
                           max_rel < tolerance, worst)


# ---------------------------------------------------------------------------
# evaluation


def predict_records(params: ModelParams, dataset, split: str = "val") -> list:
    """Decode the model into detection records for the given split.

    Records reuse the ground-truth box geometry with the predicted 0 s
    orientation and unit score, so detection matching saturates whenever
    orientations are close (up to flips) and AOS isolates orientation
    quality.  Half-range methods are converted to full range with the
    predicted travel direction; the flip-aware head goes through the
    flip post-processing step.
    """
    kind = parse_method(params.method)
    rows, x, _theta, _wp = _prepare(dataset, split, params.horizon)
    _, _, raw_head, raw_wp = _forward_raw(params, x)
    head = make_head(kind, raw_head, params.horizon)
    decoded = losses.decode(kind, head)
    if kind.name == "flip-aware":
        decoded = losses.postprocess_flip(decoded)

    theta_deg = np.degrees(decoded.theta)
    offsets = raw_wp.reshape(len(x), params.horizon, 2) * WAYPOINT_SCALE_M
    records = []
    for i, actor in enumerate(rows):
        gt = actor.gt
        yaws = wrap_full_deg(theta_deg[i])
        waypoints = offsets[i] + np.array([gt.box.cx, gt.box.cy])
        if not kind.full_range:
            path = np.vstack([[gt.box.cx, gt.box.cy], waypoints])
            converted = metrics.traj_direction_convert(float(yaws[0]), path)
            yaws = wrap_full_deg(yaws + (converted - yaws[0]))
        fp = None
        if decoded.flip_prob is not None:
            fp = float(np.asarray(decoded.flip_prob)[i])
        box = OrientedBox(gt.box.cx, gt.box.cy, gt.box.length, gt.box.width,
                          math.radians(float(yaws[0])))
        records.append(metrics.DetectionRecord(
            frame=gt.frame, actor_id=f"pred:{gt.actor_id}", box=box, score=1.0,
            yaws_deg=yaws, waypoints=waypoints, flip_prob=fp))
    return records


def evaluate(params: ModelParams, dataset, split: str = "val",
             **eval_kwargs) -> metrics.EvalReport:
    """Predict on a split and run the full metric stack against it."""
    records = predict_records(params, dataset, split)
    gts = [a.gt for a in dataset if a.split == split]
    return metrics.evaluate_detections(records, gts, **eval_kwargs)
