"""Orientation-regression losses with analytic gradients and decode rules.

Five estimation methods are supported, each with its own raw head layout:

========== =============================== ======================
method     per-step raw outputs            extra outputs
========== =============================== ======================
sin-cos-2x sin(2t), cos(2t)                --
l1-sin     raw angle t                     --
sin-cos    sin(t), cos(t)                  --
multibin-n per-bin (logit, res_sin,        --
           res_cos)
flip-aware sin(t), cos(t)                  one flip logit
========== =============================== ======================

The half-range losses cannot tell a heading from its 180-degree flip;
the flip-aware loss keeps a full-range head but only penalizes the
nearer of the direct and flipped targets, and trains a classifier to
report the probability that its output is flipped.

All loss kernels accept arrays with an arbitrary batch shape in front of
the horizon axis, and every analytic gradient in this module is verified
against central finite differences by the gradient-check harness.
Angles are radians throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .geom import TWO_PI, wrap_full, wrap_half

METHOD_NAMES = ("sin-cos-2x", "l1-sin", "sin-cos", "multibin", "flip-aware")

# Fraction by which adjacent orientation bins overlap: each bin covers
# 1.2 * (360 / n) degrees.
MULTIBIN_OVERLAP = 1.2


# ---------------------------------------------------------------------------
# smooth L1


def smooth_l1(x, beta: float = 1.0):
    """Piecewise quadratic/linear robust loss.

    0.5 * x^2 / beta for |x| < beta, |x| - beta/2 otherwise; continuous
    with continuous first derivative at the threshold.
    """
    x = np.asarray(x, dtype=float)
    ax = np.abs(x)
    return np.where(ax < beta, 0.5 * x * x / beta, ax - 0.5 * beta)


def smooth_l1_grad(x, beta: float = 1.0):
    """Derivative of :func:`smooth_l1`; clamped to +/-1 in the linear zone."""
    x = np.asarray(x, dtype=float)
    return np.where(np.abs(x) < beta, x / beta, np.sign(x))


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out if out.ndim else float(out)


def bce_with_logits(z, y):
    """Binary cross-entropy on a raw logit, numerically stable."""
    z = np.asarray(z, dtype=float)
    y = np.asarray(y, dtype=float)
    return np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))


# ---------------------------------------------------------------------------
# method descriptor and head containers


@dataclass(frozen=True)
class MethodKind:
    """An orientation estimation method, with bin count for multibin."""

    name: str
    num_bins: int = 0

    def __post_init__(self):
        if self.name not in METHOD_NAMES:
            raise ValueError(f"unknown method {self.name!r}; expected one of {METHOD_NAMES}")
        if self.name == "multibin":
            if self.num_bins < 2:
                raise ValueError("multibin requires at least 2 bins")
        elif self.num_bins:
            raise ValueError(f"{self.name} takes no bin count")

    def __str__(self):
        if self.name == "multibin":
            return f"multibin-{self.num_bins}"
        return self.name

    @property
    def full_range(self) -> bool:
        return self.name in ("sin-cos", "multibin", "flip-aware")

    @property
    def has_flip_prob(self) -> bool:
        return self.name in ("multibin", "flip-aware")

    def head_arity(self, horizon: int) -> int:
        """Number of raw model outputs for a horizon of ``horizon`` steps."""
        return {
            "sin-cos-2x": 2 * horizon,
            "l1-sin": horizon,
            "sin-cos": 2 * horizon,
            "multibin": 3 * self.num_bins * horizon,
            "flip-aware": 2 * horizon + 1,
        }[self.name]

    def bin_centers(self) -> np.ndarray:
        """Multibin center angles in radians, ascending.

        n=2 gives {0, 180} degrees and n=4 gives {-90, 0, 90, 180}.
        """
        if self.name != "multibin":
            raise ValueError("bin centers only exist for multibin")
        centers = wrap_full(TWO_PI * np.arange(self.num_bins) / self.num_bins)
        return np.sort(centers)

    def bin_coverage(self) -> float:
        """Angular width in radians covered by each (overlapping) bin."""
        if self.name != "multibin":
            raise ValueError("bin coverage only exists for multibin")
        return MULTIBIN_OVERLAP * TWO_PI / self.num_bins


def parse_method(text: str) -> MethodKind:
    """Parse a method name like ``sin-cos`` or ``multibin-4``."""
    t = text.strip().lower()
    if t.startswith("multibin-"):
        try:
            n = int(t.split("-", 1)[1])
        except ValueError:
            raise ValueError(f"bad multibin bin count in {text!r}") from None
        return MethodKind("multibin", n)
    if t == "multibin":
        raise ValueError("multibin needs a bin count, e.g. 'multibin-2'")
    return MethodKind(t)


def _as_track_array(values, name):
    a = np.asarray(values, dtype=float)
    if a.shape[-1] < 1:
        raise ValueError(f"{name} needs at least one step")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} must be finite")
    return a


@dataclass(frozen=True)
class GtOrientationTrack:
    """Ground-truth full-range yaw per future step, radians."""

    theta: np.ndarray

    def __post_init__(self):
        a = _as_track_array(self.theta, "theta")
        object.__setattr__(self, "theta", wrap_full(a))

    @property
    def horizon(self) -> int:
        return self.theta.shape[-1]


@dataclass(frozen=True)
class SinCos2xHead:
    sin2: np.ndarray
    cos2: np.ndarray

    def __post_init__(self):
        s = _as_track_array(self.sin2, "sin2")
        c = _as_track_array(self.cos2, "cos2")
        if s.shape != c.shape:
            raise ValueError("sin2/cos2 shapes differ")
        object.__setattr__(self, "sin2", s)
        object.__setattr__(self, "cos2", c)


@dataclass(frozen=True)
class L1SinHead:
    theta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "theta", _as_track_array(self.theta, "theta"))


@dataclass(frozen=True)
class SinCosHead:
    sin: np.ndarray
    cos: np.ndarray

    def __post_init__(self):
        s = _as_track_array(self.sin, "sin")
        c = _as_track_array(self.cos, "cos")
        if s.shape != c.shape:
            raise ValueError("sin/cos shapes differ")
        object.__setattr__(self, "sin", s)
        object.__setattr__(self, "cos", c)


@dataclass(frozen=True)
class MultiBinHead:
    """Per-step, per-bin (logit, residual sin, residual cos) triples."""

    logits: np.ndarray
    res_sin: np.ndarray
    res_cos: np.ndarray

    def __post_init__(self):
        lo = _as_track_array(self.logits, "logits")
        rs = _as_track_array(self.res_sin, "res_sin")
        rc = _as_track_array(self.res_cos, "res_cos")
        if lo.ndim < 2:
            raise ValueError("multibin head arrays need (..., H, n) shape")
        if not (lo.shape == rs.shape == rc.shape):
            raise ValueError("multibin head field shapes differ")
        object.__setattr__(self, "logits", lo)
        object.__setattr__(self, "res_sin", rs)
        object.__setattr__(self, "res_cos", rc)


@dataclass(frozen=True)
class FlipAwareHead:
    """Full-range sin/cos pairs plus a single per-actor flip logit."""

    sin: np.ndarray
    cos: np.ndarray
    flip_logit: Union[float, np.ndarray]

    def __post_init__(self):
        s = _as_track_array(self.sin, "sin")
        c = _as_track_array(self.cos, "cos")
        if s.shape != c.shape:
            raise ValueError("sin/cos shapes differ")
        z = np.asarray(self.flip_logit, dtype=float)
        if z.shape != s.shape[:-1]:
            raise ValueError("flip_logit must have the head's batch shape")
        if not np.all(np.isfinite(z)):
            raise ValueError("flip_logit must be finite")
        object.__setattr__(self, "sin", s)
        object.__setattr__(self, "cos", c)
        object.__setattr__(self, "flip_logit", z if z.ndim else float(z))


HeadOutput = Union[SinCos2xHead, L1SinHead, SinCosHead, MultiBinHead, FlipAwareHead]


@dataclass(frozen=True)
class LossResult:
    """Scalar loss with its named components.

    ``total`` equals the documented combination of ``components`` for the
    method that produced it; ``flip_label`` is set only by the flip-aware
    loss.
    """

    total: float
    components: dict
    flip_label: Optional[int] = None


# ---------------------------------------------------------------------------
# loss value kernels (batch-shaped)


def half_loss_value(sin2, cos2, theta, beta: float = 1.0):
    """Sum over steps of l1 residuals against (sin 2t, cos 2t) targets."""
    theta = np.asarray(theta, dtype=float)
    terms = smooth_l1(sin2 - np.sin(2.0 * theta), beta) + smooth_l1(
        cos2 - np.cos(2.0 * theta), beta
    )
    return terms.sum(axis=-1)


def full_loss_value(sin, cos, theta, beta: float = 1.0):
    """Sum over steps of l1 residuals against (sin t, cos t) targets."""
    theta = np.asarray(theta, dtype=float)
    terms = smooth_l1(sin - np.sin(theta), beta) + smooth_l1(cos - np.cos(theta), beta)
    return terms.sum(axis=-1)


def flipped_loss_value(sin, cos, theta, beta: float = 1.0):
    """Full-range loss of the 180-degree-rotated prediction (-sin, -cos)."""
    return full_loss_value(-np.asarray(sin, dtype=float), -np.asarray(cos, dtype=float),
                           theta, beta)


def l1sin_loss_value(theta_hat, theta, beta: float = 1.0):
    """Sum over steps of l1(sin(t_hat - t)); blind to 180-degree flips."""
    d = np.asarray(theta_hat, dtype=float) - np.asarray(theta, dtype=float)
    return smooth_l1(np.sin(d), beta).sum(axis=-1)


def half_params_from_full(sin, cos):
    """Double-angle parameters (sin 2t, cos 2t) from an (unnormalized) pair.

    sin2 = 2*s*c and cos2 = c^2 - s^2; exact when (s, c) lies on the unit
    circle and still well-defined when it does not.
    """
    s = np.asarray(sin, dtype=float)
    c = np.asarray(cos, dtype=float)
    return 2.0 * s * c, c * c - s * s


def flip_label(l_full, l_flipped):
    """1 when the flipped target is strictly nearer, else 0 (ties to 0)."""
    return (np.asarray(l_full, dtype=float) > np.asarray(l_flipped, dtype=float)).astype(int)


def _multibin_geometry(theta, centers, coverage):
    theta = np.asarray(theta, dtype=float)
    delta = wrap_full(theta[..., None] - centers)
    covering = np.abs(delta) <= 0.5 * coverage + 1e-12
    nearest = np.argmin(np.abs(delta), axis=-1)
    return delta, covering, nearest


def _log_softmax(logits):
    m = logits.max(axis=-1, keepdims=True)
    stable = logits - m
    return stable - np.log(np.exp(stable).sum(axis=-1, keepdims=True))


def multibin_loss_values(logits, res_sin, res_cos, theta, centers, coverage):
    """Confidence and residual components of the binned orientation loss.

    Confidence: softmax cross-entropy per step with the nearest-center
    bin as the positive class.  Residual: for every bin whose coverage
    interval contains the target angle, 1 - cos(t - center - atan2(rs, rc)).
    Both are summed over the horizon.
    """
    logits = np.asarray(logits, dtype=float)
    rs = np.asarray(res_sin, dtype=float)
    rc = np.asarray(res_cos, dtype=float)
    delta, covering, nearest = _multibin_geometry(theta, centers, coverage)
    logp = _log_softmax(logits)
    picked = np.take_along_axis(logp, nearest[..., None], axis=-1)[..., 0]
    conf = (-picked).sum(axis=-1)
    resid_angle = delta - np.arctan2(rs, rc)
    resid = ((1.0 - np.cos(resid_angle)) * covering).sum(axis=(-1, -2))
    return conf, resid


def flipaware_loss_values(sin, cos, flip_logit, theta, beta: float = 1.0,
                          include_half: bool = True, include_flip: bool = True):
    """All components of the flip-aware objective, batch-shaped.

    Returns a dict with half / full / flipped / min / bce / label / total.
    With ``include_flip`` off the orientation term is the plain full-range
    loss and no classifier term is added; with ``include_half`` off the
    double-angle term is dropped.
    """
    s = np.asarray(sin, dtype=float)
    c = np.asarray(cos, dtype=float)
    z = np.asarray(flip_logit, dtype=float)
    full_v = full_loss_value(s, c, theta, beta)
    flip_v = flipped_loss_value(s, c, theta, beta)
    label = flip_label(full_v, flip_v)
    min_v = np.minimum(full_v, flip_v)
    s2, c2 = half_params_from_full(s, c)
    half_v = half_loss_value(s2, c2, theta, beta)
    bce_v = bce_with_logits(z, label)
    total = np.zeros_like(full_v)
    if include_half:
        total = total + half_v
    if include_flip:
        total = total + min_v + bce_v
    else:
        total = total + full_v
    return {
        "half": half_v,
        "full": full_v,
        "flipped": flip_v,
        "min": min_v,
        "bce": bce_v,
        "label": label,
        "total": total,
    }


# ---------------------------------------------------------------------------
# per-actor loss operations


def _theta_of(gt) -> np.ndarray:
    if isinstance(gt, GtOrientationTrack):
        return gt.theta
    return GtOrientationTrack(np.asarray(gt, dtype=float)).theta


def _check_steps(pred_shape, theta, what):
    if pred_shape[-1] != theta.shape[-1]:
        raise ValueError(
            f"{what}: head has {pred_shape[-1]} steps but ground truth has {theta.shape[-1]}"
        )


def loss_half(head: SinCos2xHead, gt, beta: float = 1.0) -> LossResult:
    """Half-range loss on raw (sin 2t, cos 2t) outputs."""
    theta = _theta_of(gt)
    _check_steps(head.sin2.shape, theta, "loss_half")
    v = float(half_loss_value(head.sin2, head.cos2, theta, beta))
    return LossResult(v, {"half": v})


def loss_full(head: SinCosHead, gt, beta: float = 1.0) -> LossResult:
    """Full-range loss on raw (sin t, cos t) outputs."""
    theta = _theta_of(gt)
    _check_steps(head.sin.shape, theta, "loss_full")
    v = float(full_loss_value(head.sin, head.cos, theta, beta))
    return LossResult(v, {"full": v})


def loss_flipped(head: SinCosHead, gt, beta: float = 1.0) -> LossResult:
    """Full-range loss of the 180-degree-rotated prediction."""
    theta = _theta_of(gt)
    _check_steps(head.sin.shape, theta, "loss_flipped")
    v = float(flipped_loss_value(head.sin, head.cos, theta, beta))
    return LossResult(v, {"flipped": v})


def loss_l1sin(head: L1SinHead, gt, beta: float = 1.0) -> LossResult:
    """Direct angle regression through l1(sin(t_hat - t))."""
    theta = _theta_of(gt)
    _check_steps(head.theta.shape, theta, "loss_l1sin")
    v = float(l1sin_loss_value(head.theta, theta, beta))
    return LossResult(v, {"l1_sin": v})


def loss_multibin(head: MultiBinHead, gt, kind: MethodKind) -> LossResult:
    """Bin-confidence cross-entropy plus covering-bin cosine residuals."""
    theta = _theta_of(gt)
    if head.logits.shape[-2] != theta.shape[-1]:
        raise ValueError("multibin head horizon does not match ground truth")
    if head.logits.shape[-1] != kind.num_bins:
        raise ValueError("multibin head bin count does not match method")
    conf, resid = multibin_loss_values(
        head.logits, head.res_sin, head.res_cos, theta,
        kind.bin_centers(), kind.bin_coverage(),
    )
    conf, resid = float(conf), float(resid)
    return LossResult(conf + resid, {"multibin_conf": conf, "multibin_res": resid})


def loss_final(head: FlipAwareHead, gt, beta: float = 1.0,
               include_half: bool = True, include_flip: bool = True) -> LossResult:
    """Flip-aware objective: half + min(full, flipped) + flip-classifier BCE.

    A prediction pointing exactly backwards incurs no orientation penalty;
    only the classifier term pushes its flip probability toward 1.  The
    ablation flags drop the half term (``include_half=False``) or replace
    min+BCE with the plain full-range loss (``include_flip=False``).
    """
    theta = _theta_of(gt)
    _check_steps(head.sin.shape, theta, "loss_final")
    parts = flipaware_loss_values(head.sin, head.cos, head.flip_logit, theta,
                                  beta, include_half, include_flip)
    components = {
        "half": float(parts["half"]),
        "full": float(parts["full"]),
        "flipped": float(parts["flipped"]),
        "min": float(parts["min"]),
        "bce": float(parts["bce"]),
    }
    lab = int(parts["label"]) if include_flip else None
    return LossResult(float(parts["total"]), components, flip_label=lab)


# ---------------------------------------------------------------------------
# analytic gradients


def sincos2x_value_and_grad(sin2, cos2, theta, beta: float = 1.0):
    s2 = np.asarray(sin2, dtype=float)
    c2 = np.asarray(cos2, dtype=float)
    theta = np.asarray(theta, dtype=float)
    ds = s2 - np.sin(2.0 * theta)
    dc = c2 - np.cos(2.0 * theta)
    value = (smooth_l1(ds, beta) + smooth_l1(dc, beta)).sum(axis=-1)
    return value, (smooth_l1_grad(ds, beta), smooth_l1_grad(dc, beta))


def l1sin_value_and_grad(theta_hat, theta, beta: float = 1.0):
    th = np.asarray(theta_hat, dtype=float)
    theta = np.asarray(theta, dtype=float)
    d = th - theta
    value = smooth_l1(np.sin(d), beta).sum(axis=-1)
    grad = smooth_l1_grad(np.sin(d), beta) * np.cos(d)
    return value, (grad,)


def sincos_value_and_grad(sin, cos, theta, beta: float = 1.0):
    s = np.asarray(sin, dtype=float)
    c = np.asarray(cos, dtype=float)
    theta = np.asarray(theta, dtype=float)
    ds = s - np.sin(theta)
    dc = c - np.cos(theta)
    value = (smooth_l1(ds, beta) + smooth_l1(dc, beta)).sum(axis=-1)
    return value, (smooth_l1_grad(ds, beta), smooth_l1_grad(dc, beta))


def multibin_value_and_grad(logits, res_sin, res_cos, theta, centers, coverage):
    logits = np.asarray(logits, dtype=float)
    rs = np.asarray(res_sin, dtype=float)
    rc = np.asarray(res_cos, dtype=float)
    delta, covering, nearest = _multibin_geometry(theta, centers, coverage)

    logp = _log_softmax(logits)
    picked = np.take_along_axis(logp, nearest[..., None], axis=-1)[..., 0]
    conf = (-picked).sum(axis=-1)
    onehot = np.zeros_like(logits)
    np.put_along_axis(onehot, nearest[..., None], 1.0, axis=-1)
    g_logits = np.exp(logp) - onehot

    resid_angle = delta - np.arctan2(rs, rc)
    resid = ((1.0 - np.cos(resid_angle)) * covering).sum(axis=(-1, -2))
    r2 = np.maximum(rs * rs + rc * rc, 1e-300)
    sin_masked = np.sin(resid_angle) * covering
    g_rs = -sin_masked * rc / r2
    g_rc = sin_masked * rs / r2
    return conf + resid, (g_logits, g_rs, g_rc)


def flipaware_value_and_grad(sin, cos, flip_logit, theta, beta: float = 1.0,
                             include_half: bool = True, include_flip: bool = True):
    """Value and gradients of the flip-aware objective.

    The min() picks one branch's gradient per actor (full branch on exact
    ties) and the classifier label is treated as a constant.
    """
    s = np.asarray(sin, dtype=float)
    c = np.asarray(cos, dtype=float)
    z = np.asarray(flip_logit, dtype=float)
    theta = np.asarray(theta, dtype=float)
    parts = flipaware_loss_values(s, c, z, theta, beta, include_half, include_flip)

    sin_t, cos_t = np.sin(theta), np.cos(theta)
    g_full_s = smooth_l1_grad(s - sin_t, beta)
    g_full_c = smooth_l1_grad(c - cos_t, beta)
    if include_flip:
        g_flip_s = -smooth_l1_grad(-s - sin_t, beta)
        g_flip_c = -smooth_l1_grad(-c - cos_t, beta)
        take_flip = (parts["flipped"] < parts["full"])[..., None]
        gs = np.where(take_flip, g_flip_s, g_full_s)
        gc = np.where(take_flip, g_flip_c, g_full_c)
        gz = sigmoid(z) - parts["label"]
    else:
        gs, gc = g_full_s, g_full_c
        gz = np.zeros_like(np.asarray(z, dtype=float))

    if include_half:
        s2, c2 = half_params_from_full(s, c)
        gh_s2 = smooth_l1_grad(s2 - np.sin(2.0 * theta), beta)
        gh_c2 = smooth_l1_grad(c2 - np.cos(2.0 * theta), beta)
        gs = gs + gh_s2 * 2.0 * c - gh_c2 * 2.0 * s
        gc = gc + gh_s2 * 2.0 * s + gh_c2 * 2.0 * c
    return parts["total"], (gs, gc, gz)


def grad(kind: MethodKind, head: HeadOutput, gt, beta: float = 1.0,
         include_half: bool = True, include_flip: bool = True) -> HeadOutput:
    """Gradient of the method's total loss w.r.t. every raw head output.

    Returned as an instance of the head's own class, so it is
    shape-congruent with the input by construction.
    """
    theta = _theta_of(gt)
    if kind.name == "sin-cos-2x":
        _, (gs, gc) = sincos2x_value_and_grad(head.sin2, head.cos2, theta, beta)
        return SinCos2xHead(gs, gc)
    if kind.name == "l1-sin":
        _, (g,) = l1sin_value_and_grad(head.theta, theta, beta)
        return L1SinHead(g)
    if kind.name == "sin-cos":
        _, (gs, gc) = sincos_value_and_grad(head.sin, head.cos, theta, beta)
        return SinCosHead(gs, gc)
    if kind.name == "multibin":
        _, (gl, grs, grc) = multibin_value_and_grad(
            head.logits, head.res_sin, head.res_cos, theta,
            kind.bin_centers(), kind.bin_coverage(),
        )
        return MultiBinHead(gl, grs, grc)
    _, (gs, gc, gz) = flipaware_value_and_grad(
        head.sin, head.cos, head.flip_logit, theta, beta, include_half, include_flip
    )
    return FlipAwareHead(gs, gc, gz)


def method_loss(kind: MethodKind, head: HeadOutput, gt, beta: float = 1.0,
                include_half: bool = True, include_flip: bool = True) -> LossResult:
    """Total training loss for any method (dispatch over the per-actor ops)."""
    if kind.name == "sin-cos-2x":
        return loss_half(head, gt, beta)
    if kind.name == "l1-sin":
        return loss_l1sin(head, gt, beta)
    if kind.name == "sin-cos":
        return loss_full(head, gt, beta)
    if kind.name == "multibin":
        return loss_multibin(head, gt, kind)
    return loss_final(head, gt, beta, include_half, include_flip)


# ---------------------------------------------------------------------------
# decoding


@dataclass(frozen=True)
class Decoded:
    """Decoded orientation sequence (radians) and optional flip probability."""

    theta: np.ndarray
    flip_prob: Optional[Union[float, np.ndarray]] = None


def _reject_zero_pairs(a, b, what):
    if np.any((a == 0.0) & (b == 0.0)):
        raise ValueError(f"cannot decode {what}: zero (sin, cos) pair has no direction")


def _antipodal_indices(centers):
    n = len(centers)
    anti = np.full(n, -1, dtype=int)
    for i in range(n):
        d = np.abs(wrap_full(centers - centers[i] - math.pi))
        j = int(np.argmin(d))
        if d[j] < 1e-9:
            anti[i] = j
    return anti


def decode(kind: MethodKind, head: HeadOutput) -> Decoded:
    """Map raw head outputs to an orientation sequence per step.

    Half-range methods land in (-90, 90], full-range in (-180, 180].
    Methods with several candidate orientations report the
    highest-probability one; multibin's flip probability is the softmax
    mass of the bin antipodal to the winner, renormalized over that pair,
    taken at the first step.
    """
    if kind.name == "sin-cos-2x":
        _reject_zero_pairs(head.sin2, head.cos2, "sin-cos-2x")
        return Decoded(0.5 * np.arctan2(head.sin2, head.cos2))
    if kind.name == "l1-sin":
        return Decoded(wrap_half(head.theta))
    if kind.name == "sin-cos":
        _reject_zero_pairs(head.sin, head.cos, "sin-cos")
        return Decoded(np.arctan2(head.sin, head.cos))
    if kind.name == "multibin":
        centers = kind.bin_centers()
        best = np.argmax(head.logits, axis=-1)
        rs = np.take_along_axis(head.res_sin, best[..., None], axis=-1)[..., 0]
        rc = np.take_along_axis(head.res_cos, best[..., None], axis=-1)[..., 0]
        _reject_zero_pairs(rs, rc, "multibin residual")
        theta = wrap_full(centers[best] + np.arctan2(rs, rc))
        anti = _antipodal_indices(centers)
        first = head.logits[..., 0, :]
        probs = np.exp(_log_softmax(first))
        best0 = np.argmax(first, axis=-1)
        if np.all(anti >= 0):
            p_best = np.take_along_axis(probs, best0[..., None], axis=-1)[..., 0]
            p_anti = np.take_along_axis(probs, anti[best0][..., None], axis=-1)[..., 0]
            fp = p_anti / (p_best + p_anti)
            fp = float(fp) if fp.ndim == 0 else fp
        else:
            fp = None
        return Decoded(theta, fp)
    _reject_zero_pairs(head.sin, head.cos, "flip-aware")
    fp = sigmoid(head.flip_logit)
    return Decoded(np.arctan2(head.sin, head.cos), fp)


def postprocess_flip(decoded: Decoded) -> Decoded:
    """Flip orientations whose flip probability exceeds 0.5.

    Flipped tracks rotate every step by 180 degrees and report
    1 - flip_prob, so the returned probability never exceeds 0.5.
    Exactly 0.5 is left untouched.
    """
    if decoded.flip_prob is None:
        raise ValueError("postprocess_flip needs a flip probability")
    fp = np.asarray(decoded.flip_prob, dtype=float)
    mask = fp > 0.5
    theta = np.where(mask[..., None], wrap_full(decoded.theta + math.pi), decoded.theta)
    new_fp = np.where(mask, 1.0 - fp, fp)
    if new_fp.ndim == 0:
        return Decoded(theta if decoded.theta.ndim else float(theta), float(new_fp))
    return Decoded(theta, new_fp)
