"""Intensity and geometric augmentations with ordered, gated policies.

Ordering relative to normalization is fixed per operation: window shifting
happens during preprocessing (it replaces the clipping window), additive
brightness and the gamma pair act on [0, 1]-scaled pixels before z-score
normalization, multiplicative brightness and contrast act on z-scored
pixels, and geometric transforms come last. Every spec consumes a fixed
number of random draws whether or not its gate fires, so a policy's draw
sequence is independent of the gating outcomes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import SchemaError, StageContractError
from .stats import ViewingWindow, WindowShiftPolicy
from .windowing import apply_window, rescale_unit, sample_window_level, z_normalize

PHASE_PREPROCESSING = "preprocessing"
PHASE_PRE_NORM = "pre_normalization"
PHASE_POST_NORM = "post_normalization"
PHASE_GEOMETRIC = "geometric"

_PHASE_ORDER = {
    PHASE_PREPROCESSING: 0,
    PHASE_PRE_NORM: 1,
    PHASE_POST_NORM: 2,
    PHASE_GEOMETRIC: 3,
}

# kind -> (phase, name of the range parameter or axes)
_KINDS = {
    "window_shift": (PHASE_PREPROCESSING, None),
    "additive_brightness": (PHASE_PRE_NORM, "alpha_range"),
    "gamma": (PHASE_PRE_NORM, "gamma_range"),
    "gamma_inverse": (PHASE_PRE_NORM, "gamma_range"),
    "multiplicative_brightness": (PHASE_POST_NORM, "beta_range"),
    "contrast": (PHASE_POST_NORM, "beta_range"),
    "flip": (PHASE_GEOMETRIC, "axes"),
    "crop_resize": (PHASE_GEOMETRIC, "scale_range"),
}

POLICY_SCHEMA_VERSION = 1

# Strengths used when the composite baseline does not specify its own;
# these follow the common nn-UNet-style augmentation settings and are
# configurable, not derived from the dataset.
NNUNET_GAMMA_RANGE = (0.7, 1.5)
NNUNET_CONTRAST_RANGE = (0.65, 1.5)
NNUNET_BRIGHTNESS_RANGE = (0.7, 1.3)


# ---------------------------------------------------------------------------
# Pixel transforms
# ---------------------------------------------------------------------------

def _as_f32(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float32)


def _require_unit(x: np.ndarray, op: str) -> None:
    if x.size and (x.min() < 0.0 or x.max() > 1.0):
        raise StageContractError(f"{op} expects pixels in [0, 1], got [{x.min()}, {x.max()}]")


def additive_brightness(x, alpha: float) -> np.ndarray:
    """Shift unit-scaled pixels by alpha. Deliberately not re-clipped."""
    return _as_f32(x) + np.float32(alpha)


def multiplicative_brightness(x, beta: float) -> np.ndarray:
    """Scale z-scored pixels by beta."""
    return _as_f32(x) * np.float32(beta)


def contrast(x, beta: float) -> np.ndarray:
    """Scale z-scored pixels by beta, clamped to the input's own range."""
    x = _as_f32(x)
    lo, hi = x.min(), x.max()
    return np.clip(x * np.float32(beta), lo, hi)


def gamma(x, g: float) -> np.ndarray:
    """x ** g on unit-scaled pixels; stays in [0, 1]."""
    x = _as_f32(x)
    _require_unit(x, "gamma")
    return np.power(x, np.float32(g))


def gamma_inverse(x, g: float) -> np.ndarray:
    """1 - (1 - x) ** g on unit-scaled pixels; stays in [0, 1]."""
    x = _as_f32(x)
    _require_unit(x, "gamma_inverse")
    one = np.float32(1.0)
    return one - np.power(one - x, np.float32(g))


def flip_axis(image, mask, axis: int):
    """Flip image (and mask, when given) along one axis."""
    image = np.flip(_as_f32(image), axis=axis)
    if mask is not None:
        mask = np.flip(mask, axis=axis)
    return image, mask


def flip(image, mask, axes, rng: np.random.Generator):
    """Flip along one axis chosen uniformly from `axes` (consumes 1 draw)."""
    u = rng.random()
    axis = int(axes[int(u * len(axes))])
    return flip_axis(image, mask, axis)


def crop_resize_at(image, mask, scale: float, off_y: float, off_x: float):
    """Crop a sub-window of relative size `scale` and resize back.

    (off_y, off_x) in [0, 1] place the crop within the available margin.
    Image resampling is bilinear, mask resampling nearest-neighbor, so mask
    labels remain a subset of the originals. Output dims equal input dims.
    """
    image = _as_f32(image)
    h, w = image.shape
    ch = int(round(scale * h))
    cw = int(round(scale * w))
    if ch < 1 or cw < 1:
        raise ValueError(f"crop of scale {scale} is smaller than 1 pixel for shape {image.shape}")
    oy = min(int(off_y * (h - ch + 1)), h - ch)
    ox = min(int(off_x * (w - cw + 1)), w - cw)

    crop = image[oy : oy + ch, ox : ox + cw]
    src_y = (np.arange(h, dtype=np.float64) + 0.5) * (ch / h) - 0.5
    src_x = (np.arange(w, dtype=np.float64) + 0.5) * (cw / w) - 0.5
    src_y = np.clip(src_y, 0.0, ch - 1)
    src_x = np.clip(src_x, 0.0, cw - 1)

    y0 = np.floor(src_y).astype(np.int64)
    x0 = np.floor(src_x).astype(np.int64)
    y1 = np.minimum(y0 + 1, ch - 1)
    x1 = np.minimum(x0 + 1, cw - 1)
    ty = (src_y - y0).astype(np.float32)[:, None]
    tx = (src_x - x0).astype(np.float32)[None, :]

    v00 = crop[np.ix_(y0, x0)]
    v01 = crop[np.ix_(y0, x1)]
    v10 = crop[np.ix_(y1, x0)]
    v11 = crop[np.ix_(y1, x1)]
    one = np.float32(1.0)
    out = ((one - ty) * (one - tx) * v00 + (one - ty) * tx * v01
           + ty * (one - tx) * v10 + ty * tx * v11)

    out_mask = None
    if mask is not None:
        ny = np.clip(np.rint(src_y), 0, ch - 1).astype(np.int64)
        nx = np.clip(np.rint(src_x), 0, cw - 1).astype(np.int64)
        out_mask = mask[oy : oy + ch, ox : ox + cw][np.ix_(ny, nx)]
    return out, out_mask


def crop_resize(image, mask, scale_range, rng: np.random.Generator):
    """Randomized crop-and-resize (consumes 3 draws: scale, y, x)."""
    s = rng.random()
    off_y = rng.random()
    off_x = rng.random()
    scale = scale_range[0] + s * (scale_range[1] - scale_range[0])
    return crop_resize_at(image, mask, scale, off_y, off_x)


# ---------------------------------------------------------------------------
# Specs and policies
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AugmentationSpec:
    """One gated augmentation: kind, parameters, gate probability, phase."""

    kind: str
    probability: float
    params: dict = field(default_factory=dict)
    phase: str = ""

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown augmentation kind {self.kind!r}")
        expected_phase = _KINDS[self.kind][0]
        phase = self.phase or expected_phase
        if phase != expected_phase:
            raise ValueError(f"{self.kind} belongs to phase {expected_phase!r}, got {phase!r}")
        object.__setattr__(self, "phase", phase)
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError(f"probability must be in [0, 1], got {self.probability}")
        self._validate_params()
        object.__setattr__(self, "params", dict(self.params))

    def _validate_params(self):
        p = self.params
        if self.kind == "window_shift":
            if not p["level_low"] <= p["level_high"]:
                raise ValueError("window_shift requires level_low <= level_high")
        elif self.kind == "flip":
            axes = tuple(int(a) for a in p["axes"])
            if not axes or any(a not in (0, 1) for a in axes):
                raise ValueError(f"flip axes must be a non-empty subset of (0, 1), got {axes}")
        else:
            name = _KINDS[self.kind][1]
            lo, hi = p[name]
            if not lo <= hi:
                raise ValueError(f"{self.kind} {name} must be a non-empty interval, got ({lo}, {hi})")
            if name == "gamma_range" and not lo > 0:
                raise ValueError(f"gamma range must be positive, got ({lo}, {hi})")
            if name == "scale_range" and not (0 < lo and hi <= 1.0):
                raise ValueError(f"crop scale range must lie in (0, 1], got ({lo}, {hi})")

    def shift_policy(self) -> WindowShiftPolicy:
        if self.kind != "window_shift":
            raise ValueError(f"not a window_shift spec: {self.kind}")
        return WindowShiftPolicy(self.params["level_low"], self.params["level_high"], self.probability)


def window_shift_spec(policy: WindowShiftPolicy) -> AugmentationSpec:
    return AugmentationSpec("window_shift", policy.probability,
                            {"level_low": policy.level_low, "level_high": policy.level_high})


def additive_brightness_spec(alpha_range, probability=0.3) -> AugmentationSpec:
    return AugmentationSpec("additive_brightness", probability, {"alpha_range": tuple(alpha_range)})


def gamma_spec(gamma_range=NNUNET_GAMMA_RANGE, probability=0.3) -> AugmentationSpec:
    return AugmentationSpec("gamma", probability, {"gamma_range": tuple(gamma_range)})


def gamma_inverse_spec(gamma_range=NNUNET_GAMMA_RANGE, probability=0.3) -> AugmentationSpec:
    return AugmentationSpec("gamma_inverse", probability, {"gamma_range": tuple(gamma_range)})


def multiplicative_brightness_spec(beta_range=NNUNET_BRIGHTNESS_RANGE, probability=0.3) -> AugmentationSpec:
    return AugmentationSpec("multiplicative_brightness", probability, {"beta_range": tuple(beta_range)})


def contrast_spec(beta_range=NNUNET_CONTRAST_RANGE, probability=0.3) -> AugmentationSpec:
    return AugmentationSpec("contrast", probability, {"beta_range": tuple(beta_range)})


def flip_spec(axes=(0, 1), probability=0.5) -> AugmentationSpec:
    return AugmentationSpec("flip", probability, {"axes": tuple(int(a) for a in axes)})


def crop_resize_spec(scale_range=(0.7, 1.0), probability=0.2) -> AugmentationSpec:
    return AugmentationSpec("crop_resize", probability, {"scale_range": tuple(scale_range)})


def equivalent_brightness_range(bounds: WindowShiftPolicy, base: ViewingWindow) -> tuple[float, float]:
    """Additive-brightness alpha range matching the window-shift span.

    A level shift of delta moves unit-scaled pixels by delta / W, so the
    matching alpha interval is the shift-bound interval divided by the base
    window width.
    """
    return ((bounds.level_low - base.level) / base.width,
            (bounds.level_high - base.level) / base.width)


@dataclass(frozen=True)
class AugmentationPolicy:
    """Ordered list of augmentation specs, validated against the phase order."""

    specs: tuple[AugmentationSpec, ...] = ()

    def __post_init__(self):
        specs = tuple(self.specs)
        n_pre = sum(1 for s in specs if s.phase == PHASE_PREPROCESSING)
        if n_pre > 1:
            raise ValueError(f"a policy may hold at most one preprocessing spec, found {n_pre}")
        ranks = [_PHASE_ORDER[s.phase] for s in specs]
        if ranks != sorted(ranks):
            raise ValueError("specs must be ordered preprocessing -> pre-normalization -> "
                             "post-normalization -> geometric")
        object.__setattr__(self, "specs", specs)

    def window_shift(self) -> AugmentationSpec | None:
        for s in self.specs:
            if s.kind == "window_shift":
                return s
        return None

    def in_phase(self, phase: str):
        return [s for s in self.specs if s.phase == phase]


def make_nnunet_policy(p_each: float = 0.15,
                       gamma_range=NNUNET_GAMMA_RANGE,
                       contrast_range=NNUNET_CONTRAST_RANGE,
                       brightness_range=NNUNET_BRIGHTNESS_RANGE) -> AugmentationPolicy:
    """Composite baseline: gamma, inverse gamma, mult. brightness, contrast."""
    return AugmentationPolicy((
        gamma_spec(gamma_range, p_each),
        gamma_inverse_spec(gamma_range, p_each),
        multiplicative_brightness_spec(brightness_range, p_each),
        contrast_spec(contrast_range, p_each),
    ))


def make_window_shift_policy(shift: WindowShiftPolicy) -> AugmentationPolicy:
    return AugmentationPolicy((window_shift_spec(shift),))


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------

_INTENSITY_OPS = {
    "additive_brightness": additive_brightness,
    "gamma": gamma,
    "gamma_inverse": gamma_inverse,
    "multiplicative_brightness": multiplicative_brightness,
    "contrast": contrast,
}


def _draw_param(spec: AugmentationSpec, u: float) -> float:
    name = _KINDS[spec.kind][1]
    lo, hi = spec.params[name]
    return lo + u * (hi - lo)


def apply_policy(slice_hu, mask, policy: AugmentationPolicy, base: ViewingWindow,
                 norm: tuple[float, float], rng: np.random.Generator):
    """Run the full training-time pipeline on one slice.

    Phases: (1) window selection (shifted or base) + clip + rescale to
    [0, 1], (2) pre-normalization intensity ops, (3) z-score normalization,
    (4) post-normalization intensity ops, (5) geometric ops applied to image
    and mask together. Each spec draws its gate and parameters from `rng`
    in policy order, with a fixed draw count per spec.

    Returns (pixels, mask, audit) where audit records the window actually
    used and, per spec, whether it fired and with which parameters; `replay`
    reproduces the output from the audit without an RNG.
    """
    mean, std = norm
    audit_ops = []

    shift = policy.window_shift()
    if shift is not None:
        window = sample_window_level(shift.shift_policy(), base, rng)
        shifted = window is not base
        audit_ops.append({"kind": "window_shift", "fired": shifted, "level": window.level})
    else:
        window = base

    x = rescale_unit(apply_window(slice_hu, window), window)

    for spec in policy.in_phase(PHASE_PRE_NORM):
        gate = rng.random()
        param = _draw_param(spec, rng.random())
        fired = gate < spec.probability
        if fired:
            x = _INTENSITY_OPS[spec.kind](x, param)
        audit_ops.append({"kind": spec.kind, "fired": fired, "param": param})

    x = z_normalize(x, mean, std)

    for spec in policy.in_phase(PHASE_POST_NORM):
        gate = rng.random()
        param = _draw_param(spec, rng.random())
        fired = gate < spec.probability
        if fired:
            x = _INTENSITY_OPS[spec.kind](x, param)
        audit_ops.append({"kind": spec.kind, "fired": fired, "param": param})

    out_mask = mask
    for spec in policy.in_phase(PHASE_GEOMETRIC):
        gate = rng.random()
        if spec.kind == "flip":
            u = rng.random()
            axes = spec.params["axes"]
            axis = int(axes[int(u * len(axes))])
            fired = gate < spec.probability
            if fired:
                x, out_mask = flip_axis(x, out_mask, axis)
            audit_ops.append({"kind": "flip", "fired": fired, "axis": axis})
        else:
            scale = _draw_param(spec, rng.random())
            off_y = rng.random()
            off_x = rng.random()
            fired = gate < spec.probability
            if fired:
                x, out_mask = crop_resize_at(x, out_mask, scale, off_y, off_x)
            audit_ops.append({"kind": "crop_resize", "fired": fired,
                              "scale": scale, "off_y": off_y, "off_x": off_x})

    audit = {
        "window": {"level": window.level, "width": window.width},
        "window_shifted": shift is not None and audit_ops[0]["fired"],
        "ops": audit_ops,
    }
    return x, out_mask, audit


def replay(slice_hu, mask, audit: dict, base: ViewingWindow, norm: tuple[float, float]):
    """Re-execute a recorded augmentation without an RNG, bit-exactly."""
    mean, std = norm
    window = base.shifted_to(audit["window"]["level"]) if audit.get("window_shifted") else base
    x = rescale_unit(apply_window(slice_hu, window), window)
    out_mask = mask
    normalized = False
    for op in audit["ops"]:
        kind = op["kind"]
        if kind == "window_shift":
            continue
        phase = _KINDS[kind][0]
        if phase in (PHASE_POST_NORM, PHASE_GEOMETRIC) and not normalized:
            x = z_normalize(x, mean, std)
            normalized = True
        if not op["fired"]:
            continue
        if kind == "flip":
            x, out_mask = flip_axis(x, out_mask, op["axis"])
        elif kind == "crop_resize":
            x, out_mask = crop_resize_at(x, out_mask, op["scale"], op["off_y"], op["off_x"])
        else:
            x = _INTENSITY_OPS[kind](x, op["param"])
    if not normalized:
        x = z_normalize(x, mean, std)
    return x, out_mask


# ---------------------------------------------------------------------------
# Serialization (policy.json)
# ---------------------------------------------------------------------------

def policy_document(policy: AugmentationPolicy) -> dict:
    specs = []
    for s in policy.specs:
        params = {k: (list(v) if isinstance(v, tuple) else v) for k, v in s.params.items()}
        specs.append({"kind": s.kind, "probability": s.probability, "params": params})
    return {"schema_version": POLICY_SCHEMA_VERSION, "specs": specs}


def save_policy(path, policy: AugmentationPolicy) -> None:
    Path(path).write_text(json.dumps(policy_document(policy), indent=2, sort_keys=True) + "\n")


def load_policy(path) -> AugmentationPolicy:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError("(document)", f"not valid JSON: {exc}") from exc
    if doc.get("schema_version") != POLICY_SCHEMA_VERSION:
        raise SchemaError("schema_version", f"expected {POLICY_SCHEMA_VERSION}, got {doc.get('schema_version')}")
    if "specs" not in doc:
        raise SchemaError("specs", "missing")
    specs = []
    for i, entry in enumerate(doc["specs"]):
        try:
            kind = entry["kind"]
            probability = entry["probability"]
            params = {k: (tuple(v) if isinstance(v, list) else v) for k, v in entry.get("params", {}).items()}
            specs.append(AugmentationSpec(kind, probability, params))
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"specs[{i}]", str(exc)) from exc
    try:
        return AugmentationPolicy(tuple(specs))
    except ValueError as exc:
        raise SchemaError("specs", str(exc)) from exc
