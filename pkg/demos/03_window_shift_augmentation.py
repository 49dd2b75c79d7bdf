"""Window shifting as an augmentation, next to the classical baselines.

Shows (1) sampled training windows for one slice across epochs, (2) why a
shifted window restores liver/tumor contrast on an over-enhanced volume
while additive brightness cannot, and (3) a full gated policy run with its
audit trail.
"""

from dataclasses import replace

import numpy as np

from windowshift import (
    ForegroundStats,
    PhantomSpec,
    WindowShiftPolicy,
    apply_policy,
    apply_window,
    derive_base_window,
    derive_shift_bounds,
    generate,
    generate_cohort,
    make_nnunet_policy,
    make_window_shift_policy,
    normalization_params,
    rescale_unit,
    sample_window_level,
    slice_stream,
)
from windowshift.augment import additive_brightness, equivalent_brightness_range

spec = PhantomSpec(dims=(32, 32, 14), tumor_radius=4.0, noise_std=5.0,
                   liver_hu=120.0, tumor_hu=90.0)
cohort = generate_cohort(16, ("uniform", 0.0, 40.0), seed=7, base_spec=spec)
stats = ForegroundStats()
for vol, mask, _ in cohort:
    stats.accumulate(vol, mask)
base = derive_base_window(stats)
bounds = derive_shift_bounds(stats, p=0.3)
norm = normalization_params(stats, base)

print(f"base window [{base.lower:.0f}, {base.upper:.0f}], "
      f"shift bounds [{bounds.level_low:.0f}, {bounds.level_high:.0f}], p={bounds.probability}")

print("\n== sampled training windows for one slice across epochs ==")
for epoch in range(8):
    gen = slice_stream(123, "phantom-000", 7, epoch)
    window = sample_window_level(bounds, base, gen)
    tag = "shifted" if window is not base else "base   "
    print(f"  epoch {epoch}: {tag} level={window.level:7.2f}")

print("\n== over-enhanced volume: shifted window vs additive brightness ==")
over_vol, over_mask, _ = generate(replace(spec, contrast_boost=100.0, seed=99, source_id="over"))


def separation(window, alpha=None):
    unit = rescale_unit(apply_window(over_vol.voxels, window), window)
    if alpha is not None:
        unit = additive_brightness(unit, alpha)
    liver = float(unit[over_mask.labels == 1].mean(dtype=np.float64))
    tumor = float(unit[over_mask.labels == 2].mean(dtype=np.float64))
    return abs(liver - tumor)


liver_median = float(np.median(over_vol.voxels[over_mask.labels == 1]))
level = min(max(liver_median, bounds.level_low), bounds.level_high)
alpha = (base.level - level) / base.width
print(f"  liver sits near {liver_median:.0f} HU, far above the base window upper bound")
print(f"  separation under base window:            {separation(base):.4f}")
print(f"  separation under window shifted to {level:.0f}: {separation(base.shifted_to(level)):.4f}")
print(f"  separation with additive alpha={alpha:+.3f}:     {separation(base, alpha=alpha):.4f}")
print("  The shift recovers contrast that clipping destroyed; the additive")
print("  baseline moves both tissues equally and cannot.")

print("\n== gated policies with audit trails ==")
shift_policy = make_window_shift_policy(bounds)
nnunet = make_nnunet_policy(p_each=0.15)
alpha_range = equivalent_brightness_range(bounds, base)
print(f"  additive-brightness range equivalent to the shift bounds: "
      f"[{alpha_range[0]:+.3f}, {alpha_range[1]:+.3f}]")

vol, mask, _ = cohort[0]
for name, policy in [("window-shift", shift_policy), ("nn-UNet composite", nnunet)]:
    gen = slice_stream(123, vol.source_id, 7, 0)
    pixels, _, audit = apply_policy(vol.axial_slice(7), mask.axial_slice(7),
                                    policy, base, norm, gen)
    fired = [op["kind"] for op in audit["ops"] if op["fired"]]
    print(f"  {name:18s}: window level {audit['window']['level']:7.2f}, "
          f"fired={fired or ['none']}, output range "
          f"[{pixels.min():.2f}, {pixels.max():.2f}]")
