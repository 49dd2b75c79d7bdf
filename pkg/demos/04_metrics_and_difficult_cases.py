"""Dice overlap and the 20-HU difficult-case rule on designed phantoms."""

import numpy as np

from windowshift import PhantomSpec, dice, generate, identify_difficult, mean_hu_difference

print("== dice coefficient ==")
vol, mask, _ = generate(PhantomSpec(dims=(24, 24, 12), tumor_radius=3.0, seed=1))
truth_tumor = mask.labels == 2

perfect = dice(truth_tumor, truth_tumor)
print(f"  perfect prediction: dice={perfect.dice:.3f} (tp={perfect.tp})")

eroded = truth_tumor.copy()
eroded[:, :, ::2] = False  # drop every other slice of the prediction
partial = dice(eroded, truth_tumor)
print(f"  prediction missing half the slices: dice={partial.dice:.3f} "
      f"(tp={partial.tp}, fn={partial.fn})")

empty = np.zeros_like(truth_tumor)
print(f"  empty prediction: dice={dice(empty, truth_tumor).dice:.3f}")

print("\n== contrast and difficult cases ==")
dataset = []
for i, diff in enumerate(range(5, 55, 5)):
    spec = PhantomSpec(dims=(20, 20, 10), tumor_radius=2.5, noise_std=0.0,
                       liver_hu=100.0, tumor_hu=100.0 - diff,
                       seed=i, source_id=f"case-{diff:02d}hu")
    vol, mask, _ = generate(spec)
    dataset.append((vol, mask))

for vol, mask in dataset[:3]:
    liver, tumor, diff = mean_hu_difference(vol, mask)
    print(f"  {vol.source_id}: liver {liver:.0f} HU, tumor {tumor:.0f} HU, |diff| {diff:.0f} HU")

report = identify_difficult(dataset, threshold_hu=20.0)
print(f"\n  threshold {report.threshold_hu} HU (strictly below counts as hard):")
for entry in report.per_volume:
    flag = "HARD" if entry.difficult else "ok  "
    print(f"    {flag} {entry.source_id}  |mean liver - mean tumor| = {entry.abs_diff_hu:5.1f} HU")
print(f"\n  difficult volumes: {report.difficult_ids()}")
