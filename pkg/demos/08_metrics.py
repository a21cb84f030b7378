"""Score a perturbed segmentation against its reference.

Metrics follow the BraTS conventions: the three composite regions are
whole tumor (labels 1+2+3), tumor core (1+3) and enhancing tumor (3);
largest-component filtering removes spurious islands before scoring.
"""

import numpy as np

from gliomaforge import (
    SegmentationMask,
    connected_components,
    evaluate_case,
    keep_largest_per_class,
    make_case,
)

truth = make_case("demo", shape=(48, 48, 48), seed=9).label

# corrupt the prediction: erode edema a little, add a far-away false blob
pred = truth.labels.copy()
pred[np.argwhere(pred == 2)[::7][:, 0], :, :] = pred[np.argwhere(pred == 2)[::7][:, 0], :, :]
rng = np.random.default_rng(0)
drop = rng.random(pred.shape) < 0.03
pred[(pred == 2) & drop] = 0
pred[2:5, 2:5, 2:5] = 3  # spurious island

_, k = connected_components(pred == 3)
print(f"enhancing-tumor components before filtering: {k}")
cleaned = keep_largest_per_class(SegmentationMask(labels=pred, spacing=truth.spacing))
_, k = connected_components(cleaned.labels == 3)
print(f"enhancing-tumor components after  filtering: {k}")

result = evaluate_case(SegmentationMask(labels=pred, spacing=truth.spacing), truth, "demo")
print("\nregion   dice    hd95   sens    spec")
for name, r in result.regions.items():
    print(
        f"  {name}   {r.dice:.4f}  {r.hd95:5.2f}  {r.sensitivity:.4f}  {r.specificity:.4f}"
    )
