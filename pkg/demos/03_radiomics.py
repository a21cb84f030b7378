"""Extract the 18 first-order radiomic features from a phantom's FLAIR.

Features are intensity statistics over the nonzero brain voxels; the
histogram-based ones (entropy, uniformity) use fixed-width bins anchored
at a multiple of the bin width, so they are invariant to voxel order.
"""

from dataclasses import fields

from gliomaforge import FeatureVector, extract_case_features, make_case

case = make_case("demo", shape=(48, 48, 48), seed=5)
features = extract_case_features(case, modality="flair", bin_width=25.0)

print(f"case {features.case_id}: first-order features (FLAIR, bin width 25)")
for f in fields(FeatureVector):
    if f.name == "case_id":
        continue
    print(f"  {f.name:32s} {getattr(features, f.name):14.4f}")
