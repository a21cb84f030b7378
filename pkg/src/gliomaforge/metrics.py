"""Connected-component postprocessing and BraTS-style evaluation.

Metrics are computed on the three composite regions: whole tumor
(labels 1+2+3), tumor core (1+3) and enhancing tumor (3). Empty-mask
conventions follow common BraTS tooling and are configurable: Dice of two
empty masks is 1.0, HD95 of two empty masks is 0.0, and HD95 with exactly
one empty mask is the sentinel 373.13. The evaluation CSV flags these
conventions in a comment header so they are never silently defaulted.
"""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import binary_erosion, distance_transform_edt
from scipy.ndimage import generate_binary_structure, label as _scipy_label

from .errors import PairingError, ShapeError
from .nifti import SegmentationMask, load_mask

REGIONS = {
    "WT": (1, 2, 3),  # whole tumor
    "TC": (1, 3),  # tumor core
    "ET": (3,),  # enhancing tumor
}
REGION_NAMES = tuple(REGIONS)

HD95_SENTINEL = 373.13


def _as_labels(mask) -> np.ndarray:
    if isinstance(mask, SegmentationMask):
        return mask.labels
    return np.asarray(mask)


def _region_mask(labels: np.ndarray, region: str) -> np.ndarray:
    if region not in REGIONS:
        raise KeyError(f"unknown region {region!r}; expected one of {REGION_NAMES}")
    return np.isin(labels, REGIONS[region])


def _check_dims(pred: np.ndarray, gt: np.ndarray) -> None:
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} vs ground truth {gt.shape}")


# -- connected components --------------------------------------------------


def connected_components(mask, connectivity: int = 26) -> tuple[np.ndarray, int]:
    """Label maximal connected sets 1..K in first-seen scan order."""
    mask = np.asarray(_as_labels(mask)) != 0
    if connectivity == 26:
        structure = generate_binary_structure(3, 3)
    elif connectivity == 6:
        structure = generate_binary_structure(3, 1)
    else:
        raise ValueError(f"connectivity must be 6 or 26, got {connectivity}")
    raw, count = _scipy_label(mask, structure=structure)
    if count == 0:
        return raw.astype(np.int32), 0
    # renumber so component k is the k-th one encountered in scan order
    flat = raw.ravel()
    ids, first = np.unique(flat, return_index=True)
    keep = ids != 0
    order = np.argsort(first[keep])
    remap = np.zeros(int(ids.max()) + 1, dtype=np.int32)
    remap[ids[keep][order]] = np.arange(1, count + 1, dtype=np.int32)
    return remap[raw], count


def keep_largest_per_class(seg: SegmentationMask) -> SegmentationMask:
    """Erase all but the largest 26-connected component of each class.

    Size ties keep the component whose first voxel appears earliest in scan
    order, which is the lowest component label by construction.
    """
    labels = seg.labels.copy()
    for cls in (1, 2, 3):
        comp, count = connected_components(labels == cls)
        if count <= 1:
            continue
        sizes = np.bincount(comp.ravel())[1:]
        winner = int(np.argmax(sizes)) + 1  # argmax keeps the first max: earliest seed
        labels[(comp != 0) & (comp != winner)] = 0
    return SegmentationMask(labels=labels, spacing=seg.spacing)


# -- overlap and distance metrics ------------------------------------------


def dice(pred, gt, region: str) -> float:
    """2|P n G| / (|P| + |G|) on the binarized region; both empty -> 1.0."""
    p = _region_mask(_as_labels(pred), region)
    g = _region_mask(_as_labels(gt), region)
    _check_dims(p, g)
    denom = int(p.sum()) + int(g.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((p & g).sum()) / denom


def _boundary(mask: np.ndarray) -> np.ndarray:
    """Voxels of the mask with at least one face neighbor outside it.

    The volume border counts as outside, so a mask touching the edge still
    has a boundary there.
    """
    interior = binary_erosion(
        mask, structure=generate_binary_structure(3, 1), border_value=0
    )
    return mask & ~interior


def hd95(pred, gt, region: str, spacing=(1.0, 1.0, 1.0), sentinel: float = HD95_SENTINEL) -> float:
    """95th percentile of the union of both directed surface distance sets.

    Distances are Euclidean in millimetres via `spacing`. Both masks empty
    -> 0.0; exactly one empty -> `sentinel` (BraTS convention).
    """
    p = _region_mask(_as_labels(pred), region)
    g = _region_mask(_as_labels(gt), region)
    _check_dims(p, g)
    p_any, g_any = bool(p.any()), bool(g.any())
    if not p_any and not g_any:
        return 0.0
    if p_any != g_any:
        return float(sentinel)
    bp = _boundary(p)
    bg = _boundary(g)
    spacing = tuple(float(s) for s in spacing)
    dist_to_g = distance_transform_edt(~bg, sampling=spacing)
    dist_to_p = distance_transform_edt(~bp, sampling=spacing)
    union = np.concatenate([dist_to_g[bp], dist_to_p[bg]])
    return float(np.percentile(union, 95))


def sensitivity_specificity(pred, gt, region: str) -> tuple[float, float]:
    """Voxelwise TP/(TP+FN) and TN/(TN+FP) on the binarized region.

    An empty denominator scores 1.0 when the prediction agrees (no false
    voxels of the relevant kind) and 0.0 otherwise.
    """
    p = _region_mask(_as_labels(pred), region)
    g = _region_mask(_as_labels(gt), region)
    _check_dims(p, g)
    tp = int((p & g).sum())
    fn = int((~p & g).sum())
    fp = int((p & ~g).sum())
    tn = int((~p & ~g).sum())
    sensitivity = tp / (tp + fn) if tp + fn else (1.0 if fp == 0 else 0.0)
    specificity = tn / (tn + fp) if tn + fp else (1.0 if fn == 0 else 0.0)
    return float(sensitivity), float(specificity)


# -- cohort evaluation -----------------------------------------------------


@dataclass(frozen=True)
class RegionMetrics:
    dice: float
    hd95: float
    sensitivity: float
    specificity: float


@dataclass(frozen=True)
class CaseMetrics:
    case_id: str
    regions: dict[str, RegionMetrics]


def evaluate_case(
    pred: SegmentationMask,
    gt: SegmentationMask,
    case_id: str = "",
    postprocess: bool = True,
    sentinel: float = HD95_SENTINEL,
) -> CaseMetrics:
    """All metrics for one prediction/reference pair.

    `postprocess` applies largest-component filtering to the prediction
    first, matching the inference pipeline.
    """
    if postprocess:
        pred = keep_largest_per_class(pred)
    spacing = gt.spacing
    regions = {}
    for name in REGION_NAMES:
        sens, spec = sensitivity_specificity(pred, gt, name)
        regions[name] = RegionMetrics(
            dice=dice(pred, gt, name),
            hd95=hd95(pred, gt, name, spacing=spacing, sentinel=sentinel),
            sensitivity=sens,
            specificity=spec,
        )
    return CaseMetrics(case_id=case_id, regions=regions)


_METRIC_FIELDS = ("dice", "hd95", "sensitivity", "specificity")


def summarize(results: list[CaseMetrics]) -> dict[str, dict[str, tuple[float, float]]]:
    """Per-region mean and population std of each metric over the cohort."""
    summary = {}
    for name in REGION_NAMES:
        summary[name] = {}
        for metric in _METRIC_FIELDS:
            values = np.array([getattr(r.regions[name], metric) for r in results])
            summary[name][metric] = (float(values.mean()), float(values.std()))
    return summary


def _find_mask_file(directory: Path, case_id: str) -> Path | None:
    for stem in (case_id, f"{case_id}-seg"):
        for ext in (".nii", ".nii.gz"):
            path = directory / f"{stem}{ext}"
            if path.exists():
                return path
    return None


_MODALITY_SUFFIXES = ("-t1", "-t1ce", "-t2", "-flair")


def discover_case_ids(gt_dir) -> list[str]:
    """Case ids present in a reference directory.

    Accepts `<id>-seg` files (full case directories) and bare `<id>` mask
    files side by side; modality volumes are never mistaken for cases.
    """
    ids = set()
    for path in Path(gt_dir).iterdir():
        name = path.name
        for ext in (".nii.gz", ".nii"):
            if not name.endswith(ext):
                continue
            stem = name[: -len(ext)]
            if stem.endswith("-seg"):
                ids.add(stem[:-4])
            elif not stem.endswith(_MODALITY_SUFFIXES):
                ids.add(stem)
            break
    return sorted(ids)


def evaluate(
    pred_dir,
    gt_dir,
    postprocess: bool = True,
    sentinel: float = HD95_SENTINEL,
) -> tuple[list[CaseMetrics], dict]:
    """Evaluate every reference case against its matched prediction file."""
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    case_ids = discover_case_ids(gt_dir)
    if not case_ids:
        raise PairingError(f"no reference masks found in {gt_dir}")
    results = []
    for case_id in case_ids:
        pred_path = _find_mask_file(pred_dir, case_id)
        if pred_path is None:
            raise PairingError(f"no prediction found for case {case_id!r} in {pred_dir}")
        gt_path = _find_mask_file(gt_dir, case_id)
        pred = load_mask(pred_path)
        gt = load_mask(gt_path)
        results.append(
            evaluate_case(pred, gt, case_id=case_id, postprocess=postprocess, sentinel=sentinel)
        )
    return results, summarize(results)


METRICS_HEADER = ("case_id", "region", "dice", "hd95", "sensitivity", "specificity")


def write_metrics_csv(path, results: list[CaseMetrics], summary: dict | None = None) -> None:
    """Per-case rows plus mean/std rows, with the conventions flagged up top."""
    if summary is None:
        summary = summarize(results)
    with open(path, "w", newline="") as fh:
        fh.write(
            "# conventions: dice=1.0 and hd95=0.0 when both masks empty; "
            f"hd95 sentinel={HD95_SENTINEL} when exactly one mask is empty\n"
        )
        writer = csv.writer(fh)
        writer.writerow(METRICS_HEADER)
        for result in results:
            for name in REGION_NAMES:
                r = result.regions[name]
                writer.writerow(
                    (result.case_id, name, repr(r.dice), repr(r.hd95),
                     repr(r.sensitivity), repr(r.specificity))
                )
        for stat, idx in (("mean", 0), ("std", 1)):
            for name in REGION_NAMES:
                writer.writerow(
                    (stat, name)
                    + tuple(repr(summary[name][m][idx]) for m in _METRIC_FIELDS)
                )


def read_metrics_csv(path) -> list[dict]:
    """Rows of the metrics CSV as dicts; comment lines are skipped."""
    with open(path, newline="") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    reader = csv.DictReader(lines)
    rows = []
    for row in reader:
        for key in _METRIC_FIELDS:
            row[key] = float(row[key])
        rows.append(row)
    return rows
