"""Built-in property suites behind the `selftest` subcommand.

Each suite re-derives its expected values inline (closed forms, adjoint
identities, finite differences) so a deployment can verify the build
without the development test harness installed.
"""

import io
import math
import traceback

import numpy as np

from .autodiff import Parameter, Tensor, conv3d, transpose_conv3d
from .autodiff.gradcheck import gradcheck
from .harmonize import build_cdf, ks_statistic, match_histogram
from .metrics import connected_components, dice, hd95, keep_largest_per_class
from .model import GliomaForgeNet, ModelConfig
from .nifti import SegmentationMask, Volume, read_volume, write_volume
from .radiomics import first_order_features
from .stratify import kmeans, pca_fit_transform, standardize, stratified_folds
from .synthetic import make_dataset
from .train import AdamW, TrainConfig, composite_loss, cosine_lr, cross_entropy, fit, training_case

SMALL_MODEL = dict(
    stage_channels=[8, 16, 32, 64],
    stage_heads=[1, 2, 4, 8],
    stage_depths=[1, 1, 1, 1],
    decoder_channels=8,
    ffn_expansion=2,
)


def _check(condition, message):
    if not condition:
        raise AssertionError(message)


def suite_format_roundtrip(seed):
    rng = np.random.default_rng(seed)
    for _ in range(20):
        dims = tuple(int(d) for d in rng.integers(4, 12, size=3))
        data = rng.normal(size=dims).astype(np.float32)
        vol = Volume.from_array(data, spacing=tuple(rng.uniform(0.5, 3.0, size=3)))
        back = read_volume(write_volume(vol))
        _check(np.array_equal(back.data, data), "volume payload changed in round-trip")
        _check(
            np.allclose(back.spacing, vol.spacing, atol=1e-6), "spacing changed in round-trip"
        )


def suite_harmonization(seed):
    rng = np.random.default_rng(seed)
    ref = np.zeros((32, 32, 32), dtype=np.float32)
    ref[4:28, 4:28, 4:28] = rng.lognormal(5.0, 0.4, size=(24, 24, 24))
    src = np.zeros_like(ref)
    src[4:28, 4:28, 4:28] = rng.lognormal(5.5, 0.6, size=(24, 24, 24))
    ref_cdf = build_cdf(ref)
    matched = match_histogram(Volume.from_array(src), ref_cdf)
    ks = ks_statistic(matched.data[src != 0], ref[ref != 0])
    _check(ks <= 0.02, f"post-matching KS {ks:.4f} > 0.02")
    self_matched = match_histogram(Volume.from_array(ref), ref_cdf)
    err = np.max(np.abs(self_matched.data - ref) / np.maximum(np.abs(ref), 1.0))
    _check(err <= 1e-6, f"self-matching not identity: rel err {err:.2e}")


def suite_radiomics(seed):
    vol = Volume.from_array(np.array([[[1.0, 2.0], [3.0, 4.0]]] * 2, dtype=np.float32))
    f = first_order_features(vol, bin_width=1.0)
    hand = {
        "mean": 2.5,
        "variance": 1.25,
        "range": 3.0,
        "energy": 2 * (1 + 4 + 9 + 16),
        "root_mean_squared": math.sqrt(7.5),
        "entropy": 2.0,
        "uniformity": 0.25,
        "skewness": 0.0,
        "kurtosis": 1.64,
    }
    for name, want in hand.items():
        got = getattr(f, name)
        _check(abs(got - want) <= 1e-9, f"{name}: {got} != {want}")


def suite_stratification(seed):
    rng = np.random.default_rng(seed)
    centers = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]])
    sizes = (30, 20, 10)
    points = np.vstack(
        [c + 0.1 * rng.standard_normal((n, 2)) for c, n in zip(centers, sizes)]
    )
    truth = np.repeat(np.arange(3), sizes)
    scaled, _, _ = standardize(points)
    model, reduced = pca_fit_transform(scaled, components=2)
    _check(
        np.allclose(model.components @ model.components.T, np.eye(2), atol=1e-8),
        "PCA basis not orthonormal",
    )
    labels, _ = kmeans(reduced, k=3, seed=seed)
    for cluster in range(3):
        member = truth[labels == cluster]
        _check(member.size and np.all(member == member[0]), "k-means split a blob")
    ids = [f"c{i}" for i in range(60)]
    assignment = stratified_folds(ids, labels, n_folds=5, seed=seed)
    for fold in range(5):
        counts = sorted(
            int(np.sum((assignment.folds == fold) & (labels == c))) for c in range(3)
        )
        _check(counts == [2, 4, 6], f"fold {fold} counts {counts} != [2, 4, 6]")


def suite_autodiff(seed):
    rng = np.random.default_rng(seed)
    gradcheck(
        lambda ts: (ts[0] @ ts[1]).sum(),
        [rng.normal(size=(3, 4)), rng.normal(size=(4, 2))],
        tol=1e-6,
    )
    gradcheck(
        lambda ts: conv3d(ts[0], ts[1], stride=1, padding=1).sum(),
        [rng.normal(size=(1, 2, 4, 4, 4)), rng.normal(size=(3, 2, 3, 3, 3))],
        tol=1e-4,
    )
    # conv / transpose-conv adjoint identity: <conv(x), y> = <x, tconv(y)>.
    # The conv weight (out, in, k^3) already has transpose-conv layout
    # (in, out, k^3) when read from y's side.
    x = Tensor(rng.normal(size=(1, 2, 5, 5, 5)))
    w = Tensor(rng.normal(size=(3, 2, 3, 3, 3)))
    y = Tensor(rng.normal(size=(1, 3, 2, 2, 2)))
    lhs = float((conv3d(x, w, stride=2).data * y.data).sum())
    rhs = float((transpose_conv3d(y, w, stride=2).data * x.data).sum())
    _check(abs(lhs - rhs) <= 1e-6 * max(abs(lhs), 1.0), "conv/tconv adjoint identity broken")


def suite_model_contract(seed):
    model = GliomaForgeNet(config=ModelConfig(**SMALL_MODEL), seed=seed)
    x = Tensor(np.random.default_rng(seed).normal(size=(1, 4, 32, 32, 32)).astype(np.float32))
    features = model.encode(model.frequency_stem(x))
    grids = [f.shape[2] for f in features]
    _check(grids == [8, 4, 2, 1], f"pyramid grids {grids}")
    _check(
        [f.shape[1] for f in features] == SMALL_MODEL["stage_channels"],
        "pyramid channel widths off",
    )
    logits = model(x)
    _check(logits.shape == (1, 4, 32, 32, 32), f"logit shape {logits.shape}")
    again = model(x)
    _check(np.array_equal(logits.data, again.data), "forward pass not deterministic")


def suite_loss_optimizer(seed):
    logits = Tensor(np.zeros((1, 4, 2, 2, 2)))
    labels = np.zeros((1, 2, 2, 2), dtype=np.int64)
    ce = cross_entropy(logits, labels).item()
    _check(abs(ce - math.log(4)) <= 1e-6, f"uniform CE {ce} != ln 4")
    truth = np.zeros((1, 4, 4, 4), dtype=np.int64)
    truth[0, 1], truth[0, 2], truth[0, 3] = 1, 2, 3
    perfect = Tensor(np.moveaxis(np.eye(4)[truth], -1, 1) * 20.0)
    _check(composite_loss(perfect, truth).item() <= 1e-4, "perfect-prediction loss too high")
    p = Parameter(np.zeros(1), name="w")
    p.grad = np.ones(1)
    opt = AdamW([p], lr=1e-4, weight_decay=1e-5)
    opt.step()
    _check(abs(p.data[0] + 1e-4) <= 1e-9, f"AdamW first step {p.data[0]}")
    _check(cosine_lr(0, 10, 1e-4) == 1e-4, "cosine start")
    _check(cosine_lr(10, 10, 1e-4) == 0.0, "cosine end")


def suite_metrics(seed):
    a = np.zeros((8, 8, 8), dtype=np.uint8)
    a[2, 2, 2] = 1
    b = np.zeros_like(a)
    b[2, 2, 5] = 1
    _check(abs(hd95(a, b, "WT") - 3.0) <= 1e-12, "hd95 of 3-voxel gap")
    g = np.zeros((6, 6, 6), dtype=np.uint8)
    g[0, :2, :4] = 3
    p = np.zeros_like(g)
    p[0, 0, :4] = 3
    _check(abs(dice(p, g, "ET") - 2 / 3) <= 1e-12, "subset dice")
    m = np.zeros((8, 8, 8), dtype=np.uint8)
    m[1:3, 1:3, 1:3] = 1
    m[1:3, 5:7, 1:3] = 1
    _check(connected_components(m)[1] == 2, "two-blob component count")
    s = np.zeros((8, 8, 8), dtype=np.uint8)
    s[0:2, 0, :5] = 3
    s[6, 6, :3] = 3
    cleaned = keep_largest_per_class(SegmentationMask(labels=s))
    _check((cleaned.labels == 3).sum() == 10, "largest-component filter")
    twice = keep_largest_per_class(cleaned)
    _check(np.array_equal(cleaned.labels, twice.labels), "filter not idempotent")


def suite_training_determinism(seed):
    cases = [training_case(c) for c in make_dataset(2, shape=(32, 32, 32), seed=seed)]
    cfg = TrainConfig(crop_size=32, batch_size=2, seed=seed)
    logs = []
    for _ in range(2):
        model = GliomaForgeNet(config=ModelConfig(**SMALL_MODEL), seed=seed)
        logs.append(fit(model, cases, cases[:1], cfg, epochs=1).log)
    _check(logs[0] == logs[1], "same-seed training runs diverged")


SUITES = (
    ("format-roundtrip", suite_format_roundtrip),
    ("harmonization", suite_harmonization),
    ("radiomics-oracle", suite_radiomics),
    ("stratification", suite_stratification),
    ("autodiff-gradients", suite_autodiff),
    ("model-contract", suite_model_contract),
    ("loss-optimizer", suite_loss_optimizer),
    ("metrics-oracle", suite_metrics),
    ("training-determinism", suite_training_determinism),
)


def run_selftest(seed: int = 42, stream=None) -> int:
    """Run every suite; print one PASS/FAIL line each; return failure count."""
    failures = 0
    for name, suite in SUITES:
        try:
            suite(seed)
        except Exception as err:  # noqa: BLE001 - report any failure mode
            failures += 1
            detail = str(err) or err.__class__.__name__
            print(f"FAIL {name}: {detail}", file=stream)
            if not isinstance(err, AssertionError):
                buf = io.StringIO()
                traceback.print_exc(file=buf)
                print(buf.getvalue(), file=stream)
        else:
            print(f"PASS {name}", file=stream)
    return failures
