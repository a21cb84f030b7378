"""Acceptance gate: ten go/no-go checks over the whole toolkit.

Each criterion is one test that prints exactly one PASS/FAIL line
(visible with `pytest -s`); on failure the assertion message names the
sub-check that broke. Slow items carry their own wall-clock budgets.
Independent oracles (byte-swapper, flood fill, all-pairs distances,
scalar optimizer) are written out here rather than imported from the
package under test.
"""

import contextlib
import io
import math
import time
from collections import deque

import numpy as np
import pytest

from gliomaforge import nifti
from gliomaforge.autodiff import (
    Parameter,
    Tensor,
    channel_avg,
    channel_max,
    concat,
    conv3d,
    global_avg_pool,
    gradcheck,
    layer_norm,
    no_grad,
    softmax,
    transpose_conv3d,
    trilinear_resize,
)
from gliomaforge.cli import main
from gliomaforge.harmonize import (
    HarmonizationMapping,
    build_cdf,
    ks_statistic,
    match_histogram,
)
from gliomaforge.metrics import (
    HD95_SENTINEL,
    REGIONS,
    connected_components,
    dice,
    hd95,
    keep_largest_per_class,
    sensitivity_specificity,
)
from gliomaforge.model import GliomaForgeNet, _to_tokens
from gliomaforge.nifti import SegmentationMask, Volume, save_case
from gliomaforge.radiomics import FEATURE_NAMES, first_order_features
from gliomaforge.selftest import run_selftest
from gliomaforge.stratify import kmeans, pca_fit_transform, stratified_folds
from gliomaforge.synthetic import make_case, make_dataset
from gliomaforge.train import (
    AdamW,
    composite_loss,
    cosine_lr,
    cross_entropy,
    mean_foreground_dice,
    predict_labels,
    training_case,
)


@contextlib.contextmanager
def reported(number, title):
    """Print one PASS/FAIL line per criterion, even when an assert trips."""
    info = {}
    try:
        yield info
    except BaseException:
        print(f"[criterion {number:2d}] FAIL {title}", flush=True)
        raise
    detail = info.get("detail", "")
    suffix = f": {detail}" if detail else ""
    print(f"[criterion {number:2d}] PASS {title}{suffix}", flush=True)


# -- independent oracles ---------------------------------------------------


def byteswap_buffer(buf: bytes) -> bytes:
    """Swap every header field and data word of a little-endian file."""
    hdr = np.frombuffer(buf[: nifti.HEADER_SIZE], dtype=nifti._header_dtype("<"))
    swapped_hdr = hdr.byteswap().tobytes()
    pad = buf[nifti.HEADER_SIZE : nifti.DEFAULT_VOX_OFFSET]
    payload = np.frombuffer(buf[nifti.DEFAULT_VOX_OFFSET :], dtype="<f4").byteswap().tobytes()
    return swapped_hdr + pad + payload


def _neighbor_offsets(connectivity):
    offsets = []
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dz in (-1, 0, 1):
                if (dx, dy, dz) == (0, 0, 0):
                    continue
                if connectivity == 6 and abs(dx) + abs(dy) + abs(dz) != 1:
                    continue
                offsets.append((dx, dy, dz))
    return offsets


def flood_fill_components(mask, connectivity=26):
    """BFS flood fill labelling components 1..K in scan order."""
    mask = np.asarray(mask) != 0
    out = np.zeros(mask.shape, dtype=np.int32)
    offsets = _neighbor_offsets(connectivity)
    count = 0
    for idx in np.ndindex(mask.shape):
        if not mask[idx] or out[idx]:
            continue
        count += 1
        queue = deque([idx])
        out[idx] = count
        while queue:
            x, y, z = queue.popleft()
            for dx, dy, dz in offsets:
                n = (x + dx, y + dy, z + dz)
                if all(0 <= c < s for c, s in zip(n, mask.shape)):
                    if mask[n] and not out[n]:
                        out[n] = count
                        queue.append(n)
    return out, count


def brute_boundary(mask):
    mask = np.asarray(mask) != 0
    out = np.zeros(mask.shape, dtype=bool)
    for idx in np.argwhere(mask):
        x, y, z = idx
        for dx, dy, dz in _neighbor_offsets(6):
            n = (x + dx, y + dy, z + dz)
            outside = not all(0 <= c < s for c, s in zip(n, mask.shape))
            if outside or not mask[n]:
                out[x, y, z] = True
                break
    return out


def brute_hd95(p, g, spacing=(1.0, 1.0, 1.0)):
    """All-pairs directed boundary distances, 95th percentile of the union."""
    p, g = np.asarray(p) != 0, np.asarray(g) != 0
    if not p.any() and not g.any():
        return 0.0
    if p.any() != g.any():
        return HD95_SENTINEL
    bp = np.argwhere(brute_boundary(p)) * np.asarray(spacing)
    bg = np.argwhere(brute_boundary(g)) * np.asarray(spacing)
    dists = []
    for a in bp:
        dists.append(min(math.dist(a, b) for b in bg))
    for b in bg:
        dists.append(min(math.dist(b, a) for a in bp))
    return float(np.percentile(dists, 95))


def brute_region(labels, region):
    return np.isin(np.asarray(labels), REGIONS[region])


def brute_dice(p, g):
    np_, ng = int(p.sum()), int(g.sum())
    if np_ + ng == 0:
        return 1.0
    return 2.0 * int((p & g).sum()) / (np_ + ng)


def brute_sens_spec(p, g):
    tp = int((p & g).sum())
    fn = int((~p & g).sum())
    fp = int((p & ~g).sum())
    tn = int((~p & ~g).sum())
    sens = tp / (tp + fn) if tp + fn else (1.0 if fp == 0 else 0.0)
    spec = tn / (tn + fp) if tn + fp else (1.0 if fn == 0 else 0.0)
    return float(sens), float(spec)


def brute_keep_largest(labels):
    out = np.asarray(labels).copy()
    for cls in (1, 2, 3):
        comp, count = flood_fill_components(out == cls)
        if count <= 1:
            continue
        best, best_size = 0, -1
        for comp_id in range(1, count + 1):
            size = int(np.sum(comp == comp_id))
            if size > best_size:  # strict: ties keep the earliest component
                best, best_size = comp_id, size
        out[(comp != 0) & (comp != best)] = 0
    return out


def scalar_adamw_reference(theta, g, m, v, t, lr, wd, b1, b2, eps):
    m = b1 * m + (1.0 - b1) * g
    v = b2 * v + (1.0 - b2) * g * g
    m_hat = m / (1.0 - b1**t)
    v_hat = v / (1.0 - b2**t)
    return theta - lr * (m_hat / (math.sqrt(v_hat) + eps) + wd * theta), m, v


def lognormal_ball(shape=(64, 64, 64), radius=26, seed=0, shift=0.0, scale=1.0):
    """Lognormal foreground inside a centered ball, zero background."""
    rng = np.random.default_rng(seed)
    grid = np.zeros(shape, dtype=np.float32)
    zz, yy, xx = np.mgrid[: shape[0], : shape[1], : shape[2]]
    c = [s // 2 for s in shape]
    ball = (zz - c[0]) ** 2 + (yy - c[1]) ** 2 + (xx - c[2]) ** 2 < radius**2
    vals = rng.lognormal(mean=1.0, sigma=0.5, size=int(ball.sum()))
    grid[ball] = (vals * scale + shift).astype(np.float32)
    return Volume.from_array(grid)


# -- criteria --------------------------------------------------------------


def test_criterion_01_format_roundtrip(tmp_path):
    with reported(1, "format round-trip") as info:
        start = time.perf_counter()
        rng = np.random.default_rng(42)
        for i in range(100):
            shape = tuple(int(s) for s in rng.integers(3, 17, size=3))
            data = (rng.normal(scale=100.0, size=shape)).astype(np.float32)
            spacing = tuple(float(s) for s in rng.uniform(0.5, 3.0, size=3))
            vol = Volume.from_array(data, spacing=spacing)
            buf = nifti.write_volume(vol)
            back = nifti.read_volume(buf)
            assert back.data.dtype == np.float32, f"volume {i} dtype {back.data.dtype}"
            assert np.array_equal(
                back.data.view(np.uint32), data.view(np.uint32)
            ), f"volume {i} not bit-exact"
            swapped = nifti.read_volume(byteswap_buffer(buf))
            assert np.array_equal(
                swapped.data.view(np.uint32), data.view(np.uint32)
            ), f"byte-swapped volume {i} parses differently"
            assert swapped.spacing == pytest.approx(vol.spacing)
        path = tmp_path / "one.nii"
        nifti.save_volume(path, vol)
        disk = nifti.load_volume(path)
        assert np.array_equal(disk.data.view(np.uint32), data.view(np.uint32))
        elapsed = time.perf_counter() - start
        assert elapsed < 10.0, f"round-trip took {elapsed:.1f}s"
        info["detail"] = f"100 volumes bit-exact incl. byte-swapped, {elapsed:.1f}s"


def test_criterion_02_harmonization():
    with reported(2, "histogram harmonization") as info:
        start = time.perf_counter()
        src = lognormal_ball(seed=8, shift=5.0, scale=3.0)
        ref = lognormal_ball(seed=9)
        ref_cdf = build_cdf(ref.data)
        matched = match_histogram(src, ref_cdf, quantiles=256)
        stat = ks_statistic(matched.data[matched.data != 0], ref.data[ref.data != 0])
        assert stat <= 0.02, f"KS after matching {stat:.4f} > 0.02"

        out_self = match_histogram(src, build_cdf(src.data), quantiles=256)
        fg = src.data != 0
        rel = np.abs(out_self.data[fg] - src.data[fg]) / np.maximum(
            np.abs(src.data[fg]), 1e-12
        )
        assert rel.max() <= 1e-6, f"self-matching deviates by {rel.max():.2e}"

        mapping = HarmonizationMapping.fit(src.data[fg], ref_cdf)
        rng = np.random.default_rng(7)
        pairs = rng.uniform(-5.0, 60.0, size=(100_000, 2))
        lo, hi = pairs.min(axis=1), pairs.max(axis=1)
        assert np.all(mapping.apply(lo) <= mapping.apply(hi)), "mapping not monotone"
        elapsed = time.perf_counter() - start
        assert elapsed < 30.0, f"harmonization checks took {elapsed:.1f}s"
        info["detail"] = f"KS {stat:.4f}, identity, 1e5 monotone pairs, {elapsed:.1f}s"


def test_criterion_03_radiomics():
    with reported(3, "first-order feature oracle") as info:
        assert len(FEATURE_NAMES) == 18

        def vol_from(values, spacing=(1.0, 1.0, 1.0)):
            arr = np.asarray(values, dtype=np.float32).reshape(-1, 1, 1)
            return Volume.from_array(arr, spacing=spacing)

        # hand-worked moments of {1,2,3,4} at bin width 1
        hand = {
            "mean": 2.5,
            "median": 2.5,
            "minimum": 1.0,
            "maximum": 4.0,
            "range": 3.0,
            "p10": 1.3,
            "p90": 3.7,
            "interquartile_range": 1.5,
            "variance": 1.25,
            "skewness": 0.0,
            "kurtosis": 1.64,
            "mean_absolute_deviation": 1.0,
            "robust_mean_absolute_deviation": 0.5,
            "energy": 30.0,
            "total_energy": 30.0,
            "root_mean_squared": math.sqrt(7.5),
            "entropy": 2.0,
            "uniformity": 0.25,
        }
        assert sorted(hand) == sorted(FEATURE_NAMES)
        fv = first_order_features(vol_from([1, 2, 3, 4]), bin_width=1.0)
        for name, want in hand.items():
            got = getattr(fv, name)
            assert got == pytest.approx(want, abs=1e-9), f"{name}: {got} != {want}"

        # constant block: degenerate closed forms
        grid = np.zeros((4, 4, 4), dtype=np.float32)
        grid[1:3, 1:3, 1:3] = 7.0
        flat = {
            "mean": 7.0,
            "median": 7.0,
            "minimum": 7.0,
            "maximum": 7.0,
            "range": 0.0,
            "p10": 7.0,
            "p90": 7.0,
            "interquartile_range": 0.0,
            "variance": 0.0,
            "skewness": 0.0,
            "kurtosis": 0.0,
            "mean_absolute_deviation": 0.0,
            "robust_mean_absolute_deviation": 0.0,
            "energy": 49.0 * 8,
            "total_energy": 49.0 * 8,
            "root_mean_squared": 7.0,
            "entropy": 0.0,
            "uniformity": 1.0,
        }
        fc = first_order_features(Volume.from_array(grid))
        for name, want in flat.items():
            got = getattr(fc, name)
            assert got == pytest.approx(want, abs=1e-9), f"constant {name}: {got}"

        # dyadic rationals keep the float32 shift exact
        rng = np.random.default_rng(2)
        base = rng.integers(4, 1600, size=400) / 4.0
        k, s = 13.5, 2.5
        a = first_order_features(vol_from(base))
        b = first_order_features(vol_from(base + k))
        c = first_order_features(vol_from(base * s))
        for name in ("mean", "median", "minimum", "maximum", "p10", "p90"):
            assert getattr(b, name) == pytest.approx(getattr(a, name) + k, abs=1e-9)
        for name in ("variance", "skewness", "kurtosis", "mean_absolute_deviation"):
            assert getattr(b, name) == pytest.approx(getattr(a, name), abs=1e-9)
        assert c.variance == pytest.approx(a.variance * s * s, rel=1e-9)
        assert c.skewness == pytest.approx(a.skewness, rel=1e-9)
        assert c.kurtosis == pytest.approx(a.kurtosis, rel=1e-9)
        info["detail"] = "18 features, hand values 1e-9, shift/scale invariance"


def test_criterion_04_stratification():
    with reported(4, "PCA + clustered fold assignment") as info:
        rng = np.random.default_rng(0)
        data = rng.normal(size=(60, 12)) @ rng.normal(size=(12, 12))
        model, scores = pca_fit_transform(data, components=5)
        gram = model.components.T @ model.components
        assert np.max(np.abs(gram - np.eye(5))) <= 1e-8, "basis not orthonormal"
        cov = scores.T @ scores / (len(scores) - 1)
        off = np.abs(cov - np.diag(np.diag(cov)))
        assert np.max(off) <= 1e-8 * np.max(np.abs(cov)), "score covariance not diagonal"

        def blobs(rng, sizes, centers, spread=0.4):
            pts = np.vstack(
                [c + spread * rng.standard_normal((n, 3)) for c, n in zip(centers, sizes)]
            )
            return pts, np.repeat(np.arange(len(sizes)), sizes)

        centers = np.array([[0.0, 0.0, 0.0], [10.0, 0.0, 5.0], [0.0, 10.0, 10.0]])
        for seed in range(10):
            pts, truth = blobs(np.random.default_rng(100 + seed), (12, 9, 7), centers)
            labels, _ = kmeans(pts, k=3, seed=seed)
            mapped = {}
            for lab in range(3):
                targets = np.unique(truth[labels == lab])
                assert targets.size == 1, f"seed {seed}: cluster {lab} split across blobs"
                mapped[lab] = int(targets[0])
            assert len(set(mapped.values())) == 3, f"seed {seed}: clusters merged"

        pts, _ = blobs(np.random.default_rng(5), (30, 20, 10), centers)
        labels, _ = kmeans(pts, k=3, seed=5)
        assert sorted(np.bincount(labels).tolist()) == [10, 20, 30]
        ids = [f"case-{i:02d}" for i in range(60)]
        assignment = stratified_folds(ids, labels, n_folds=5, seed=5)
        for fold in range(5):
            members = assignment.folds == fold
            counts = sorted(int(np.sum(members & (labels == c))) for c in range(3))
            assert counts == [2, 4, 6], f"fold {fold} composition {counts}"
        info["detail"] = "orthonormal basis, 10/10 blob recoveries, 6/4/2 folds"


def test_criterion_05_autodiff():
    with reported(5, "gradient checks and adjoints") as info:
        start = time.perf_counter()

        def shifted(rng, size):
            x = rng.normal(size=size)
            return x + 0.25 * np.sign(x)  # keep relu/max inputs off the kink

        ops = {
            "arith_chain": lambda rng: (
                lambda t: ((t[0] * t[1] + t[0] - t[1] / (t[0] * t[0] + 2.0)).exp().log()
                           * t[0].sigmoid()).sum(),
                [rng.uniform(0.5, 2, size=(4, 3)), rng.uniform(0.5, 2, size=(4, 3))],
            ),
            "pow_neg": lambda rng: (
                lambda t: ((t[0] ** 3).sum() + (-t[0]).mean()),
                [rng.uniform(0.5, 2, size=(3, 4))],
            ),
            "relu": lambda rng: (
                lambda t: (t[0].relu() * t[1]).sum(),
                [shifted(rng, (5, 6)), rng.normal(size=(5, 6))],
            ),
            "gelu": lambda rng: (lambda t: t[0].gelu().sum(), [rng.normal(size=(7,))]),
            "matmul": lambda rng: (
                lambda t: (t[0] @ t[1]).sum(),
                [rng.normal(size=(3, 4)), rng.normal(size=(4, 2))],
            ),
            "matmul_batched": lambda rng: (
                lambda t: (t[0] @ t[1]).sum(),
                [rng.normal(size=(2, 3, 4)), rng.normal(size=(2, 4, 5))],
            ),
            "sum_mean_axes": lambda rng: (
                lambda t: (t[0].sum(axis=1) * t[0].mean(axis=0)).sum(),
                [rng.normal(size=(3, 3))],
            ),
            "reshape_permute_slice": lambda rng: (
                lambda t: (t[0].reshape(6, 4).permute(1, 0)[1:3] * 2.0).sum(),
                [rng.normal(size=(2, 3, 4))],
            ),
            "concat": lambda rng: (
                lambda t: concat([t[0], t[1]], axis=1).mean(),
                [rng.normal(size=(2, 3)), rng.normal(size=(2, 4))],
            ),
            "softmax": lambda rng: (
                (lambda picked: lambda t: (softmax(t[0], axis=-1) * picked).sum())(
                    Tensor(rng.normal(size=(3, 5)))
                ),
                [rng.normal(size=(3, 5))],
            ),
            "layer_norm": lambda rng: (
                lambda t: layer_norm(t[0], t[1], t[2]).sigmoid().sum(),
                [rng.normal(size=(4, 6)), rng.normal(size=(6,)), rng.normal(size=(6,))],
            ),
            "conv3d_grouped": lambda rng: (
                lambda t: conv3d(t[0], t[1], bias=t[2], stride=1, padding=1, groups=2).sum(),
                [
                    rng.normal(size=(1, 2, 4, 4, 4)),
                    rng.normal(size=(2, 1, 3, 3, 3)),
                    rng.normal(size=(2,)),
                ],
            ),
            "conv3d_strided": lambda rng: (
                lambda t: conv3d(t[0], t[1], stride=2, padding=1).sum(),
                [rng.normal(size=(2, 3, 5, 5, 5)), rng.normal(size=(4, 3, 3, 3, 3))],
            ),
            "transpose_conv3d": lambda rng: (
                lambda t: transpose_conv3d(t[0], t[1], bias=t[2], stride=2).sum(),
                [
                    rng.normal(size=(1, 2, 3, 3, 3)),
                    rng.normal(size=(2, 3, 2, 2, 2)),
                    rng.normal(size=(3,)),
                ],
            ),
            "pooling": lambda rng: (
                lambda t: (channel_max(t[0]) * channel_avg(t[0])).sum()
                + global_avg_pool(t[0]).sum(),
                [shifted(rng, (2, 3, 2, 2, 2))],
            ),
            "trilinear_resize": lambda rng: (
                lambda t: trilinear_resize(t[0], (5, 4, 6)).sum(),
                [rng.normal(size=(1, 2, 3, 3, 3))],
            ),
        }
        worst = {}
        for name, make in ops.items():
            for seed in (0, 1, 2):
                rng = np.random.default_rng(seed)
                build, arrays = make(rng)
                err = gradcheck(build, arrays)
                worst[name] = max(worst.get(name, 0.0), err)
                assert err < 1e-4, f"{name} seed {seed}: rel err {err:.2e}"

        # adjoint identities: <y, A x> == <A^T y, x>
        rng = np.random.default_rng(7)
        x = rng.normal(size=(2, 3, 5, 5, 5))
        w = rng.normal(size=(4, 3, 3, 3, 3))
        fwd = conv3d(Tensor(x), Tensor(w), stride=2)
        y = rng.normal(size=fwd.shape)
        back = transpose_conv3d(Tensor(y), Tensor(w), stride=2)
        assert np.sum(fwd.data * y) == pytest.approx(np.sum(x * back.data), abs=1e-6)

        for pool in (channel_avg, global_avg_pool):
            xt = Tensor(rng.normal(size=(2, 3, 4, 4, 4)), requires_grad=True)
            out = pool(xt)
            v = rng.normal(size=out.shape)
            (out * Tensor(v)).sum().backward()
            assert np.sum(out.data * v) == pytest.approx(
                np.sum(xt.grad * xt.data), abs=1e-6
            ), f"{pool.__name__} adjoint broken"

        elapsed = time.perf_counter() - start
        assert elapsed < 300.0, f"gradient checks took {elapsed:.0f}s"
        info["detail"] = (
            f"{len(ops)} op families x 3 seeds, worst rel err "
            f"{max(worst.values()):.1e}, adjoints 1e-6, {elapsed:.0f}s"
        )


def test_criterion_06_architecture_contract():
    with reported(6, "architecture shape contract") as info:
        net = GliomaForgeNet(seed=0)
        rng = np.random.default_rng(7)
        x = Tensor(rng.normal(size=(1, 4, 64, 64, 64)).astype(np.float32))
        with no_grad():
            stem = net.frequency_stem(x)
            pyramid = net.encode(stem)
            logits = net.decoder(pyramid, net.dual(pyramid[3]))
        assert [p.shape for p in pyramid] == [
            (1, 48, 16, 16, 16),
            (1, 96, 8, 8, 8),
            (1, 192, 4, 4, 4),
            (1, 384, 2, 2, 2),
        ], "feature pyramid off contract"
        assert logits.shape == (1, 4, 64, 64, 64)
        assert np.all(np.isfinite(logits.data))

        # attention maps from the live forward pass at the first and last stage
        with no_grad():
            for stage, feed in ((net.stages[0], stem), (net.stages[3], pyramid[2])):
                merged = stage.merge(feed)
                tokens = _to_tokens(merged)
                block = stage.blocks[0]
                weights, _ = block.attn.attention_map(block.norm1(tokens), merged.shape[2:])
                assert np.all(weights.data > 0.0) and np.all(weights.data < 1.0), (
                    "attention weights leave (0, 1)"
                )
                np.testing.assert_allclose(weights.data.sum(axis=-1), 1.0, atol=1e-6)

        # stem split must recombine to the high-path conv for arbitrary weights
        wrng = np.random.default_rng(0)
        net.stem_low.weight.data = wrng.normal(size=net.stem_low.weight.shape).astype(np.float32)
        net.stem_high.weight.data = wrng.normal(size=net.stem_high.weight.shape).astype(np.float32)
        probe = Tensor(wrng.normal(size=(1, 4, 6, 6, 6)).astype(np.float32))
        with no_grad():
            out = net.frequency_stem(probe)
            high_conv = net.stem_high(probe)
        recombined = out.data[:, :4] + out.data[:, 4:]
        np.testing.assert_allclose(recombined, high_conv.data, atol=1e-6)
        info["detail"] = "pyramid [48,96,192,384] @ 16/8/4/2, logits, gates, stem identity"


def test_criterion_07_loss_and_optimizer():
    with reported(7, "loss and optimizer oracles") as info:
        logits = Tensor(np.zeros((1, 4, 2, 2, 2)))
        labels = np.zeros((1, 2, 2, 2), dtype=np.int64)
        assert cross_entropy(logits, labels).item() == pytest.approx(
            math.log(4), abs=1e-6
        ), "uniform CE != ln 4"

        truth = np.zeros((1, 4, 4, 4), dtype=np.int64)
        truth[0, 1], truth[0, 2], truth[0, 3] = 1, 2, 3
        saturated = Tensor(np.moveaxis(np.eye(4)[truth], -1, 1) * 20.0)
        perfect = composite_loss(saturated, truth).item()
        assert perfect <= 1e-4, f"composite loss on perfect prediction {perfect:.2e}"

        rng = np.random.default_rng(42)
        lr, wd, b1, b2, eps = 3e-4, 1e-2, 0.9, 0.999, 1e-8
        for i in range(100):
            theta = float(rng.normal())
            g = float(rng.normal())
            m0 = float(rng.normal() * 0.1)
            v0 = float(abs(rng.normal()) * 0.1)
            t_prev = int(rng.integers(0, 50))
            p = Parameter(np.array([theta]), name="w")
            p.grad = np.array([g])
            opt = AdamW([p], lr=lr, weight_decay=wd, beta1=b1, beta2=b2, eps=eps)
            opt.m[0] = np.array([m0])
            opt.v[0] = np.array([v0])
            opt.step_count = t_prev
            opt.step()
            expected, _, _ = scalar_adamw_reference(
                theta, g, m0, v0, t_prev + 1, lr, wd, b1, b2, eps
            )
            assert p.data[0] == pytest.approx(expected, abs=1e-12), f"triple {i}"

        assert cosine_lr(0, 200, 1e-4) == 1e-4, "cosine start not exact"
        assert cosine_lr(200, 200, 1e-4) == 0.0, "cosine end not exact"
        info["detail"] = "ln 4, perfect composite, 100 scalar steps 1e-12, endpoints"


def test_criterion_08_overfit_convergence():
    with reported(8, "overfit convergence") as info:
        start = time.perf_counter()
        cases = [training_case(c) for c in make_dataset(4, shape=(32, 32, 32), seed=11)]
        images = np.stack([c.images for c in cases])
        labels = np.stack([c.label for c in cases])

        def train_dice(model):
            return float(
                np.mean(
                    [
                        mean_foreground_dice(predict_labels(model, c.images), c.label)
                        for c in cases
                    ]
                )
            )

        model = GliomaForgeNet(seed=1)
        opt = AdamW(model.parameters(), lr=1e-3, weight_decay=1e-5)
        rng = np.random.default_rng(1)
        order = np.arange(len(cases))
        max_steps, batch = 200, 4
        step, reached, score = 0, None, 0.0
        while step < max_steps and reached is None:
            rng.shuffle(order)
            for first in range(0, len(order), batch):
                idx = order[first : first + batch]
                model.zero_grad()
                loss = composite_loss(model(Tensor(images[idx])), labels[idx])
                loss.backward()
                opt.step(lr=cosine_lr(step, max_steps, 1e-3))
                step += 1
                if step % 20 == 0 or step == max_steps:
                    score = train_dice(model)
                    if score >= 0.90:
                        reached = step
                        break
            if reached is not None:
                break
        elapsed = time.perf_counter() - start
        assert reached is not None, (
            f"train dice only {score:.4f} after {step} steps ({elapsed / 60:.1f} min)"
        )
        assert elapsed <= 1800.0, f"took {elapsed / 60:.1f} min > 30 min"
        info["detail"] = (
            f"train dice {score:.4f} >= 0.90 at step {reached}, {elapsed / 60:.1f} min"
        )


def test_criterion_09_metrics_oracle():
    with reported(9, "metrics vs brute-force oracles") as info:
        rng = np.random.default_rng(0)
        for i in range(100):
            pred = rng.integers(0, 4, size=(8, 8, 8)).astype(np.uint8)
            gt = rng.integers(0, 4, size=(8, 8, 8)).astype(np.uint8)
            if i % 7 == 0:  # exercise the empty-mask conventions too
                pred[:] = 0
            for region in REGIONS:
                p, g = brute_region(pred, region), brute_region(gt, region)
                assert dice(pred, gt, region) == brute_dice(p, g), f"dice {i} {region}"
                assert sensitivity_specificity(pred, gt, region) == brute_sens_spec(
                    p, g
                ), f"sens/spec {i} {region}"
                assert hd95(pred, gt, region) == pytest.approx(
                    brute_hd95(p, g), abs=1e-9
                ), f"hd95 {i} {region}"
            mask = rng.random((8, 8, 8)) < 0.2
            for connectivity in (6, 26):
                got, k = connected_components(mask, connectivity=connectivity)
                want, k_want = flood_fill_components(mask, connectivity=connectivity)
                assert k == k_want and np.array_equal(got, want), f"components {i}"
            filtered = keep_largest_per_class(
                SegmentationMask(labels=pred, spacing=(1.0, 1.0, 1.0))
            )
            assert np.array_equal(
                filtered.labels, brute_keep_largest(pred)
            ), f"largest-component filter {i}"

        two = np.zeros((8, 8, 8), dtype=np.uint8)
        other = np.zeros((8, 8, 8), dtype=np.uint8)
        two[1, 1, 1] = 1
        other[1, 1, 4] = 1
        assert hd95(two, other, "WT") == 3.0, "3 mm voxel pair"
        assert hd95(two, np.zeros_like(two), "WT") == HD95_SENTINEL
        info["detail"] = "100 mask pairs exact across 3 regions, 3 mm pair = 3.0"


def test_criterion_10_end_to_end_determinism(tmp_path):
    with reported(10, "end-to-end determinism") as info:
        sink = io.StringIO()
        failures = run_selftest(seed=42, stream=sink)
        assert failures == 0, f"selftest reported {failures} failures:\n{sink.getvalue()}"

        raw, ref, one = tmp_path / "raw", tmp_path / "ref", tmp_path / "one"
        cases = make_dataset(4, shape=(32, 32, 32), seed=40)
        for case in cases:
            save_case(raw, case)
        save_case(ref, make_case("reference", shape=(32, 32, 32), seed=999))
        save_case(one, cases[0])
        cfg = tmp_path / "tiny.cfg"
        cfg.write_text(
            "seed = 7\n"
            "[train]\n"
            "lr = 1e-3\n"
            "crop_size = 32\n"
            "batch_size = 2\n"
            "[model]\n"
            "stage_channels = 8,16,32,64\n"
            "stage_heads = 1,2,4,8\n"
            "stage_depths = 1,1,1,1\n"
            "decoder_channels = 8\n"
            "ffn_expansion = 2\n"
        )

        def run_chain(root):
            harm = root / "harm"
            calls = [
                ["harmonize", "--ref-dir", str(ref), "--in", str(raw), "--out", str(harm)],
                ["features", "--in", str(harm), "--out", str(root / "features.csv")],
                [
                    "stratify", "--features", str(root / "features.csv"),
                    "--k", "2", "--folds", "3", "--seed", "7",
                    "--out", str(root / "folds.csv"),
                ],
                [
                    "pretrain", "--data", str(harm), "--config", str(cfg),
                    "--epochs", "1", "--out", str(root / "pre.ck"),
                ],
                [
                    "finetune", "--data", str(harm), "--folds", str(root / "folds.csv"),
                    "--val-fold", "0", "--ckpt", str(root / "pre.ck"),
                    "--config", str(cfg), "--epochs", "2",
                    "--out", str(root / "fin.ck"),
                ],
                [
                    "predict", "--ckpt", str(root / "fin.ck"), "--in", str(one),
                    "--out", str(root / "pred" / f"{cases[0].case_id}.nii"),
                ],
                [
                    "evaluate", "--pred", str(root / "pred"), "--gt", str(one),
                    "--out", str(root / "metrics.csv"),
                ],
            ]
            for argv in calls:
                code = main(argv)
                assert code == 0, f"{argv[0]} exited {code}"

        run_chain(tmp_path / "run1")
        run_chain(tmp_path / "run2")
        first = sorted(
            p.relative_to(tmp_path / "run1")
            for p in (tmp_path / "run1").rglob("*")
            if p.is_file()
        )
        second = sorted(
            p.relative_to(tmp_path / "run2")
            for p in (tmp_path / "run2").rglob("*")
            if p.is_file()
        )
        assert first == second, "runs produced different artifact sets"
        for rel in first:
            a = (tmp_path / "run1" / rel).read_bytes()
            b = (tmp_path / "run2" / rel).read_bytes()
            assert a == b, f"{rel} differs between runs"
        info["detail"] = f"selftest clean, {len(first)} artifacts byte-identical"
