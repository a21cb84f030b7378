"""Command-line pipeline: harmonize, features, stratify, pretrain,
finetune, predict, evaluate, selftest.

Exit codes: 0 success, 1 usage error (or selftest failure), 2 data error.
Every stochastic subcommand takes --seed; without it the config file's
`seed`, then the GLIOMAFORGE_SEED environment variable, then 42 apply.
All file outputs are written to a temp name and renamed into place, so an
interrupted run never leaves a partial artifact.
"""

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .autodiff import Tensor, no_grad
from .errors import ConfigError, GliomaForgeError, PairingError
from .harmonize import build_cdf, match_histogram, zscore_normalize
from .metrics import evaluate as evaluate_dirs
from .metrics import keep_largest_per_class, write_metrics_csv
from .model import GliomaForgeNet, ModelConfig
from .nifti import (
    MODALITIES,
    MultiModalCase,
    SegmentationMask,
    load_case,
    save_mask,
    save_volume,
)
from .radiomics import DEFAULT_BIN_WIDTH, extract_case_features, read_features_csv, write_features_csv
from .selftest import run_selftest
from .stratify import (
    DEFAULT_CLUSTERS,
    DEFAULT_COMPONENTS,
    DEFAULT_FOLDS,
    DEFAULT_SEED,
    read_folds_csv,
    stratify_cases,
    write_folds_csv,
)
from .train import TrainConfig, fit, training_case

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2

DEFAULT_QUANTILES = 256


class _Parser(argparse.ArgumentParser):
    """argparse defaults to exit code 2 on usage errors; we reserve 2 for
    data errors, so remap to 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


@contextmanager
def atomic_output(path):
    """Yield a temp path that replaces `path` only on success.

    The temp name keeps the final suffixes so suffix-driven behavior
    (e.g. .nii.gz compression) is unchanged.
    """
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".tmp{os.getpid()}.{path.name}")
    try:
        yield tmp
        os.replace(tmp, path)
    finally:
        tmp.unlink(missing_ok=True)


def discover_case_dirs_ids(directory) -> list[str]:
    """Case ids in a data directory, from <id>-t1.nii[.gz] files."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"data directory {directory} does not exist")
    ids = set()
    for path in directory.iterdir():
        name = path.name
        for ext in (".nii.gz", ".nii"):
            if name.endswith("-t1" + ext):
                ids.add(name[: -len("-t1" + ext)])
    return sorted(ids)


def _load_config(args) -> dict[str, str]:
    path = getattr(args, "config", None)
    return cfgmod.read_config(path) if path else {}


def resolve_seed(args, config) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    if "seed" in config:
        return int(config["seed"])
    env = os.environ.get("GLIOMAFORGE_SEED")
    if env is not None:
        return int(env)
    return DEFAULT_SEED


def _map_cases(work, tasks, jobs):
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(work, tasks))
    return [work(task) for task in tasks]


# -- harmonize -------------------------------------------------------------


def _reference_cdfs(ref_dir, quantiles):
    ref_dir = Path(ref_dir)
    ids = discover_case_dirs_ids(ref_dir)
    if not ids:
        raise PairingError(f"no reference cases found in {ref_dir}")
    pooled = {mod: [] for mod in MODALITIES}
    for case_id in ids:
        case = load_case(ref_dir, case_id)
        for mod in MODALITIES:
            data = case.modalities[mod].data
            pooled[mod].append(data[data != 0])
    return {mod: build_cdf(np.concatenate(chunks)) for mod, chunks in pooled.items()}


def _harmonize_one(task):
    in_dir, out_dir, case_id, cdfs, quantiles, compress = task
    case = load_case(in_dir, case_id)
    ext = ".nii.gz" if compress else ".nii"
    for mod in MODALITIES:
        matched = match_histogram(case.modalities[mod], cdfs[mod], quantiles=quantiles)
        with atomic_output(Path(out_dir) / f"{case_id}-{mod}{ext}") as tmp:
            save_volume(tmp, matched)
    if case.label is not None:
        with atomic_output(Path(out_dir) / f"{case_id}-seg{ext}") as tmp:
            save_mask(tmp, case.label)
    return case_id


def cmd_harmonize(args) -> int:
    config = _load_config(args)
    quantiles = args.quantiles or int(config.get("quantiles", DEFAULT_QUANTILES))
    ids = discover_case_dirs_ids(args.in_dir)
    if not ids:
        raise PairingError(f"no cases found in {args.in_dir}")
    cdfs = _reference_cdfs(args.ref_dir, quantiles)
    Path(args.out).mkdir(parents=True, exist_ok=True)
    tasks = [(args.in_dir, args.out, cid, cdfs, quantiles, args.compress) for cid in ids]
    for case_id in _map_cases(_harmonize_one, tasks, args.jobs):
        print(f"harmonized {case_id}")
    return EXIT_OK


# -- features --------------------------------------------------------------


def _features_one(task):
    in_dir, case_id, modality, bin_width = task
    case = load_case(in_dir, case_id)
    return extract_case_features(case, modality=modality, bin_width=bin_width)


def cmd_features(args) -> int:
    config = _load_config(args)
    modality = args.modality or config.get("modality", "flair")
    bin_width = args.bin_width or float(config.get("bin_width", DEFAULT_BIN_WIDTH))
    ids = discover_case_dirs_ids(args.in_dir)
    if not ids:
        raise PairingError(f"no cases found in {args.in_dir}")
    tasks = [(args.in_dir, cid, modality, bin_width) for cid in ids]
    rows = _map_cases(_features_one, tasks, args.jobs)
    with atomic_output(args.out) as tmp:
        write_features_csv(tmp, rows)
    print(f"wrote {len(rows)} feature rows to {args.out}")
    return EXIT_OK


# -- stratify --------------------------------------------------------------


def cmd_stratify(args) -> int:
    config = _load_config(args)
    seed = resolve_seed(args, config)
    k = args.k or int(config.get("clusters", DEFAULT_CLUSTERS))
    components = args.pca or int(config.get("components", DEFAULT_COMPONENTS))
    n_folds = args.folds or int(config.get("folds", DEFAULT_FOLDS))
    case_ids, matrix = read_features_csv(args.features)
    # clamp the PCA width to what the cohort can support
    limit = min(len(case_ids) - 1, matrix.shape[1])
    if components > limit:
        print(f"reducing pca components {components} -> {limit} for n={len(case_ids)}")
        components = limit
    assignment = stratify_cases(
        case_ids, matrix, k=k, pca_components=components, n_folds=n_folds, seed=seed
    )
    with atomic_output(args.out) as tmp:
        write_folds_csv(tmp, assignment)
    print(f"wrote fold assignment for {len(case_ids)} cases to {args.out}")
    return EXIT_OK


# -- training --------------------------------------------------------------


def _load_training_cases(data_dir, ids):
    return [training_case(load_case(data_dir, cid)) for cid in ids]


def _train_common(args, epochs_key):
    config = _load_config(args)
    seed = resolve_seed(args, config)
    train_cfg = cfgmod.train_config_from(config, seed=seed)
    model_cfg = cfgmod.model_config_from(config)
    epochs = args.epochs or getattr(train_cfg, epochs_key)
    return config, train_cfg, model_cfg, epochs


def _save_fit(args, model, model_cfg, result) -> None:
    params = model.named_parameters()
    for name, value in result.best_params.items():
        params[name].data = value
    with atomic_output(args.out) as tmp:
        model.save(tmp)
    with atomic_output(str(args.out) + ".cfg") as tmp:
        tmp.write_text(cfgmod.model_config_to_text(model_cfg))
    log_path = str(args.out) + ".log.csv"
    from .train import write_fit_log

    with atomic_output(log_path) as tmp:
        write_fit_log(tmp, result.log)
    print(
        f"saved checkpoint {args.out} (best epoch {result.best_epoch}, "
        f"val dice {result.best_val_dice:.4f}); log at {log_path}"
    )


def cmd_pretrain(args) -> int:
    _, train_cfg, model_cfg, epochs = _train_common(args, "epochs_pretrain")
    ids = discover_case_dirs_ids(args.data)
    if not ids:
        raise PairingError(f"no cases found in {args.data}")
    cases = _load_training_cases(args.data, ids)
    # seeded 95/5 split with at least one validation case when possible
    rng = np.random.default_rng(train_cfg.seed)
    order = rng.permutation(len(cases))
    n_val = max(1, round(0.05 * len(cases))) if len(cases) > 1 else 0
    val = [cases[i] for i in order[:n_val]]
    train = [cases[i] for i in order[n_val:]]
    model = GliomaForgeNet(config=model_cfg, seed=train_cfg.seed)
    result = fit(model, train, val, train_cfg, epochs=epochs)
    _save_fit(args, model, model_cfg, result)
    return EXIT_OK


def cmd_finetune(args) -> int:
    _, train_cfg, model_cfg, epochs = _train_common(args, "epochs_finetune")
    ids = discover_case_dirs_ids(args.data)
    if not ids:
        raise PairingError(f"no cases found in {args.data}")
    ckpt_cfg = Path(str(args.ckpt) + ".cfg")
    if ckpt_cfg.exists():
        model_cfg = cfgmod.model_config_from_text(ckpt_cfg.read_text())
    model = GliomaForgeNet(config=model_cfg, seed=train_cfg.seed)
    model.load(args.ckpt)
    if args.folds:
        assignment = read_folds_csv(args.folds)
        fold_of = dict(zip(assignment.case_ids, assignment.folds))
        missing = [cid for cid in ids if cid not in fold_of]
        if missing:
            raise PairingError(f"cases missing from {args.folds}: {missing}")
        val_ids = [cid for cid in ids if int(fold_of[cid]) == args.val_fold]
        train_ids = [cid for cid in ids if int(fold_of[cid]) != args.val_fold]
        if not train_ids:
            raise ConfigError(f"validation fold {args.val_fold} holds every case")
    else:
        rng = np.random.default_rng(train_cfg.seed)
        order = rng.permutation(len(ids))
        n_val = max(1, round(0.05 * len(ids))) if len(ids) > 1 else 0
        val_ids = [ids[i] for i in order[:n_val]]
        train_ids = [ids[i] for i in order[n_val:]]
    train = _load_training_cases(args.data, train_ids)
    val = _load_training_cases(args.data, val_ids)
    result = fit(model, train, val, train_cfg, epochs=epochs)
    _save_fit(args, model, model_cfg, result)
    return EXIT_OK


# -- predict ---------------------------------------------------------------


def predict_case(
    model: GliomaForgeNet,
    case: MultiModalCase,
    ref_cdfs: dict | None = None,
    quantiles: int = DEFAULT_QUANTILES,
    postprocess: bool = True,
) -> SegmentationMask:
    """Harmonize (optional), normalize, pad, forward, argmax, crop, filter."""
    channels = []
    for mod in MODALITIES:
        vol = case.modalities[mod]
        if ref_cdfs is not None:
            vol = match_histogram(vol, ref_cdfs[mod], quantiles=quantiles)
        channels.append(zscore_normalize(vol).data)
    images = np.stack(channels).astype(np.float32)
    dims = images.shape[1:]
    pads = [(0, (-s) % 32) for s in dims]
    padded = np.pad(images, [(0, 0)] + pads)
    with no_grad():
        logits = model(Tensor(padded[None]))
    crop = tuple(slice(0, s) for s in dims)
    labels = np.argmax(logits.data[0], axis=0)[crop].astype(np.uint8)
    mask = SegmentationMask(labels=labels, spacing=case.modalities["t1"].spacing)
    if postprocess:
        mask = keep_largest_per_class(mask)
    return mask


def cmd_predict(args) -> int:
    config = _load_config(args)
    ckpt_cfg = Path(str(args.ckpt) + ".cfg")
    if ckpt_cfg.exists():
        model_cfg = cfgmod.model_config_from_text(ckpt_cfg.read_text())
    else:
        model_cfg = cfgmod.model_config_from(config)
    model = GliomaForgeNet(config=model_cfg, seed=resolve_seed(args, config))
    model.load(args.ckpt)
    ids = [args.case_id] if args.case_id else discover_case_dirs_ids(args.in_dir)
    if not ids:
        raise PairingError(f"no cases found in {args.in_dir}")
    if len(ids) > 1:
        raise ConfigError(
            f"{args.in_dir} holds {len(ids)} cases; pick one with --case-id"
        )
    case = load_case(args.in_dir, ids[0])
    cdfs = None
    if args.ref_dir:
        quantiles = args.quantiles or int(config.get("quantiles", DEFAULT_QUANTILES))
        cdfs = _reference_cdfs(args.ref_dir, quantiles)
    mask = predict_case(model, case, ref_cdfs=cdfs, postprocess=not args.no_postprocess)
    with atomic_output(args.out) as tmp:
        save_mask(tmp, mask)
    print(f"wrote segmentation for {ids[0]} to {args.out}")
    return EXIT_OK


# -- evaluate / selftest ---------------------------------------------------


def cmd_evaluate(args) -> int:
    results, summary = evaluate_dirs(
        args.pred, args.gt, postprocess=not args.no_postprocess
    )
    with atomic_output(args.out) as tmp:
        write_metrics_csv(tmp, results, summary)
    for region in ("WT", "TC", "ET"):
        mean, std = summary[region]["dice"]
        print(f"{region} dice {mean:.4f} +/- {std:.4f}")
    print(f"wrote metrics for {len(results)} cases to {args.out}")
    return EXIT_OK


def cmd_selftest(args) -> int:
    config = _load_config(args)
    failures = run_selftest(seed=resolve_seed(args, config))
    return EXIT_OK if failures == 0 else EXIT_USAGE


# -- parser ----------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="gliomaforge", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="command")

    def add(name, func, helptext):
        p = sub.add_parser(name, help=helptext)
        p.set_defaults(func=func)
        p.add_argument("--config", help="INI-style key=value config file")
        p.add_argument("--seed", type=int, help="override the global seed")
        return p

    p = add("harmonize", cmd_harmonize, "histogram-match a cohort onto a reference")
    p.add_argument("--ref-dir", required=True, help="directory of reference case(s)")
    p.add_argument("--in", dest="in_dir", required=True, help="input case directory")
    p.add_argument("--out", required=True, help="output case directory")
    p.add_argument("--quantiles", type=int, help=f"mapping knots (default {DEFAULT_QUANTILES})")
    p.add_argument("--compress", action="store_true", help="write .nii.gz instead of .nii")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")

    p = add("features", cmd_features, "extract first-order radiomic features")
    p.add_argument("--in", dest="in_dir", required=True, help="input case directory")
    p.add_argument("--out", required=True, help="output features CSV")
    p.add_argument("--modality", choices=MODALITIES, help="source modality (default flair)")
    p.add_argument("--bin-width", type=float, help="histogram bin width")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")

    p = add("stratify", cmd_stratify, "cluster features and assign stratified folds")
    p.add_argument("--features", required=True, help="features CSV from `features`")
    p.add_argument("--k", type=int, help=f"clusters (default {DEFAULT_CLUSTERS})")
    p.add_argument("--pca", type=int, help=f"PCA components (default {DEFAULT_COMPONENTS})")
    p.add_argument("--folds", type=int, help=f"fold count (default {DEFAULT_FOLDS})")
    p.add_argument("--out", required=True, help="output folds CSV")

    for name, func, helptext in (
        ("pretrain", cmd_pretrain, "train from random initialization"),
        ("finetune", cmd_finetune, "continue training from a checkpoint"),
    ):
        p = add(name, func, helptext)
        p.add_argument("--data", required=True, help="training case directory")
        p.add_argument("--out", required=True, help="output checkpoint path")
        p.add_argument("--epochs", type=int, help="override the epoch budget")
        if name == "finetune":
            p.add_argument("--ckpt", required=True, help="initial checkpoint")
            p.add_argument("--folds", help="folds CSV from `stratify`")
            p.add_argument("--val-fold", type=int, default=0, help="held-out fold index")
        else:
            p.add_argument(
                "--folds",
                help="accepted for interface symmetry; pretraining uses a seeded 95/5 split",
            )

    p = add("predict", cmd_predict, "segment one case with a trained checkpoint")
    p.add_argument("--ckpt", required=True, help="model checkpoint")
    p.add_argument("--in", dest="in_dir", required=True, help="directory holding the case")
    p.add_argument("--out", required=True, help="output mask (.nii or .nii.gz)")
    p.add_argument("--case-id", help="case id when the directory holds several")
    p.add_argument("--ref-dir", help="harmonization reference case directory")
    p.add_argument("--quantiles", type=int, help="harmonization knots")
    p.add_argument("--no-postprocess", action="store_true", help="skip component filtering")

    p = add("evaluate", cmd_evaluate, "score predictions against reference masks")
    p.add_argument("--pred", required=True, help="prediction mask directory")
    p.add_argument("--gt", required=True, help="reference mask directory")
    p.add_argument("--out", required=True, help="output metrics CSV")
    p.add_argument("--no-postprocess", action="store_true", help="skip component filtering")
    p.add_argument("--jobs", type=int, default=1, help="accepted for symmetry; evaluation is fast")

    add("selftest", cmd_selftest, "run the built-in property suites")
    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if not hasattr(args, "func"):
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except GliomaForgeError as err:
        print(f"gliomaforge: error: {err}", file=sys.stderr)
        return EXIT_DATA
    except (FileNotFoundError, NotADirectoryError, IsADirectoryError) as err:
        print(f"gliomaforge: error: {err}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
