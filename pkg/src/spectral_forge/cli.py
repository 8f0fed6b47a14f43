"""``spectral-forge`` command line.

Exit codes: 0 success, 1 domain error, 2 usage error. Every run writes the
full flat ``key=value`` configuration that produced it next to its outputs;
``spectral-forge --config run_config.txt`` replays it, with any further
flags overriding the stored values.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .errors import SpectralForgeError
from .io_utils import atomic_write_text, read_kv, write_kv

log = logging.getLogger("spectral_forge")

SEED_ENV = "SPECTRAL_FORGE_SEED"
CONFIG_NAME = "run_config.txt"


class UsageError(Exception):
    pass


def _int_list(s: str) -> list[int]:
    try:
        return [int(x) for x in str(s).split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}") from None


def _float_list(s: str) -> list[float]:
    try:
        return [float(x) for x in str(s).split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {s!r}") from None


def _positive_int(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _training_opts(p):
    g = p.add_argument_group("training")
    g.add_argument("--max-epochs", type=_positive_int, default=100)
    g.add_argument("--batch-size", type=_positive_int, default=32)
    g.add_argument("--lr", type=float, default=1e-3)
    g.add_argument("--max-folds", type=_positive_int, default=None, help="evaluate only the first N CV folds")
    g.add_argument("--jobs", type=_positive_int, default=1, help="parallel fold workers")


def _cnn_opts(p):
    p.add_argument("--m", type=_positive_int, default=2, help="pool size")
    p.add_argument("--n", type=_positive_int, default=3, help="number of conv blocks")
    p.add_argument("--dense-width", type=_positive_int, default=2048)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="spectral-forge", description="Raman spectrum classification toolkit")
    parser.add_argument("--config", help=f"replay a {CONFIG_NAME}; later flags override it")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def cmd(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--seed", type=int, default=None, help=f"random seed (fallback: ${SEED_ENV}, then 0)")
        p.add_argument("--out", required=True, help="output directory (file path for preprocess/gradcam)")
        p.add_argument("--formats", default="json,table,csv")
        return p

    p = cmd("ingest", "parse RRUFF files and persist a stratified split manifest")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--kind", choices=["raw", "processed", "clean"], required=True)
    p.add_argument("--k", type=_positive_int, default=5)
    p.add_argument("--strict", action="store_true")

    p = cmd("preprocess", "build a fixed-grid dataset file")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--kind", choices=["raw", "processed", "clean"], required=True)
    p.add_argument("--n-min", type=_positive_int, default=8)
    p.add_argument("--range-lo", type=float, default=200.0)
    p.add_argument("--range-hi", type=float, default=1600.0)
    p.add_argument("--norm-mode", choices=["min_max", "max_abs"], default="min_max")

    p = cmd("baseline", "peak features with KNN or SVM")
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", choices=["knn", "svm"], default="knn")
    p.add_argument("--detector", choices=["cwt", "local"], default="cwt")
    p.add_argument("--folds", type=_positive_int, default=5)

    p = cmd("train", "train one model on the development split and save a checkpoint")
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", choices=["cnn", "mlp_s", "mlp_m", "mlp_l"], default="cnn")
    p.add_argument("--augment", action="store_true")
    p.add_argument("--augment-prob", type=float, default=0.5)
    _cnn_opts(p)
    _training_opts(p)

    p = cmd("eval", "score a checkpoint on the held-out test split")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)

    p = cmd("supervised", "cross-validated comparison of one model family")
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", choices=["cnn", "mlp_s", "mlp_m", "mlp_l", "cnn_knn", "knn"], default="cnn")
    p.add_argument("--augment", action="store_true")
    p.add_argument("--augment-prob", type=float, default=0.5)
    _cnn_opts(p)
    _training_opts(p)

    p = cmd("shift-robustness", "accuracy under shifted inputs for pooling variants")
    p.add_argument("--dataset", required=True)
    p.add_argument("--m", type=_int_list, default=[2, 64], help="pool sizes, comma separated")
    p.add_argument("--n", type=_int_list, default=[3], help="block counts, comma separated")
    p.add_argument("--shifts", type=_int_list, default=[0, 15, 30])
    p.add_argument("--dense-width", type=_positive_int, default=2048)
    _training_opts(p)

    for name, help_ in (("sgan", "semi-supervised GAN"), ("contrastive", "contrastive pretraining"),
                        ("autoencoder", "sparse autoencoder features")):
        p = cmd(name, help_)
        p.add_argument("--dataset", required=True)
        p.add_argument("--fractions", type=_float_list, default=[0.1])
        p.add_argument("--dense-width", type=_positive_int, default=2048)
        if name == "contrastive":
            p.add_argument("--temperature", type=float, default=0.5)
            p.add_argument("--pretrain-epochs", type=_positive_int, default=None)
        if name == "autoencoder":
            p.add_argument("--l1", type=float, default=1e-4)
            p.add_argument("--pretrain-fraction", type=float, default=0.5)
        _training_opts(p)

    p = cmd("freeze-layers", "pretrain on small subsets, freeze the first two blocks")
    p.add_argument("--dataset", required=True)
    p.add_argument("--sizes", type=_int_list, default=[80, 200, 848])
    _cnn_opts(p)
    _training_opts(p)

    p = cmd("transfer", "head-only transfer to held-out classes")
    p.add_argument("--dataset", required=True)
    p.add_argument("--cs", type=_int_list, default=[5, 10, 15, 20])
    p.add_argument("--fine-tune-lr", type=float, default=1e-5)
    p.add_argument("--fine-tune-max-epochs", type=_positive_int, default=50)
    _cnn_opts(p)
    _training_opts(p)

    p = cmd("gradcam", "importance curve for one spectrum")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--index", type=int, required=True)
    p.add_argument("--target-class", type=int, default=None, help="defaults to the predicted class")

    p = cmd("distances", "mean intra/inter-class distances of peak features")
    p.add_argument("--dataset", required=True)
    p.add_argument("--detector", choices=["cwt", "local"], default="cwt")
    return parser


# -- config replay -----------------------------------------------------------------------

_NOT_STORED = {"config", "verbose", "func"}


def _config_values(args) -> dict:
    out = {"command": args.command}
    for k, v in sorted(vars(args).items()):
        if k in _NOT_STORED or k == "command" or v is None:
            continue
        out[k] = v
    return out


def _argv_from_config(path: str, parser) -> list[str]:
    cfg = read_kv(path)
    command = cfg.pop("command", None)
    if command is None:
        raise UsageError(f"{path}: no 'command' key")
    sub = parser._subparsers._group_actions[0].choices.get(command)
    if sub is None:
        raise UsageError(f"{path}: unknown command {command!r}")
    flags = {a.dest: a for a in sub._actions if a.option_strings}
    argv = [command]
    for k, v in cfg.items():
        a = flags.get(k)
        if a is None:
            raise UsageError(f"{path}: unknown key {k!r} for {command}")
        opt = max(a.option_strings, key=len)
        if isinstance(a, argparse._StoreTrueAction):
            if v.lower() == "true":
                argv.append(opt)
        else:
            argv += [opt, v]
    return argv


def parse_args(argv, parser=None):
    parser = build_parser() if parser is None else parser
    argv = list(argv)
    if "--config" in argv:
        i = argv.index("--config")
        if i + 1 >= len(argv):
            parser.error("--config needs a path")
        path = argv[i + 1]
        rest = argv[:i] + argv[i + 2:]
        overrides = rest
        base = _argv_from_config(path, parser)
        if overrides and overrides[0] == base[0]:
            overrides = overrides[1:]
        argv = base + overrides
    args = parser.parse_args(argv)
    if args.command is None:
        parser.error("a subcommand is required")
    if args.seed is None:
        env = os.environ.get(SEED_ENV)
        try:
            args.seed = int(env) if env not in (None, "") else 0
        except ValueError:
            parser.error(f"${SEED_ENV} must be an integer")
    return args


# -- commands ------------------------------------------------------------------------

def _schedule(args):
    from .nn.optim import TrainSchedule
    return TrainSchedule(lr0=args.lr, max_epochs=args.max_epochs, batch_size=args.batch_size, seed=args.seed)


def _cnn_cfg(args):
    from .models import CnnConfig
    cfg = CnnConfig(pool_size=args.m, num_conv_blocks=args.n, dense_width=args.dense_width)
    if cfg.num_conv_blocks != 3:
        cfg = replace(cfg, conv_channels=(), kernel_sizes=())
    return cfg


def _formats(args):
    fm = tuple(x for x in args.formats.split(",") if x)
    from .report import FORMATS
    bad = [x for x in fm if x not in FORMATS]
    if bad:
        raise UsageError(f"unknown report format(s): {','.join(bad)}")
    return fm


def _load(args):
    from .preprocess import load_dataset
    return load_dataset(args.dataset)


def _emit(report, args, stem="report"):
    from .report import emit_report
    return emit_report(report, args.out, _formats(args), stem)


def _cmd_ingest(args):
    from .ingest import Kind, SplitEntry, load_corpus, persist_split
    from .splits import stratified_kfold
    corpus = load_corpus(args.in_dir, Kind.parse(args.kind), strict=args.strict)
    names = sorted({s.mineral_name for s in corpus.spectra})
    idx = {n: i for i, n in enumerate(names)}
    labels = np.array([idx[s.mineral_name] for s in corpus.spectra])
    plan = stratified_kfold(labels, args.k, args.seed)
    entries = [SplitEntry(s.source_path, s.mineral_name, int(f)) for s, f in zip(corpus.spectra, plan.assignments)]
    out = Path(args.out)
    persist_split(corpus.manifest_hash[:16], entries, out / "split.tsv", k=args.k)
    summary = {"spectra": len(corpus), "classes": len(names), "manifest_hash": corpus.manifest_hash,
               "failures": [list(f) for f in corpus.failures], "class_counts": corpus.class_counts()}
    atomic_write_text(out / "corpus_summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"{len(corpus)} spectra, {len(names)} classes, {len(corpus.failures)} parse failures")
    return out


def _cmd_preprocess(args):
    from .ingest import Kind, load_corpus
    from .preprocess import NormMode, PreprocessConfig, build_dataset, save_dataset
    corpus = load_corpus(args.in_dir, Kind.parse(args.kind))
    cfg = PreprocessConfig(n_min=args.n_min, range_lo=args.range_lo, range_hi=args.range_hi,
                           norm_mode=NormMode(args.norm_mode.upper()), seed=args.seed)
    ds = build_dataset(corpus, cfg)
    save_dataset(ds, args.out)
    print(f"{len(ds)} spectra, {ds.num_classes} classes -> {args.out}")
    return None


def _cmd_baseline(args):
    from .experiments import baseline_report
    rep = baseline_report(_load(args), args.model, args.detector, args.folds, args.seed)
    _emit(rep, args)
    print(f"{args.model}/{args.detector}: mean top-1 {rep.mean('cv/top1'):.4f} params {rep.extra['chosen_params']}")


def _model_kind(name):
    return name.upper()


def _cmd_supervised(args):
    from .experiments import run_supervised
    rep = run_supervised(_model_kind(args.model), _load(args), sched=_schedule(args), cnn_cfg=_cnn_cfg(args),
                         augment=args.augment, augment_prob=args.augment_prob, seed=args.seed,
                         max_folds=args.max_folds, jobs=args.jobs)
    _emit(rep, args)
    print(f"{args.model}: cv top-1 {rep.mean('cv/top1'):.4f}, test top-1 {rep.mean('test/top1'):.4f}")


def _cmd_train(args):
    from .experiments import make_eval_plan, score_metrics
    from .models import MLP_PRESETS, MlpConfig, build_cnn, build_mlp, save_model
    from .preprocess import AugmentationSpec
    from .training import fit_classifier
    ds = _load(args)
    X, y = ds.rows, ds.labels
    plan = make_eval_plan(y, 5, args.seed)
    tr, va, te = plan.fold(0)
    C = ds.num_classes
    if args.model == "cnn":
        model = build_cnn(replace(_cnn_cfg(args), num_classes=C, input_len=X.shape[1], seed=args.seed))
    else:
        preset = {"mlp_s": "SMALL", "mlp_m": "MID", "mlp_l": "LARGE"}[args.model]
        model = build_mlp(MlpConfig(num_classes=C, hidden=MLP_PRESETS[preset], input_len=X.shape[1], seed=args.seed))
    hist = fit_classifier(model, X[tr], y[tr], num_classes=C, sched=_schedule(args), Xval=X[va], yval=y[va],
                          aug_spec=AugmentationSpec(rng_seed=args.seed) if args.augment else None,
                          augment_prob=args.augment_prob if args.augment else 0.0)
    out = Path(args.out)
    save_model(model, out / "model.sfckpt", {"class_names": list(ds.class_names), "dataset": ds.digest(),
                                             "seed": args.seed, "epochs": hist.epochs})
    from .experiments import ExperimentReport
    metrics = {**score_metrics(model.predict_proba(X[va]), y[va], "val/"),
               **score_metrics(model.predict_proba(X[te]), y[te], "test/")}
    rep = ExperimentReport("train", {"model": args.model, "dataset": ds.digest(), "cnn": _cnn_cfg(args),
                                     "schedule": _schedule(args)}, args.seed,
                           [{"fold": 0, "metrics": metrics, "curves": hist.curves()}])
    _emit(rep, args)
    print(f"saved {out / 'model.sfckpt'}; test top-1 {metrics['test/top1']:.4f}")


def _cmd_eval(args):
    from .experiments import ExperimentReport, make_eval_plan, score_metrics
    from .models import load_model
    ds = _load(args)
    model, header = load_model(args.checkpoint)
    if model.num_classes != ds.num_classes:
        raise SpectralForgeError(f"checkpoint has {model.num_classes} classes, dataset {ds.num_classes}")
    te = make_eval_plan(ds.labels, 5, args.seed).test_idx
    m = score_metrics(model.predict_proba(ds.rows[te]), ds.labels[te], "test/")
    rep = ExperimentReport("eval", {"checkpoint": str(args.checkpoint), "dataset": ds.digest()}, args.seed,
                           [{"fold": 0, "metrics": m, "curves": {}}])
    _emit(rep, args)
    print(" ".join(f"{k}={v:.4f}" for k, v in m.items()))


def _cmd_shift(args):
    from .experiments import run_shift_robustness
    from .models import CnnConfig
    variants = [(m, n) for n in args.n for m in args.m]
    rep = run_shift_robustness(_load(args), variants=variants, shifts=args.shifts, sched=_schedule(args),
                               cnn_cfg=CnnConfig(dense_width=args.dense_width), seed=args.seed,
                               max_folds=args.max_folds, jobs=args.jobs)
    _emit(rep, args)
    for tag, row in rep.extra["grid_cv_top1_top3"].items():
        print(tag, "  ".join(f"{s}:{a:.3f}/{b:.3f}" for s, (a, b) in row.items()))


def _cmd_semisup(args):
    from .experiments import run_autoencoder_features, run_contrastive, run_sgan
    from .models import AutoencoderConfig, CnnConfig, ContrastiveConfig, SganConfig
    ds = _load(args)
    backbone = CnnConfig(dense_width=args.dense_width)
    for p in args.fractions:
        if args.command == "sgan":
            rep = run_sgan(ds, fraction=p, cfg=SganConfig(backbone=backbone), sched=_schedule(args),
                           seed=args.seed, max_folds=args.max_folds, jobs=args.jobs)
        elif args.command == "contrastive":
            pre = None
            if args.pretrain_epochs:
                pre = replace(_schedule(args), max_epochs=args.pretrain_epochs, batch_size=max(64, args.batch_size))
            rep = run_contrastive(ds, fraction=p, cfg=ContrastiveConfig(backbone=backbone, temperature=args.temperature),
                                  sched=_schedule(args), pretrain_sched=pre, seed=args.seed,
                                  max_folds=args.max_folds, jobs=args.jobs)
        else:
            rep = run_autoencoder_features(ds, fraction=p, pretrain_fraction=args.pretrain_fraction,
                                           cfg=AutoencoderConfig(l1=args.l1), cnn_cfg=backbone, sched=_schedule(args),
                                           seed=args.seed, max_folds=args.max_folds, jobs=args.jobs)
        _emit(rep, args, stem=f"report_p{p:g}")
        print(f"p={p:g}: {args.command} cv top-1 {rep.mean('cv/top1'):.4f} "
              f"vs supervised {rep.mean('baseline_cv/top1'):.4f}")


def _cmd_freeze(args):
    from .experiments import run_layer_freezing
    rep = run_layer_freezing(_load(args), subset_sizes=args.sizes, sched=_schedule(args), cnn_cfg=_cnn_cfg(args),
                             seed=args.seed, max_folds=args.max_folds, jobs=args.jobs)
    _emit(rep, args)
    print("  ".join(f"{s}:{rep.mean(f'cv/size{s}/top1'):.4f}" for s in args.sizes),
          f"full:{rep.mean('cv/full/top1'):.4f}")


def _cmd_transfer(args):
    from .experiments import run_transfer
    rep = run_transfer(_load(args), cs=args.cs, sched=_schedule(args), cnn_cfg=_cnn_cfg(args),
                       fine_tune_lr=args.fine_tune_lr, fine_tune_max_epochs=args.fine_tune_max_epochs,
                       seed=args.seed, max_folds=args.max_folds, jobs=args.jobs)
    _emit(rep, args)
    for c in args.cs:
        print(f"c={c}: pretrain {rep.mean(f'c{c}/pretrain/top1'):.4f} fine-tune {rep.mean(f'c{c}/finetune/top1'):.4f}")


def _cmd_gradcam(args):
    from .models import export_gradcam, gradcam, load_model
    ds = _load(args)
    if not 0 <= args.index < len(ds):
        raise SpectralForgeError(f"index {args.index} outside dataset of {len(ds)} rows")
    model, _ = load_model(args.checkpoint)
    x = ds.rows[args.index]
    c = args.target_class
    if c is None:
        c = int(np.argmax(model.predict_proba(x[None])[0]))
    export_gradcam(args.out, ds.grid, gradcam(model, x, c))
    print(f"class {c} -> {args.out}")


def _cmd_distances(args):
    from .classical import Detector, PeakDetectorConfig, class_distance_stats, peak_features
    ds = _load(args)
    method = Detector.CWT_RICKER if args.detector == "cwt" else Detector.LOCAL_MAXIMA
    F = peak_features(ds.rows, PeakDetectorConfig(method=method))
    intra, inter = class_distance_stats(F, ds.labels)
    res = {"schema": "spectral-forge/distances/v1", "dataset": ds.digest(), "detector": args.detector,
           "feature_dim": int(F.shape[1]), "mean_intra": intra, "mean_inter": inter}
    atomic_write_text(Path(args.out) / "distances.json", json.dumps(res, indent=2, sort_keys=True) + "\n")
    print(f"intra {intra:.4f} inter {inter:.4f}")


COMMANDS = {
    "ingest": _cmd_ingest, "preprocess": _cmd_preprocess, "baseline": _cmd_baseline, "train": _cmd_train,
    "eval": _cmd_eval, "supervised": _cmd_supervised, "shift-robustness": _cmd_shift, "sgan": _cmd_semisup,
    "contrastive": _cmd_semisup, "autoencoder": _cmd_semisup, "freeze-layers": _cmd_freeze,
    "transfer": _cmd_transfer, "gradcam": _cmd_gradcam, "distances": _cmd_distances,
}

_FILE_OUTPUT = {"preprocess", "gradcam"}


def _config_path(args) -> Path:
    if args.command in _FILE_OUTPUT:
        return Path(str(args.out) + "." + CONFIG_NAME)
    return Path(args.out) / CONFIG_NAME


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        args = parse_args(argv)
        if args.command not in _FILE_OUTPUT:
            _formats(args)
    except UsageError as e:
        print(e, file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        COMMANDS[args.command](args)
        write_kv(_config_path(args), _config_values(args))
    except UsageError as e:
        print(f"spectral-forge: error: {e}", file=sys.stderr)
        return 2
    except (SpectralForgeError, OSError, ValueError) as e:
        print(f"spectral-forge: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
