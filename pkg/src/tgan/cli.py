"""Command line: ``tgan {verify-theorem,train,sample,eval}``.

Exit codes: 0 ok, 1 check failure, 2 usage, 3 numerical abort, 4 bad artifact.
"""

import argparse
import csv
import json
import os
import sys
import warnings

import numpy as np

from . import checkpoint, tdist
from .config import DEFAULTS, ConfigError, RunConfig
from .data import balanced_subset, downsample, load_idx, ring_of_gaussians
from .estimator import TGAN
from .evaluation import evaluate, reports_to_csv, train_proxy_classifier
from .exceptions import ContractError, FormatError, NumericalAbort
from .imaging import density_image, encode_pgm, encode_ppm, image_grid, scatter_image

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_NUMERIC, EXIT_ARTIFACT = 0, 1, 2, 3, 4

LOSS_COLUMNS = ("step", "d_loss", "g_loss", "c_loss")


class UsageError(Exception):
    pass


def _write_bytes(path, blob):
    with open(path, "wb") as fh:
        fh.write(blob)


def _resolve_config(args):
    base = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {k: v for k, v in vars(args).items() if k in DEFAULTS and v is not None}
    return base.with_overrides(overrides)


def build_dataset(cfg):
    seed = cfg["seed"]
    if cfg["dataset.kind"] == "ring":
        return ring_of_gaussians(
            cfg["dataset.k"], cfg["dataset.radius"], cfg["dataset.std"], cfg["dataset.n"],
            cfg["dataset.labeled"], tdist.make_rng(seed, 0xDA7A),
        )
    if not cfg["dataset.images"] or not cfg["dataset.labels"]:
        raise UsageError("dataset.kind = mnist needs dataset.images and dataset.labels")
    for path in (cfg["dataset.images"], cfg["dataset.labels"]):
        if not os.path.exists(path):
            raise UsageError(f"dataset file not found: {path}")
    ds = load_idx(cfg["dataset.images"], cfg["dataset.labels"])
    ds = balanced_subset(ds, cfg["dataset.per_class"], tdist.make_rng(seed, 0xDA7A))
    if cfg["dataset.side"] != ds.side:
        ds = downsample(ds, ds.side, cfg["dataset.side"])
    return ds


def estimator_from_config(cfg):
    return TGAN(
        latent_kind=cfg["latent.kind"],
        n_components=cfg["latent.n_components"],
        latent_dim=cfg["latent.dim"],
        nu=cfg["latent.nu"],
        attention_hidden=cfg["latent.attention_hidden"] or None,
        hidden=cfg["model.hidden"],
        alpha=cfg["train.alpha"],
        steps=cfg["train.steps"],
        batch_size=cfg["train.batch"],
        lr=cfg["train.lr"],
        beta1=cfg["train.beta1"],
        beta2=cfg["train.beta2"],
        optimizer=cfg["train.optimizer"],
        g_mode=cfg["train.g_mode"],
        d_g_ratio=cfg["train.d_g_ratio"],
        dropout=cfg["train.dropout"],
        sigma_penalty=cfg["latent.sigma_penalty"],
        random_state=cfg["seed"],
    )


def write_sample_outputs(out_dir, estimator, samples, labels, side=None, ppm=False):
    """samples.csv plus a class-per-column PGM grid (images) or density PGM (2-D)."""
    with open(os.path.join(out_dir, "samples.csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["label"] + [f"x{j}" for j in range(samples.shape[1])])
        for lab, row in zip(labels, samples):
            writer.writerow([lab] + [repr(float(v)) for v in row])
    if samples.shape[1] == 2:
        _write_bytes(os.path.join(out_dir, "density.pgm"), encode_pgm(density_image(samples)))
        if ppm:
            _write_bytes(os.path.join(out_dir, "scatter.ppm"), encode_ppm(scatter_image(samples, labels)))
        return
    side = side or int(round(np.sqrt(samples.shape[1])))
    if side * side != samples.shape[1]:
        return
    columns = [samples[labels == c] for c in np.unique(labels)]
    rows = min(len(c) for c in columns)
    _write_bytes(os.path.join(out_dir, "grid.pgm"), encode_pgm(image_grid([c[:rows] for c in columns], side)))


def _grid_labels(classes, rows):
    # row-major over (row, class) so every class gets `rows` samples
    return np.tile(np.asarray(classes), rows)


def _eval_labels(classes, n):
    return np.asarray(classes)[np.arange(n) % len(classes)]


# -- commands --------------------------------------------------------------


def cmd_verify_theorem(args):
    cfg = _resolve_config(args)
    if cfg["verify.sweep"] < 1:
        raise UsageError("verify.sweep must be >= 1")
    os.makedirs(cfg["out_dir"], exist_ok=True)
    rng = tdist.make_rng(cfg["seed"], 0x7E0)
    report = tdist.TheoremReport()
    for i in range(cfg["verify.sweep"]):
        params = tdist.random_params(rng, max_dim=cfg["verify.max_dim"])
        grid = tdist.axis_grid(params, cfg["verify.grid_points"])
        sampling = cfg["verify.samples"] > 0 and i < cfg["verify.sampling_sets"]
        report.extend(
            tdist.verify_transform_theorem(
                params, grid,
                samples=cfg["verify.samples"] if sampling else None,
                rng=tdist.make_rng(cfg["seed"], 0x7E0, i),
                ks_threshold=cfg["verify.ks_threshold"],
                perturb_density=args.perturb_density,
            )
        )
    path = os.path.join(cfg["out_dir"], "theorem_report.csv")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        report.to_csv(fh)
    if not report.passed:
        for c in report.failures:
            print(f"FAIL {c.check} {c.parameter_digest} statistic={c.statistic!r} threshold={c.threshold!r} {c.detail}")
        return EXIT_CHECK
    print(f"{len(report.checks)} checks passed; report written to {path}")
    return EXIT_OK


def cmd_train(args):
    cfg = _resolve_config(args)
    out = cfg["out_dir"]
    os.makedirs(out, exist_ok=True)
    ds = build_dataset(cfg)
    est = estimator_from_config(cfg)
    with open(os.path.join(out, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(cfg.serialize())

    every = cfg["train.checkpoint_every"]
    loss_fh = open(os.path.join(out, "losses.csv"), "w", newline="", encoding="utf-8")
    writer = csv.writer(loss_fh, lineterminator="\n")
    writer.writerow(LOSS_COLUMNS)

    def on_step(report, estimator):
        writer.writerow([report.step, repr(report.d_loss), repr(report.g_loss), repr(report.c_loss)])
        if every > 0 and (report.step + 1) % every == 0:
            checkpoint.save(estimator, os.path.join(out, f"checkpoint_{report.step + 1:06d}.tgan"))

    try:
        est.fit(ds.samples, ds.labels, callback=on_step)
    except NumericalAbort as exc:
        with open(os.path.join(out, "diagnostics.json"), "w", encoding="utf-8") as fh:
            json.dump(exc.diagnostics, fh, indent=2, sort_keys=True)
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    finally:
        loss_fh.close()
    checkpoint.save(est, os.path.join(out, "model.tgan"))
    if cfg["train.steps"] == 0:
        return EXIT_OK

    samples, labels = est.sample(_grid_labels(est.classes_, cfg["eval.grid_rows"]), random_state=cfg["seed"])
    write_sample_outputs(out, est, samples, labels, side=ds.side)
    if cfg["eval.auto"]:
        report = _evaluate_estimator("model", est, ds, cfg, [r.d_loss for r in est.loss_history_])
        _write_eval(out, [report])
        print(report.to_text(), end="")
    return EXIT_OK


def _load_checkpoint(path):
    if not os.path.exists(path):
        raise UsageError(f"checkpoint not found: {path}")
    return checkpoint.load(path)


def cmd_sample(args):
    est = _load_checkpoint(args.checkpoint)
    classes = est.classes_
    if args.labels:
        try:
            labels = np.array([int(v) for v in args.labels.split(",")])
        except ValueError:
            raise UsageError(f"labels must be comma-separated integers: {args.labels!r}") from None
        if not np.all(np.isin(labels, classes)):
            raise UsageError(f"labels must be among {classes.tolist()}")
    else:
        labels = classes
    os.makedirs(args.out, exist_ok=True)
    samples, lab = est.sample(_grid_labels(labels, args.n), random_state=args.seed)
    write_sample_outputs(args.out, est, samples, lab, ppm=args.ppm)
    return EXIT_OK


def _read_loss_series(checkpoint_path):
    path = os.path.join(os.path.dirname(os.path.abspath(checkpoint_path)), "losses.csv")
    if not os.path.exists(path):
        return None
    with open(path, encoding="utf-8") as fh:
        return [float(row["d_loss"]) for row in csv.DictReader(fh)]


def _evaluate_estimator(name, est, ds, cfg, d_losses, classifier=None):
    clf = classifier or train_proxy_classifier(ds, random_state=cfg["seed"])
    labels = _eval_labels(est.classes_, cfg["eval.samples"])
    samples, _ = est.sample(labels, random_state=cfg["seed"] + 1)
    return evaluate(
        name, samples, labels, ds, clf, d_losses,
        splits=cfg["eval.splits"], threshold_sigma=cfg["eval.threshold_sigma"], tail_fraction=cfg["eval.tail_fraction"],
    )


def _write_eval(out_dir, reports):
    with open(os.path.join(out_dir, "eval_report.csv"), "w", newline="", encoding="utf-8") as fh:
        reports_to_csv(reports, fh)
    with open(os.path.join(out_dir, "eval_report.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(r.to_text() for r in reports))


def cmd_eval(args):
    cfg = _resolve_config(args)
    if not args.checkpoint and not args.include_real:
        raise UsageError("nothing to evaluate: pass --checkpoint and/or --include-real")
    estimators = [(path, _load_checkpoint(path)) for path in args.checkpoint or []]
    out = cfg["out_dir"]
    os.makedirs(out, exist_ok=True)
    ds = build_dataset(cfg)
    clf = train_proxy_classifier(ds, random_state=cfg["seed"])
    reports = []
    if args.include_real:
        reports.append(evaluate("real", ds.samples, ds.labels, ds, clf, None, splits=cfg["eval.splits"],
                                threshold_sigma=cfg["eval.threshold_sigma"]))
    for path, est in estimators:
        name = f"{os.path.basename(path)}[{est.latent_kind}]"
        reports.append(_evaluate_estimator(name, est, ds, cfg, _read_loss_series(path), classifier=clf))
    _write_eval(out, reports)
    for r in reports:
        print(r.to_text())
    return EXIT_OK


# -- argument parsing --------------------------------------------------------


def _add_config_flags(parser):
    parser.add_argument("--config", help="flat key = value config file; flags override it")
    for key, (kind, _) in DEFAULTS.items():
        parser.add_argument(f"--{key}", dest=key, default=None, metavar=kind.__name__.upper())


def build_parser():
    parser = argparse.ArgumentParser(prog="tgan", description="Student's-t GAN laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify-theorem", help="numerically verify the t-distribution standardization theorem")
    _add_config_flags(p)
    p.add_argument("--perturb-density", type=float, default=0.0, help="test hook: offset added to the transformed density")
    p.set_defaults(func=cmd_verify_theorem)

    p = sub.add_parser("train", help="train a model and write losses, checkpoints and samples")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="draw conditional samples from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--labels", help="comma-separated class labels (default: all)")
    p.add_argument("--n", type=int, default=10, help="samples per label")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--ppm", action="store_true", help="also write a colour scatter PPM for 2-D data")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="score checkpoints against a dataset")
    _add_config_flags(p)
    p.add_argument("--checkpoint", action="append", help="checkpoint to evaluate (repeatable)")
    p.add_argument("--include-real", action="store_true", help="also score the real data")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FormatError as exc:
        print(f"bad artifact: {exc}", file=sys.stderr)
        return EXIT_ARTIFACT
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ContractError as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
