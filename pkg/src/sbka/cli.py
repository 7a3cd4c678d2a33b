"""Command-line entry point: ``sbka <command> [options]``.

Exit status: 0 success, 2 configuration error, 3 data/format error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import formats
from .config import RunConfig, load_config
from .data import Dataset, synthetic_prior, zero_prior
from .encoder import embed, init_params
from .errors import ConfigError, DataError, IntegrityError, SbkaError
from .gradcheck import format_report, run_gradcheck
from .cluster import fit_subspace_codebook, retrieve_all
from .metrics import evaluate_rankings
from .numerics import derive_seed
from .pipeline import make_dataset, run_ablation, sweep_clusters, sweep_lambda_ma
from .trainer import pretrain_teacher, train_sbka

log = logging.getLogger("sbka")


def _config(args) -> RunConfig:
    return load_config(args.config, args.set, args.seed)


def _write_text(path, text: str) -> None:
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc


def _out_dir(path) -> Path:
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {p}: {exc}") from exc
    return p


def _load_dataset(path, seen: bool) -> Dataset:
    x, labels, modality = formats.read_embeddings(path)
    classes = tuple(int(c) for c in np.unique(labels))
    return Dataset(x, labels, modality, classes if seen else (), () if seen else classes)


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    data = make_dataset(cfg)
    out = _out_dir(args.out)
    seen, unseen = data.seen(), data.unseen()
    formats.write_embeddings(out / "seen.emb", seen.x, seen.labels, seen.modality)
    formats.write_embeddings(out / "unseen.emb", unseen.x, unseen.labels, unseen.modality)
    k_src = cfg.train_config().resolved_k_src(data)
    formats.write_prior(out / "prior.txt", synthetic_prior(data, k_src))
    if data.source is not None:
        formats.write_embeddings(out / "source.emb", data.source.x, data.source.labels, data.source.modality)
    print(f"classes: {cfg.n_classes} (seen {list(data.seen_classes)}, unseen {list(data.unseen_classes)})")
    print(f"seen.emb: {len(seen)} samples, unseen.emb: {len(unseen)} samples, dim {data.dim}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    tcfg = cfg.train_config()
    data = _load_dataset(args.data, seen=True)
    if data.dim != cfg.d_in:
        raise ConfigError(f"data dimension {data.dim} does not match config d_in={cfg.d_in}")
    k_train = cfg.n_seen
    k_src = tcfg.k_src or k_train
    if data.labels.max() >= k_train:
        raise ConfigError(f"data label {data.labels.max()} >= K_train=n_seen={k_train}")
    if args.source:
        sx, sl, sm = formats.read_embeddings(args.source)
        if sx.shape[1] != cfg.d_in:
            raise ConfigError(f"source data dimension {sx.shape[1]} does not match config d_in={cfg.d_in}")
        data.source = Dataset(sx, sl, sm, tuple(int(c) for c in np.unique(sl)), ())
    prior = formats.read_prior(args.prior, k_train, k_src) if args.prior else zero_prior(k_train, k_src)

    dims = (cfg.d_in, cfg.hidden, cfg.d_emb, k_train, k_src)
    teacher = pretrain_teacher(data, tcfg, init_params(*dims, seed=derive_seed(tcfg.seed_init, "teacher")))
    student = init_params(*dims, seed=tcfg.seed_init)
    student, teacher, history = train_sbka(student, teacher, data, prior, tcfg)

    out = _out_dir(args.out)
    formats.write_checkpoint(out / "student.ckpt", student)
    formats.write_checkpoint(out / "teacher.ckpt", teacher)
    _write_text(out / "history.csv", history.to_csv(mean_per_sample=args.mean_losses))
    last = history.records[-1] if history.records else None
    if last:
        print(f"trained {len(history)} epochs; final L_S={last.total_s:.6g} L_ka^T={last.l_ka_t:.6g}")
    else:
        print("total_epochs=0: wrote initial checkpoints")
    return 0


def _gallery(path) -> Dataset:
    data = _load_dataset(path, seen=False)
    gallery = data.photos()
    if len(gallery) == 0:
        raise DataError(f"{path} holds no photos to use as a gallery")
    return gallery


def cmd_fit_clusters(args) -> int:
    cfg = _config(args)
    student = formats.read_checkpoint(args.checkpoint)
    gallery = _gallery(args.gallery)
    if gallery.dim != student.dims[0]:
        raise ConfigError(f"gallery dimension {gallery.dim} does not match checkpoint D_in={student.dims[0]}")
    M = args.M if args.M is not None else cfg.subspaces
    d_emb = student.dims[2]
    if d_emb % M:
        raise ConfigError(f"embedding dimension D_emb={d_emb} is not divisible by M={M}")
    K = args.K if args.K is not None else (cfg.clusters or len(np.unique(gallery.labels)))
    cb = fit_subspace_codebook(embed(student, gallery.x), M, K, cfg.em_config())
    formats.write_codebook(args.out, cb)
    print(f"codebook: M={cb.M} K={cb.K} subdim={cb.subdim} gallery={cb.gallery_count}")
    return 0


def cmd_retrieve_eval(args) -> int:
    cfg = _config(args)
    student = formats.read_checkpoint(args.checkpoint)
    queries = _load_dataset(args.queries, seen=False).sketches()
    gallery = _gallery(args.gallery)
    if len(queries) == 0:
        raise DataError(f"{args.queries} holds no sketch queries")
    for name, ds in (("query", queries), ("gallery", gallery)):
        if ds.dim != student.dims[0]:
            raise IntegrityError(f"{name} dimension {ds.dim} does not match checkpoint D_in={student.dims[0]}")
    codebook = None
    if not args.one_to_one:
        if args.codebook is None:
            raise ConfigError("fused retrieval needs --codebook (or pass --one-to-one)")
        codebook = formats.read_codebook(args.codebook)
        if codebook.gallery_count != len(gallery):
            raise IntegrityError(f"codebook covers {codebook.gallery_count} gallery items, gallery has {len(gallery)}")
        if codebook.dim != student.dims[2]:
            raise IntegrityError(f"codebook dimension {codebook.dim} differs from embedding dimension {student.dims[2]}")
    k = args.k if args.k is not None else cfg.metric_k
    rankings = retrieve_all(embed(student, queries.x), embed(student, gallery.x), codebook, args.one_to_one)
    report = evaluate_rankings(rankings, queries.labels, gallery.labels, k)
    text = report.to_json(include_per_query=args.per_query)
    if args.out:
        _write_text(args.out, text)
    if args.rankings:
        _write_text(args.rankings, "".join(
            f"{int(lbl)}\t" + " ".join(map(str, r)) + "\n" for lbl, r in zip(queries.labels, rankings)
        ))
    sys.stdout.write(text)
    return 0


def cmd_gradcheck(args) -> int:
    results = run_gradcheck(seed=args.seed or 0, cases=args.cases)
    sys.stdout.write(format_report(results))
    return 0 if all(r.passed for r in results) else 4


def ablation_table(rows) -> list[dict]:
    return [
        {"bidirectional": r.bidirectional, "one_to_many": r.one_to_many,
         "metric": r.metric, "mean": r.mean, "std": r.std}
        for r in rows
    ]


def cmd_ablation(args) -> int:
    cfg = _config(args)
    rows = run_ablation(cfg, args.reps)
    table = ablation_table(rows)
    text = json.dumps(table, indent=2) + "\n"
    if args.out:
        _write_text(args.out, text)
    print(f"{'bidir':>6} {'1-to-many':>9} {'metric':>10} {'mean':>8} {'std':>8}")
    for r in table:
        print(f"{'yes' if r['bidirectional'] else '-':>6} {'yes' if r['one_to_many'] else '-':>9} "
              f"{r['metric']:>10} {r['mean']:8.4f} {r['std']:8.4f}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    out = _out_dir(args.out)
    points = []
    if args.parameter in ("lambda_ma", "all"):
        points += sweep_lambda_ma(cfg, repetitions=args.reps)
    if args.parameter in ("clusters", "all"):
        points += sweep_clusters(cfg, repetitions=args.reps)
    for p in points:
        record = {"parameter": p.parameter, "value": p.value, "map_all": p.map_all,
                  "map_all_std": p.map_all_std, "prec_at_k": p.prec_at_k,
                  "repetitions": [json.loads(r.to_json()) for r in p.reports]}
        _write_text(out / f"{p.parameter}_{p.value:g}.json", json.dumps(record, indent=2) + "\n")
        print(f"{p.parameter}={p.value:g}: mAP@all {p.map_all:.4f} (std {p.map_all_std:.4f}) Prec@K {p.prec_at_k:.4f}")
    return 0


def cmd_show_config(args) -> int:
    sys.stdout.write(_config(args).to_json())
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config (unknown keys are rejected)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key; repeatable, wins over --config and --seed")
    common.add_argument("--seed", type=int, help="derive every seed_* key from this master seed")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="sbka", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-data", parents=[common], help="write synthetic seen/unseen embedding files and a prior")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("train", parents=[common], help="pretrain the teacher and run alternating training")
    s.add_argument("--data", required=True, help="seen-class embedding file")
    s.add_argument("--prior", help="semantic prior text file (default: all zeros)")
    s.add_argument("--source", help="photo-only embedding file for teacher pretraining")
    s.add_argument("--out", required=True, help="output directory for checkpoints and history")
    s.add_argument("--mean-losses", action="store_true", help="log mean-per-sample losses instead of sums")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("fit-clusters", parents=[common], help="fit the subspace GMM codebook on gallery photos")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--gallery", required=True)
    s.add_argument("--M", type=int, help="subspace count (default: config subspaces)")
    s.add_argument("--K", type=int, help="components per subspace (default: gallery class count)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fit_clusters)

    s = sub.add_parser("retrieve-eval", parents=[common], help="rank gallery photos for sketch queries and score")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--codebook")
    s.add_argument("--queries", required=True)
    s.add_argument("--gallery", required=True)
    s.add_argument("--k", type=int, help="cutoff for mAP@K and Prec@K (default: config metric_k)")
    s.add_argument("--one-to-one", action="store_true", help="rank by plain Euclidean distance")
    s.add_argument("--out", help="write the metrics report here")
    s.add_argument("--rankings", help="write per-query rankings here")
    s.add_argument("--per-query", action="store_true", help="include per-query APs in the report")
    s.set_defaults(func=cmd_retrieve_eval)

    s = sub.add_parser("gradcheck", parents=[common], help="finite-difference audit of all gradients")
    s.add_argument("--cases", type=int, default=10)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("ablation", parents=[common], help="three-row ablation on synthetic data")
    s.add_argument("--reps", type=int, default=5)
    s.add_argument("--out", help="write the table as JSON")
    s.set_defaults(func=cmd_ablation)

    s = sub.add_parser("sweep", parents=[common], help="parameter sensitivity sweeps")
    s.add_argument("--parameter", choices=["lambda_ma", "clusters", "all"], default="all")
    s.add_argument("--reps", type=int, default=5)
    s.add_argument("--out", required=True, help="directory for one report per setting")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("show-config", parents=[common], help="print the resolved config")
    s.set_defaults(func=cmd_show_config)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except SbkaError as exc:
        print(f"sbka {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
