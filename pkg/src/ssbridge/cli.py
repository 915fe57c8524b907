"""Command-line entry point: ``ssbridge {gen-data,train,sample,evaluate,verify}``.

Exit codes: 0 success, 1 verification failure, 2 usage or config error,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import logging
import os
import sys
import zlib
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import metrics, verify
from . import rng as rngmod
from .bridge import GenerationError, generate
from .config import ConfigError, RunConfig, load_config, parse_assignment
from .pgm import PGMError, atomic_write_bytes, read_pgm, write_pgm
from .predictor.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .predictor.train import TrainConfig, TrainingError, train
from .predictor.unet import UNetPredictor
from .synthdata import DatasetConfig, DatasetError, load_dataset, write_dataset

log = logging.getLogger("ssbridge")

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3
REPORT_FIELDS = ("ged", "d_max", "ci", "d_a", "ddi_exp", "ddi_gen")


class UsageError(Exception):
    pass


def worker_count() -> int:
    raw = os.environ.get("SSB_THREADS")
    if raw is None:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"SSB_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError("SSB_THREADS must be >= 1")
    return n


def _map(fn, items):
    n = worker_count()
    if n == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def sample_stream(seed: int, record_id: str, j: int) -> np.random.Generator:
    return rngmod.stream(seed, rngmod.SAMPLE, zlib.crc32(record_id.encode()), j)


def sample_label(j: int, eta: int) -> int:
    return j % eta + 1


def _write_config(directory: Path, cfg: RunConfig) -> None:
    atomic_write_bytes(directory / "run_config.json", cfg.dumps().encode())


def _run_config(args, overrides: dict) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    for text in getattr(args, "set", None) or []:
        key, value = parse_assignment(text)
        overrides[key] = value
    return cfg.override(overrides)


# -- commands -----------------------------------------------------------------

def cmd_gen_data(args) -> int:
    try:
        cfg = DatasetConfig(count=args.count, grid_size=args.size, experts=args.experts,
                            ambiguity=args.ambiguity, split=args.split, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    write_dataset(cfg, args.out)
    print(f"wrote {cfg.count} records ({cfg.n_train} train) to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _run_config(args, {"train.steps": args.steps, "train.lr": args.lr,
                             "train.batch": args.batch, "train.seed": args.seed})
    records = load_dataset(args.data, split="train")
    if not records:
        raise UsageError(f"{args.data}: no training records")
    size = records[0].image.shape[0]
    if cfg.arch.grid_size != size:
        cfg = cfg.override({"arch.grid_size": size})
    cfg = cfg.override({"paths.data": str(args.data), "paths.out": str(args.out)})
    s = cfg.make_schedule()
    try:
        net, trace = train(records, cfg.train, s, arch=cfg.arch, log_every=args.log_every)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out)
    save_checkpoint(out, net, s, cfg.train.to_dict())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iteration", "loss"])
    w.writerows((i, repr(float(v))) for i, v in enumerate(trace))
    atomic_write_bytes(out.parent / "loss_trace.csv", buf.getvalue().encode())
    _write_config(out.parent, cfg)
    tail = f", final loss {np.mean(trace[-100:]):.4f}" if len(trace) else ""
    print(f"trained {cfg.train.steps} steps{tail}; checkpoint {out}")
    return EXIT_OK


def cmd_sample(args) -> int:
    cfg = _run_config(args, {"sample.omega": args.omega, "sample.nfe": args.nfe,
                             "sample.seed": args.seed})
    if args.num_samples < 1:
        raise UsageError("--num-samples must be >= 1")
    net, s, header = load_checkpoint(args.ckpt)
    eta = net.cfg.eta
    cfg = cfg.override({"schedule." + k: v for k, v in s.params().items()})
    # echo what the checkpoint was actually built and trained with
    cfg = dataclasses.replace(cfg, arch=net.cfg)
    if header.get("train_config"):
        cfg = dataclasses.replace(cfg, train=TrainConfig(**header["train_config"]))
    cfg = cfg.override({"paths.data": str(args.data), "paths.out": str(args.out)})
    if cfg.sample.nfe > s.n_steps:
        raise UsageError(f"nfe={cfg.sample.nfe} exceeds the checkpoint schedule ({s.n_steps} steps)")
    records = load_dataset(args.data, split=args.split)
    for r in records:
        if r.image.shape != (net.cfg.grid_size,) * 2:
            raise UsageError(f"record {r.id}: image shape {r.image.shape} does not match checkpoint")
    p = UNetPredictor(net)
    k = args.num_samples
    out = Path(args.out)
    scfg = cfg.sample

    def run(rec):
        x1 = np.broadcast_to(rec.image, (k,) + rec.image.shape)
        labels = np.array([sample_label(j, eta) for j in range(k)])
        streams = [sample_stream(scfg.seed, rec.id, j) for j in range(k)]
        x = generate(p, x1, labels, scfg, s, rng=streams)
        for j in range(k):
            write_pgm(out / "pred" / f"{rec.id}_s{j}.pgm",
                      np.where(x[j] >= 0.5, 255, 0).astype(np.uint8))
            if args.save_continuous:
                atomic_write_bytes(out / "continuous" / f"{rec.id}_s{j}.npy", _npy_bytes(x[j]))

    _map(run, records)
    _write_config(out, cfg)
    print(f"sampled {k} masks for {len(records)} images into {out / 'pred'}")
    return EXIT_OK


def _npy_bytes(arr) -> bytes:
    buf = io.BytesIO()
    np.save(buf, np.asarray(arr, dtype="<f8"))
    return buf.getvalue()


def _pred_dir(path: Path) -> Path:
    return path / "pred" if (path / "pred").is_dir() else path


def load_predictions(pred: Path, record_id: str) -> list[np.ndarray]:
    files = sorted(pred.glob(f"{record_id}_s*.pgm"),
                   key=lambda f: int(f.stem.rsplit("_s", 1)[1]))
    if not files:
        raise UsageError(f"{pred}: no predictions for {record_id}")
    return [(read_pgm(f) >= 128).astype(np.uint8) for f in files]


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def cmd_evaluate(args) -> int:
    pred = _pred_dir(Path(args.pred))
    records = load_dataset(args.data, split=args.split)

    def run(rec):
        gen = load_predictions(pred, rec.id)
        try:
            return metrics.evaluate(gen, list(rec.expert_masks))
        except ValueError as exc:
            raise UsageError(f"{rec.id}: {exc}") from None

    reports = _map(run, records)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("id",) + REPORT_FIELDS)
    for rec, rep in zip(records, reports):
        w.writerow([rec.id] + [_fmt(getattr(rep, f)) for f in REPORT_FIELDS])
    agg = []
    for f in REPORT_FIELDS:
        vals = [getattr(r, f) for r in reports if getattr(r, f) is not None]
        agg.append(_fmt(np.mean(vals)) if vals else "")
    w.writerow(["AGGREGATE"] + agg)
    atomic_write_bytes(Path(args.report), buf.getvalue().encode())
    print(f"evaluated {len(records)} images; report {args.report}")
    return EXIT_OK


def cmd_verify(args) -> int:
    print(f"{'check':<22} {'result':<6} {'time':>7}  detail")

    def show(c):
        print(f"{c.name:<22} {'PASS' if c.passed else 'FAIL':<6} {c.seconds:6.2f}s  {c.detail}",
              flush=True)

    checks = verify.run_all(args.inject_fault, progress=show)
    ok = all(c.passed for c in checks)
    print("all checks passed" if ok else "verification FAILED")
    return EXIT_OK if ok else EXIT_VERIFY


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ssbridge", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic dataset")
    g.add_argument("--out", required=True, type=Path)
    g.add_argument("--count", type=int, default=100)
    g.add_argument("--experts", type=int, default=4)
    g.add_argument("--ambiguity", type=float, default=0.5)
    g.add_argument("--size", type=int, default=32)
    g.add_argument("--split", type=float, default=0.9)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a predictor")
    t.add_argument("--data", required=True, type=Path)
    t.add_argument("--config", type=Path)
    t.add_argument("--out", required=True, type=Path, help="checkpoint file")
    t.add_argument("--steps", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    t.add_argument("--log-every", type=int, default=0)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="generate masks for a dataset split")
    s.add_argument("--ckpt", required=True, type=Path)
    s.add_argument("--data", required=True, type=Path)
    s.add_argument("--split", default="test", choices=("train", "test"))
    s.add_argument("--num-samples", type=int, default=4)
    s.add_argument("--omega", type=float)
    s.add_argument("--nfe", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--config", type=Path)
    s.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--save-continuous", action="store_true")
    s.set_defaults(func=cmd_sample)

    e = sub.add_parser("evaluate", help="score predictions against expert masks")
    e.add_argument("--pred", required=True, type=Path)
    e.add_argument("--data", required=True, type=Path)
    e.add_argument("--split", default="test", choices=("train", "test"))
    e.add_argument("--report", required=True, type=Path)
    e.set_defaults(func=cmd_evaluate)

    v = sub.add_parser("verify", help="run the built-in oracle suite")
    v.add_argument("--inject-fault", choices=verify.FAULTS)
    v.set_defaults(func=cmd_verify)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, DatasetError, CheckpointError, PGMError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingError, GenerationError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
