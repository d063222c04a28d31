"""Command-line entry point: ``seqdetect {simulate,train,detect,sweep,report}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .bench import ExperimentSpec, MissingCheckpoint, run_experiment, run_length_generalization, run_timevarying
from .channel import ChannelParams
from .config import parse_kv
from .dataset import Dataset, DatasetError, generate_dataset
from .detectors import block_brnn_batch, decisions, detect_rnn, detect_symbolwise, sbrnn_offline
from .features import build_features
from .metrics import evaluate_errors
from .neural.loss import one_hot
from .neural.network import CheckpointMismatch, load_checkpoint
from .rng import substream
from .training import TrainConfig, TrainingDiverged, train
from .viterbi import CsiPerturbation, TrellisConfig, perturb_csi, viterbi_decode

log = logging.getLogger("seqdetect")


def _cmd_simulate(args) -> int:
    fixed = None
    if not args.random_params:
        if args.kind == "optical":
            fixed = ChannelParams.optical(beta=args.beta, eta=args.eta, tau=args.tau, m=args.m)
        else:
            fixed = ChannelParams.molecular(c=args.c, mu=args.mu, eta=args.eta, tau=args.tau, m=args.m)
    ds = generate_dataset(args.n, args.length, args.kind, seed=args.seed, params=fixed)
    ds.save(args.out)
    if args.csv:
        ds.export_csv(args.csv)
    log.info("wrote %d sequences to %s", len(ds), args.out)
    return 0


def _cmd_train(args) -> int:
    cfg = TrainConfig.from_file(args.config) if args.config else TrainConfig()
    if args.set:
        from .config import dataclass_from_kv
        cfg = dataclass_from_kv(TrainConfig, parse_kv("\n".join(args.set)), base=cfg)
    log.info("training %s detector for %d steps", cfg.detector, cfg.steps)

    def progress(step, loss, net):
        if step % max(1, args.log_every) == 0:
            log.info("step %d loss %.5f", step, loss)

    try:
        result = train(cfg, progress=progress)
    except TrainingDiverged as e:
        log.error("training diverged: %s", e)
        return 2
    result.save(args.checkpoint, args.curve)
    log.info("final loss %.5f; checkpoint %s", result.losses[-1], args.checkpoint)
    return 0


def _decide(args, ds: Dataset):
    """PMFs ``(n, K, m)`` for every sequence of ``ds``."""
    K = {len(r.symbols) for r in ds}
    if args.detector == "vd":
        cfg = TrellisConfig(args.memory, args.beam, ds.m)
        out = []
        for i, r in enumerate(ds):
            est = perturb_csi(r.params, CsiPerturbation(args.csi_error), substream(args.seed, i))
            out.append(one_hot(viterbi_decode(r.counts, est, cfg), ds.m))
        return out
    if not args.checkpoint:
        raise CheckpointMismatch(f"detector {args.detector} needs --checkpoint")
    net = load_checkpoint(args.checkpoint)
    want = {"sbrnn": "brnn", "brnn": "brnn", "rnn": "rnn", "symbolwise": "symbolwise"}[args.detector]
    if net.arch.detector != want:
        raise CheckpointMismatch(f"{args.checkpoint} holds a {net.arch.detector} network, {args.detector} needs {want}")
    fc = net.arch.feature_config
    feats = [build_features(r.counts, r.params.tau, fc).astype(net.dtype) for r in ds]
    if args.detector == "sbrnn":
        return [sbrnn_offline(x, net, args.L) for x in feats]
    if len(K) == 1:
        X = np.stack(feats)
        if args.detector == "rnn":
            return list(detect_rnn(X, net))
        if args.detector == "symbolwise":
            return list(detect_symbolwise(X, net))
        return list(block_brnn_batch(X, net))
    fn = {"rnn": detect_rnn, "symbolwise": detect_symbolwise,
          "brnn": lambda x, n: block_brnn_batch(x[None], n)[0]}[args.detector]
    return [fn(x, net) for x in feats]


def _cmd_detect(args) -> int:
    ds = Dataset.load(args.dataset)
    pmfs = _decide(args, ds)
    m = ds.m
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seq_id", "k", "decision", *(f"p{i}" for i in range(m))])
        for i, p in enumerate(pmfs):
            d = decisions(p)
            for k in range(len(d)):
                w.writerow([i, k, int(d[k]), *(repr(float(v)) for v in p[k])])
    dec = [decisions(p) for p in pmfs]
    errors = sum(int((d != r.symbols).sum()) for d, r in zip(dec, ds))
    n = sum(len(r.symbols) for r in ds)
    flat = evaluate_errors(np.concatenate(dec), np.concatenate([r.symbols for r in ds]))
    summary = {"detector": args.detector, "sequences": len(ds), "symbols": n, "errors": errors,
               "error_rate": flat.rate, "ci_low": flat.ci_low, "ci_high": flat.ci_high}
    if args.metrics:
        Path(args.metrics).write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary))
    return 0


def _cmd_sweep(args) -> int:
    spec = ExperimentSpec.from_file(args.spec)
    runner = {"grid": run_experiment, "timevarying": run_timevarying,
              "length": run_length_generalization}[args.mode]
    kwargs = {"timing": args.timing}
    if args.mode == "length" and args.profiles:
        kwargs["profile_out"] = args.profiles
    try:
        table = runner(spec, args.out, **kwargs)
    except AssertionError as e:
        log.error("invariant gate failed: %s", e)
        return 1
    for r in table.rows:
        log.info("%s %s: %.3g [%.3g, %.3g]", dict(r.point), r.detector, r.rate, r.ci_low, r.ci_high)
    return 0


def check_results(path) -> tuple[list[dict], list[str]]:
    """Read a results CSV and list any rows violating the table invariants."""
    problems = []
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.startswith("# spec "):
            problems.append(f"{path}: missing spec header")
            fh.seek(0)
        rows = list(csv.DictReader(fh))
    for i, r in enumerate(rows):
        rate, lo, hi, n = float(r["error_rate"]), float(r["ci_low"]), float(r["ci_high"]), int(r["n_bits"])
        if not lo <= rate <= hi:
            problems.append(f"{path} row {i}: interval [{lo}, {hi}] does not bracket {rate}")
        if n <= 0:
            problems.append(f"{path} row {i}: no bits evaluated")
    return rows, problems


def _cmd_report(args) -> int:
    bad = []
    for path in args.results:
        rows, problems = check_results(path)
        bad += problems
        print(path)
        for r in rows:
            lead = {k: v for k, v in r.items() if k not in ("detector", "errors", "n_bits", "error_rate",
                                                          "ci_low", "ci_high")}
            print(f"  {lead} {r['detector']:>12}  {float(r['error_rate']):.3e}  "
                  f"[{float(r['ci_low']):.3e}, {float(r['ci_high']):.3e}]  n={r['n_bits']}")
    for p in bad:
        print("FAIL", p, file=sys.stderr)
    return 1 if bad else 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="seqdetect", description="Poisson-channel sequence detection experiments")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a dataset file")
    s.add_argument("--kind", choices=("optical", "molecular"), default="optical")
    s.add_argument("--n", type=int, default=1000, help="number of sequences")
    s.add_argument("--length", type=int, default=100)
    s.add_argument("--m", type=int, default=2)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--random-params", action="store_true", help="draw parameters per sequence (training mix)")
    s.add_argument("--beta", type=float, default=0.2)
    s.add_argument("--c", type=float, default=8.0)
    s.add_argument("--mu", type=float, default=40.0)
    s.add_argument("--eta", type=float, default=1.0)
    s.add_argument("--tau", type=float, default=0.025)
    s.add_argument("--out", required=True)
    s.add_argument("--csv", help="also export rows as CSV")
    s.set_defaults(func=_cmd_simulate)

    t = sub.add_parser("train", help="train a detector from a key=value config")
    t.add_argument("--config")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config entry")
    t.add_argument("--checkpoint", required=True)
    t.add_argument("--curve", help="loss curve CSV")
    t.add_argument("--log-every", type=int, default=50)
    t.set_defaults(func=_cmd_train)

    d = sub.add_parser("detect", help="decode a dataset file")
    d.add_argument("--dataset", required=True)
    d.add_argument("--detector", choices=("vd", "sbrnn", "brnn", "rnn", "symbolwise"), required=True)
    d.add_argument("--checkpoint")
    d.add_argument("--L", type=int, default=50)
    d.add_argument("--csi-error", type=float, default=0.0)
    d.add_argument("--memory", type=int, default=99)
    d.add_argument("--beam", type=int, default=100)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--out", required=True, help="decisions CSV")
    d.add_argument("--metrics", help="metrics JSON")
    d.set_defaults(func=_cmd_detect)

    w = sub.add_parser("sweep", help="run an experiment spec")
    w.add_argument("--spec", required=True)
    w.add_argument("--mode", choices=("grid", "timevarying", "length"), default="grid")
    w.add_argument("--out", required=True)
    w.add_argument("--profiles", help="per-position error CSV (length mode)")
    w.add_argument("--timing", action="store_true", help="write wall times to a sidecar CSV")
    w.set_defaults(func=_cmd_sweep)

    r = sub.add_parser("report", help="summarize and validate result CSVs")
    r.add_argument("results", nargs="+")
    r.set_defaults(func=_cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s")
    try:
        return args.func(args)
    except (DatasetError, CheckpointMismatch, MissingCheckpoint, OSError, ValueError) as e:
        log.error("error: %s", e)
        return 1


if __name__ == "__main__":
    sys.exit(main())
