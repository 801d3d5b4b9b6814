"""Command line entry point: ``lopblock <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import math
import sys

import numpy as np

from . import aps
from .bench import emit_results, load_config, resolve_threads, run_experiment
from .certificate import CertificateError, construct_certificate, verify_conditions
from .gme import gme_value
from .penalty import BlockPartition, eval_lop_constrained, eval_lop_penalized, nonconvex_oracle


def _cmd_run(args):
    cfg = load_config(args.config, trials=args.trials, master_seed=args.seed)
    threads = resolve_threads(args.threads or cfg.threads)

    def progress(done, total):
        if args.verbose:
            print(f"\r{done}/{total} trial tasks", end="", file=sys.stderr, flush=True)

    table = run_experiment(cfg, threads=threads, progress=progress)
    if args.verbose:
        print(file=sys.stderr)
    paths = emit_results(table, args.out)
    for a in table.aggregates:
        print(f"{a.method:>10s}  M={a.M:<3d} mean_nmse={a.mean_nmse:.6g}  "
              f"std_err={a.std_err:.3g}  failed={a.n_failed}")
    print(f"wrote {', '.join(str(p) for p in paths.values())}")
    return 0


def _load_cert_input(path):
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    x = np.asarray(data["x"], dtype=float)
    blocks = data.get("blocks")
    if blocks is None:
        raise ValueError("input needs a 'blocks' list of [start, end] pairs (0-based, inclusive)")
    return x, BlockPartition(tuple(tuple(b) for b in blocks), x.size), float(data["beta"])


def _cmd_certify(args):
    x, part, beta = _load_cert_input(args.input)
    try:
        cert = construct_certificate(x, part, beta)
    except CertificateError as exc:
        print(json.dumps({"ok": False, "error": str(exc)}))
        return 1
    rep = verify_conditions(cert, x)
    out = rep.to_dict()
    out.update(ok=rep.all_ok, eta=cert.eta_hat.tolist(), levels=cert.varsigma.tolist(),
               weights=cert.weights.tolist(), jumps=list(cert.I_hat))
    print(json.dumps(out, default=lambda v: None if v is None else float(v)))
    return 0 if rep.all_ok else 1


def _read_vectors(path):
    return aps.read_dataset_csv(path)


def _cmd_penalty(args):
    X = _read_vectors(args.input)
    if args.gme and args.beta is None:
        raise SystemExit("--gme needs --beta")
    print("row,value")
    for i, x in enumerate(X):
        if args.gme:
            B = math.sqrt(args.omega) * np.eye(x.size)
            v = gme_value(x, B, args.beta)
        elif args.beta is not None:
            v = eval_lop_penalized(x, args.beta).value
        else:
            v = eval_lop_constrained(x, args.alpha).value
        print(f"{i},{v!r}")
    return 0


def _cmd_oracle(args):
    X = _read_vectors(args.input)
    print("row,value,blocks")
    for i, x in enumerate(X):
        val, part = nonconvex_oracle(x, args.max_blocks)
        blocks = " ".join(f"{s}-{e}" for s, e in part.blocks)
        print(f"{i},{val!r},{blocks}")
    return 0


def _cmd_gen(args):
    rng = np.random.default_rng(args.seed)
    grid = np.linspace(-math.pi / 2, math.pi / 2, args.n)
    X = np.array([aps.sample_aps(args.policy, rng, grid)[0] for _ in range(args.count)])
    aps.write_dataset_csv(args.out, X.reshape(args.count, args.n))
    print(f"wrote {args.count} samples to {args.out}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="lopblock", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an NMSE experiment from a YAML config")
    r.add_argument("--config", required=True)
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--trials", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--threads", type=int, help="worker processes (LOPBLOCK_THREADS overrides)")
    r.add_argument("-v", "--verbose", action="store_true")
    r.set_defaults(func=_cmd_run)

    c = sub.add_parser("certify", help="check the closed-form optimality certificate")
    c.add_argument("--input", required=True,
                   help='JSON with "x", "blocks" ([start, end] pairs) and "beta"')
    c.set_defaults(func=_cmd_certify)

    e = sub.add_parser("penalty", help="evaluate the LOP penalty for each CSV row")
    e.add_argument("--input", required=True)
    g = e.add_mutually_exclusive_group(required=True)
    g.add_argument("--beta", type=float)
    g.add_argument("--alpha", type=float)
    e.add_argument("--gme", action="store_true", help="enhanced penalty with B^T B = omega I")
    e.add_argument("--omega", type=float, default=1.0)
    e.set_defaults(func=_cmd_penalty)

    o = sub.add_parser("oracle", help="optimal partition with at most K blocks")
    o.add_argument("--input", required=True)
    o.add_argument("--max-blocks", type=int, required=True)
    o.set_defaults(func=_cmd_oracle)

    s = sub.add_parser("gen", help="sample random APS vectors to CSV")
    s.add_argument("--policy", choices=["true", "dataset"], required=True)
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n", type=int, default=100, help="grid size")
    s.set_defaults(func=_cmd_gen)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
