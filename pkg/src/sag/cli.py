"""Command line entry point: ``python -m sag <command>`` (or the ``sag`` script).

Commands
    keygen   write a Paillier key pair (PREFIX.pub, PREFIX.key)
    run      one party of the secure ball computation over TCP; saves the encrypted ball
    bounds   one party of the bound evaluation for a file of query rows
    bench    per-instance SBC time across piece counts (both roles in one process)
    demo     end-to-end certification demo on synthetic data (both roles in one process)

Every flag can also come from ``--config file.json`` whose keys mirror the long flag
names (``"lambda"``, ``"sqrt_pieces"``, ...); flags given on the command line win.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import crypto
from .erm import (LossFamily, RegularizedObjective, apply_scaling, approx_solve, check_labels, domain_bound,
                  exact_solve, ingest_csv, synthetic)
from .errors import SagError
from .sbc import (EncryptedBall, SbcConfig, bound_eval, encrypt_weights, load_weights, sbc)
from .transport import (PartyRole, ProtocolSession, SessionParams, accept, connect, memory_session_pair,
                        parse_endpoint, run_pair)

log = logging.getLogger("sag")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with defaults for any flag")
    p.add_argument("--loss", default="logistic", choices=[f.value for f in LossFamily])
    p.add_argument("--lambda", dest="lam", type=float, default=1.0, help="regularization strength")
    p.add_argument("--pieces", "-K", type=int, default=10, help="surrogate piece count K")
    p.add_argument("--sqrt-pieces", type=int, default=64)
    p.add_argument("--sqrt-max", type=float, default=1e4, help="upper end of the sqrt bound's domain")
    p.add_argument("--magnification", "-M", type=int, default=10_000)
    p.add_argument("--cmp-bits", type=int, default=60, help="secure comparison bit width")
    p.add_argument("--bound", type=float, help="surrogate domain [-B, B]; default derived from lambda and d")
    p.add_argument("--label-mean", type=float, default=None,
                   help="public bound on the mean loss at w=0 (needed for the exponential family)")
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    p.add_argument("--timeout", type=float, default=120.0)
    p.add_argument("-v", "--verbose", action="store_true")


def _add_party(p: argparse.ArgumentParser) -> None:
    p.add_argument("--role", required=True, choices=["A", "B"])
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--listen", metavar="HOST:PORT")
    g.add_argument("--connect", metavar="HOST:PORT")
    p.add_argument("--keys", required=True, help="key prefix written by keygen")
    p.add_argument("--data", help="this party's CSV")
    p.add_argument("--schema", help="JSON {features: [...], label: name}")
    p.add_argument("--label", help="label column (party B)")
    p.add_argument("--no-scale", action="store_true", help="features are already in [-1, 1]")
    p.add_argument("--dims", type=int, help="total number of features across both parties")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sag", description="Secure approximation guarantees for vertically partitioned ERM")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", help="generate a key pair")
    p.add_argument("--bits", type=int, default=1024)
    p.add_argument("--out", required=True, help="output prefix")

    p = sub.add_parser("run", help="run one party of the secure ball computation")
    _add_common(p)
    _add_party(p)
    w = p.add_mutually_exclusive_group(required=True)
    w.add_argument("--weights", help="plaintext w_hat (JSON list or whitespace text), split by feature blocks")
    w.add_argument("--encrypted-weights", help="this party's block of w_hat already encrypted (SAGW1 file)")
    p.add_argument("--out", required=True, help="where to save this party's encrypted ball")

    p = sub.add_parser("bounds", help="evaluate score bounds for query rows")
    _add_common(p)
    _add_party(p)
    p.add_argument("--ball", required=True, help="this party's encrypted ball (from run)")
    p.add_argument("--queries", required=True, help="CSV of this party's columns, one query per row")
    p.add_argument("--leader", default="A", choices=["A", "B"], help="party that learns the bounds")
    p.add_argument("--out", default="results.csv")

    p = sub.add_parser("bench", help="per-instance SBC time for several K")
    _add_common(p)
    p.add_argument("--k-list", type=int, nargs="+", default=[10, 40])
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--d", type=int, default=4)
    p.add_argument("--key-bits", type=int, default=256)
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="bench.csv")

    p = sub.add_parser("demo", help="in-process certification demo on synthetic data")
    _add_common(p)
    p.set_defaults(pieces=30, lam=0.2)
    p.add_argument("--seed", type=int, default=3)
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--d", type=int, default=4)
    p.add_argument("--tests", type=int, default=8)
    p.add_argument("--key-bits", type=int, default=256)
    p.add_argument("--out", help="optional results CSV")
    return parser


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        doc = json.loads(Path(args.config).read_text())
        doc = {k.replace("-", "_"): v for k, v in doc.items()}
        if "lambda" in doc:
            doc["lam"] = doc.pop("lambda")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        sub.set_defaults(**doc)
        args = parser.parse_args(argv)
    return args


# -- helpers ----------------------------------------------------------------------

def _session_params(args, key_bits: int) -> SessionParams:
    return SessionParams(magnification=args.magnification, key_bits=key_bits, cmp_bits=args.cmp_bits,
                         pieces=args.pieces, sqrt_pieces=args.sqrt_pieces)


def _config(args, d: int) -> SbcConfig:
    family = LossFamily.parse(args.loss)
    bound = args.bound if args.bound is not None else domain_bound(family, args.lam, d, args.label_mean)
    return SbcConfig(family, args.lam, args.pieces, bound, args.magnification, args.sqrt_pieces,
                     args.sqrt_max, workers=args.workers)


def _load_keypair(prefix: str):
    sk = crypto.load_key(f"{prefix}.key")
    if not isinstance(sk, crypto.PaillierPrivateKey):
        raise SagError(f"{prefix}.key is not a private key")
    return sk.public_key, sk


def _open(args, role: PartyRole, keypair) -> ProtocolSession:
    params = _session_params(args, keypair[0].bits)
    if args.listen:
        host, port = parse_endpoint(args.listen)
        return accept(host, port, role, keypair, params, args.timeout)
    host, port = parse_endpoint(args.connect)
    return connect(host, port, role, keypair, params, args.timeout)


def _schema(args) -> dict:
    schema = json.loads(Path(args.schema).read_text()) if args.schema else {}
    if args.label:
        schema["label"] = args.label
    return schema


def _read_weights(path: str) -> np.ndarray:
    text = Path(path).read_text().strip()
    try:
        return np.asarray(json.loads(text), dtype=float).ravel()
    except json.JSONDecodeError:
        return np.asarray(text.split(), dtype=float)


def _report_abort(sess: Optional[ProtocolSession], exc: Exception) -> int:
    print(f"error: {exc}", file=sys.stderr)
    if sess is not None:
        tail = sess.dump_transcript().splitlines()[-10:]
        if tail:
            print("last transcript records (protocol, step, direction, bytes, digest):", file=sys.stderr)
            for line in tail:
                print("  " + line, file=sys.stderr)
    return 2


def write_results(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["instance_id", "lb", "ub", "decision"])
        for i, (lb, ub, decision) in enumerate(rows):
            w.writerow([i, repr(float(lb)), repr(float(ub)), decision])


# -- commands ---------------------------------------------------------------------

def cmd_keygen(args) -> int:
    pk, sk = crypto.keygen(args.bits)
    crypto.save_key(pk, f"{args.out}.pub")
    crypto.save_key(sk, f"{args.out}.key")
    print(f"wrote {args.out}.pub and {args.out}.key ({pk.bits}-bit N, key id {pk.key_id})")
    return 0


def cmd_run(args) -> int:
    role = PartyRole(args.role)
    keypair = _load_keypair(args.keys)
    if not args.data:
        raise SagError("--data is required")
    data = ingest_csv(args.data, args.role, _schema(args), scale=not args.no_scale)
    if role is PartyRole.B and data.y is None:
        raise SagError("party B needs a label column (--label or schema)")
    d_own = data.X.shape[1]
    if args.weights:
        w_full = _read_weights(args.weights)
        d = w_full.shape[0]
        block = w_full[:d_own] if role is PartyRole.A else w_full[d - d_own:]
    else:
        block = None
        if not args.dims:
            raise SagError("--dims is required with --encrypted-weights")
        d = args.dims
    config = _config(args, d)
    # budget check before any network activity
    config.plan(data.n).check(int(keypair[0].n), config.worst_radius_sq(d), d)
    y = check_labels(config.family, data.y) if data.y is not None else None

    sess = None
    try:
        sess = _open(args, role, keypair)
        w_cts = encrypt_weights(sess, block) if block is not None else load_weights(args.encrypted_weights)
        t0 = time.perf_counter()
        ball = sbc(sess, data.X, w_cts, config, y=y)
        elapsed = time.perf_counter() - t0
        ball.save(args.out)
        meta = {"role": args.role, "n": data.n, "d_own": d_own, "center_scale": ball.center_scale,
                "radius_scale": ball.radius_scale, "magnification": ball.magnification,
                "bound": config.bound, "seconds": elapsed, "counters": dict(sess.counters)}
        Path(str(args.out) + ".json").write_text(json.dumps(meta, indent=2))
        print(f"party {args.role}: encrypted ball saved to {args.out} ({elapsed:.1f} s, "
              f"{sess.counters.get('comparisons', 0)} comparisons)")
        return 0
    except SagError as exc:
        return _report_abort(sess, exc)
    finally:
        if sess is not None:
            sess.close()


def cmd_bounds(args) -> int:
    role = PartyRole(args.role)
    leader = PartyRole(args.leader)
    keypair = _load_keypair(args.keys)
    ball = EncryptedBall.load(args.ball)
    qdata = ingest_csv(args.queries, args.role, {}, scale=False)
    queries = qdata.X
    if args.data and not args.no_scale:
        train = ingest_csv(args.data, args.role, _schema(args))
        queries = apply_scaling(queries, train.columns, train.scaling)
    if not args.dims:
        raise SagError("--dims (total feature count) is required")
    d = args.dims
    config = _config(args, d)
    sess = None
    try:
        sess = _open(args, role, keypair)
        rows = []
        for j, q in enumerate(queries):
            res = bound_eval(sess, q, ball, config, leader, d_total=d, instance=j)
            if res is not None:
                rows.append((res.lb, res.ub, res.decision))
        if role is leader:
            write_results(args.out, rows)
            print(f"party {args.role}: {len(rows)} bounds written to {args.out}")
        return 0
    except SagError as exc:
        return _report_abort(sess, exc)
    finally:
        if sess is not None:
            sess.close()


def _keys(bits: int):
    return crypto.keygen(bits), crypto.keygen(bits)


def bench(k_list, n=4, d=4, key_bits=256, magnification=10_000, cmp_bits=60, lam=1.0, loss="logistic",
          repeats=1, seed=0, workers=1) -> list[dict]:
    """Per-instance SBC wall time for each K (both roles in this process)."""
    data = synthetic(loss, n, d, seed)
    obj = RegularizedObjective.from_dataset(data, lam, loss)
    w_hat = approx_solve(obj, "medium")
    keys_a, keys_b = _keys(key_bits)
    rows = []
    for K in k_list:
        config = SbcConfig(loss, lam, K, domain_bound(loss, lam, d), magnification, workers=workers)
        params = SessionParams(magnification=magnification, key_bits=key_bits, cmp_bits=cmp_bits, pieces=K)
        best = None
        for _ in range(repeats):
            sa, sb = memory_session_pair(keys_a, keys_b, params)
            wa = encrypt_weights(sa, w_hat[:data.d_A])
            wb = encrypt_weights(sb, w_hat[data.d_A:])
            t0 = time.perf_counter()
            run_pair(lambda: sbc(sa, data.X_A, wa, config), lambda: sbc(sb, data.X_B, wb, config, y=obj.y))
            dt = (time.perf_counter() - t0) / n
            best = dt if best is None else min(best, dt)
            comparisons = sa.counters["comparisons"] // n
            sa.close()
            sb.close()
        rows.append({"K": K, "seconds_per_instance": best, "comparisons": comparisons})
    return rows


def cmd_bench(args) -> int:
    rows = bench(args.k_list, args.n, args.d, args.key_bits, args.magnification, args.cmp_bits, args.lam,
                 args.loss, args.repeats, args.seed, args.workers)
    with open(args.out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["K", "seconds_per_instance", "comparisons"])
        w.writeheader()
        w.writerows(rows)
    for r in rows:
        print(f"K={r['K']:5d}  {r['seconds_per_instance']:.3f} s/instance  {r['comparisons']} comparisons/instance")
    if len(rows) > 1:
        print(f"time ratio K={rows[-1]['K']} / K={rows[0]['K']}: "
              f"{rows[-1]['seconds_per_instance'] / rows[0]['seconds_per_instance']:.2f}")
    return 0


def demo(seed: int = 3, n: int = 20, d: int = 4, tests: int = 8, K: int = 30, lam: float = 0.2,
         key_bits: int = 256, magnification: int = 10_000, sqrt_pieces: int = 64) -> list[dict]:
    """Certify the labels of fresh synthetic points from an encrypted ball."""
    full = synthetic("logistic", n + tests, d, seed, signal=6.0)
    train, test = full.head(n), full.X[n:]
    obj = RegularizedObjective.from_dataset(train, lam)
    w_star = exact_solve(obj)
    w_hat = approx_solve(obj, "fine")
    config = SbcConfig("logistic", lam, K, domain_bound("logistic", lam, d), magnification, sqrt_pieces)
    keys_a, keys_b = _keys(key_bits)
    params = SessionParams(magnification=magnification, key_bits=key_bits, pieces=K, sqrt_pieces=sqrt_pieces)
    sa, sb = memory_session_pair(keys_a, keys_b, params)
    try:
        wa = encrypt_weights(sa, w_hat[:train.d_A])
        wb = encrypt_weights(sb, w_hat[train.d_A:])
        ball_a, ball_b = run_pair(lambda: sbc(sa, train.X_A, wa, config),
                                  lambda: sbc(sb, train.X_B, wb, config, y=obj.y))
        rows = []
        for j, x in enumerate(test):
            res, _ = run_pair(lambda: bound_eval(sa, x[:train.d_A], ball_a, config, instance=j),
                              lambda: bound_eval(sb, x[train.d_A:], ball_b, config, instance=j))
            score = float(x @ w_star)
            rows.append({"instance_id": j, "lb": res.lb, "ub": res.ub, "decision": res.decision,
                         "true_score": score,
                         "p_lb": 1 / (1 + np.exp(-res.lb)), "p_ub": 1 / (1 + np.exp(-res.ub))})
    finally:
        sa.close()
        sb.close()
    return rows


def cmd_demo(args) -> int:
    rows = demo(args.seed, args.n, args.d, args.tests, args.pieces, args.lam, args.key_bits,
                args.magnification, args.sqrt_pieces)
    print(f"{'id':>3} {'LB':>9} {'UB':>9} {'P(y=1) range':>20} {'x^T w*':>9}  decision")
    for r in rows:
        print(f"{r['instance_id']:>3} {r['lb']:9.4f} {r['ub']:9.4f}   [{r['p_lb']:.3f}, {r['p_ub']:.3f}]   "
              f"{r['true_score']:9.4f}  {r['decision']}")
    if args.out:
        write_results(args.out, [(r["lb"], r["ub"], r["decision"]) for r in rows])
    return 0


COMMANDS = {"keygen": cmd_keygen, "run": cmd_run, "bounds": cmd_bounds, "bench": cmd_bench, "demo": cmd_demo}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (SagError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
