"""``neuralrr`` command line: gen, train, eval, converge, orders.

Every command writes a ``<output>.manifest.json`` (or ``manifest.json``
inside an output directory) describing how the output was produced.
Exit codes: 0 success, 2 usage error, 1 runtime error. Error lines start
with ``error:``. Set ``NEURALRR_LOG=INFO`` (or DEBUG) for progress logs.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
import time
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np

from .data import DatasetError, file_digest, generate_dataset, load_dataset, save_dataset
from .fairdiv import round_robin
from .jsonio import atomic_write_text, write_json
from .metrics import MUWModel, NRRModel, RRModel, evaluate, kendall_tau, mean_valuation_order, summaries_to_csv
from .model import load_checkpoint, nrr_order, save_checkpoint
from .soft import soft_rr
from .training import DEFAULT_TEMPERATURE_GRID, TrainConfig, train

log = logging.getLogger("neuralrr")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(2)


def _tool_version() -> str:
    try:
        return version("artifact")
    except PackageNotFoundError:
        return "unknown"


def _float_list(text: str) -> list[float]:
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals or any(not v > 0 for v in vals):
        raise argparse.ArgumentTypeError(f"expected positive values, got {text!r}")
    return vals


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _write_manifest(path: Path, command: str, config: dict, inputs, outputs, seed, started: float) -> None:
    write_json(
        path,
        {
            "command": command,
            "config": config,
            "inputs": [str(p) for p in inputs],
            "outputs": [str(p) for p in outputs],
            "seed": seed,
            "tool_version": _tool_version(),
            "duration_seconds": round(time.monotonic() - started, 3),
        },
    )


def _manifest_for(out: Path) -> Path:
    return out.with_name(out.name + ".manifest.json")


# -- commands -------------------------------------------------------------------------


def cmd_gen(args) -> int:
    started = time.monotonic()
    ds = generate_dataset(args.agents, args.goods, args.count, args.seed, args.labeler)
    out = Path(args.out)
    digest = save_dataset(ds, out)
    config = {"agents": args.agents, "goods": args.goods, "count": args.count, "seed": args.seed, "labeler": args.labeler}
    _write_manifest(_manifest_for(out), "gen", config, [], [out], args.seed, started)
    print(f"sha256:{digest}  {out}")
    return 0


def cmd_train(args) -> int:
    started = time.monotonic()
    train_ds, val_ds = load_dataset(args.train), load_dataset(args.val)
    if (train_ds.n, train_ds.m) != (val_ds.n, val_ds.m):
        raise UsageError(
            f"training set is {train_ds.n}x{train_ds.m} but validation set is {val_ds.n}x{val_ds.m}"
        )
    cfg = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch,
        learning_rate=args.lr,
        lam=args.lam,
        tau_grid=args.tau_grid,
        tau_prime_grid=args.tau_prime_grid,
        seed=args.seed,
        rank=args.rank,
    )
    params, report = train(train_ds, val_ds, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt, rep, curve = out / "checkpoint.json", out / "report.json", out / "loss_curve.csv"
    save_checkpoint(params, ckpt)
    write_json(rep, report.to_dict())
    atomic_write_text(curve, report.loss_curve_csv())
    config = {k: v for k, v in vars(args).items() if k != "func"}
    _write_manifest(out / "manifest.json", "train", config, [args.train, args.val], [ckpt, rep, curve], args.seed, started)
    print(f"selected tau={report.selected[0]} tau_prime={report.selected[1]}")
    return 0


def _check_compatible(params, ds, path) -> None:
    if params.rank > min(ds.n, ds.m):
        raise UsageError(f"{path}: checkpoint rank {params.rank} exceeds min(n, m) = {min(ds.n, ds.m)}")


def cmd_eval(args) -> int:
    started = time.monotonic()
    if args.model == "nrr" and not args.checkpoint:
        raise UsageError("--model nrr requires --checkpoint")
    if args.model == "nrr":
        model = NRRModel(load_checkpoint(args.checkpoint))
    else:
        model = RRModel() if args.model == "rr" else MUWModel()
    summaries = []
    for path in args.data:
        ds = load_dataset(path)
        if args.model == "nrr":
            _check_compatible(model.params, ds, path)
        summaries.append(evaluate(model, ds))
    out = Path(args.out)
    atomic_write_text(out, summaries_to_csv(summaries, per_sample=not args.aggregate_only))
    config = {k: v for k, v in vars(args).items() if k != "func"}
    inputs = list(args.data) + ([args.checkpoint] if args.checkpoint else [])
    _write_manifest(_manifest_for(out), "eval", config, inputs, [out], None, started)
    for s in summaries:
        kt = "" if s.kendall_tau_mean is None else f" kendall_tau={s.kendall_tau_mean:.4f}"
        print(f"{s.model} n={s.n} m={s.m} hd={s.hd_mean:.4f} ef1={s.ef1_ratio:.4f} uwloss={s.uwloss_mean:.4f}{kt}")
    return 0


def convergence_sweep(n: int, m: int, seed: int, taus) -> dict:
    """Soft Round Robin outputs on one U[0, 1] profile for each temperature, next to exact RR."""
    rng = np.random.Generator(np.random.PCG64(seed))
    V = rng.uniform(0.0, 1.0, size=(n, m))
    exact = round_robin(V).astype(float)
    runs = []
    for tau in taus:
        R = soft_rr(V, tau).data
        dev = np.abs(R - exact)
        runs.append({"tau": float(tau), "max_deviation": float(dev.max()), "mean_deviation": float(dev.mean()), "soft_rr": R})
    return {"n": n, "m": m, "seed": seed, "valuations": V, "round_robin": exact, "runs": runs}


def cmd_converge(args) -> int:
    started = time.monotonic()
    result = convergence_sweep(args.agents, args.goods, args.seed, args.taus)
    out = Path(args.out)
    write_json(out, result)
    config = {k: v for k, v in vars(args).items() if k != "func"}
    _write_manifest(_manifest_for(out), "converge", config, [], [out], args.seed, started)
    for run in result["runs"]:
        print(f"tau={run['tau']:g} max_deviation={run['max_deviation']:.3e} mean_deviation={run['mean_deviation']:.3e}")
    return 0


def cmd_orders(args) -> int:
    started = time.monotonic()
    params = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.data)
    if ds.n < 2:
        raise UsageError("order comparison needs at least 2 agents")
    _check_compatible(params, ds, args.data)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sample_index", "kendall_tau_learned", "kendall_tau_identity"])
    learned_all, ident_all = [], []
    first_pairs = None
    for k, V in enumerate(ds.profiles()):
        ref = mean_valuation_order(V)
        learned = nrr_order(V, params)
        kl = kendall_tau(learned, ref)
        ki = kendall_tau(RRModel().order(V), ref)
        learned_all.append(kl)
        ident_all.append(ki)
        w.writerow([k, repr(kl), repr(ki)])
        if first_pairs is None:
            # (x, y): agent at rank x in the mean-valuation order sits at rank y in the learned order
            first_pairs = [(x + 1, learned.position[agent] + 1) for x, agent in enumerate(ref.order)]
    w.writerow(["mean", repr(float(np.mean(learned_all))), repr(float(np.mean(ident_all)))])
    out = Path(args.out)
    atomic_write_text(out, buf.getvalue())
    pairs = out.with_name(out.stem + "_pairs.csv")
    atomic_write_text(pairs, "mean_valuation_rank,learned_rank\n" + "".join(f"{x},{y}\n" for x, y in first_pairs))
    config = {k: v for k, v in vars(args).items() if k != "func"}
    _write_manifest(_manifest_for(out), "orders", config, [args.checkpoint, args.data], [out, pairs], None, started)
    print(f"mean kendall_tau learned={np.mean(learned_all):.4f} identity={np.mean(ident_all):.4f}")
    return 0


# -- parser -----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="neuralrr", description="Learn EF1 allocation mechanisms with differentiable Round Robin.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    g.add_argument("--agents", type=_positive_int, required=True)
    g.add_argument("--goods", type=_positive_int, required=True)
    g.add_argument("--count", type=_positive_int, required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--labeler", default="muw", choices=["muw"])
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train NeuralRR with temperature grid search")
    t.add_argument("--train", required=True)
    t.add_argument("--val", required=True)
    t.add_argument("--epochs", type=_positive_int, default=20)
    t.add_argument("--batch", type=_positive_int, default=4)
    t.add_argument("--lr", type=float, default=0.05)
    t.add_argument("--lambda", dest="lam", type=float, default=0.0)
    t.add_argument("--rank", type=_positive_int, default=3)
    t.add_argument("--tau-grid", type=_float_list, default=list(DEFAULT_TEMPERATURE_GRID))
    t.add_argument("--tau-prime-grid", type=_float_list, default=list(DEFAULT_TEMPERATURE_GRID))
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True, help="output directory")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a mechanism on one or more datasets")
    e.add_argument("--model", required=True, choices=["rr", "muw", "nrr"])
    e.add_argument("--checkpoint")
    e.add_argument("--data", action="append", required=True)
    e.add_argument("--aggregate-only", action="store_true", help="omit per-sample rows")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("converge", help="soft Round Robin temperature sweep")
    c.add_argument("--agents", type=_positive_int, default=10)
    c.add_argument("--goods", type=_positive_int, default=20)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--taus", type=_float_list, default=[1.0, 0.05, 0.001])
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_converge)

    o = sub.add_parser("orders", help="compare learned agent orders with mean-valuation orders")
    o.add_argument("--checkpoint", required=True)
    o.add_argument("--data", required=True)
    o.add_argument("--out", required=True)
    o.set_defaults(func=cmd_orders)
    return p


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("NEURALRR_LOG", "WARNING").upper(),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DatasetError, ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
