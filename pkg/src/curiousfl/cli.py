"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 numeric error, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import oracles
from .errors import ConfigError, ContractError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("curiousfl")


def _cmd_run(args) -> int:
    from .config import load_config
    from .harness import preflight, run_seeds

    cfg = load_config(args.config)
    if args.threads is not None:
        cfg.threads = args.threads
    out = args.out or cfg.out_dir
    preflight(out)
    first = cfg.seed if args.seed is None else args.seed
    seeds = list(range(first, first + args.seeds))
    results = run_seeds(cfg, seeds, out)
    for s, res in zip(seeds, results):
        sm = res.summary
        rm = sm.get("rmse_mean_over_rounds")
        print(f"seed {s}: rounds={sm['rounds']} final_acc={sm['final_test_acc']:.4f} "
              f"mean_rmse={'n/a' if rm is None else f'{rm:.4f}'}")
    print(f"outputs in {out}")
    return EXIT_OK


def _load_matrix(path: str) -> np.ndarray:
    text = sys.stdin.read() if path == "-" else Path(path).read_text()
    try:
        arr = np.asarray(json.loads(text), dtype=np.float64)
    except (json.JSONDecodeError, ValueError) as exc:
        raise ConfigError(f"oracle input must be a JSON list of update rows: {exc}") from None
    if arr.ndim != 2 or arr.size == 0:
        raise ConfigError("oracle input must be a non-empty 2-D list")
    return arr


def _cmd_oracle(args) -> int:
    g = _load_matrix(args.input)
    name = args.aggregator
    if name == "krum":
        out = {"selected": [oracles.krum(g, args.attackers)], "scores": oracles.krum_scores(g, args.attackers)}
    elif name == "multikrum":
        out = {"selected": oracles.multi_krum(g, args.attackers, args.select)}
    elif name == "dnc":
        sel, scores = oracles.dnc(g, args.attackers, args.filter_frac)
        out = {"selected": sel, "scores": [float(s) for s in scores]}
    elif name == "assignment":
        cols, cost = oracles.assignment(g)
        out = {"columns": cols, "cost": cost}
    else:
        raise ConfigError(f"no oracle named {name!r}; choose from {sorted(oracles.ORACLES)}")
    print(json.dumps(out))
    return EXIT_OK


def _cmd_inspect(args) -> int:
    from .harness import read_metrics

    rows = read_metrics(args.metrics)
    print(f"{len(rows)} rounds in {args.metrics}")
    if not rows:
        return EXIT_OK

    def col(name):
        return [float(r[name]) for r in rows]

    acc, rmse = col("test_acc"), col("rmse_mean")
    finite = [v for v in rmse if not math.isnan(v)]
    print(f"final test accuracy : {acc[-1]:.4f} (best {max(acc):.4f})")
    print(f"final train loss    : {col('train_loss')[-1]:.4f}")
    if finite:
        print(f"rmse mean over rounds: {np.mean(finite):.4f} ({len(finite)} evaluated rounds)")
    print(f"attacker selected   : {sum(r['attacker_selected'] == '1' for r in rows)}/{len(rows)} rounds")
    print("round  train_loss  test_acc  rmse_mean  surrogate  selected")
    for r in rows:
        print(f"{r['round']:>5}  {float(r['train_loss']):10.4f}  {float(r['test_acc']):8.4f}  "
              f"{float(r['rmse_mean']):9.4f}  {r['surrogate_q'] or '-':>9}  {r['selected_ids']}")
    return EXIT_OK


def _cmd_fixture(args) -> int:
    from .data import write_digits_fixture

    paths = write_digits_fixture(args.out, n_test=args.n_test, seed=args.seed)
    for p in paths.values():
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="curiousfl", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a federated experiment from a TOML config")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int, help="first seed (default: the config's)")
    r.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds")
    r.add_argument("--out", help="output directory (default: the config's)")
    r.add_argument("--threads", type=int, help="worker threads for client training")
    r.set_defaults(fn=_cmd_run)

    o = sub.add_parser("oracle", help="brute-force reference aggregators on a JSON matrix")
    o.add_argument("aggregator", choices=sorted(oracles.ORACLES))
    o.add_argument("--input", default="-", help="JSON file of update rows, '-' for stdin")
    o.add_argument("--attackers", type=int, default=1)
    o.add_argument("--select", type=int, default=1, help="multi-krum selection count")
    o.add_argument("--filter-frac", type=float, default=1.0)
    o.set_defaults(fn=_cmd_oracle)

    i = sub.add_parser("inspect", help="summarise a metrics.csv")
    i.add_argument("metrics")
    i.set_defaults(fn=_cmd_inspect)

    f = sub.add_parser("fixture", help="write the bundled digits dataset as IDX files")
    f.add_argument("--out", required=True)
    f.add_argument("--n-test", type=int, default=297)
    f.add_argument("--seed", type=int, default=0)
    f.set_defaults(fn=_cmd_fixture)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "run" and args.seeds < 1:
        print("error: --seeds must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.fn(args)
    except (ConfigError, ContractError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ArithmeticError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
