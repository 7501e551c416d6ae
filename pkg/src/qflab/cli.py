"""Command-line entry point: ``qflab run|dj-demo|gradcheck|partition-stats``."""
from __future__ import annotations

import argparse
import itertools
import logging
import math
import sys

import numpy as np

from .harness.config import ConfigError, load_config
from .harness.data import IngestionError, label_tv_distances
from .harness.runner import load_data, partition, run_experiment
from .models import VqcSpec, parameter_shift_grad, vqc_forward
from .qsim import BooleanOracle, deutsch_jozsa_zero_prob

EXIT_OK, EXIT_CONFIG, EXIT_INGEST, EXIT_OTHER = 0, 2, 3, 4
MAX_ENUMERATED_ORACLES = 20000


def dj_oracles(n: int, seed: int = 0, limit: int = MAX_ENUMERATED_ORACLES):
    """Both constant oracles plus every balanced one (or a seeded sample when there are too many)."""
    size = 2 ** n
    yield BooleanOracle(n, (0,) * size)
    yield BooleanOracle(n, (1,) * size)
    if math.comb(size, size // 2) <= limit:
        ones_sets = itertools.combinations(range(size), size // 2)
    else:
        rng = np.random.default_rng(seed)
        ones_sets = (rng.choice(size, size // 2, replace=False) for _ in range(limit))
    for ones in ones_sets:
        table = [0] * size
        for i in ones:
            table[int(i)] = 1
        yield BooleanOracle(n, tuple(table))


def cmd_dj_demo(args) -> int:
    if not 1 <= args.n <= 10:
        raise ValueError("n must lie in [1, 10]")
    worst = {"constant": 0.0, "balanced": 0.0}
    counts = {"constant": 0, "balanced": 0}
    for oracle in dj_oracles(args.n, args.seed):
        kind = oracle.classify()
        p0 = deutsch_jozsa_zero_prob(oracle)
        err = abs(p0 - (1.0 if kind == "constant" else 0.0))
        worst[kind] = max(worst[kind], err)
        counts[kind] += 1
    for kind in ("constant", "balanced"):
        expected = 1 if kind == "constant" else 0
        print(f"{kind:9s} oracles: {counts[kind]:6d}  P(0...0) expected {expected}  "
              f"max deviation {worst[kind]:.2e}")
    return EXIT_OK


def central_difference(spec: VqcSpec, params, x, weights, h: float = 1e-5) -> np.ndarray:
    out = np.empty(params.size)
    for i in range(params.size):
        e = np.zeros(params.size)
        e[i] = h
        plus = weights @ vqc_forward(spec, params + e, x)
        minus = weights @ vqc_forward(spec, params - e, x)
        out[i] = (plus - minus) / (2 * h)
    return out


def cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(args.seed)
    worst = 0.0
    print(f"{'case':>4s} {'qubits':>6s} {'layers':>6s} {'params':>6s} {'max |shift - fd|':>18s}")
    for case in range(args.instances):
        spec = VqcSpec(int(rng.integers(1, 5)), int(rng.integers(1, 4)))
        params = rng.uniform(-np.pi, np.pi, spec.n_params)
        x = rng.uniform(-np.pi, np.pi, spec.n_qubits)
        w = rng.standard_normal(spec.n_qubits)
        shift = parameter_shift_grad(spec, params, x, w)
        fd = central_difference(spec, params, x, w)
        err = float(np.max(np.abs(shift - fd)))
        worst = max(worst, err)
        print(f"{case:4d} {spec.n_qubits:6d} {spec.n_layers:6d} {spec.n_params:6d} {err:18.2e}")
    print(f"worst deviation {worst:.2e} (tolerance {args.tol:g})")
    return EXIT_OK if worst <= args.tol else EXIT_OTHER


def cmd_partition_stats(args) -> int:
    cfg = load_config(args.config)
    train, _ = load_data(cfg)
    shards = partition(cfg, train)
    tv = label_tv_distances(shards, train)
    n_cls = train.n_classes
    print(f"scheme {cfg.partition.scheme}, {len(shards)} clients, {len(train)} training rows")
    print(f"{'client':>6s} {'rows':>6s}  label counts{'':{max(0, 4 * n_cls - 12)}s}  TV")
    for i, (s, d) in enumerate(zip(shards, tv)):
        hist = " ".join(f"{c:3d}" for c in np.bincount(s.y, minlength=n_cls))
        print(f"{i:6d} {len(s):6d}  {hist}  {d:.3f}")
    print(f"mean TV distance from the global label histogram: {tv.mean():.3f}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.rounds is not None:
        cfg.rounds = args.rounds
    path = run_experiment(cfg)
    print(path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qflab", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log at INFO level")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute an experiment config and write its results file")
    p.add_argument("config")
    p.add_argument("--rounds", type=int, default=None, help="override the configured round count")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("dj-demo", help="check Deutsch-Jozsa outcomes for n-input oracles")
    p.add_argument("n", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_dj_demo)

    p = sub.add_parser("gradcheck", help="compare parameter-shift and finite-difference gradients")
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-5)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("partition-stats", help="report per-client label skew for a config")
    p.add_argument("config")
    p.set_defaults(func=cmd_partition_stats)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IngestionError as exc:
        print(f"ingestion error: {exc}", file=sys.stderr)
        return EXIT_INGEST
    except ValueError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - report any failure with a category code
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
