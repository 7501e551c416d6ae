"""Federated QLSTM vs classical LSTM on synthetic sequences (5 clients).

Prints a metrics table; nothing is asserted.  Usage:

    python3 scripts/compare_lstm.py --rounds 40 --task sinusoid
"""
import argparse
import time

from qflab.harness.config import config_from_dict
from qflab.harness.runner import execute


def make_config(kind: str, args) -> dict:
    return {
        "name": f"compare-{kind}",
        "seed": args.seed,
        "rounds": args.rounds,
        "learning_rate": args.lr,
        "batch_size": 16,
        "data": {"kind": "sequence", "n": args.n, "n_features": 1, "seq_len": args.seq_len,
                 "task": args.task},
        "partition": {"scheme": "iid", "n_clients": 5},
        "model": {"kind": kind, "n_qubits": args.qubits, "n_layers": args.layers,
                  "hidden_dim": args.hidden},
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--rounds", type=int, default=40)
    parser.add_argument("--n", type=int, default=400)
    parser.add_argument("--seq-len", type=int, default=4)
    parser.add_argument("--task", choices=("sinusoid", "parity"), default="sinusoid")
    parser.add_argument("--qubits", type=int, default=2)
    parser.add_argument("--layers", type=int, default=1)
    parser.add_argument("--hidden", type=int, default=2)
    parser.add_argument("--lr", type=float, default=0.5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    print(f"{'model':6s} {'params':>6s} {'accuracy':>8s} {'recall':>8s} {'auc':>8s} {'loss':>8s} {'secs':>6s}")
    for kind in ("qlstm", "lstm"):
        start = time.perf_counter()
        out = execute(config_from_dict(make_config(kind, args)))
        m = out.history[-1].global_metrics if out.history else {}
        fmt = lambda v: "n/a" if v is None else f"{v:.3f}"
        print(f"{kind:6s} {out.global_model.params.size:6d} {fmt(m.get('accuracy')):>8s} "
              f"{fmt(m.get('recall')):>8s} {fmt(m.get('auc')):>8s} {fmt(m.get('loss')):>8s} "
              f"{time.perf_counter() - start:6.1f}")


if __name__ == "__main__":
    main()
