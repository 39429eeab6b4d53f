"""Overfit a small x2 model on a handful of synthetic patches and report the loss curve.

    python3 scripts/overfit.py --steps 500 --init-gain 1.0 --history overfit.csv
"""
import argparse
import time

from pagsr.data import DegradationSpec, synthetic_dataset
from pagsr.model import ModelConfig, init_weights
from pagsr.train import TrainConfig, train, write_history


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--patches", type=int, default=4)
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--steps", type=int, default=500)
    ap.add_argument("--lr", type=float, default=1e-4)
    ap.add_argument("--channels", type=int, default=16)
    ap.add_argument("--init-gain", type=float, default=1.0)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--history", default=None)
    a = ap.parse_args()

    data = synthetic_dataset(a.patches, a.size, DegradationSpec(2), seed=a.seed)
    cfg = ModelConfig(1, a.channels, 2, a.channels // 2, a.channels, seed=a.seed, init_gain=a.init_gain)
    t0 = time.perf_counter()
    _, hist = train(init_weights(cfg), data, TrainConfig(batch_size=a.patches, learning_rate=a.lr,
                                                         epochs=a.steps, max_steps=a.steps, seed=a.seed))
    for r in hist[:: max(1, len(hist) // 10)] + hist[-1:]:
        print(f"step {r.step:4d}  loss {r.loss:.5g}  l1 {r.l1:.5g}  l2 {r.l2:.5g}")
    print(f"ratio final/initial {hist[-1].loss / hist[0].loss:.4f} in {time.perf_counter() - t0:.0f} s")
    if a.history:
        write_history(hist, a.history)


if __name__ == "__main__":
    main()
