"""Bicubic RMSE table for a directory of depth/RGB pairs.

    python3 scripts/bicubic_baseline.py data/middlebury --scales 2,4,8,16
"""
import argparse

from pagsr.data import load_pairs
from pagsr.evaluate import eval_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("data")
    ap.add_argument("--scales", default="2,4,8,16")
    ap.add_argument("--sigma", type=float, default=0.0)
    ap.add_argument("--all-pixels", action="store_true")
    a = ap.parse_args()
    scales = [int(s) for s in a.scales.split(",")]
    rep = eval_dataset(load_pairs(a.data), ["bicubic"], scales, noise_sigma=a.sigma,
                       valid_only=not a.all_pixels)
    print(rep.to_table())


if __name__ == "__main__":
    main()
