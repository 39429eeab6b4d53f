"""Write a synthetic piecewise-planar depth / textured RGB dataset to a directory.

    python3 scripts/make_synthetic.py out/synth --count 16 --size 320
"""
import argparse

from pagsr.data import write_synthetic_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out")
    ap.add_argument("--count", type=int, default=8)
    ap.add_argument("--size", type=int, default=320)
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args()
    write_synthetic_dataset(a.out, a.count, a.size, a.seed)
    print(f"wrote {a.count} pairs to {a.out}")


if __name__ == "__main__":
    main()
