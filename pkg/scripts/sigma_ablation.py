"""Entropy of a single-fixation gaze map as the smoothing sigma grows."""
import argparse

from gazealign import experiments


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sigmas", type=float, nargs="+", default=[20.0, 40.0, 80.0])
    ap.add_argument("--size", default="480x640")
    args = ap.parse_args()
    h, w = map(int, args.size.split("x"))
    for s, e in experiments.sigma_entropies(args.sigmas, (h, w)).items():
        print(f"sigma={s:g}px entropy={e:.4f} nats")


if __name__ == "__main__":
    main()
