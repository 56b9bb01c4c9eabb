"""Compare the four attention losses on one seed of the toy task."""
import argparse

from gazealign import experiments, toy
from gazealign.losses import KINDS


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--epochs", type=int, default=200)
    args = ap.parse_args()
    for kind in KINDS:
        r = experiments.run(args.seed, 1.0, toy.TrainConfig(epochs=args.epochs, loss_kind=kind))
        print(f"{kind:8s} acc={r.accuracy:.4f} cc={r.cc:.4f} kl={r.kl:.4f} sim={r.sim:.4f}")


if __name__ == "__main__":
    main()
