"""Train the toy model with and without attention supervision over three seeds
and print mean test metrics, then the masked-inference drops."""
import argparse
import time

from gazealign import experiments, toy


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3])
    ap.add_argument("--epochs", type=int, default=200)
    ap.add_argument("--loss", default="wmse", choices=("wmse", "kld", "focal", "dicebce"))
    args = ap.parse_args()

    base = toy.TrainConfig(epochs=args.epochs, loss_kind=args.loss)
    start = time.perf_counter()
    res = experiments.with_vs_without(tuple(args.seeds), base)
    print(f"{'':8s} {'acc':>7s} {'CC':>7s} {'KL':>7s} {'SIM':>7s}")
    for name in ("without", "with"):
        r = res[name]
        print(f"{name:8s} {r['accuracy']:7.4f} {r['cc']:7.4f} {r['kl']:7.4f} {r['sim']:7.4f}")
    print(f"({time.perf_counter() - start:.0f} s)")

    print("\nmasked inference on the supervised models (accuracy drop, points)")
    for run in res["with"]["runs"]:
        _, test = experiments.datasets(run.seed)
        d = experiments.masking_drops(run.model, test)
        print(f"seed {run.seed}: clean {d['clean']:.1f}  gaze region {d['gaze_drop']:.1f}  "
              f"non-gaze region {d['non_gaze_drop']:.1f}")


if __name__ == "__main__":
    main()
