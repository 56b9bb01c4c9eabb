"""Toy-scale analogs of the with/without gaze supervision comparison and the
masked-inference probe."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import gaze, grids, toy

TEST_SEED_OFFSET = 1000


@dataclass
class RunResult:
    seed: int
    lambda2: float
    accuracy: float
    cc: float
    kl: float
    sim: float
    model: toy.ToyModel


def datasets(seed, n_train=1000, n_test=200, grid=8, sigma=0.7):
    train = toy.synth_dataset(n_train, grid, seed=seed, sigma=sigma)
    test = toy.synth_dataset(n_test, grid, seed=seed + TEST_SEED_OFFSET, sigma=sigma)
    return train, test


def run(seed, lambda2, base=None, n_train=1000, n_test=200, grid=8):
    cfg = replace(base or toy.TrainConfig(), seed=seed, lambda2=lambda2)
    train, test = datasets(seed, n_train, n_test, grid, cfg.sigma)
    model, _ = toy.train(cfg, train)
    rep, acc = toy.evaluate(model, test, cfg.m_layers)
    return RunResult(seed, lambda2, acc, rep.cc, rep.kl, rep.sim, model)


def with_vs_without(seeds=(1, 2, 3), base=None, **sizes):
    """Mean test metrics for lambda2 = 0 ("without") and lambda2 = 1 ("with")."""
    out = {}
    for name, lam in (("without", 0.0), ("with", 1.0)):
        runs = [run(s, lam, base, **sizes) for s in seeds]
        out[name] = {
            "accuracy": float(np.mean([r.accuracy for r in runs])),
            "cc": float(np.mean([r.cc for r in runs])),
            "kl": float(np.mean([r.kl for r in runs])),
            "sim": float(np.mean([r.sim for r in runs])),
            "runs": runs,
        }
    return out


def masking_drops(model, test, threshold=0.5, m_layers=1):
    """Accuracy drop (points) from zeroing gaze cells vs non-gaze cells."""
    _, base = toy.evaluate(model, test, m_layers)
    _, on_gaze = toy.evaluate(model, toy.mask_charts(test, False, threshold), m_layers)
    _, off_gaze = toy.evaluate(model, toy.mask_charts(test, True, threshold), m_layers)
    return {"clean": 100 * base, "gaze_drop": 100 * (base - on_gaze),
            "non_gaze_drop": 100 * (base - off_gaze)}


def sigma_entropies(sigmas=gaze.ABLATION_SIGMAS_PX, size=(480, 640)):
    """Shannon entropy (nats) of a distribution-normalized single-fixation gaze map per sigma."""
    h, w = size
    fix = [gaze.Fixation(w / 2, h / 2, 0.0, 250.0)]
    out = {}
    for s in sigmas:
        p = grids.dist_normalize(gaze.build_gaze_map(fix, h, w, s))
        out[s] = float(-(p * np.log(p)).sum())
    return out
