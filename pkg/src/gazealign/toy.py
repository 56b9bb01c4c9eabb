"""Desk-scale gaze-supervised cross-attention classifier on synthetic bar charts.

Each chart is a P x P grid of cells (P bars, bar ``c`` fills the bottom
``h_c`` cells of column ``c``). A question is three tokens ``(op, a, b)``
asking how bars ``a`` and ``b`` compare; the answer is yes/no. The target gaze
map puts fixations on the cells of the two bars involved, longest on their
tops, and runs them through the regular gaze-map pipeline.

The model: text tokens attend over ``[text tokens; image patches]`` for
``n_layers`` layers of multi-head attention with a tanh residual update; the
concatenated token states feed a one-hidden-layer classifier. Gradients are
hand-derived for this fixed architecture and checked against central
differences in the test suite.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import losses, metrics
from .gaze import Fixation, build_gaze_map
from .grids import read_gam, write_gam
from .perturb import apply_mask, gaze_mask

OPS = ("taller", "shorter", "rising", "falling")
NO, YES = 0, 1
N_TOKENS = 3


@dataclass
class SynthInstance:
    chart: np.ndarray
    question: tuple
    answer: int
    target_gaze: np.ndarray


@dataclass
class TrainConfig:
    lambda1: float = 1.0
    lambda2: float = 1.0
    loss_kind: str = "wmse"
    m_layers: int = 1
    lr: float = 0.05
    epochs: int = 200
    batch_size: int = 20
    seed: int = 0
    sigma: float = 0.7

    def __post_init__(self):
        if self.loss_kind not in losses.KINDS:
            raise ValueError(f"loss_kind must be one of {losses.KINDS}")
        if self.lr <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("lr, epochs and batch_size must be positive")
        if self.m_layers < 1:
            raise ValueError("m_layers must be at least 1")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")

    @classmethod
    def from_text(cls, text):
        """Parse ``key = value`` lines; ``#`` starts a comment."""
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line {n}: expected key = value")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ValueError(f"config line {n}: unknown key {key!r}")
            conv = {"float": float, "int": int, "str": str}[types[key]]
            kw[key] = conv(val)
        return cls(**kw)

    def to_text(self):
        return "".join(f"{k} = {v}\n" for k, v in asdict(self).items())


# -- synthetic task -----------------------------------------------------------

def bar_heights(chart) -> np.ndarray:
    return (np.asarray(chart) > 0.5).sum(axis=0)


def answer_question(chart, question) -> int:
    """Rule-based oracle: evaluate the question directly on the chart."""
    op, a, b = question[0], question[1] - len(OPS), question[2] - len(OPS)
    h = bar_heights(chart)
    verdict = {
        "taller": h[a] > h[b],
        "shorter": h[a] < h[b],
        "rising": h[b] > h[a],
        "falling": h[b] < h[a],
    }[OPS[op]]
    return YES if verdict else NO


def relevant_fixations(chart, question, top_ms=300.0, body_ms=100.0):
    """Synthetic reader: dwell on every filled cell of both bars, longest on the top."""
    grid = chart.shape[0]
    h = bar_heights(chart)
    fixes = []
    for col in (question[1] - len(OPS), question[2] - len(OPS)):
        top = grid - h[col]
        for row in range(top, grid):
            fixes.append(Fixation(float(col), float(row), 0.0, top_ms if row == top else body_ms))
    return fixes


def _make_chart(heights, grid):
    rows = np.arange(grid)[:, None]
    return (rows >= grid - np.asarray(heights)[None, :]).astype(np.float64)


def synth_dataset(n: int, grid: int = 8, seed: int = 0, sigma: float = 0.7):
    if n < 1 or grid < 4:
        raise ValueError("need n >= 1 and grid >= 4")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % 2)
    out = []
    for k in range(n):
        op = int(rng.integers(len(OPS)))
        if OPS[op] in ("taller", "shorter"):
            a, b = (int(v) for v in rng.choice(grid, 2, replace=False))
        else:
            a = int(rng.integers(grid - 1))
            b = a + 1
        heights = rng.integers(1, grid + 1, grid)
        lo, hi = sorted(int(v) for v in rng.choice(np.arange(1, grid + 1), 2, replace=False))
        # orient the pair so the drawn label comes out
        a_high = {"taller": True, "shorter": False, "rising": False, "falling": True}[OPS[op]]
        if labels[k] == NO:
            a_high = not a_high
        heights[a], heights[b] = (hi, lo) if a_high else (lo, hi)
        chart = _make_chart(heights, grid)
        question = (op, len(OPS) + a, len(OPS) + b)
        target = build_gaze_map(relevant_fixations(chart, question), grid, grid, sigma)
        out.append(SynthInstance(chart, question, answer_question(chart, question), target))
    return out


def write_dataset(dataset, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "labels.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "op", "bar_a", "bar_b", "answer"])
        for i, inst in enumerate(dataset):
            op, a, b = inst.question
            w.writerow([i, OPS[op], a - len(OPS), b - len(OPS), "yes" if inst.answer else "no"])
            write_gam(out / f"chart_{i:05d}.gam", inst.chart)
            write_gam(out / f"gaze_{i:05d}.gam", inst.target_gaze)


def read_dataset(in_dir):
    src = Path(in_dir)
    out = []
    with open(src / "labels.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            i = int(row["index"])
            q = (OPS.index(row["op"]), len(OPS) + int(row["bar_a"]), len(OPS) + int(row["bar_b"]))
            out.append(SynthInstance(read_gam(src / f"chart_{i:05d}.gam"), q,
                                     YES if row["answer"] == "yes" else NO,
                                     read_gam(src / f"gaze_{i:05d}.gam")))
    return out


def stack(dataset):
    """Dataset -> (patch intensities (B, I), tokens (B, T), labels (B,), gaze (B, P, P))."""
    x = np.stack([inst.chart.reshape(-1) for inst in dataset])
    tok = np.array([inst.question for inst in dataset], dtype=np.int64)
    y = np.array([inst.answer for inst in dataset], dtype=np.int64)
    g = np.stack([inst.target_gaze for inst in dataset])
    return x, tok, y, g


# -- model --------------------------------------------------------------------

@dataclass
class ToyModel:
    grid: int
    vocab: int
    n_tokens: int = N_TOKENS
    d: int = 16
    n_heads: int = 2
    n_layers: int = 2
    hidden: int = 32
    params: dict = field(default_factory=dict)

    @property
    def n_patches(self):
        return self.grid * self.grid

    @classmethod
    def init(cls, grid, seed=0, **dims):
        m = cls(grid=grid, vocab=len(OPS) + grid, **dims)
        rng = np.random.default_rng(seed)
        d = m.d
        p = {
            "patch_emb": rng.normal(0, 1.0, (1, d)),
            "pos_img": rng.normal(0, 0.5, (m.n_patches, d)),
            "tok_emb": rng.normal(0, 1.0, (m.vocab, d)),
            "pos_txt": rng.normal(0, 0.5, (m.n_tokens, d)),
        }
        for l in range(m.n_layers):
            for name in ("wq", "wk", "wv", "wo"):
                p[f"{name}{l}"] = rng.normal(0, 1 / math.sqrt(d), (d, d))
        p["w1"] = rng.normal(0, 1 / math.sqrt(m.n_tokens * d), (m.n_tokens * d, m.hidden))
        p["b1"] = np.zeros(m.hidden)
        p["w2"] = rng.normal(0, 1 / math.sqrt(m.hidden), (m.hidden, 2))
        p["b2"] = np.zeros(2)
        m.params = p
        return m

    def copy(self):
        return ToyModel(self.grid, self.vocab, self.n_tokens, self.d, self.n_heads,
                        self.n_layers, self.hidden, {k: v.copy() for k, v in self.params.items()})

    def save(self, path):
        """Raw little-endian float64 blobs behind a one-line JSON header."""
        meta = {k: getattr(self, k) for k in ("grid", "vocab", "n_tokens", "d", "n_heads",
                                              "n_layers", "hidden")}
        meta["shapes"] = {k: list(v.shape) for k, v in self.params.items()}
        with open(path, "wb") as fh:
            fh.write(b"TOY1 " + json.dumps(meta, separators=(",", ":")).encode() + b"\n")
            for v in self.params.values():
                fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            head = fh.readline()
            if not head.startswith(b"TOY1 "):
                raise ValueError(f"{path}: not a toy model file")
            meta = json.loads(head[5:])
            shapes = meta.pop("shapes")
            params = {}
            for k, shape in shapes.items():
                count = int(np.prod(shape))
                buf = fh.read(8 * count)
                if len(buf) != 8 * count:
                    raise ValueError(f"{path}: truncated at parameter {k}")
                params[k] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
        return cls(params=params, **meta)


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _split(x, nh):
    b, n, d = x.shape
    return x.reshape(b, n, nh, d // nh).transpose(0, 2, 1, 3)


def _merge(x):
    b, nh, n, dk = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, n, nh * dk)


def forward_batch(model, x, tok):
    """Returns (class probabilities (B, 2) ordered [no, yes], cache).

    ``cache["attn"][l]`` holds the full (B, heads, T, T + I) attention of layer l.
    """
    p = model.params
    nh, T = model.n_heads, model.n_tokens
    dk = model.d // nh
    img = x[:, :, None] * p["patch_emb"][0] + p["pos_img"]
    h = p["tok_emb"][tok] + p["pos_txt"]
    cache = {"x": x, "tok": tok, "img": img, "layers": [], "attn": []}
    for l in range(model.n_layers):
        s = np.concatenate([h, img], axis=1)
        q = _split(h @ p[f"wq{l}"], nh)
        k = _split(s @ p[f"wk{l}"], nh)
        v = _split(s @ p[f"wv{l}"], nh)
        att = _softmax(q @ k.transpose(0, 1, 3, 2) / math.sqrt(dk))
        o = _merge(att @ v)
        u = np.tanh(o @ p[f"wo{l}"])
        cache["layers"].append((h, s, q, k, v, o, u))
        cache["attn"].append(att)
        h = h + u
    flat = h.reshape(len(x), T * model.d)
    z = np.tanh(flat @ p["w1"] + p["b1"])
    probs = _softmax(z @ p["w2"] + p["b2"])
    cache.update(flat=flat, z=z, probs=probs)
    return probs, cache


def attention_tensor(model, cache):
    """(B, layers, heads, T, I): text-to-image attention rows."""
    T = model.n_tokens
    return np.stack([att[:, :, :, T:] for att in cache["attn"]], axis=1)


def forward(model, instance):
    """Single instance -> (probabilities [no, yes], attention tensor (L, heads, T, I))."""
    x, tok, _, _ = stack([instance])
    probs, cache = forward_batch(model, x, tok)
    return probs[0], attention_tensor(model, cache)[0]


def lm_loss(probs, answer):
    """-ln p(answer) and its gradient with respect to the probabilities."""
    probs = np.asarray(probs, dtype=np.float64)
    grad = np.zeros_like(probs)
    grad[answer] = -1.0 / probs[answer]
    return float(-np.log(probs[answer])), grad


def batch_attention_map(model, cache, m_layers):
    """Per-instance attention averaged over heads, tokens and the first
    ``m_layers`` layers -> (B, P, P)."""
    t = attention_tensor(model, cache)[:, :m_layers]
    return t.mean(axis=(1, 2, 3)).reshape(-1, model.grid, model.grid)


def _attn_loss(kind, g, a_raw, cfg, peak=None):
    """Attention loss on the max-scaled map; returns (losses (B,), dL/d a_raw (B,P,P)).

    The per-map maximum is held constant under differentiation; pass ``peak``
    (B, 1, 1) to pin it to given values.
    """
    if peak is None:
        peak = a_raw.max(axis=(1, 2), keepdims=True)
    a = a_raw / peak
    if kind == "kld":
        shifted = a + 1e-7
        total = shifted.sum(axis=(1, 2), keepdims=True)
        qa = shifted / total
        gd = (g + 1e-7) / (g + 1e-7).sum(axis=(1, 2), keepdims=True)
        loss, dq = losses.KERNELS["kld"](gd, qa, cfg)
        da = (dq - (dq * qa).sum(axis=(1, 2), keepdims=True)) / total
    else:
        loss, da = losses.KERNELS[kind](g, a, cfg)
    return loss, da / peak


def _outer(a, b):
    """sum over batch and position of a^T b for (B, n, d) arrays."""
    return a.reshape(-1, a.shape[-1]).T @ b.reshape(-1, b.shape[-1])


def loss_and_grads(model, x, tok, y, g, cfg: TrainConfig, loss_cfg=None, attention=True,
                   peak=None):
    """Batch-mean objective lambda1 * L_lm + lambda2 * scale * L_attn and its
    parameter gradients. ``attention=False`` drops the attention term from the
    code path altogether. ``peak`` pins the attention-map maxima, making the
    objective the exact function whose gradient is returned (used by
    finite-difference checks)."""
    loss_cfg = loss_cfg or losses.LossConfig()
    p = model.params
    nh, T, d = model.n_heads, model.n_tokens, model.d
    dk = d // nh
    B = len(x)
    probs, cache = forward_batch(model, x, tok)
    lm = -np.log(probs[np.arange(B), y])
    total = cfg.lambda1 * lm.mean()
    grads = {k: np.zeros_like(v) for k, v in p.items()}

    dlogits = probs.copy()
    dlogits[np.arange(B), y] -= 1.0
    dlogits *= cfg.lambda1 / B
    z, flat = cache["z"], cache["flat"]
    grads["w2"] = z.T @ dlogits
    grads["b2"] = dlogits.sum(axis=0)
    dpre = (dlogits @ p["w2"].T) * (1 - z * z)
    grads["w1"] = flat.T @ dpre
    grads["b1"] = dpre.sum(axis=0)
    dh = (dpre @ p["w1"].T).reshape(B, T, d)

    datt_extra = [None] * model.n_layers
    attn_loss = None
    if attention:
        m = cfg.m_layers
        a_raw = batch_attention_map(model, cache, m)
        attn_loss, da = _attn_loss(cfg.loss_kind, g, a_raw, loss_cfg, peak)
        w = cfg.lambda2 * loss_cfg.scale
        total = total + w * attn_loss.mean()
        da = (w / B) * da.reshape(B, 1, 1, -1) / (m * nh * T)
        for l in range(m):
            extra = np.zeros_like(cache["attn"][l])
            extra[:, :, :, T:] = da
            datt_extra[l] = extra

    dimg = np.zeros_like(cache["img"])
    for l in reversed(range(model.n_layers)):
        h, s, q, k, v, o, u = cache["layers"][l]
        att = cache["attn"][l]
        du = dh * (1 - u * u)
        grads[f"wo{l}"] = _outer(o, du)
        do = _split(du @ p[f"wo{l}"].T, nh)
        datt = do @ v.transpose(0, 1, 3, 2)
        if datt_extra[l] is not None:
            datt = datt + datt_extra[l]
        dv = att.transpose(0, 1, 3, 2) @ do
        dsc = att * (datt - (datt * att).sum(axis=-1, keepdims=True)) / math.sqrt(dk)
        dq = _merge(dsc @ k)
        dk_ = _merge(dsc.transpose(0, 1, 3, 2) @ q)
        dv = _merge(dv)
        grads[f"wq{l}"] = _outer(h, dq)
        grads[f"wk{l}"] = _outer(s, dk_)
        grads[f"wv{l}"] = _outer(s, dv)
        ds = dk_ @ p[f"wk{l}"].T + dv @ p[f"wv{l}"].T
        dh = dh + dq @ p[f"wq{l}"].T + ds[:, :T]
        dimg += ds[:, T:]

    np.add.at(grads["tok_emb"], tok, dh)
    grads["pos_txt"] = dh.sum(axis=0)
    grads["pos_img"] = dimg.sum(axis=0)
    grads["patch_emb"] = cache["x"].reshape(1, -1) @ dimg.reshape(-1, d)
    parts = {"lm": lm, "attn": attn_loss, "probs": probs, "cache": cache}
    if attention:
        parts["peak"] = a_raw.max(axis=(1, 2), keepdims=True)
    return float(total), grads, parts


def accumulate_gradients(model, x, tok, y, g, cfg, n_shards, loss_cfg=None):
    """Data-parallel style: per-shard gradients summed in fixed shard order.

    Each shard's gradient is weighted by its share of the batch so the result
    equals the full-batch gradient.
    """
    B = len(x)
    bounds = np.linspace(0, B, n_shards + 1).astype(int)
    total, acc = 0.0, None
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        if hi == lo:
            continue
        sl = slice(lo, hi)
        val, grads, _ = loss_and_grads(model, x[sl], tok[sl], y[sl], g[sl], cfg, loss_cfg,
                                       attention=cfg.lambda2 != 0)
        share = (hi - lo) / B
        total += share * val
        if acc is None:
            acc = {k: share * v for k, v in grads.items()}
        else:
            for k in acc:
                acc[k] += share * grads[k]
    return total, acc


# -- training -----------------------------------------------------------------

HISTORY_COLUMNS = ("epoch", "accuracy", "lm_loss", "attn_loss", "cc", "kl", "sim")


def _map_metrics(maps, g):
    return float(metrics.cc(g, maps).mean()), float(metrics.kl_div(g, maps).mean()), \
        float(metrics.sim(g, maps).mean())


def train(cfg: TrainConfig, dataset, loss_cfg=None, model=None, attention=None):
    """Minibatch gradient descent on the joint objective.

    Returns ``(model, history)``; history has one dict per epoch with the
    :data:`HISTORY_COLUMNS` keys, accumulated over that epoch's minibatches.
    Setting ``attention=False`` removes the attention term from the code path
    (defaults to ``cfg.lambda2 != 0``).
    """
    loss_cfg = loss_cfg or losses.LossConfig()
    x, tok, y, g = stack(dataset)
    grid = dataset[0].chart.shape[0]
    model = model.copy() if model is not None else ToyModel.init(grid, seed=cfg.seed)
    if cfg.m_layers > model.n_layers:
        raise ValueError("m_layers exceeds the model depth")
    if attention is None:
        attention = cfg.lambda2 != 0
    rng = np.random.default_rng(cfg.seed + 1)
    history = []
    n = len(x)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        sums = dict.fromkeys(HISTORY_COLUMNS[1:], 0.0)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            val, grads, parts = loss_and_grads(model, x[idx], tok[idx], y[idx], g[idx], cfg,
                                               loss_cfg, attention)
            if not math.isfinite(val):
                raise FloatingPointError(
                    f"training diverged at epoch {epoch}: objective={val} "
                    f"(lr={cfg.lr}, loss_kind={cfg.loss_kind})")
            for k, gr in grads.items():
                model.params[k] -= cfg.lr * gr
            # logging only: these never feed back into the update
            maps = batch_attention_map(model, parts["cache"], cfg.m_layers)
            if parts["attn"] is None:
                attn, _ = _attn_loss(cfg.loss_kind, g[idx], maps, loss_cfg)
            else:
                attn = parts["attn"]
            c, kl, s = _map_metrics(maps, g[idx])
            w = len(idx)
            sums["accuracy"] += (parts["probs"].argmax(axis=1) == y[idx]).sum()
            sums["lm_loss"] += parts["lm"].sum()
            sums["attn_loss"] += attn.sum()
            sums["cc"] += c * w
            sums["kl"] += kl * w
            sums["sim"] += s * w
        row = {"epoch": epoch}
        row.update({k: float(v) / n for k, v in sums.items()})
        history.append(row)
    return model, history


def write_history(path, history):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for row in history:
            w.writerow([row["epoch"]] + [repr(row[k]) for k in HISTORY_COLUMNS[1:]])


def predict(model, dataset, m_layers=1, batch=500):
    """-> (probabilities (N, 2), attention maps (N, P, P))."""
    x, tok, _, _ = stack(dataset)
    probs, maps = [], []
    for lo in range(0, len(x), batch):
        pr, cache = forward_batch(model, x[lo:lo + batch], tok[lo:lo + batch])
        probs.append(pr)
        maps.append(batch_attention_map(model, cache, m_layers))
    return np.concatenate(probs), np.concatenate(maps)


def evaluate(model, dataset, m_layers=1):
    """-> (MetricReport averaged over instances, accuracy in [0, 1])."""
    _, _, y, g = stack(dataset)
    probs, maps = predict(model, dataset, m_layers)
    acc = float((probs.argmax(axis=1) == y).mean())
    c, kl, s = _map_metrics(maps, g)
    return metrics.MetricReport(cc=c, kl=kl, sim=s), acc


def mask_charts(dataset, invert=False, threshold=0.5):
    """Zero the chart cells under (or outside, with ``invert``) each target gaze mask."""
    out = []
    for inst in dataset:
        masked = apply_mask(inst.chart, gaze_mask(inst.target_gaze, threshold), invert)
        out.append(SynthInstance(masked, inst.question, inst.answer, inst.target_gaze))
    return out
