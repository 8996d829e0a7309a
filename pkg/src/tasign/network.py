"""Siamese bidirectional-GRU scorer with from-scratch training.

Two weight-shared bidirectional GRU branches (23 inputs, 46 units per
direction) encode the pre-aligned pair; their per-timestep outputs are
concatenated feature-wise (184 channels) and fed to a second bidirectional
GRU (23 units per direction). The final vector - forward state at the last
timestep joined with backward state at the first - passes through a sigmoid
head, yielding a dissimilarity score in (0, 1): genuine pairs are trained
toward 0, forgery pairs toward 1.

Gate equations (standard GRU, reset gate inside the candidate's recurrent
term):

    z_t = sigmoid(Wz x_t + Uz h_{t-1} + bz)
    r_t = sigmoid(Wr x_t + Ur h_{t-1} + br)
    g_t = tanh(Wh x_t + Uh (r_t * h_{t-1}) + bh)
    h_t = (1 - z_t) * h_{t-1} + z_t * g_t

All arithmetic is 64-bit. Gradients are exact reverse-mode accumulation
through both layers, both directions, the concatenations, and the shared
branch (a-path and b-path contributions are summed), which keeps the
finite-difference check below 1e-4 relative error.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from .dtw import DEFAULT_COST_CHANNELS, AlignedPair, apply_path, dtw_path
from .errors import (
    ConfigurationError,
    DegenerateSignatureError,
    NumericError,
    ParseError,
)
from .features import ChannelId, N_CHANNELS, extract_time_functions, normalize
from .ingest import DatasetManifest

BRANCH_INPUT = N_CHANNELS          # 23
BRANCH_HIDDEN = 46                 # per direction
MERGE_INPUT = 4 * BRANCH_HIDDEN    # 184: two branches x two directions
MERGE_HIDDEN = 23                  # per direction
HEAD_INPUT = 2 * MERGE_HIDDEN      # 46

DEFAULT_MAX_LEN = 1500

INIT_STD = 0.05
SCORE_CLAMP = 1e-12

_GATE_NAMES = ("wz", "wr", "wh", "uz", "ur", "uh", "bz", "br", "bh")


def _gru_shapes(d_in: int, hidden: int) -> list[tuple[str, tuple[int, ...]]]:
    return [
        ("wz", (hidden, d_in)),
        ("wr", (hidden, d_in)),
        ("wh", (hidden, d_in)),
        ("uz", (hidden, hidden)),
        ("ur", (hidden, hidden)),
        ("uh", (hidden, hidden)),
        ("bz", (hidden,)),
        ("br", (hidden,)),
        ("bh", (hidden,)),
    ]


_LAYOUT: list[tuple[str, tuple[int, ...]]] = []
for _block, _d, _h in (
    ("branch_fwd", BRANCH_INPUT, BRANCH_HIDDEN),
    ("branch_bwd", BRANCH_INPUT, BRANCH_HIDDEN),
    ("merge_fwd", MERGE_INPUT, MERGE_HIDDEN),
    ("merge_bwd", MERGE_INPUT, MERGE_HIDDEN),
):
    _LAYOUT.extend((f"{_block}.{name}", shape) for name, shape in _gru_shapes(_d, _h))
_LAYOUT.append(("head_w", (HEAD_INPUT,)))
_LAYOUT.append(("head_b", (1,)))

PARAM_COUNT = sum(math.prod(shape) for _, shape in _LAYOUT)


@dataclass
class GruWeights:
    """One GRU direction; arrays are views into the owning flat vector."""

    wz: np.ndarray
    wr: np.ndarray
    wh: np.ndarray
    uz: np.ndarray
    ur: np.ndarray
    uh: np.ndarray
    bz: np.ndarray
    br: np.ndarray
    bh: np.ndarray

    @property
    def hidden(self) -> int:
        return self.bz.size


class ModelParams:
    """All scorer weights as one flat 64-bit vector with named views.

    Branch weights are stored once and applied to both inputs; the total
    parameter count is the fixed constant PARAM_COUNT (48071 for the
    default 23 -> 46 -> 23 widths).
    """

    def __init__(self, flat: np.ndarray | None = None):
        if flat is None:
            flat = np.zeros(PARAM_COUNT)
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (PARAM_COUNT,):
            raise ConfigurationError(
                f"parameter vector must have shape ({PARAM_COUNT},), got {flat.shape}"
            )
        self.flat = flat
        views: dict[str, np.ndarray] = {}
        offset = 0
        for name, shape in _LAYOUT:
            size = math.prod(shape)
            views[name] = flat[offset : offset + size].reshape(shape)
            offset += size
        for block in ("branch_fwd", "branch_bwd", "merge_fwd", "merge_bwd"):
            setattr(
                self,
                block,
                GruWeights(**{g: views[f"{block}.{g}"] for g in _GATE_NAMES}),
            )
        self.head_w = views["head_w"]
        self.head_b = views["head_b"]

    def copy(self) -> "ModelParams":
        return ModelParams(self.flat.copy())


def init_params(seed: int) -> ModelParams:
    """Draw every weight and bias i.i.d. from N(0, 0.05^2), deterministically."""
    rng = np.random.default_rng(seed)
    return ModelParams(rng.normal(0.0, INIT_STD, size=PARAM_COUNT))


# --------------------------------------------------------------------------
# Forward / backward passes
# --------------------------------------------------------------------------

@dataclass
class _GruCache:
    x: np.ndarray       # (L, D) inputs in this direction's time order
    h: np.ndarray       # (L, H) hidden states
    h_prev: np.ndarray  # (L, H) previous hidden state per step
    z: np.ndarray
    r: np.ndarray
    g: np.ndarray


def _gru_pass(w: GruWeights, x_rows: np.ndarray) -> _GruCache:
    length = x_rows.shape[0]
    hidden = w.hidden
    w_all = np.concatenate([w.wz, w.wr, w.wh], axis=0)
    a_in = x_rows @ w_all.T
    a_in[:, :hidden] += w.bz
    a_in[:, hidden : 2 * hidden] += w.br
    a_in[:, 2 * hidden :] += w.bh
    u_zr = np.concatenate([w.uz, w.ur], axis=0)

    h = np.zeros(hidden)
    hs = np.empty((length, hidden))
    h_prev = np.empty((length, hidden))
    zs = np.empty((length, hidden))
    rs = np.empty((length, hidden))
    gs = np.empty((length, hidden))
    for t in range(length):
        zr = expit(a_in[t, : 2 * hidden] + u_zr @ h)
        z = zr[:hidden]
        r = zr[hidden:]
        g = np.tanh(a_in[t, 2 * hidden :] + w.uh @ (r * h))
        h_prev[t] = h
        h = (1.0 - z) * h + z * g
        zs[t] = z
        rs[t] = r
        gs[t] = g
        hs[t] = h
    return _GruCache(x=x_rows, h=hs, h_prev=h_prev, z=zs, r=rs, g=gs)


def gru_forward(w: GruWeights, inputs: np.ndarray) -> np.ndarray:
    """Run one GRU direction over a (D, L) input, returning (H, L) states."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if not np.isfinite(inputs).all():
        raise NumericError("non-finite GRU input")
    return _gru_pass(w, inputs.T).h.T


def _gru_backward(
    w: GruWeights, cache: _GruCache, d_h_out: np.ndarray, grads: GruWeights
) -> np.ndarray:
    """Backprop one direction; accumulates into ``grads`` and returns dX (L, D)."""
    length, hidden = cache.h.shape
    u_zr_t = np.ascontiguousarray(np.concatenate([w.uz, w.ur], axis=0).T)
    uh_t = np.ascontiguousarray(w.uh.T)
    d_az = np.empty((length, hidden))
    d_ar = np.empty((length, hidden))
    d_ah = np.empty((length, hidden))
    d_azr = np.empty(2 * hidden)
    dh_carry = np.zeros(hidden)
    for t in range(length - 1, -1, -1):
        dh = d_h_out[t] + dh_carry
        z = cache.z[t]
        r = cache.r[t]
        g = cache.g[t]
        hp = cache.h_prev[t]
        daz = dh * (g - hp) * z * (1.0 - z)
        dah = dh * z * (1.0 - g * g)
        uh_dah = uh_t @ dah
        dar = uh_dah * hp * r * (1.0 - r)
        d_azr[:hidden] = daz
        d_azr[hidden:] = dar
        dh_carry = dh * (1.0 - z) + u_zr_t @ d_azr + uh_dah * r
        d_az[t] = daz
        d_ar[t] = dar
        d_ah[t] = dah
    grads.wz += d_az.T @ cache.x
    grads.wr += d_ar.T @ cache.x
    grads.wh += d_ah.T @ cache.x
    grads.uz += d_az.T @ cache.h_prev
    grads.ur += d_ar.T @ cache.h_prev
    grads.uh += d_ah.T @ (cache.r * cache.h_prev)
    grads.bz += d_az.sum(axis=0)
    grads.br += d_ar.sum(axis=0)
    grads.bh += d_ah.sum(axis=0)
    return d_az @ w.wz + d_ar @ w.wr + d_ah @ w.wh


def _bgru_forward(wf: GruWeights, wb: GruWeights, x_rows: np.ndarray):
    cf = _gru_pass(wf, x_rows)
    cb = _gru_pass(wb, x_rows[::-1])
    out = np.concatenate([cf.h, cb.h[::-1]], axis=1)
    return out, cf, cb


def _bgru_backward(wf, wb, cf, cb, d_out, gf: GruWeights, gb: GruWeights):
    hidden = wf.hidden
    dx_f = _gru_backward(wf, cf, d_out[:, :hidden], gf)
    dx_b = _gru_backward(wb, cb, d_out[::-1, hidden:], gb)
    return dx_f + dx_b[::-1]


def _pair_rows(pair: AlignedPair, max_len: int) -> tuple[np.ndarray, np.ndarray]:
    """Aligned (23, L) matrices as row-major (L, 23) inputs, tail-truncated."""
    if pair.a.shape != pair.b.shape or pair.a.shape[0] != N_CHANNELS:
        raise ConfigurationError(
            f"aligned pair must be two ({N_CHANNELS}, L) matrices of equal shape"
        )
    length = pair.a.shape[1]
    if length == 0:
        raise DegenerateSignatureError("aligned pair has zero length")
    xa = np.ascontiguousarray(pair.a.T[:max_len], dtype=np.float64)
    xb = np.ascontiguousarray(pair.b.T[:max_len], dtype=np.float64)
    if not (np.isfinite(xa).all() and np.isfinite(xb).all()):
        raise NumericError("non-finite values in aligned pair")
    return xa, xb


def _forward_cached(p: ModelParams, xa: np.ndarray, xb: np.ndarray):
    out_a, ca_f, ca_b = _bgru_forward(p.branch_fwd, p.branch_bwd, xa)
    out_b, cb_f, cb_b = _bgru_forward(p.branch_fwd, p.branch_bwd, xb)
    merged_in = np.concatenate([out_a, out_b], axis=1)
    _, cm_f, cm_b = _bgru_forward(p.merge_fwd, p.merge_bwd, merged_in)
    final = np.concatenate([cm_f.h[-1], cm_b.h[-1]])
    logit = float(p.head_w @ final + p.head_b[0])
    score = float(expit(logit))
    return score, (ca_f, ca_b, cb_f, cb_b, cm_f, cm_b, final)


def forward(
    p: ModelParams, pair: AlignedPair, max_len: int = DEFAULT_MAX_LEN
) -> float:
    """Dissimilarity score in (0, 1); higher means more forgery-like."""
    xa, xb = _pair_rows(pair, max_len)
    score, _ = _forward_cached(p, xa, xb)
    return score


def loss(score: float, label: int) -> float:
    """Binary cross-entropy with the score clamped away from 0 and 1."""
    s = min(max(score, SCORE_CLAMP), 1.0 - SCORE_CLAMP)
    return -(label * math.log(s) + (1 - label) * math.log(1.0 - s))


def _loss_and_grads(
    p: ModelParams,
    xa: np.ndarray,
    xb: np.ndarray,
    label: int,
    want_branch_parts: bool = False,
):
    score, cache = _forward_cached(p, xa, xb)
    ca_f, ca_b, cb_f, cb_b, cm_f, cm_b, final = cache
    length = xa.shape[0]
    grads = ModelParams()

    d_logit = score - label
    grads.head_w += d_logit * final
    grads.head_b += d_logit
    d_final = d_logit * p.head_w

    d_merge_out = np.zeros((length, 2 * MERGE_HIDDEN))
    d_merge_out[-1, :MERGE_HIDDEN] = d_final[:MERGE_HIDDEN]
    d_merge_out[0, MERGE_HIDDEN:] = d_final[MERGE_HIDDEN:]
    d_merged_in = _bgru_backward(
        p.merge_fwd, p.merge_bwd, cm_f, cm_b, d_merge_out,
        grads.merge_fwd, grads.merge_bwd,
    )

    d_out_a = d_merged_in[:, : 2 * BRANCH_HIDDEN]
    d_out_b = d_merged_in[:, 2 * BRANCH_HIDDEN :]
    if want_branch_parts:
        part_a = ModelParams()
        part_b = ModelParams()
        _bgru_backward(p.branch_fwd, p.branch_bwd, ca_f, ca_b, d_out_a,
                       part_a.branch_fwd, part_a.branch_bwd)
        _bgru_backward(p.branch_fwd, p.branch_bwd, cb_f, cb_b, d_out_b,
                       part_b.branch_fwd, part_b.branch_bwd)
        grads.flat += part_a.flat + part_b.flat
        return score, loss(score, label), grads, (part_a, part_b)
    _bgru_backward(p.branch_fwd, p.branch_bwd, ca_f, ca_b, d_out_a,
                   grads.branch_fwd, grads.branch_bwd)
    _bgru_backward(p.branch_fwd, p.branch_bwd, cb_f, cb_b, d_out_b,
                   grads.branch_fwd, grads.branch_bwd)
    return score, loss(score, label), grads


def backward(
    p: ModelParams,
    pair: AlignedPair,
    label: int,
    max_len: int = DEFAULT_MAX_LEN,
) -> ModelParams:
    """Exact gradient of loss(forward(p, pair), label) w.r.t. every parameter."""
    xa, xb = _pair_rows(pair, max_len)
    return _loss_and_grads(p, xa, xb, label)[2]


# --------------------------------------------------------------------------
# Optimizer
# --------------------------------------------------------------------------

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step_count: int = 0
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, n: int = PARAM_COUNT, **hyper) -> "AdamState":
        return cls(m=np.zeros(n), v=np.zeros(n), **hyper)


def adam_step(
    params: ModelParams, grads: ModelParams, state: AdamState
) -> tuple[ModelParams, AdamState]:
    """One Adam update with bias correction; returns new params and state."""
    if grads.flat.shape != params.flat.shape or state.m.shape != params.flat.shape:
        raise ConfigurationError("parameter, gradient, and state shapes must match")
    t = state.step_count + 1
    g = grads.flat
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_flat = params.flat - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    new_state = AdamState(m=m, v=v, step_count=t, lr=state.lr,
                          beta1=state.beta1, beta2=state.beta2, eps=state.eps)
    return ModelParams(new_flat), new_state


# --------------------------------------------------------------------------
# Training
# --------------------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    max_len: int = DEFAULT_MAX_LEN
    seed: int = 0
    genuine_impostor_balance: bool = True
    validation_fraction: float = 0.1
    cost_channels: tuple[ChannelId, ...] = DEFAULT_COST_CHANNELS

    def __post_init__(self):
        if self.max_len < 16:
            raise ConfigurationError("max_len must be at least 16")
        if not 0.0 <= self.validation_fraction <= 0.5:
            raise ConfigurationError("validation_fraction must be in [0, 0.5]")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationError("epochs and batch_size must be positive")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "max_len": self.max_len,
            "seed": self.seed,
            "genuine_impostor_balance": self.genuine_impostor_balance,
            "validation_fraction": self.validation_fraction,
            "cost_channels": [c.name for c in self.cost_channels],
        }


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float | None


def build_training_pairs(
    manifest: DatasetManifest, rng: np.random.Generator, balance: bool
) -> list[tuple[str, str, int]]:
    """(enrolled_path, test_path, label) pairs: genuine-genuine pairs labelled 0
    against an equal count of impostor pairs labelled 1, split between skilled
    forgeries and random (other-user genuine) forgeries."""
    genuine: dict[str, list[str]] = {}
    forged: dict[str, list[str]] = {}
    for user in manifest.users():
        entries = manifest.entries_for(user)
        genuine[user] = [e.file_path for e in entries if e.label == "genuine"]
        forged[user] = [e.file_path for e in entries if e.label == "skilled_forgery"]

    users = [u for u in genuine if len(genuine[u]) >= 2]
    if len(users) < 2:
        raise ConfigurationError("need at least 2 users with 2 genuine signatures")

    gg = [
        (a, b, 0)
        for u in users
        for a, b in itertools.combinations(genuine[u], 2)
    ]
    skilled = [
        (g, f, 1) for u in users for g in genuine[u] for f in forged[u]
    ]
    random_imp = [
        (g, genuine[w][0], 1)
        for u in users
        for g in genuine[u]
        for w in users
        if w != u
    ]
    rng.shuffle(skilled)
    rng.shuffle(random_imp)

    if balance:
        need = len(gg)
        n_skilled = min(len(skilled), (need + 1) // 2)
        n_random = min(len(random_imp), need - n_skilled)
        if n_skilled + n_random < need:
            n_skilled = min(len(skilled), need - n_random)
        impostors = skilled[:n_skilled] + random_imp[:n_random]
        gg = gg[: len(impostors)]
    else:
        impostors = skilled + random_imp[: len(gg)]

    pairs = gg + impostors
    rng.shuffle(pairs)
    return pairs


def _aligned_rows(tf_cache, enrol, test, config):
    _, path = dtw_path(tf_cache[enrol], tf_cache[test], config.cost_channels)
    pair = apply_path(tf_cache[enrol], tf_cache[test], path)
    return _pair_rows(pair, config.max_len)


def train(
    manifest: DatasetManifest, config: TrainConfig
) -> tuple[ModelParams, list[EpochStats]]:
    """Train the scorer from scratch on a manifest; fully seed-deterministic."""
    rng = np.random.default_rng(config.seed)
    pairs = build_training_pairs(manifest, rng, config.genuine_impostor_balance)
    if not pairs:
        raise ConfigurationError("no training pairs could be built")

    tf_cache = {}
    for enrol, test, _ in pairs:
        for p in (enrol, test):
            if p not in tf_cache:
                tf_cache[p] = normalize(
                    extract_time_functions(manifest.load_signature(p))
                )
    dataset = [
        (*_aligned_rows(tf_cache, enrol, test, config), label)
        for enrol, test, label in pairs
    ]

    n_val = int(round(config.validation_fraction * len(dataset)))
    val_set = dataset[:n_val]
    train_set = dataset[n_val:]
    if not train_set:
        raise ConfigurationError("validation split leaves no training pairs")

    params = init_params(config.seed)
    state = AdamState.fresh()
    history: list[EpochStats] = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train_set))
        epoch_losses = []
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            grad_sum = np.zeros(PARAM_COUNT)
            for k in batch:
                xa, xb, label = train_set[k]
                _, pair_loss, grads = _loss_and_grads(params, xa, xb, label)
                grad_sum += grads.flat
                epoch_losses.append(pair_loss)
            mean_grads = ModelParams(grad_sum / len(batch))
            params, state = adam_step(params, mean_grads, state)
        val_loss = None
        if val_set:
            val_loss = float(
                np.mean([
                    loss(_forward_cached(params, xa, xb)[0], label)
                    for xa, xb, label in val_set
                ])
            )
        history.append(
            EpochStats(epoch=epoch, train_loss=float(np.mean(epoch_losses)),
                       val_loss=val_loss)
        )
    return params, history


# --------------------------------------------------------------------------
# Gradient verification and checkpoints
# --------------------------------------------------------------------------

def finite_difference_check(
    params: ModelParams,
    a: np.ndarray,
    b: np.ndarray,
    label: int,
    n_samples: int = 200,
    eps: float = 1e-5,
    seed: int = 0,
) -> float:
    """Max relative error of analytic gradients vs central finite differences.

    ``a`` and ``b`` are (23, L) aligned channel matrices. Relative error is
    |g_a - g_n| / max(1e-8, |g_a| + |g_n|) over ``n_samples`` randomly chosen
    parameters.
    """
    xa = np.ascontiguousarray(a.T, dtype=np.float64)
    xb = np.ascontiguousarray(b.T, dtype=np.float64)
    _, _, grads = _loss_and_grads(params, xa, xb, label)
    rng = np.random.default_rng(seed)
    indices = rng.choice(PARAM_COUNT, size=min(n_samples, PARAM_COUNT),
                         replace=False)
    work = params.copy()
    worst = 0.0
    for idx in indices:
        original = work.flat[idx]
        work.flat[idx] = original + eps
        up, _ = _forward_cached(work, xa, xb)
        work.flat[idx] = original - eps
        down, _ = _forward_cached(work, xa, xb)
        work.flat[idx] = original
        numeric = (loss(up, label) - loss(down, label)) / (2.0 * eps)
        analytic = grads.flat[idx]
        rel = abs(analytic - numeric) / max(1e-8, abs(analytic) + abs(numeric))
        worst = max(worst, rel)
    return worst


_CHECKPOINT_MAGIC = b"TASIGNCKPT1\n"


def save_checkpoint(path: str | Path, params: ModelParams, config: dict) -> None:
    """Write a versioned binary checkpoint: magic, JSON header, raw float64."""
    header = {
        "format": 1,
        "param_count": PARAM_COUNT,
        "layout": [[name, list(shape)] for name, shape in _LAYOUT],
        "config": config,
    }
    blob = (
        _CHECKPOINT_MAGIC
        + json.dumps(header, sort_keys=True).encode("utf-8")
        + b"\n"
        + params.flat.astype("<f8").tobytes()
    )
    Path(path).write_bytes(blob)


def load_checkpoint(path: str | Path) -> tuple[ModelParams, dict]:
    blob = Path(path).read_bytes()
    if not blob.startswith(_CHECKPOINT_MAGIC):
        raise ParseError(f"{path}: not a checkpoint file")
    rest = blob[len(_CHECKPOINT_MAGIC):]
    newline = rest.find(b"\n")
    if newline < 0:
        raise ParseError(f"{path}: truncated checkpoint header")
    try:
        header = json.loads(rest[:newline].decode("utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: bad checkpoint header: {exc}") from None
    expected_layout = [[name, list(shape)] for name, shape in _LAYOUT]
    if header.get("param_count") != PARAM_COUNT or header.get("layout") != expected_layout:
        raise ConfigurationError(f"{path}: checkpoint shapes do not match this model")
    payload = rest[newline + 1:]
    if len(payload) != 8 * PARAM_COUNT:
        raise ParseError(
            f"{path}: expected {8 * PARAM_COUNT} payload bytes, got {len(payload)}"
        )
    flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    return ModelParams(flat), header.get("config", {})
