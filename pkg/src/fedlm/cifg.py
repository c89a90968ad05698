"""Recurrent next-word model: a single-layer LSTM variant whose forget gate
is coupled to the input gate (f = 1 - i), with a learned projection of the
hidden state down to the embedding dimension. The projected state feeds both
the recurrence and the tied output logits, which is what keeps the parameter
budget dominated by the embedding matrix.

Shapes:
    W  : (D, V)  tied embedding / output projection (columns embed tokens)
    Wg : (H, D)  input weights for gate g in {i, c, o}
    Ug : (H, D)  recurrent weights over the projected state r
    bg : (H,)    gate bias
    P  : (D, H)  recurrent/output projection, no bias

One step, given embedded input x and previous (c_prev, r_prev):
    i = sigmoid(Wi x + Ui r_prev + bi)        f = 1 - i
    c~ = tanh(Wc x + Uc r_prev + bc)          c = f*c_prev + i*c~
    o = sigmoid(Wo x + Uo r_prev + bo)        h = o * tanh(c)
    r = P h                                   logits = W^T r

Gradients are hand-derived full backpropagation through time (sentences are
short enough that truncation would buy nothing); `finite_diff_grad` in
nn_core is the oracle they are tested against.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .nn_core import init_uniform, derive_seed
from .corpus import NUM_SPECIALS

CHECKPOINT_MAGIC = b"FKLM"
QUANTIZED_MAGIC = b"FKLQ"
CHECKPOINT_VERSION = 1

# Serialization and flattening order of the parameter tensors.
TENSOR_ORDER = ("W", "Wi", "Ui", "bi", "Wc", "Uc", "bc", "Wo", "Uo", "bo", "P")


@dataclass(frozen=True)
class CifgConfig:
    V: int
    D: int
    H: int

    def __post_init__(self):
        if self.V < 4 or self.D < 1 or self.H < 1:
            raise ValueError(f"invalid model config V={self.V} D={self.D} H={self.H}")


def tensor_shapes(config: CifgConfig) -> dict:
    V, D, H = config.V, config.D, config.H
    shapes = {"W": (D, V), "P": (D, H)}
    for g in "ico":
        shapes[f"W{g}"] = (H, D)
        shapes[f"U{g}"] = (H, D)
        shapes[f"b{g}"] = (H,)
    return shapes


def param_count(config: CifgConfig) -> int:
    """V*D tied embedding + 3 gates of (2*H*D weights + H bias) + D*H projection."""
    V, D, H = config.V, config.D, config.H
    return V * D + 3 * (2 * H * D + H) + D * H


@dataclass
class CifgModel:
    config: CifgConfig
    W: np.ndarray
    Wi: np.ndarray
    Ui: np.ndarray
    bi: np.ndarray
    Wc: np.ndarray
    Uc: np.ndarray
    bc: np.ndarray
    Wo: np.ndarray
    Uo: np.ndarray
    bo: np.ndarray
    P: np.ndarray

    @property
    def dtype(self):
        return self.W.dtype

    def astype(self, dtype) -> "CifgModel":
        return CifgModel(
            self.config, **{n: getattr(self, n).astype(dtype) for n in TENSOR_ORDER}
        )

    # Inference conveniences; evaluation code duck-types on these.
    def predict_topk(self, context, k):
        return predict_topk(self, context, k)

    def topk_candidates(self, seqs, k):
        return topk_candidates(self, seqs, k)


def init_model(config: CifgConfig, seed: int, dtype=np.float32) -> CifgModel:
    tensors = {
        name: init_uniform(shape, derive_seed(seed, "init", name), dtype=dtype)
        for name, shape in tensor_shapes(config).items()
    }
    return CifgModel(config=config, **tensors)


def flatten(model: CifgModel) -> np.ndarray:
    return np.concatenate([getattr(model, n).ravel() for n in TENSOR_ORDER])


def unflatten(config: CifgConfig, vec: np.ndarray) -> CifgModel:
    shapes = tensor_shapes(config)
    tensors = {}
    offset = 0
    for name in TENSOR_ORDER:
        shape = shapes[name]
        size = int(np.prod(shape))
        tensors[name] = vec[offset : offset + size].reshape(shape).copy()
        offset += size
    if offset != vec.size:
        raise ValueError(f"flat vector has {vec.size} entries, expected {offset}")
    return CifgModel(config=config, **tensors)


# ---------------------------------------------------------------------------
# Cell


@dataclass
class CellState:
    """Post-step cell state; gate activations are retained so the coupling
    f = 1 - i stays observable from outside."""

    c: np.ndarray
    r: np.ndarray
    i: np.ndarray
    f: np.ndarray
    o: np.ndarray
    h: np.ndarray = field(default=None)


def zero_state(config: CifgConfig, dtype=np.float64) -> CellState:
    H, D = config.H, config.D
    z = np.zeros
    return CellState(c=z(H, dtype), r=z(D, dtype), i=z(H, dtype), f=z(H, dtype), o=z(H, dtype), h=z(H, dtype))


def _sigmoid(x):
    # Split by sign so exp never overflows.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def cell_step(model: CifgModel, x: np.ndarray, prev: CellState) -> CellState:
    """Single-example recurrent step (batched training uses the internal scan)."""
    if not np.all(np.isfinite(x)):
        raise ValueError("numeric overflow")
    i = _sigmoid(model.Wi @ x + model.Ui @ prev.r + model.bi)
    f = 1.0 - i
    ctil = np.tanh(model.Wc @ x + model.Uc @ prev.r + model.bc)
    c = f * prev.c + i * ctil
    o = _sigmoid(model.Wo @ x + model.Uo @ prev.r + model.bo)
    h = o * np.tanh(c)
    r = model.P @ h
    return CellState(c=c, r=r, i=i, f=f, o=o, h=h)


# ---------------------------------------------------------------------------
# Batched forward / backward

_MIN_SEQ_LEN = 2  # BOS plus at least one prediction target


def _batch_arrays(batch: list, V: int, dtype) -> tuple:
    """Pad a batch of token sequences into (inputs, targets, mask) arrays.

    Position t consumes token t and predicts token t+1; mask is 1.0 on real
    prediction positions and 0.0 on padding (padding feeds token 0, whose
    activations are computed and then discarded by the zero mask).
    """
    B = len(batch)
    lens = [len(s) for s in batch]
    if min(lens) < _MIN_SEQ_LEN:
        raise ValueError("sequences must contain at least two tokens")
    T = max(lens) - 1
    inputs = np.zeros((B, T), dtype=np.int64)
    targets = np.zeros((B, T), dtype=np.int64)
    mask = np.zeros((B, T), dtype=dtype)
    for b, seq in enumerate(batch):
        ids = np.asarray(seq, dtype=np.int64)
        if ids.min() < 0 or ids.max() >= V:
            raise ValueError("token id out of range")
        n = len(seq) - 1
        inputs[b, :n] = ids[:-1]
        targets[b, :n] = ids[1:]
        mask[b, :n] = 1.0
    return inputs, targets, mask


def _forward_scan(model: CifgModel, inputs: np.ndarray) -> dict:
    """Run the recurrence over (B, T) token inputs, keeping every intermediate
    needed by the backward pass. Returns logits of shape (B, T, V)."""
    B, T = inputs.shape
    dtype = model.dtype
    H, D = model.config.H, model.config.D

    X = model.W.T[inputs.reshape(-1)].reshape(B, T, D)
    # Input-to-gate projections have no recurrent dependency: do them in one shot.
    AXi = X @ model.Wi.T + model.bi
    AXc = X @ model.Wc.T + model.bc
    AXo = X @ model.Wo.T + model.bo

    Cs = [np.zeros((B, H), dtype=dtype)]
    Rs = [np.zeros((B, D), dtype=dtype)]
    Is, Fs, Ctils, Os, TanhCs, Hs = [], [], [], [], [], []
    for t in range(T):
        r_prev = Rs[t]
        i = _sigmoid(AXi[:, t, :] + r_prev @ model.Ui.T)
        f = 1.0 - i
        ctil = np.tanh(AXc[:, t, :] + r_prev @ model.Uc.T)
        c = f * Cs[t] + i * ctil
        o = _sigmoid(AXo[:, t, :] + r_prev @ model.Uo.T)
        tanh_c = np.tanh(c)
        h = o * tanh_c
        r = h @ model.P.T
        Cs.append(c)
        Rs.append(r)
        Is.append(i)
        Fs.append(f)
        Ctils.append(ctil)
        Os.append(o)
        TanhCs.append(tanh_c)
        Hs.append(h)
    logits = np.stack(Rs[1:], axis=1) @ model.W
    return {
        "X": X, "Cs": Cs, "Rs": Rs, "Is": Is, "Fs": Fs, "Ctils": Ctils,
        "Os": Os, "TanhCs": TanhCs, "Hs": Hs, "logits": logits,
    }


def _log_softmax_stats(logits: np.ndarray) -> tuple:
    m = logits.max(axis=-1, keepdims=True)
    z = np.exp(logits - m)
    s = z.sum(axis=-1, keepdims=True)
    probs = z / s
    lse = (m + np.log(s))[..., 0]
    return probs, lse


def forward(model: CifgModel, seq: list) -> np.ndarray:
    """Logits for each prediction position of one sequence: row t is the
    distribution over token t+1 given tokens 0..t. Shape (len-1, V)."""
    inputs, _, _ = _batch_arrays([seq], model.config.V, model.dtype)
    return _forward_scan(model, inputs)["logits"][0]


def loss_and_grads(model: CifgModel, batch: list) -> tuple:
    """Mean cross-entropy over every prediction position in the batch, and
    its gradient as a CifgModel-shaped container.

    The loss is position-weighted (a 7-word sentence contributes 7 terms to
    the same mean as a 2-word sentence's 2), which makes duplicating the
    batch a no-op and keeps the math independent of sentence packing.
    """
    if not batch:
        raise ValueError("empty batch")
    cfg = model.config
    dtype = model.dtype
    inputs, targets, mask = _batch_arrays(batch, cfg.V, dtype)
    cache = _forward_scan(model, inputs)
    logits = cache["logits"]
    B, T, V = logits.shape

    probs, lse = _log_softmax_stats(logits)
    gathered = np.take_along_axis(logits, targets[..., None], axis=-1)[..., 0]
    n_pos = mask.sum()
    loss = float(((lse - gathered) * mask).sum() / n_pos)

    coeff = mask / n_pos  # per-position weight of the mean
    dlogits = probs * coeff[..., None]
    np.subtract.at(dlogits, (np.arange(B)[:, None], np.arange(T)[None, :], targets), coeff)

    g = {n: np.zeros_like(getattr(model, n)) for n in TENSOR_ORDER}
    dW_embed = np.zeros((V, cfg.D), dtype=dtype)  # scatter buffer, (V, D)
    dc_carry = np.zeros((B, cfg.H), dtype=dtype)
    dr_carry = np.zeros((B, cfg.D), dtype=dtype)
    X, Cs, Rs = cache["X"], cache["Cs"], cache["Rs"]
    Is, Ctils, Os, TanhCs, Hs = cache["Is"], cache["Ctils"], cache["Os"], cache["TanhCs"], cache["Hs"]

    for t in range(T - 1, -1, -1):
        dlog = dlogits[:, t, :]
        g["W"] += Rs[t + 1].T @ dlog  # output-projection path
        dr = dlog @ model.W.T + dr_carry
        g["P"] += dr.T @ Hs[t]
        dh = dr @ model.P

        do = dh * TanhCs[t]
        da_o = do * Os[t] * (1.0 - Os[t])
        dc = dh * Os[t] * (1.0 - TanhCs[t] ** 2) + dc_carry
        # Coupled gate: i scales the candidate in and (1-i) scales the old
        # cell out, so both paths meet in one gate gradient.
        di = dc * (Ctils[t] - Cs[t])
        da_i = di * Is[t] * (1.0 - Is[t])
        da_c = dc * Is[t] * (1.0 - Ctils[t] ** 2)
        dc_carry = dc * (1.0 - Is[t])

        x_t = X[:, t, :]
        r_prev = Rs[t]
        for name, da in (("i", da_i), ("c", da_c), ("o", da_o)):
            g[f"W{name}"] += da.T @ x_t
            g[f"U{name}"] += da.T @ r_prev
            g[f"b{name}"] += da.sum(axis=0)
        dr_carry = da_i @ model.Ui + da_c @ model.Uc + da_o @ model.Uo
        dx = da_i @ model.Wi + da_c @ model.Wc + da_o @ model.Wo
        np.add.at(dW_embed, inputs[:, t], dx)  # embedding path

    g["W"] += dW_embed.T
    return loss, CifgModel(config=cfg, **g)


# ---------------------------------------------------------------------------
# Inference


def _masked_topk_ids(logits_row: np.ndarray, k: int) -> np.ndarray:
    masked = logits_row.copy()
    masked[:NUM_SPECIALS] = -np.inf
    order = np.argsort(-masked, kind="stable")  # stable → ties broken by lower id
    return order[:k]


def predict_topk(model: CifgModel, context: list, k: int) -> list:
    """Top-k (word id, probability) continuations of a context that begins
    with BOS. Probabilities are the plain softmax values; the special tokens
    are barred from candidacy but keep their probability mass."""
    if len(context) == 0:
        raise ValueError("empty context")
    V = model.config.V
    if not 1 <= k <= V - NUM_SPECIALS:
        raise ValueError(f"k must be in [1, {V - NUM_SPECIALS}]")
    inputs, _, _ = _batch_arrays([list(context) + [0]], V, model.dtype)
    logits = _forward_scan(model, inputs)["logits"][0, len(context) - 1]
    probs, _ = _log_softmax_stats(logits)
    ids = _masked_topk_ids(logits, k)
    return [(int(i), float(probs[i])) for i in ids]


def topk_candidates(model: CifgModel, seqs: list, k: int, chunk: int = 256) -> list:
    """Batched top-k candidate ids at every prediction position.

    Returns one (len(seq)-1, k) int array per sequence; row t is the ordered
    candidate list for the target at position t+1. Special tokens never
    appear. This is the fast path recall evaluation uses.
    """
    V = model.config.V
    if not 1 <= k <= V - NUM_SPECIALS:
        raise ValueError(f"k must be in [1, {V - NUM_SPECIALS}]")
    out = []
    for start in range(0, len(seqs), chunk):
        part = seqs[start : start + chunk]
        inputs, _, _ = _batch_arrays(part, V, model.dtype)
        logits = _forward_scan(model, inputs)["logits"]
        logits[:, :, :NUM_SPECIALS] = -np.inf
        order = np.argsort(-logits, axis=-1, kind="stable")[:, :, :k]
        for b, seq in enumerate(part):
            out.append(order[b, : len(seq) - 1, :])
    return out


# ---------------------------------------------------------------------------
# Quantization

QUANT_LO = -128
QUANT_HI = 127
QUANT_LEVELS = 255.0


@dataclass
class QuantizedModel:
    """Per-tensor affine int8 codes: x ≈ (code - zero_point) * scale.

    Codes live in [-128, 127]; zero_point is stored as a real number in the
    same code space. A constant tensor quantizes degenerately (scale 1, all
    codes 0, zero_point = -value) and reconstructs exactly.
    """

    config: CifgConfig
    codes: dict
    scales: dict
    zero_points: dict

    def serialized_nbytes(self) -> int:
        header = 4 + 4 + 3 * 4  # magic, version, V/D/H
        body = sum(8 + codes.size for codes in self.codes.values())  # (scale, zp) + int8 payload
        return header + body


def _quantize_tensor(x: np.ndarray) -> tuple:
    lo = float(x.min())
    hi = float(x.max())
    if hi == lo:
        scale = np.float32(1.0)
        zp = np.float32(-lo)
        codes = np.zeros(x.shape, dtype=np.int8)
        return codes, scale, zp
    scale = np.float32((hi - lo) / QUANT_LEVELS)
    zp = np.float32(np.round(-lo / float(scale)) + QUANT_LO)
    codes = np.clip(np.round(x / float(scale) + float(zp)), QUANT_LO, QUANT_HI).astype(np.int8)
    return codes, scale, zp


def quantize(model: CifgModel) -> QuantizedModel:
    codes, scales, zps = {}, {}, {}
    for name in TENSOR_ORDER:
        x = getattr(model, name)
        if not np.all(np.isfinite(x)):
            raise ValueError("numeric overflow")
        codes[name], scales[name], zps[name] = _quantize_tensor(np.asarray(x, dtype=np.float64))
    return QuantizedModel(config=model.config, codes=codes, scales=scales, zero_points=zps)


def dequantize(q: QuantizedModel) -> CifgModel:
    tensors = {
        name: ((q.codes[name].astype(np.float32) - q.zero_points[name]) * q.scales[name])
        for name in TENSOR_ORDER
    }
    return CifgModel(config=q.config, **tensors)


# ---------------------------------------------------------------------------
# Checkpoints

def _write_header(fh, magic: bytes, config: CifgConfig) -> None:
    fh.write(magic)
    fh.write(struct.pack("<IIII", CHECKPOINT_VERSION, config.V, config.D, config.H))


def _read_header(fh, expected_magic: bytes) -> CifgConfig:
    magic = fh.read(4)
    if magic != expected_magic:
        raise ValueError(f"bad checkpoint magic {magic!r}, expected {expected_magic!r}")
    version, V, D, H = struct.unpack("<IIII", fh.read(16))
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    return CifgConfig(V=V, D=D, H=H)


def save_checkpoint(path, model: CifgModel) -> None:
    with open(path, "wb") as fh:
        _write_header(fh, CHECKPOINT_MAGIC, model.config)
        for name in TENSOR_ORDER:
            fh.write(np.ascontiguousarray(getattr(model, name), dtype="<f4").tobytes())


def load_checkpoint(path) -> CifgModel:
    with open(path, "rb") as fh:
        config = _read_header(fh, CHECKPOINT_MAGIC)
        shapes = tensor_shapes(config)
        tensors = {}
        for name in TENSOR_ORDER:
            shape = shapes[name]
            size = int(np.prod(shape))
            buf = fh.read(4 * size)
            if len(buf) != 4 * size:
                raise ValueError("truncated checkpoint")
            tensors[name] = np.frombuffer(buf, dtype="<f4").reshape(shape).astype(np.float32)
    return CifgModel(config=config, **tensors)


def save_quantized(path, q: QuantizedModel) -> None:
    with open(path, "wb") as fh:
        _write_header(fh, QUANTIZED_MAGIC, q.config)
        for name in TENSOR_ORDER:
            fh.write(struct.pack("<ff", float(q.scales[name]), float(q.zero_points[name])))
            fh.write(np.ascontiguousarray(q.codes[name], dtype=np.int8).tobytes())


def load_quantized(path) -> QuantizedModel:
    with open(path, "rb") as fh:
        config = _read_header(fh, QUANTIZED_MAGIC)
        shapes = tensor_shapes(config)
        codes, scales, zps = {}, {}, {}
        for name in TENSOR_ORDER:
            shape = shapes[name]
            size = int(np.prod(shape))
            scale, zp = struct.unpack("<ff", fh.read(8))
            buf = fh.read(size)
            if len(buf) != size:
                raise ValueError("truncated checkpoint")
            codes[name] = np.frombuffer(buf, dtype=np.int8).reshape(shape)
            scales[name] = np.float32(scale)
            zps[name] = np.float32(zp)
    return QuantizedModel(config=config, codes=codes, scales=scales, zero_points=zps)
