"""Sequence threat detector: stacked bidirectional GRU encoder, additive
attention with a learned context bias, and a dense softmax head.

The attention energy for timestep j of a window is

    e_j = v_a . tanh(W_a h_j + b_a + c_bias)

where ``h_j`` is the top encoder output and ``c_bias`` is a learned vector.
The energies carry no query term, so each window gets a single attention
distribution and a single context vector.  Setting ``use_query_term=True``
switches to the classic additive-attention form with the final encoder
state as query: ``e_j = v_a . tanh(W_a h_j + U_a h_T + b_a)``.
"""

from __future__ import annotations

import json
from contextlib import contextmanager
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from . import tensor as T
from .data import SequenceSet
from .errors import DataError, NumericError, ShapeError
from .optim import Adam
from .params import ParamStore, glorot_uniform
from .rng import RngState
from .tensor import Tensor

_DIRECTIONS = ("fwd", "bwd")


@dataclass
class DetectorConfig:
    hidden_size: int = 128
    num_layers: int = 3
    attention_dim: int = 128
    head_hidden: int = 64
    learning_rate: float = 3e-4
    epochs: int = 30
    batch_size: int = 64
    decay_epoch: int = 15          # 1-based epoch at which lr *= decay_factor
    decay_factor: float = 0.5
    val_fraction: float = 0.2
    early_stop_patience: int | None = None
    use_query_term: bool = False

    def validate(self) -> None:
        if min(self.hidden_size, self.num_layers, self.attention_dim,
               self.head_hidden, self.batch_size, self.epochs) < 1:
            raise ValueError("detector sizes and epochs must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in [0, 1)")


@dataclass
class GruCellParams:
    """One direction of one layer; weights shaped [in, H] / [H, H]."""
    w_z: Tensor
    w_r: Tensor
    w_h: Tensor
    u_z: Tensor
    u_r: Tensor
    u_h: Tensor
    b_z: Tensor
    b_r: Tensor
    b_h: Tensor


@dataclass
class AttentionTrace:
    energies: np.ndarray     # [W]
    weights: np.ndarray      # [W], nonnegative, sums to 1
    context: np.ndarray      # [encoder_dim]


@dataclass
class TrainHistory:
    train_loss: list
    train_acc: list
    val_loss: list
    val_acc: list
    lr: list
    stopped_early: bool = False


@contextmanager
def _frozen(params: ParamStore):
    params.freeze()
    try:
        yield
    finally:
        params.unfreeze()


# ----------------------------------------------------------------------
# taped GRU ops
# ----------------------------------------------------------------------
def gru_scan(xg: Tensor, u_z: Tensor, u_r: Tensor, u_h: Tensor) -> Tensor:
    """Run the fused scan kernel over packed gate preactivations [T, B, 3H].

    The initial hidden state is zero.  Forward and backward both dispatch
    to the selected kernel backend.
    """
    t_steps, batch, three_h = xg.shape
    hidden = three_h // 3
    h0 = np.zeros((batch, hidden))
    h_all, cache = kernels.gru_forward(xg.data, u_z.data, u_r.data,
                                       u_h.data, h0)

    def backward():
        dxg, duz, dur, duh, _ = kernels.gru_backward(
            out.grad, xg.data, u_z.data, u_r.data, u_h.data, h0, h_all, cache)
        xg._accumulate(dxg)
        u_z._accumulate(duz)
        u_r._accumulate(dur)
        u_h._accumulate(duh)

    out = T._make(h_all, (xg, u_z, u_r, u_h), backward, "gru_scan")
    return out


def gru_cell(cell: GruCellParams, x_t: Tensor, h_prev: Tensor) -> Tensor:
    """Single GRU step built from primitive tape ops.

    z = sigmoid(x W_z + h U_z + b_z); r likewise; the candidate state is
    tanh(x W_h + (r * h) U_h + b_h) and h_t = (1 - z) * h + z * candidate.
    Used for the public single-step surface and as an independent check of
    the fused scan.
    """
    z = T.sigmoid(T.add(T.add(T.matmul(x_t, cell.w_z),
                              T.matmul(h_prev, cell.u_z)), cell.b_z))
    r = T.sigmoid(T.add(T.add(T.matmul(x_t, cell.w_r),
                              T.matmul(h_prev, cell.u_r)), cell.b_r))
    cand = T.tanh(T.add(T.add(T.matmul(x_t, cell.w_h),
                              T.matmul(T.mul(r, h_prev), cell.u_h)), cell.b_h))
    keep = T.add(T.mul(z, -1.0), 1.0)
    return T.add(T.mul(keep, h_prev), T.mul(z, cand))


# ----------------------------------------------------------------------
# model
# ----------------------------------------------------------------------
class DetectorModel:
    def __init__(self, feature_dim: int, class_names, config: DetectorConfig,
                 rng: RngState, provenance: str = ""):
        config.validate()
        if feature_dim < 1:
            raise ValueError("feature_dim must be positive")
        if len(class_names) < 2:
            raise DataError("a detector needs at least 2 classes")
        self.feature_dim = feature_dim
        self.class_names = list(class_names)
        self.config = config
        self.provenance = provenance
        self.params = ParamStore()
        self._init_params(rng)

    @property
    def encoder_dim(self) -> int:
        return 2 * self.config.hidden_size

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def _init_params(self, rng: RngState) -> None:
        cfg = self.config
        h = cfg.hidden_size
        p = self.params
        for layer in range(cfg.num_layers):
            in_dim = self.feature_dim if layer == 0 else 2 * h
            for d in _DIRECTIONS:
                tag = f"gru{layer}.{d}"
                for gate in ("z", "r", "h"):
                    p.create(f"{tag}.W_{gate}",
                             glorot_uniform(rng, in_dim, h, (in_dim, h)))
                    p.create(f"{tag}.U_{gate}",
                             glorot_uniform(rng, h, h, (h, h)))
                    p.create(f"{tag}.b_{gate}", np.zeros(h))
        k = self.encoder_dim
        a = cfg.attention_dim
        p.create("attn.W_a", glorot_uniform(rng, k, a, (k, a)))
        p.create("attn.U_a", glorot_uniform(rng, k, a, (k, a)))
        p.create("attn.v_a", glorot_uniform(rng, a, 1, (a,)))
        p.create("attn.b_a", np.zeros(a))
        p.create("attn.c_bias", np.zeros(a))
        p.create("head.W1", glorot_uniform(rng, k, cfg.head_hidden,
                                           (k, cfg.head_hidden)))
        p.create("head.b1", np.zeros(cfg.head_hidden))
        p.create("head.W2", glorot_uniform(rng, cfg.head_hidden,
                                           self.n_classes,
                                           (cfg.head_hidden, self.n_classes)))
        p.create("head.b2", np.zeros(self.n_classes))

    def cell_params(self, layer: int, direction: str) -> GruCellParams:
        tag = f"gru{layer}.{direction}"
        p = self.params
        return GruCellParams(
            w_z=p[f"{tag}.W_z"], w_r=p[f"{tag}.W_r"], w_h=p[f"{tag}.W_h"],
            u_z=p[f"{tag}.U_z"], u_r=p[f"{tag}.U_r"], u_h=p[f"{tag}.U_h"],
            b_z=p[f"{tag}.b_z"], b_r=p[f"{tag}.b_r"], b_h=p[f"{tag}.b_h"])

    # -- tape forward ---------------------------------------------------
    def _direction_pass(self, inp3: Tensor, layer: int, direction: str) -> Tensor:
        t_steps, batch, in_dim = inp3.shape
        cell = self.cell_params(layer, direction)
        seq3 = inp3 if direction == "fwd" else T.reverse_time(inp3)
        seq2 = T.reshape(seq3, (t_steps * batch, in_dim))
        xg = T.concat_cols([
            T.add(T.matmul(seq2, cell.w_z), cell.b_z),
            T.add(T.matmul(seq2, cell.w_r), cell.b_r),
            T.add(T.matmul(seq2, cell.w_h), cell.b_h)])
        h3 = gru_scan(T.reshape(xg, (t_steps, batch, -1)),
                      cell.u_z, cell.u_r, cell.u_h)
        return h3 if direction == "fwd" else T.reverse_time(h3)

    def _encode(self, windows: np.ndarray):
        """Return the top-layer output [T, B, 2H] and every layer output."""
        if windows.ndim != 3 or windows.shape[2] != self.feature_dim:
            raise ShapeError(f"windows shape {windows.shape} does not match "
                             f"feature dim {self.feature_dim}")
        t_steps, batch = windows.shape[1], windows.shape[0]
        inp3 = Tensor(np.ascontiguousarray(windows.transpose(1, 0, 2)))
        layer_outputs = []
        h = self.config.hidden_size
        for layer in range(self.config.num_layers):
            halves = [self._direction_pass(inp3, layer, d) for d in _DIRECTIONS]
            flat = T.concat_cols([T.reshape(x, (t_steps * batch, h))
                                  for x in halves])
            inp3 = T.reshape(flat, (t_steps, batch, 2 * h))
            layer_outputs.append(inp3)
        return inp3, layer_outputs

    def _attend(self, h_top3: Tensor):
        """Energies [B, T], weights [B, T] and context [B, 2H]."""
        t_steps, batch, k = h_top3.shape
        p = self.params
        flat = T.reshape(h_top3, (t_steps * batch, k))
        pre = T.add(T.matmul(flat, p["attn.W_a"]),
                    T.add(p["attn.b_a"], p["attn.c_bias"]))
        if self.config.use_query_term:
            query = T.matmul(T.take_time(h_top3, t_steps - 1), p["attn.U_a"])
            pre = T.add(pre, T.tile_rows(query, t_steps))
        act = T.tanh(pre)
        e = T.matmul(act, T.reshape(p["attn.v_a"],
                                    (self.config.attention_dim, 1)))
        e_bt = T.transpose(T.reshape(e, (t_steps, batch)))
        alpha = T.softmax_rows(e_bt)
        context = T.mix_time(alpha, h_top3)
        return e_bt, alpha, context

    def _head(self, context: Tensor) -> Tensor:
        p = self.params
        hidden = T.relu(T.add(T.matmul(context, p["head.W1"]), p["head.b1"]))
        return T.add(T.matmul(hidden, p["head.W2"]), p["head.b2"])

    def forward(self, windows: np.ndarray):
        """Full tape pass; returns (logits, energies, weights, context)."""
        h_top3, _ = self._encode(windows)
        e_bt, alpha, context = self._attend(h_top3)
        return self._head(context), e_bt, alpha, context


# ----------------------------------------------------------------------
# public operations
# ----------------------------------------------------------------------
def bigru_forward(model: DetectorModel, window: np.ndarray):
    """Encode one window; returns the top output [W, 2H] and all layers."""
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 2:
        raise ShapeError(f"expected one [W, d] window, got shape {window.shape}")
    if window.shape[0] < 1:
        raise ShapeError("window must contain at least one timestep")
    with _frozen(model.params):
        top3, layers = model._encode(window[None])
    return top3.data[:, 0, :], [layer.data[:, 0, :] for layer in layers]


def attention(model: DetectorModel, h_top: np.ndarray) -> AttentionTrace:
    """Attention over one encoded window [W, 2H]."""
    h_top = np.asarray(h_top, dtype=np.float64)
    if h_top.ndim != 2 or h_top.shape[1] != model.encoder_dim:
        raise ShapeError(f"expected [W, {model.encoder_dim}], got {h_top.shape}")
    with _frozen(model.params):
        e_bt, alpha, context = model._attend(Tensor(h_top[:, None, :]))
    return AttentionTrace(energies=e_bt.data[0].copy(),
                          weights=alpha.data[0].copy(),
                          context=context.data[0].copy())


def classify(model: DetectorModel, window: np.ndarray):
    """Class probabilities plus the attention trace for one window."""
    labels, probs, traces = predict_batch(model, np.asarray(window)[None])
    return probs[0], traces[0]


def predict_batch(model: DetectorModel, windows: np.ndarray):
    """Deterministic batch inference; returns (labels, probs, traces)."""
    windows = np.asarray(windows, dtype=np.float64)
    n = windows.shape[0]
    if n == 0:
        return (np.zeros(0, dtype=np.int64),
                np.zeros((0, model.n_classes)), [])
    chunk = max(1, model.config.batch_size)
    probs = np.empty((n, model.n_classes))
    traces: list[AttentionTrace] = []
    with _frozen(model.params):
        for start in range(0, n, chunk):
            part = windows[start:start + chunk]
            logits, e_bt, alpha, context = model.forward(part)
            z = logits.data - logits.data.max(axis=1, keepdims=True)
            ez = np.exp(z)
            probs[start:start + chunk] = ez / ez.sum(axis=1, keepdims=True)
            for i in range(part.shape[0]):
                traces.append(AttentionTrace(energies=e_bt.data[i].copy(),
                                             weights=alpha.data[i].copy(),
                                             context=context.data[i].copy()))
    return probs.argmax(axis=1).astype(np.int64), probs, traces


def _one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    out = np.zeros((labels.shape[0], n_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def _stratified_split(labels: np.ndarray, fraction: float, rng: RngState):
    """Per-class split into (train, val) index arrays."""
    train_idx, val_idx = [], []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(len(idx))]
        n_val = int(round(fraction * len(idx)))
        val_idx.extend(idx[:n_val])
        train_idx.extend(idx[n_val:])
    return (np.array(sorted(train_idx), dtype=np.int64),
            np.array(sorted(val_idx), dtype=np.int64))


def _eval_loss_acc(model: DetectorModel, windows, labels) -> tuple[float, float]:
    _, probs, _ = predict_batch(model, windows)
    eps_safe = np.clip(probs[np.arange(len(labels)), labels], 1e-300, None)
    loss = float(-np.log(eps_safe).mean())
    acc = float((probs.argmax(axis=1) == labels).mean())
    return loss, acc


def train(model: DetectorModel, sequences: SequenceSet, rng: RngState,
          val_indices=None) -> TrainHistory:
    """Adam on categorical cross-entropy over all parameters jointly.

    The attention parameters receive no special treatment: the same
    gradient flow that tunes the encoder and head adjusts them.  The
    learning rate is halved once at ``decay_epoch``; optional early
    stopping watches validation loss.
    """
    cfg = model.config
    windows = np.asarray(sequences.windows, dtype=np.float64)
    labels = np.asarray(sequences.labels, dtype=np.int64)
    if val_indices is None:
        train_idx, val_idx = _stratified_split(labels, cfg.val_fraction, rng)
    else:
        val_idx = np.asarray(val_indices, dtype=np.int64)
        mask = np.ones(len(labels), dtype=bool)
        mask[val_idx] = False
        train_idx = np.flatnonzero(mask)
    if np.unique(labels[train_idx]).size < 2:
        raise DataError("training split contains fewer than 2 classes")

    x_train, y_train = windows[train_idx], labels[train_idx]
    x_val, y_val = windows[val_idx], labels[val_idx]
    opt = Adam(model.params, lr=cfg.learning_rate, beta1=0.9, beta2=0.999)
    history = TrainHistory([], [], [], [], [])
    best_val = np.inf
    since_best = 0

    for epoch in range(1, cfg.epochs + 1):
        if epoch == cfg.decay_epoch:
            opt.lr *= cfg.decay_factor
        order = rng.permutation(len(x_train))
        total_loss = 0.0
        total_hits = 0
        for start in range(0, len(order), cfg.batch_size):
            sel = order[start:start + cfg.batch_size]
            try:
                logits, _, _, _ = model.forward(x_train[sel])
                loss, probs = T.softmax_cross_entropy(
                    logits, _one_hot(y_train[sel], model.n_classes))
                model.params.zero_grad()
                loss.backward()
                opt.step()
            except NumericError as exc:
                raise NumericError(
                    f"epoch {epoch}, batch at index {start}: {exc}") from exc
            total_loss += loss.item() * len(sel)
            total_hits += int((probs.argmax(axis=1) == y_train[sel]).sum())
        history.train_loss.append(total_loss / len(order))
        history.train_acc.append(total_hits / len(order))
        if len(val_idx):
            v_loss, v_acc = _eval_loss_acc(model, x_val, y_val)
        else:
            v_loss, v_acc = float("nan"), float("nan")
        history.val_loss.append(v_loss)
        history.val_acc.append(v_acc)
        history.lr.append(opt.lr)
        if cfg.early_stop_patience is not None and len(val_idx):
            if v_loss < best_val - 1e-12:
                best_val = v_loss
                since_best = 0
            else:
                since_best += 1
                if since_best >= cfg.early_stop_patience:
                    history.stopped_early = True
                    break
    return history


# ----------------------------------------------------------------------
# checkpoints
# ----------------------------------------------------------------------
_CKPT_VERSION = 1


def save_detector(model: DetectorModel, path) -> None:
    """Single-file checkpoint: config + class names + parameter arrays."""
    meta = {
        "format": "threatlens-detector",
        "version": _CKPT_VERSION,
        "config": asdict(model.config),
        "class_names": model.class_names,
        "feature_dim": model.feature_dim,
        "provenance": model.provenance,
        "param_names": model.params.names(),
    }
    arrays = {f"param/{k}": t.data for k, t in model.params.items()}
    arrays["meta"] = np.frombuffer(
        json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    np.savez(path, **arrays)


def load_detector(path) -> DetectorModel:
    with np.load(path) as z:
        meta = json.loads(bytes(z["meta"].tobytes()).decode())
        if meta.get("format") != "threatlens-detector":
            raise DataError(f"{path} is not a detector checkpoint")
        model = DetectorModel(
            feature_dim=meta["feature_dim"],
            class_names=meta["class_names"],
            config=DetectorConfig(**meta["config"]),
            rng=RngState(0),
            provenance=meta["provenance"])
        state = {k: z[f"param/{k}"] for k in meta["param_names"]}
    model.params.load_state_dict(state)
    return model
