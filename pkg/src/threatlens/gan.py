"""Conditional GAN for tabular traffic synthesis with condition obfuscation.

The generator receives a latent vector plus (optionally) a one-hot class
label and a vector of continuous condition columns.  Before either network
sees them, the conditions pass through a randomized obfuscation step:
categorical entries are resampled uniformly with probability ``alpha_cat``
and continuous entries get additive Laplace noise of scale ``alpha_cont``
(then clamp to [0, 1]).  On top of the adversarial objective the generator
pays a privacy penalty, ``privacy_weight`` times the MSE between its
outputs under obfuscated and original conditions for the same latent
draw, which pushes generation to be insensitive to individual-specific
condition values.

Both networks train with Adam on alternating per-batch steps.  The
generator's adversarial term uses the non-saturating form
``-mean log D(G(z))``; the literal minimax term is available via
``saturating=True`` for comparison runs.
"""

from __future__ import annotations

import json
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .data import EncodedDataset
from .errors import DataError, NumericError, ShapeError
from .optim import Adam
from .params import ParamStore, glorot_uniform
from .rng import RngState
from .tensor import Tensor


@dataclass
class GanConfig:
    latent_dim: int = 64
    gen_sizes: tuple = (256, 512, 1024)
    disc_sizes: tuple = (1024, 512, 256)
    learning_rate: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    epochs: int = 30
    batch_size: int = 128
    privacy_weight: float = 0.1
    alpha_cat: float = 0.1
    alpha_cont: float = 0.05
    cond_cols: tuple = ()
    conditional: bool = True
    saturating: bool = False
    leaky_slope: float = 0.2

    def validate(self) -> None:
        if min(self.latent_dim, self.epochs, self.batch_size,
               *self.gen_sizes, *self.disc_sizes) < 1:
            raise ValueError("GAN sizes, epochs and batch size must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if not 0.0 <= self.alpha_cat <= 1.0:
            raise ValueError("alpha_cat must lie in [0, 1]")
        if self.alpha_cont < 0 or self.privacy_weight < 0:
            raise ValueError("alpha_cont and privacy_weight must be >= 0")


@dataclass
class GanLosses:
    """Per-epoch means plus the raw per-batch series behind them."""

    disc: list = field(default_factory=list)
    gen: list = field(default_factory=list)          # adversarial term only
    privacy: list = field(default_factory=list)
    batch_disc: list = field(default_factory=list)
    batch_gen: list = field(default_factory=list)
    batch_privacy: list = field(default_factory=list)
    batches_per_epoch: list = field(default_factory=list)


class GanModel:
    def __init__(self, feature_dim: int, n_classes: int, config: GanConfig,
                 rng: RngState, class_names=None):
        config.validate()
        if feature_dim < 1:
            raise ValueError("feature_dim must be positive")
        if config.conditional and n_classes < 1:
            raise ValueError("a conditional model needs at least one class")
        self.feature_dim = feature_dim
        self.n_classes = n_classes
        self.config = config
        self.class_names = list(class_names) if class_names else None
        # per-class pools of condition-column values, filled by train()
        self.cond_pools: list[np.ndarray] | None = None
        self.class_counts: np.ndarray | None = None
        self.gen = ParamStore()
        self.disc = ParamStore()
        self._init_params(rng)

    @property
    def cond_dim(self) -> int:
        if not self.config.conditional:
            return 0
        return self.n_classes + len(self.config.cond_cols)

    def _init_params(self, rng: RngState) -> None:
        cfg = self.config

        def mlp(store, widths, in_dim, out_dim):
            prev = in_dim
            for i, w in enumerate(widths):
                store.create(f"W{i}", glorot_uniform(rng, prev, w, (prev, w)))
                store.create(f"b{i}", np.zeros(w))
                prev = w
            store.create("W_out", glorot_uniform(rng, prev, out_dim,
                                                 (prev, out_dim)))
            store.create("b_out", np.zeros(out_dim))

        mlp(self.gen, cfg.gen_sizes, cfg.latent_dim + self.cond_dim,
            self.feature_dim)
        mlp(self.disc, cfg.disc_sizes, self.feature_dim + self.cond_dim, 1)


# ----------------------------------------------------------------------
# conditions
# ----------------------------------------------------------------------
def one_hot_codes(codes: np.ndarray, n_classes: int) -> np.ndarray:
    out = np.zeros((len(codes), n_classes))
    out[np.arange(len(codes)), np.asarray(codes, dtype=np.int64)] = 1.0
    return out


def obfuscate(codes: np.ndarray, cont: np.ndarray, alpha_cat: float,
              alpha_cont: float, n_categories: int, rng: RngState):
    """Randomize conditions before either network sees them.

    Each code is replaced with probability ``alpha_cat`` by a uniform draw
    over the category set (which may pick the original).  Continuous
    entries get Laplace(0, alpha_cont) noise and are clamped back to
    [0, 1].  Draw counts do not depend on the values, so streams stay
    aligned across runs.
    """
    codes = np.asarray(codes, dtype=np.int64)
    cont = np.asarray(cont, dtype=np.float64)
    n = codes.shape[0]
    flip = rng.uniform((n,)) < alpha_cat
    replacement = rng.integers(n_categories, (n,))
    new_codes = np.where(flip, replacement, codes)
    noise = rng.laplace(alpha_cont, cont.shape)
    new_cont = np.clip(cont + noise, 0.0, 1.0)
    return new_codes, new_cont


def _condition_block(model: GanModel, codes, cont) -> np.ndarray | None:
    if not model.config.conditional:
        return None
    return np.concatenate([one_hot_codes(codes, model.n_classes),
                           np.asarray(cont, dtype=np.float64)], axis=1)


# ----------------------------------------------------------------------
# network forwards
# ----------------------------------------------------------------------
def _mlp_forward(store: ParamStore, x: Tensor, n_hidden: int,
                 slope: float) -> Tensor:
    for i in range(n_hidden):
        x = T.leaky_relu(T.add(T.matmul(x, store[f"W{i}"]), store[f"b{i}"]),
                         slope)
    return T.add(T.matmul(x, store["W_out"]), store["b_out"])


def _gen_forward(model: GanModel, z: np.ndarray, cond: np.ndarray | None) -> Tensor:
    if z.shape[1] != model.config.latent_dim:
        raise ShapeError(f"latent width {z.shape[1]} != "
                         f"{model.config.latent_dim}")
    inp = z if cond is None else np.concatenate([z, cond], axis=1)
    out = _mlp_forward(model.gen, Tensor(inp), len(model.config.gen_sizes),
                       model.config.leaky_slope)
    return T.sigmoid(out)


def _disc_logits(model: GanModel, x: Tensor, cond: np.ndarray | None) -> Tensor:
    if x.shape[1] != model.feature_dim:
        raise ShapeError(f"feature width {x.shape[1]} != {model.feature_dim}")
    if cond is not None:
        x = T.concat_cols([x, Tensor(cond)])
    return _mlp_forward(model.disc, x, len(model.config.disc_sizes),
                        model.config.leaky_slope)


def generate(model: GanModel, z: np.ndarray, codes=None, cont=None) -> np.ndarray:
    """Synthesize rows; outputs lie in (0, 1).  Deterministic in its inputs."""
    z = np.asarray(z, dtype=np.float64)
    cond = _condition_block(model, codes, cont) if model.config.conditional \
        else None
    with _both_frozen(model):
        return _gen_forward(model, z, cond).data


def discriminate(model: GanModel, rows: np.ndarray, codes=None,
                 cont=None) -> np.ndarray:
    """Per-row realness scores in (0, 1)."""
    rows = np.asarray(rows, dtype=np.float64)
    cond = _condition_block(model, codes, cont) if model.config.conditional \
        else None
    with _both_frozen(model):
        logits = _disc_logits(model, Tensor(rows), cond)
    return 1.0 / (1.0 + np.exp(-logits.data[:, 0]))


@contextmanager
def _both_frozen(model: GanModel):
    model.gen.freeze()
    model.disc.freeze()
    try:
        yield
    finally:
        model.gen.unfreeze()
        model.disc.unfreeze()


# ----------------------------------------------------------------------
# losses
# ----------------------------------------------------------------------
def _disc_loss(model: GanModel, x_real: np.ndarray, fake: Tensor,
               cond: np.ndarray | None) -> Tensor:
    s_real = _disc_logits(model, Tensor(x_real), cond)
    s_fake = _disc_logits(model, fake, cond)
    # -mean[log D(real) + log(1 - D(fake))], via softplus on logits
    return T.add(T.tmean(T.softplus(T.mul(s_real, -1.0))),
                 T.tmean(T.softplus(s_fake)))


def _gen_adv_loss(model: GanModel, s_fake: Tensor) -> Tensor:
    if model.config.saturating:
        # literal minimax term: minimize log(1 - D(fake))
        return T.mul(T.tmean(T.softplus(s_fake)), -1.0)
    return T.tmean(T.softplus(T.mul(s_fake, -1.0)))


def gan_losses(model: GanModel, x_real: np.ndarray, z: np.ndarray,
               codes=None, cont=None, rng: RngState | None = None):
    """Evaluate (L_D, L_G_adv, L_privacy) for one batch, without updates.

    Conditions are obfuscated with the model's configured levels, drawing
    from ``rng``; the same ``z`` feeds both generator passes.
    """
    x_real = np.asarray(x_real, dtype=np.float64)
    if x_real.shape[0] == 0:
        raise DataError("empty batch")
    cfg = model.config
    with _both_frozen(model):
        if cfg.conditional:
            if rng is None:
                raise ValueError("a conditional model needs an rng for "
                                 "obfuscation")
            codes = np.asarray(codes, dtype=np.int64)
            cont = np.asarray(cont, dtype=np.float64)
            codes_obf, cont_obf = obfuscate(codes, cont, cfg.alpha_cat,
                                            cfg.alpha_cont, model.n_classes,
                                            rng)
            cond_obf = _condition_block(model, codes_obf, cont_obf)
            cond_orig = _condition_block(model, codes, cont)
        else:
            cond_obf = cond_orig = None
        fake = _gen_forward(model, z, cond_obf)
        l_d = _disc_loss(model, x_real, fake, cond_obf)
        l_adv = _gen_adv_loss(model, _disc_logits(model, fake, cond_obf))
        if cfg.conditional and cfg.privacy_weight > 0:
            base = _gen_forward(model, z, cond_orig)
            l_priv = T.mul(T.mse(fake, base), cfg.privacy_weight)
        else:
            l_priv = Tensor(np.asarray(0.0))
    return l_d.item(), l_adv.item(), l_priv.item()


# ----------------------------------------------------------------------
# training
# ----------------------------------------------------------------------
def _fit_conditions(model: GanModel, dataset: EncodedDataset) -> None:
    cols = list(model.config.cond_cols)
    model.class_names = list(dataset.class_names)
    model.class_counts = np.array(
        [(dataset.y == c).sum() for c in range(dataset.n_classes)],
        dtype=np.int64)
    model.cond_pools = [
        np.ascontiguousarray(dataset.X[dataset.y == c][:, cols])
        for c in range(dataset.n_classes)]


def train(model: GanModel, dataset: EncodedDataset, rng: RngState) -> GanLosses:
    """Alternate one discriminator and one generator Adam step per batch."""
    cfg = model.config
    X, y = dataset.X, dataset.y
    if X.shape[0] == 0:
        raise DataError("empty dataset")
    if X.shape[1] != model.feature_dim:
        raise ShapeError(f"dataset has {X.shape[1]} features, model expects "
                         f"{model.feature_dim}")
    if X.min() < 0.0 or X.max() > 1.0:
        raise DataError("features must be scaled to [0, 1] before GAN training")
    cond_cols = None
    if cfg.conditional:
        if dataset.n_classes != model.n_classes:
            raise DataError(f"dataset has {dataset.n_classes} classes, model "
                            f"expects {model.n_classes}")
        _fit_conditions(model, dataset)
        cond_cols = list(cfg.cond_cols)

    opt_d = Adam(model.disc, lr=cfg.learning_rate, beta1=cfg.beta1,
                 beta2=cfg.beta2)
    opt_g = Adam(model.gen, lr=cfg.learning_rate, beta1=cfg.beta1,
                 beta2=cfg.beta2)
    losses = GanLosses()

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(X.shape[0])
        n_batches = 0
        for start in range(0, len(order), cfg.batch_size):
            sel = order[start:start + cfg.batch_size]
            try:
                d_val, g_val, p_val = _train_batch(
                    model, X[sel], y[sel], cond_cols, opt_d, opt_g, rng)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}, batch {n_batches}: "
                                   f"{exc}") from exc
            losses.batch_disc.append(d_val)
            losses.batch_gen.append(g_val)
            losses.batch_privacy.append(p_val)
            n_batches += 1
        losses.batches_per_epoch.append(n_batches)
        tail = slice(len(losses.batch_disc) - n_batches, None)
        losses.disc.append(float(np.mean(losses.batch_disc[tail])))
        losses.gen.append(float(np.mean(losses.batch_gen[tail])))
        losses.privacy.append(float(np.mean(losses.batch_privacy[tail])))
    return losses


def _train_batch(model, x_batch, y_batch, cond_cols, opt_d, opt_g,
                 rng: RngState):
    cfg = model.config
    z = rng.normal((x_batch.shape[0], cfg.latent_dim))
    if cfg.conditional:
        cont = x_batch[:, cond_cols]
        codes_obf, cont_obf = obfuscate(y_batch, cont, cfg.alpha_cat,
                                        cfg.alpha_cont, model.n_classes, rng)
        cond_obf = _condition_block(model, codes_obf, cont_obf)
        cond_orig = _condition_block(model, y_batch, cont)
    else:
        cond_obf = cond_orig = None

    # discriminator step: generator frozen so no gradient reaches it
    model.gen.freeze()
    try:
        fake = _gen_forward(model, z, cond_obf)
        l_d = _disc_loss(model, x_batch, fake, cond_obf)
        model.disc.zero_grad()
        l_d.backward()
        opt_d.step()
    finally:
        model.gen.unfreeze()

    # generator step: discriminator frozen
    model.disc.freeze()
    try:
        fake = _gen_forward(model, z, cond_obf)
        l_adv = _gen_adv_loss(model, _disc_logits(model, fake, cond_obf))
        if cfg.conditional and cfg.privacy_weight > 0:
            base = _gen_forward(model, z, cond_orig)
            l_priv = T.mul(T.mse(fake, base), cfg.privacy_weight)
            total = T.add(l_adv, l_priv)
        else:
            l_priv = None
            total = l_adv
        model.gen.zero_grad()
        total.backward()
        opt_g.step()
    finally:
        model.disc.unfreeze()
    return l_d.item(), l_adv.item(), 0.0 if l_priv is None else l_priv.item()


# ----------------------------------------------------------------------
# sampling and diagnostics
# ----------------------------------------------------------------------
def _resolve_class_spec(model: GanModel, n, class_spec) -> list[tuple[int, int]]:
    if model.class_counts is None:
        raise DataError("model has not been trained; no class statistics")
    if class_spec == "match":
        if n is None:
            raise ValueError("total count n is required with class_spec='match'")
        total = int(model.class_counts.sum())
        shares = model.class_counts / total
        counts = np.floor(shares * n).astype(int)
        remainder = n - counts.sum()
        # largest fractional parts get the leftover rows
        frac = shares * n - counts
        for idx in np.argsort(-frac, kind="stable")[:remainder]:
            counts[idx] += 1
        return [(c, int(k)) for c, k in enumerate(counts) if k > 0]
    resolved = []
    for key, count in class_spec.items():
        if isinstance(key, str):
            if model.class_names is None or key not in model.class_names:
                raise DataError(f"class {key!r} absent from training data")
            idx = model.class_names.index(key)
        else:
            idx = int(key)
            if not 0 <= idx < model.n_classes:
                raise DataError(f"class index {idx} absent from training data")
        if count < 0:
            raise ValueError("class counts must be nonnegative")
        if count > 0 and model.cond_pools[idx].shape[0] == 0:
            raise DataError(f"class {key!r} has no training rows to "
                            "condition on")
        resolved.append((idx, int(count)))
    return sorted(resolved)


def sample_synthetic(model: GanModel, n=None, class_spec="match",
                     rng: RngState | None = None):
    """Draw labeled synthetic rows.

    ``class_spec`` is either "match" (empirical class mix over ``n`` rows)
    or a mapping class -> count.  Continuous conditions are bootstrapped
    from the training rows of the requested class, then obfuscated exactly
    as during training.
    """
    if not model.config.conditional:
        raise DataError("sampling by class requires a conditional model")
    cfg = model.config
    plan = _resolve_class_spec(model, n, class_spec)
    xs, ys = [], []
    for class_idx, count in plan:
        if count == 0:
            continue
        pool = model.cond_pools[class_idx]
        picks = rng.integers(pool.shape[0], (count,)) if pool.shape[0] else \
            np.zeros(0, dtype=int)
        cont = pool[picks]
        codes = np.full(count, class_idx, dtype=np.int64)
        codes_obf, cont_obf = obfuscate(codes, cont, cfg.alpha_cat,
                                        cfg.alpha_cont, model.n_classes, rng)
        z = rng.normal((count, cfg.latent_dim))
        xs.append(generate(model, z, codes_obf, cont_obf))
        ys.append(codes)
    if not xs:
        return np.zeros((0, model.feature_dim)), np.zeros(0, dtype=np.int64)
    return np.concatenate(xs), np.concatenate(ys)


def condition_sensitivity(model: GanModel, n_draws: int,
                          rng: RngState) -> float:
    """Mean MSE between obfuscated- and original-condition outputs.

    Fresh conditions are drawn from the training pools; the same latent
    batch feeds both passes.  This is the quantity the privacy penalty
    minimizes during training.
    """
    if not model.config.conditional or model.class_counts is None:
        raise DataError("sensitivity needs a trained conditional model")
    cfg = model.config
    total = int(model.class_counts.sum())
    probs = model.class_counts / total
    cum = np.cumsum(probs)
    u = rng.uniform((n_draws,))
    codes = np.searchsorted(cum, u).clip(0, model.n_classes - 1).astype(np.int64)
    cont = np.zeros((n_draws, len(cfg.cond_cols)))
    for c in range(model.n_classes):
        mask = codes == c
        if not mask.any():
            continue
        pool = model.cond_pools[c]
        cont[mask] = pool[rng.integers(pool.shape[0], (int(mask.sum()),))]
    codes_obf, cont_obf = obfuscate(codes, cont, cfg.alpha_cat, cfg.alpha_cont,
                                    model.n_classes, rng)
    z = rng.normal((n_draws, cfg.latent_dim))
    a = generate(model, z, codes_obf, cont_obf)
    b = generate(model, z, codes, cont)
    return float(np.mean((a - b) ** 2))


def discriminator_accuracy(model: GanModel, dataset: EncodedDataset,
                           rng: RngState, n: int = 512) -> float:
    """Accuracy of D on a fresh half-real/half-synthetic mix."""
    n_real = min(n // 2, dataset.X.shape[0])
    picks = rng.integers(dataset.X.shape[0], (n_real,))
    x_real = dataset.X[picks]
    y_real = dataset.y[picks]
    cols = list(model.config.cond_cols)
    x_fake, y_fake = sample_synthetic(
        model, n=n_real, class_spec="match", rng=rng)
    s_real = discriminate(model, x_real, y_real, x_real[:, cols])
    s_fake = discriminate(model, x_fake, y_fake, x_fake[:, cols])
    hits = (s_real > 0.5).sum() + (s_fake <= 0.5).sum()
    return float(hits) / (len(s_real) + len(s_fake))


def histogram_overlap(real: np.ndarray, synthetic: np.ndarray,
                      bins: int = 20) -> np.ndarray:
    """Per-feature intersection of normalized histograms over [0, 1]."""
    real = np.asarray(real, dtype=np.float64)
    synthetic = np.asarray(synthetic, dtype=np.float64)
    if real.ndim != 2 or synthetic.ndim != 2 or \
            real.shape[1] != synthetic.shape[1]:
        raise ShapeError(f"feature counts differ: {real.shape} vs "
                         f"{synthetic.shape}")
    edges = np.linspace(0.0, 1.0, bins + 1)
    out = np.empty(real.shape[1])
    for j in range(real.shape[1]):
        p, _ = np.histogram(np.clip(real[:, j], 0, 1), bins=edges)
        q, _ = np.histogram(np.clip(synthetic[:, j], 0, 1), bins=edges)
        out[j] = np.minimum(p / max(1, p.sum()), q / max(1, q.sum())).sum()
    return out


# ----------------------------------------------------------------------
# checkpoints
# ----------------------------------------------------------------------
_CKPT_VERSION = 1


def save_gan(model: GanModel, path) -> None:
    meta = {
        "format": "threatlens-gan",
        "version": _CKPT_VERSION,
        "config": asdict(model.config),
        "feature_dim": model.feature_dim,
        "n_classes": model.n_classes,
        "class_names": model.class_names,
        "gen_names": model.gen.names(),
        "disc_names": model.disc.names(),
        "fitted": model.cond_pools is not None,
    }
    arrays = {"meta": np.frombuffer(json.dumps(meta, sort_keys=True).encode(),
                                    dtype=np.uint8)}
    for k, t in model.gen.items():
        arrays[f"gen/{k}"] = t.data
    for k, t in model.disc.items():
        arrays[f"disc/{k}"] = t.data
    if model.cond_pools is not None:
        arrays["class_counts"] = model.class_counts
        for c, pool in enumerate(model.cond_pools):
            arrays[f"pool/{c}"] = pool
    np.savez(path, **arrays)


def load_gan(path) -> GanModel:
    with np.load(path) as z:
        meta = json.loads(bytes(z["meta"].tobytes()).decode())
        if meta.get("format") != "threatlens-gan":
            raise DataError(f"{path} is not a GAN checkpoint")
        cfg_dict = dict(meta["config"])
        for key in ("gen_sizes", "disc_sizes", "cond_cols"):
            cfg_dict[key] = tuple(cfg_dict[key])
        model = GanModel(feature_dim=meta["feature_dim"],
                         n_classes=meta["n_classes"],
                         config=GanConfig(**cfg_dict), rng=RngState(0),
                         class_names=meta["class_names"])
        model.gen.load_state_dict({k: z[f"gen/{k}"] for k in meta["gen_names"]})
        model.disc.load_state_dict(
            {k: z[f"disc/{k}"] for k in meta["disc_names"]})
        if meta["fitted"]:
            model.class_counts = z["class_counts"]
            model.cond_pools = [z[f"pool/{c}"]
                                for c in range(meta["n_classes"])]
    return model
