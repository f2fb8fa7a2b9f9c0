"""Deterministic toy datasets shared by tests and the acceptance suite."""

import numpy as np

from threatlens.data import EncodedDataset, SequenceSet
from threatlens.rng import RngState


def gaussian_mixture_table(n_rows: int = 2000, seed: int = 42) -> EncodedDataset:
    """Two-class, two-feature Gaussian mixture, scaled into [0, 1].

    Class means are well separated so distribution matching is measurable:
    class a ~ N((0.30, 0.65), 0.06), class b ~ N((0.70, 0.35), 0.06).
    """
    rng = RngState(seed)
    half = n_rows // 2
    means = np.array([[0.30, 0.65], [0.70, 0.35]])
    y = np.array([0] * half + [1] * (n_rows - half), dtype=np.int64)
    noise = rng.normal((n_rows, 2)) * 0.06
    X = np.clip(means[y] + noise, 0.0, 1.0)
    order = rng.permutation(n_rows)
    X, y = X[order], y[order]
    return EncodedDataset(
        X=X, y=y, class_names=["a", "b"],
        feature_names=["f0", "f1"], feature_kinds=["continuous"] * 2,
        encoders={}, imputation={},
        scaler_min=np.zeros(2), scaler_max=np.ones(2),
        degenerate=np.zeros(2, dtype=bool))


def two_pattern_sequences(n_windows: int = 1000, window: int = 10,
                          n_features: int = 4, seed: int = 7,
                          signal_step: int = 4) -> SequenceSet:
    """Binary sequence task where one timestep carries the class signal.

    Every window is low-amplitude noise; at ``signal_step`` class 1 windows
    carry a bump on features 0-1 and class 0 windows a bump on features
    2-3.  The remaining steps are uninformative, which makes attention
    focus measurable.
    """
    rng = RngState(seed)
    X = rng.uniform((n_windows, window, n_features)) * 0.2 + 0.4
    y = np.array([i % 2 for i in range(n_windows)], dtype=np.int64)
    bump = 0.35
    for i in range(n_windows):
        if y[i] == 1:
            X[i, signal_step, 0] += bump
            X[i, signal_step, 1] += bump
        else:
            X[i, signal_step, 2] += bump
            X[i, signal_step, 3] += bump
    X = np.clip(X, 0.0, 1.0)
    order = rng.permutation(n_windows)
    return SequenceSet(windows=X[order], labels=y[order],
                       window=window, stride=1)


def write_mixture_csv(path, n_rows: int = 400, seed: int = 42,
                      missing_every: int | None = None) -> None:
    """CSV form of the mixture table for CLI round-trips."""
    ds = gaussian_mixture_table(n_rows, seed)
    lines = ["f0,f1,label"]
    for i in range(n_rows):
        f0 = repr(float(ds.X[i, 0]))
        if missing_every and i % missing_every == 0:
            f0 = ""
        lines.append(f"{f0},{ds.X[i, 1]!r},{ds.class_names[ds.y[i]]}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
