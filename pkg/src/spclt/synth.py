"""Seeded synthetic fixture datasets."""
from __future__ import annotations

import numpy as np

from .dataio import Dataset
from .errors import ConfigurationError


def sinusoid(n: int, t: int, d: int, classes: int, seed: int, noise: float = 0.1) -> Dataset:
    """Class c oscillates at (c + 1) cycles per series; amplitude and phase vary per instance and dimension."""
    if n < classes or classes < 1 or t < 2 or d < 1:
        raise ConfigurationError("sinusoid needs n >= classes >= 1, t >= 2, d >= 1")
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % classes
    rng.shuffle(labels)
    time = np.linspace(0.0, 1.0, t)
    freq = (labels + 1.0)[:, None, None]
    phase = rng.uniform(0, 2 * np.pi, size=(n, 1, d))
    amp = rng.uniform(0.5, 1.5, size=(n, 1, d))
    data = amp * np.sin(2 * np.pi * freq * time[None, :, None] + phase)
    data += noise * rng.standard_normal((n, t, d))
    return Dataset(name=f"sinusoid-n{n}-t{t}-d{d}-c{classes}-s{seed}", data=data, labels=labels,
                   label_names=[f"c{k}" for k in range(classes)])


def blobs(n: int, t: int, d: int, classes: int, seed: int, spread: float = 0.3) -> Dataset:
    """Each class is a smooth random-walk template; instances add Gaussian noise around it."""
    if n < classes or classes < 1 or t < 2 or d < 1:
        raise ConfigurationError("blobs needs n >= classes >= 1, t >= 2, d >= 1")
    rng = np.random.default_rng(seed)
    templates = np.cumsum(rng.standard_normal((classes, t, d)), axis=1) / np.sqrt(t)
    labels = np.arange(n) % classes
    rng.shuffle(labels)
    data = templates[labels] + spread * rng.standard_normal((n, t, d))
    return Dataset(name=f"blobs-n{n}-t{t}-d{d}-c{classes}-s{seed}", data=data, labels=labels,
                   label_names=[f"c{k}" for k in range(classes)])


GENERATORS = {"sinusoid": sinusoid, "blobs": blobs}


def generate(kind: str, n: int, t: int, d: int, classes: int, seed: int) -> Dataset:
    try:
        gen = GENERATORS[kind]
    except KeyError:
        raise ConfigurationError(f"unknown synthetic kind {kind!r}") from None
    return gen(n, t, d, classes, seed)
