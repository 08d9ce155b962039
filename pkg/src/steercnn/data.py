"""Synthetic classification tasks: motifs placed at random group transforms."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .group import build_stabilizer, element
from .steer import transport

__all__ = ["SyntheticTask", "default_motifs", "random_element"]


def _orbit_key(m: np.ndarray, group) -> bytes:
    """Canonical form of a pattern up to stabilizer transforms and translation."""
    pts = np.argwhere(m > 0)
    keys = []
    for h in range(group.order):
        moved = pts @ group.point_map(h).T
        moved = moved - moved.min(axis=0)
        keys.append(np.array(sorted(map(tuple, moved))).tobytes())
    return min(keys)


def default_motifs(group, n_classes: int, size: int = 3, seed: int = 0) -> list[np.ndarray]:
    """Random 0/1 patterns of shape size^n, pairwise inequivalent under G."""
    g = build_stabilizer(group) if isinstance(group, str) else group
    rng = np.random.default_rng(seed)
    seen, motifs = set(), []
    for _ in range(10000):
        if len(motifs) == n_classes:
            break
        m = (rng.random((size,) * g.n) < 0.5).astype(np.float64)
        if m.sum() == 0:
            continue
        key = _orbit_key(m, g)
        if key in seen:
            continue
        seen.add(key)
        motifs.append(m)
    if len(motifs) < n_classes:
        raise ValueError(f"could not find {n_classes} inequivalent motifs of size {size}")
    return motifs


def random_element(group, window: int, rng: np.random.Generator):
    c = (window - 1) // 2
    return element(group, int(rng.integers(group.order)), tuple(rng.integers(-c, c + 1, group.n)))


@dataclass
class SyntheticTask:
    group: str
    window: int = 9
    n_classes: int = 2
    seed: int = 0
    noise: float = 0.1
    motif_size: int = 3
    motifs: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        g = build_stabilizer(self.group)
        if self.window % 2 != 1 or self.window < self.motif_size:
            raise ValueError("window must be odd and hold the motif")
        if not self.motifs:
            self.motifs = default_motifs(g, self.n_classes, self.motif_size, self.seed)
        if len(self.motifs) != self.n_classes:
            raise ValueError("need one motif per class")

    def _canvas(self, motif: np.ndarray) -> np.ndarray:
        n = motif.ndim
        canvas = np.zeros((self.window,) * n)
        lo = (self.window - motif.shape[0]) // 2
        canvas[(slice(lo, lo + motif.shape[0]),) * n] = motif
        return canvas

    def sample(self, count: int, seed: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Returns x of shape (count, 1, W, ..., W) and integer labels."""
        g = build_stabilizer(self.group)
        rng = np.random.default_rng(self.seed + 1 if seed is None else seed)
        canvases = [self._canvas(m) for m in self.motifs]
        xs = np.empty((count, 1) + (self.window,) * g.n)
        ys = rng.integers(self.n_classes, size=count)
        for i, y in enumerate(ys):
            moved, _ = transport(random_element(g, self.window, rng), canvases[y], g.n, "cyclic")
            xs[i, 0] = moved + rng.uniform(-self.noise, self.noise, moved.shape)
        return xs, ys

    @classmethod
    def from_json(cls, obj: dict) -> "SyntheticTask":
        known = {"group", "window", "n_classes", "seed", "noise", "motif_size"}
        return cls(**{k: v for k, v in obj.items() if k in known})

