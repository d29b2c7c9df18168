"""Piecewise-linear index from address to state-file page.

Each page contributes one training point: the integer value of its first
address and its page id. A model is fit so that every training point it
covers predicts within [page - 1, page]; since models are monotone, any
address stored in page q then predicts q - 1, q or q + 1 after clamping to
the pages the model covers. Upper layers index the first keys of the models
below them the same way until a layer fits in one page.
"""
from __future__ import annotations

import math
import struct
from bisect import bisect_right
from dataclasses import dataclass

PAGE_SIZE = 4096
_MODEL = struct.Struct(">32sddI")
MODEL_SIZE = _MODEL.size  # 52
MODELS_PER_PAGE = PAGE_SIZE // MODEL_SIZE


class EmptyInput(ValueError):
    pass


@dataclass(frozen=True)
class LinearModel:
    first_key: int
    slope: float
    intercept: float
    first_page: int

    def raw(self, key: int) -> float:
        return self.slope * float(key - self.first_key) + self.intercept

    def predict(self, key: int, last_page: int) -> int:
        # round half up, then clamp to the pages this model was trained on
        p = math.floor(self.raw(key) + 0.5)
        return min(max(p, self.first_page), last_page)


def fit_segments(xs: list[int], ys: list[int]) -> list[LinearModel]:
    """Greedy shrinking-cone segmentation.

    Each segment is anchored at (x0, y0 - 0.5) and grown while some slope
    keeps every point inside [y - 1, y]. The chosen slope is then re-checked
    with the exact float evaluation used at query time.
    """
    n = len(xs)
    if n == 0:
        raise EmptyInput("no training points")
    models = []
    i = 0
    while i < n:
        x0, b = xs[i], ys[i] - 0.5
        lo, hi = 0.0, math.inf
        j = i + 1
        while j < n:
            dx = float(xs[j] - x0)
            nlo = max(lo, (ys[j] - 1 - b) / dx)
            nhi = min(hi, (ys[j] - b) / dx)
            if nlo > nhi:
                break
            lo, hi = nlo, nhi
            j += 1
        slope = 0.0 if j == i + 1 else (lo + hi) / 2
        model = LinearModel(x0, slope, b, ys[i])
        k = i
        while k < j and ys[k] - 1 <= model.raw(xs[k]) <= ys[k]:
            k += 1
        j = max(k, i + 1)
        models.append(model)
        i = j
    return models


class LearnedIndex:
    def __init__(self, layers: list[list[LinearModel]], n_pages: int):
        self.layers = layers  # bottom layer first
        self.n_pages = n_pages
        self._firsts = [[m.first_key for m in layer] for layer in layers]

    @classmethod
    def train(cls, first_keys: list[bytes]) -> "LearnedIndex":
        """Train on the first address of every page, in page order."""
        if not first_keys:
            raise EmptyInput("no pages")
        xs = [int.from_bytes(k, "big") for k in first_keys]
        layers = [fit_segments(xs, list(range(len(xs))))]
        while len(layers[-1]) > MODELS_PER_PAGE:
            below = layers[-1]
            layers.append(fit_segments([m.first_key for m in below], list(range(len(below)))))
        return cls(layers, len(first_keys))

    def _last(self, layer: int, idx: int) -> int:
        """Last target id covered by model ``idx`` of ``layer``."""
        models = self.layers[layer]
        if idx + 1 < len(models):
            return models[idx + 1].first_page - 1
        return self.n_pages - 1 if layer == 0 else len(self.layers[layer - 1]) - 1

    def predict(self, addr: bytes) -> int:
        """Page id within one of the page actually holding ``addr``."""
        key = int.from_bytes(addr, "big")
        top = len(self.layers) - 1
        idx = max(bisect_right(self._firsts[top], key) - 1, 0)
        for layer in range(top, 0, -1):
            guess = self.layers[layer][idx].predict(key, self._last(layer, idx))
            firsts = self._firsts[layer - 1]
            # the model holding key is the last one starting at or before it
            idx = max(guess - 1, 0)
            for cand in (guess, guess + 1):
                if cand < len(firsts) and firsts[cand] <= key:
                    idx = cand
            if firsts[idx] > key and idx > 0:
                idx -= 1
        return self.layers[0][idx].predict(key, self._last(0, idx))

    @property
    def model_count(self) -> int:
        return len(self.layers[0])

    # -- file format -----------------------------------------------------

    def to_bytes(self) -> bytes:
        out = [struct.pack(">IB", self.n_pages, len(self.layers))]
        for layer in self.layers:
            out.append(struct.pack(">I", len(layer)))
            for m in layer:
                out.append(_MODEL.pack(m.first_key.to_bytes(32, "big"), m.slope, m.intercept, m.first_page))
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "LearnedIndex":
        n_pages, n_layers = struct.unpack_from(">IB", data, 0)
        off = 5
        layers = []
        for _ in range(n_layers):
            (count,) = struct.unpack_from(">I", data, off)
            off += 4
            layer = []
            for _ in range(count):
                fk, slope, icpt, fp = _MODEL.unpack_from(data, off)
                off += MODEL_SIZE
                layer.append(LinearModel(int.from_bytes(fk, "big"), slope, icpt, fp))
            layers.append(layer)
        if off != len(data):
            raise ValueError("trailing bytes in index file")
        return cls(layers, n_pages)
