"""Conditional implicit radiance field: positional encoding and the two
code-conditioned MLP decoders (density and view-dependent color).

Both decoders are 5-block residual MLPs with hidden width 128. Every block
receives the positional encoding of the query points through its own
linear map, merged into the hidden state by per-channel mean pooling,
i.e. ``h <- (h + inject(extra)) / 2``. The color decoder additionally
merges the density decoder's block-3 features at block 3 and the raw view
direction at blocks 4 and 5. Density head is softplus (strictly positive),
color head is sigmoid (RGB in [0, 1]).
"""

from __future__ import annotations

import math
from typing import Dict, Optional, Tuple

import numpy as np

from objrf.tape import Tensor, concat, tensor

HIDDEN = 128
FEATURE_TAP_BLOCK = 3
DIR_BLOCKS = (4, 5)


def posenc(x: Tensor, n_freq: int = 6) -> Tensor:
    """NeRF-style encoding: concat of sin/cos(2^i * pi * x), i in [0, n_freq).

    Input [N, 3] -> output [N, 2 * 3 * n_freq]. Raw coordinates are not
    appended (config flag ``n_freq`` only controls the frequency count).
    """
    if n_freq < 1:
        raise ValueError("n_freq must be >= 1")
    parts = []
    for i in range(n_freq):
        scaled = x * float((2.0 ** i) * math.pi)
        parts.append(scaled.sin())
        parts.append(scaled.cos())
    return concat(parts, axis=1)


def posenc_dim(n_freq: int = 6) -> int:
    return 2 * 3 * n_freq


def _linear_init(rng: np.random.Generator, fan_in: int, fan_out: int, scale: float, dtype) -> np.ndarray:
    return (rng.standard_normal((fan_in, fan_out)) * scale / math.sqrt(fan_in)).astype(dtype)


class _Params:
    """Mixin holding named parameter tensors."""

    prefix = ""

    def __init__(self):
        self._params: Dict[str, Tensor] = {}

    def _add(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor(value, requires_grad=True)
        self._params[f"{self.prefix}.{name}"] = t
        return t

    def named_parameters(self) -> Dict[str, Tensor]:
        return dict(self._params)

    def load_state(self, state: Dict[str, np.ndarray]) -> None:
        for name, t in self._params.items():
            if name not in state:
                raise KeyError(f"checkpoint missing tensor {name!r}")
            arr = np.asarray(state[name], dtype=t.data.dtype)
            if arr.shape != t.data.shape:
                raise ValueError(f"shape mismatch for {name!r}: {arr.shape} vs {t.data.shape}")
            t.data = arr.copy()

    def set_requires_grad(self, flag: bool) -> None:
        for t in self._params.values():
            t.requires_grad = flag


class _ResBlock:
    """Pre-activation residual block: h + W2 relu(W1 relu(h))."""

    def __init__(self, owner: _Params, name: str, rng: np.random.Generator, dtype):
        self.w1 = owner._add(f"{name}.w1", _linear_init(rng, HIDDEN, HIDDEN, math.sqrt(2.0), dtype))
        self.b1 = owner._add(f"{name}.b1", np.zeros(HIDDEN, dtype=dtype))
        self.w2 = owner._add(f"{name}.w2", _linear_init(rng, HIDDEN, HIDDEN, math.sqrt(2.0), dtype))
        self.b2 = owner._add(f"{name}.b2", np.zeros(HIDDEN, dtype=dtype))

    def __call__(self, h: Tensor) -> Tensor:
        u = h.relu() @ self.w1 + self.b1
        u = u.relu() @ self.w2 + self.b2
        return h + u


class _Inject:
    """Linear map for side inputs, merged by per-channel mean pooling."""

    def __init__(self, owner: _Params, name: str, rng: np.random.Generator, fan_in: int, dtype):
        self.w = owner._add(f"{name}.w", _linear_init(rng, fan_in, HIDDEN, 1.0, dtype))
        self.b = owner._add(f"{name}.b", np.zeros(HIDDEN, dtype=dtype))

    def __call__(self, h: Tensor, extra: Tensor) -> Tensor:
        return (h + (extra @ self.w + self.b)) * 0.5


class ShapeDecoder(_Params):
    """Maps (shape code, points) to non-negative densities.

    Also exposes the block-3 intermediate features consumed by the color
    decoder. The network is pointwise: no mixing across the N points.
    """

    prefix = "shape_dec"

    def __init__(self, code_dim: int = 128, n_freq: int = 6, rng: Optional[np.random.Generator] = None, dtype=np.float32):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.code_dim = code_dim
        self.n_freq = n_freq
        pe = posenc_dim(n_freq)
        self.w_in = self._add("in.w", _linear_init(rng, code_dim, HIDDEN, 1.0, dtype))
        self.b_in = self._add("in.b", np.zeros(HIDDEN, dtype=dtype))
        self.pe_inj = [_Inject(self, f"block{i}.pe", rng, pe, dtype) for i in range(1, 6)]
        self.blocks = [_ResBlock(self, f"block{i}", rng, dtype) for i in range(1, 6)]
        self.w_out = self._add("head.w", _linear_init(rng, HIDDEN, 1, 1.0, dtype))
        self.b_out = self._add("head.b", np.zeros(1, dtype=dtype))

    def __call__(self, code: Tensor, points: Tensor) -> Tuple[Tensor, Tensor]:
        n = points.shape[0]
        pe = posenc(points, self.n_freq)
        h = (code.reshape(1, self.code_dim) @ self.w_in + self.b_in).broadcast_to((n, HIDDEN))
        features = None
        for i, (inj, block) in enumerate(zip(self.pe_inj, self.blocks), start=1):
            h = inj(h, pe)
            h = block(h)
            if i == FEATURE_TAP_BLOCK:
                features = h
        density = (h @ self.w_out + self.b_out).softplus().reshape(n)
        return density, features


class ColorDecoder(_Params):
    """Maps (appearance code, shape features, points, view dirs) to RGB."""

    prefix = "color_dec"

    def __init__(self, code_dim: int = 128, n_freq: int = 6, rng: Optional[np.random.Generator] = None, dtype=np.float32):
        super().__init__()
        rng = rng or np.random.default_rng(1)
        self.code_dim = code_dim
        self.n_freq = n_freq
        pe = posenc_dim(n_freq)
        self.w_in = self._add("in.w", _linear_init(rng, code_dim, HIDDEN, 1.0, dtype))
        self.b_in = self._add("in.b", np.zeros(HIDDEN, dtype=dtype))
        self.pe_inj = [_Inject(self, f"block{i}.pe", rng, pe, dtype) for i in range(1, 6)]
        self.feat_inj = _Inject(self, f"block{FEATURE_TAP_BLOCK}.feat", rng, HIDDEN, dtype)
        self.dir_inj = {i: _Inject(self, f"block{i}.dir", rng, 3, dtype) for i in DIR_BLOCKS}
        self.blocks = [_ResBlock(self, f"block{i}", rng, dtype) for i in range(1, 6)]
        self.w_out = self._add("head.w", _linear_init(rng, HIDDEN, 3, 1.0, dtype))
        self.b_out = self._add("head.b", np.zeros(3, dtype=dtype))

    def __call__(self, code: Tensor, features: Tensor, points: Tensor, dirs: Tensor) -> Tensor:
        n = points.shape[0]
        pe = posenc(points, self.n_freq)
        h = (code.reshape(1, self.code_dim) @ self.w_in + self.b_in).broadcast_to((n, HIDDEN))
        for i, (inj, block) in enumerate(zip(self.pe_inj, self.blocks), start=1):
            h = inj(h, pe)
            if i == FEATURE_TAP_BLOCK:
                h = self.feat_inj(h, features)
            if i in self.dir_inj:
                h = self.dir_inj[i](h, dirs)
            h = block(h)
        return (h @ self.w_out + self.b_out).sigmoid()


class RadianceField:
    """A decoder pair bound to one object's shape/appearance codes."""

    def __init__(self, shape_dec: ShapeDecoder, color_dec: ColorDecoder, shape_code: Tensor, appearance_code: Tensor):
        self.shape_dec = shape_dec
        self.color_dec = color_dec
        self.shape_code = shape_code
        self.appearance_code = appearance_code

    def query(self, points: Tensor, dirs: Tensor) -> Tuple[Tensor, Tensor]:
        """Densities [N] and colors [N, 3] at NOCS points with view dirs."""
        density, features = self.shape_dec(self.shape_code, points)
        rgb = self.color_dec(self.appearance_code, features, points, dirs)
        return density, rgb

    def query_density(self, points: Tensor) -> Tensor:
        density, _ = self.shape_dec(self.shape_code, points)
        return density


def make_decoders(code_dim: int = 128, n_freq: int = 6, seed: int = 0, dtype=np.float32) -> Tuple[ShapeDecoder, ColorDecoder]:
    rng = np.random.default_rng(seed)
    return (
        ShapeDecoder(code_dim, n_freq, rng, dtype),
        ColorDecoder(code_dim, n_freq, rng, dtype),
    )
