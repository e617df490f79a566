"""Architecture configurations and their closed-form parameter counts."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

from ..errors import InvalidConfig
from ..spectral import ModeSpec, k_max

MODEL_KINDS = ("fno", "ffno", "mgfno", "deeponet")


def _tuple(v):
    return None if v is None else tuple(int(x) for x in v)


class _ConfigMixin:
    def to_dict(self) -> dict:
        return json.loads(json.dumps(dataclasses.asdict(self)))

    def config_hash(self) -> str:
        blob = json.dumps({"kind": self.kind, "config": self.to_dict()}, sort_keys=True,
                          separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


@dataclass
class FnoConfig(_ConfigMixin):
    """FNO3d: lifting P, ``n_layers`` Fourier layers, projection Q.

    Each Fourier layer is ``dropout(gelu(spectral(v) + bypass(v)))``.
    With ``w = width``, ``(kx, ky, kz)`` the modes after clamping to ``grid``
    and ``k = bypass_kernel``::

        param_count = (in*w + w)
                    + n_layers * (2*w*w*kx*ky*kz + w*w*k**3 + w)
                    + (w*out + out)
    """

    in_channels: int = 9
    out_channels: int = 3
    width: int = 64
    n_layers: int = 4
    modes: tuple = (40, 40, 12)
    dropout_rate: float = 0.1
    bypass_kernel: int = 1
    grid: tuple | None = (80, 80, 44)
    kind = "fno"

    def __post_init__(self):
        self.modes = _tuple(self.modes)
        self.grid = _tuple(self.grid)
        if self.n_layers < 1:
            raise InvalidConfig("n_layers must be >= 1")
        if self.width < 1 or self.in_channels < 1 or self.out_channels < 1:
            raise InvalidConfig("channel counts must be positive")

    def resolved_modes(self) -> ModeSpec:
        m = ModeSpec.of(self.modes)
        return m.clamp(self.grid) if self.grid is not None else m

    def closed_form_param_count(self) -> int:
        w, k = self.width, self.bypass_kernel
        kx, ky, kz = self.resolved_modes().as_tuple()
        layer = 2 * w * w * kx * ky * kz + w * w * k**3 + w
        return (self.in_channels * w + w) + self.n_layers * layer + (w * self.out_channels + self.out_channels)


@dataclass
class FfnoConfig(_ConfigMixin):
    """Factorized FNO: ``v0 = gelu(P u)``, residual factorized layers, 2-layer head.

    With ``d = d_model`` and ``(m1, m2, m3)`` the modes after clamping::

        param_count = (in*d + d)
                    + n_layers * (2*d*d*(m1 + m2 + m3) + 2*(d*d + d))
                    + (d*d + d) + (d*out + out)
    """

    in_channels: int = 9
    out_channels: int = 3
    d_model: int = 64
    n_layers: int = 4
    modes: tuple = (40, 40, 12)
    grid: tuple | None = (80, 80, 44)
    kind = "ffno"

    def __post_init__(self):
        self.modes = _tuple(self.modes)
        self.grid = _tuple(self.grid)
        if self.n_layers < 1:
            raise InvalidConfig("n_layers must be >= 1")

    def resolved_modes(self) -> tuple:
        m = ModeSpec.of(self.modes)
        return (m.clamp(self.grid) if self.grid is not None else m).as_tuple()

    def closed_form_param_count(self) -> int:
        d = self.d_model
        layer = 2 * d * d * sum(self.resolved_modes()) + 2 * (d * d + d)
        return (self.in_channels * d + d) + self.n_layers * layer + (d * d + d) + (d * self.out_channels + self.out_channels)


def _default_mg_inner():
    return FnoConfig(in_channels=10, modes=(20, 20, 12), grid=(20, 20, 22))


@dataclass
class MgfnoConfig(_ConfigMixin):
    """Patchwise FNO with a shared inner network and a global T1 context channel.

    ``param_count = inner.closed_form_param_count()`` (weights are shared
    across patches). ``inner.grid`` is forced to ``patch_shape``.
    """

    grid: tuple = (80, 80, 44)
    patch_shape: tuple = (20, 20, 22)
    global_downsample_factor: int = 4
    inner: FnoConfig = field(default_factory=_default_mg_inner)
    kind = "mgfno"

    def __post_init__(self):
        self.grid = _tuple(self.grid)
        self.patch_shape = _tuple(self.patch_shape)
        if isinstance(self.inner, dict):
            self.inner = FnoConfig(**self.inner)
        self.inner.grid = self.patch_shape
        for n, p in zip(self.grid, self.patch_shape):
            if p < 1 or n % p:
                raise InvalidConfig(f"patch shape {self.patch_shape} does not divide grid {self.grid}")
        f = self.global_downsample_factor
        if f < 1 or any(n % f for n in self.grid):
            raise InvalidConfig(f"downsample factor {f} does not evenly divide grid {self.grid}")
        if self.inner.in_channels != 10:
            raise InvalidConfig("MG-FNO inner network takes 9 grid channels + 1 context channel")

    @property
    def n_patches(self) -> int:
        n = 1
        for g, p in zip(self.grid, self.patch_shape):
            n *= g // p
        return n

    def closed_form_param_count(self) -> int:
        return self.inner.closed_form_param_count()


@dataclass
class DeepOnetConfig(_ConfigMixin):
    """Branch/trunk operator network.

    The CNN branch sees the volume as a ``[D, W, H]`` image (axial slices as
    channels): ``len(conv_channels)`` blocks of conv-BN-ReLU-pool (max, max,
    avg, ...), then dense layers ``dense_hidden`` with ReLU and dropout, then a
    linear map to ``embedding_dim``. Each of the five scalar branches is an
    MLP ``1 -> scalar_hidden -> embedding_dim``. The trunk is an MLP
    ``3 -> trunk_hidden -> embedding_dim``. The fused branch vector is split
    into ``out_components`` blocks and contracted with the trunk blocks.

    ``param_count`` is the sum of the usual closed forms:
    conv ``cin*cout*k*k + cout`` and batch norm ``2*cout`` per block, and
    ``fan_in*fan_out + fan_out`` per dense layer (see ``closed_form_param_count``).
    """

    grid: tuple = (80, 80, 44)
    embedding_dim: int = 300
    out_components: int = 3
    conv_channels: tuple = (32, 64, 128)
    kernel: int = 3
    dense_hidden: tuple = (128,)
    scalar_hidden: tuple = (64,)
    trunk_hidden: tuple = (300, 300, 300)
    n_scalars: int = 5
    dropout_rate: float = 0.1
    masked_only: bool = True
    kind = "deeponet"

    def __post_init__(self):
        self.grid = _tuple(self.grid)
        for name in ("conv_channels", "dense_hidden", "scalar_hidden", "trunk_hidden"):
            setattr(self, name, _tuple(getattr(self, name)))
        if self.embedding_dim % self.out_components:
            raise InvalidConfig("embedding_dim must split evenly across output components")
        w, h = self.pooled_extent()
        if w < 1 or h < 1:
            raise InvalidConfig(f"grid {self.grid} too small for {len(self.conv_channels)} pooling stages")

    @property
    def basis_per_component(self) -> int:
        return self.embedding_dim // self.out_components

    def pooled_extent(self) -> tuple[int, int]:
        w, h = self.grid[0], self.grid[1]
        for _ in self.conv_channels:
            w, h = w // 2, h // 2
        return w, h

    def closed_form_param_count(self) -> int:
        def mlp(sizes):
            return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))

        k = self.kernel
        total = 0
        cin = self.grid[2]
        for cout in self.conv_channels:
            total += cin * cout * k * k + cout + 2 * cout
            cin = cout
        w, h = self.pooled_extent()
        p = self.embedding_dim
        total += mlp((cin * w * h,) + self.dense_hidden + (p,))
        total += self.n_scalars * mlp((1,) + self.scalar_hidden + (p,))
        total += mlp((3,) + self.trunk_hidden + (p,))
        return total


CONFIG_TYPES = {"fno": FnoConfig, "ffno": FfnoConfig, "mgfno": MgfnoConfig, "deeponet": DeepOnetConfig}


def config_from_dict(kind: str, d: dict):
    if kind not in CONFIG_TYPES:
        raise InvalidConfig(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")
    d = dict(d)
    if kind == "mgfno" and isinstance(d.get("inner"), dict):
        d["inner"] = FnoConfig(**d["inner"])
    try:
        return CONFIG_TYPES[kind](**d)
    except TypeError as exc:
        raise InvalidConfig(f"bad {kind} config: {exc}") from None


def full_config(kind: str):
    """Full-scale configurations for the 80x80x44 grid."""
    if kind not in CONFIG_TYPES:
        raise InvalidConfig(f"unknown model kind {kind!r}")
    return CONFIG_TYPES[kind]()


def toy_config(kind: str, grid=(16, 16, 8)):
    """Small configurations for desk-scale training on ``grid``."""
    grid = _tuple(grid)
    half = tuple(max(1, k_max(n) // 2 + 1) for n in grid)
    if kind == "fno":
        return FnoConfig(width=16, n_layers=4, modes=half, dropout_rate=0.0, grid=grid)
    if kind == "ffno":
        return FfnoConfig(d_model=16, n_layers=4, modes=half, grid=grid)
    if kind == "mgfno":
        patch = tuple(n // 2 if n % 2 == 0 and n >= 4 else n for n in grid)
        inner = FnoConfig(in_channels=10, width=16, n_layers=4,
                          modes=tuple(k_max(p) for p in patch), dropout_rate=0.0)
        return MgfnoConfig(grid=grid, patch_shape=patch, global_downsample_factor=4, inner=inner)
    if kind == "deeponet":
        return DeepOnetConfig(grid=grid, conv_channels=(8, 16, 32), dense_hidden=(64,),
                              scalar_hidden=(32,), trunk_hidden=(128, 128, 128),
                              embedding_dim=150, dropout_rate=0.0)
    raise InvalidConfig(f"unknown model kind {kind!r}")
