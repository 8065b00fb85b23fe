"""Binary weight archive shared by the inference engine and the trainer.

Layout (all integers little-endian):

    magic   4 bytes  b"SAAS"
    version u32      currently 1
    count   u32      number of tensors
    tensor records, each:
        name_len u32, name utf-8 bytes,
        rank u32, dims u32[rank],
        data f32[prod(dims)] little-endian

Network hyperparameters travel as reserved scalar tensors under ``meta/`` so
the file is self-describing.  Loading validates the architecture manifest
(every expected tensor present with the right shape, nothing unexpected),
finiteness, and that every convolution/projection kernel has spectral norm
(power-iteration estimate of the kernel flattened to 2-D) at most 1 + 1e-3.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass

import numpy as np

from .errors import MissingTensorError, WeightFormatError

MAGIC = b"SAAS"
VERSION = 1
SPECTRAL_TOLERANCE = 1e-3
NORM_KINDS = ("batch", "instance", "none")

_META_FIELDS = (
    "depth",
    "base_channels",
    "channel_cap",
    "attention_min_res",
    "norm_kind",
    "in_channels",
    "disc_base_channels",
    "has_disc",
)


@dataclass(frozen=True)
class NetworkArch:
    """Architecture hyperparameters recorded in weight-file metadata."""

    depth: int = 6
    base_channels: int = 64
    channel_cap: int = 512
    attention_min_res: int = 32
    norm_kind: str = "batch"
    in_channels: int = 3
    disc_base_channels: int = 64
    has_disc: bool = True

    def __post_init__(self):
        if self.depth < 2:
            raise ValueError("depth must be >= 2")
        if self.base_channels < 8 or self.base_channels % 8 != 0:
            raise ValueError("base_channels must be a positive multiple of 8")
        if self.disc_base_channels < 8 or self.disc_base_channels % 8 != 0:
            raise ValueError("disc_base_channels must be a positive multiple of 8")
        if self.norm_kind not in NORM_KINDS:
            raise ValueError(f"norm_kind must be one of {NORM_KINDS}")
        if self.attention_min_res < 1:
            raise ValueError("attention_min_res must be >= 1")

    def encoder_channels(self) -> list[int]:
        return [
            min(self.base_channels * (2**i), self.channel_cap) for i in range(self.depth)
        ]

    def discriminator_channels(self) -> list[int]:
        return [
            min(self.disc_base_channels * (2**i), self.channel_cap) for i in range(4)
        ]


@dataclass(frozen=True)
class ConvBlockSpec:
    """One conv-norm-activation stage; kernel size is fixed at 4."""

    name: str
    in_channels: int
    out_channels: int
    stride: int
    norm: str  # "batch" | "instance" | "none"
    activation: str  # "relu" | "leaky_relu" | "tanh" | "linear"
    transposed: bool = False
    attention: bool = False

    def __post_init__(self):
        if self.stride not in (1, 2):
            raise ValueError("stride must be 1 or 2")


def generator_blocks(arch: NetworkArch) -> list[ConvBlockSpec]:
    enc = arch.encoder_channels()
    blocks = []
    prev = arch.in_channels
    for i, ch in enumerate(enc, start=1):
        blocks.append(
            ConvBlockSpec(f"gen.enc{i}", prev, ch, 2, arch.norm_kind, "relu", False, True)
        )
        prev = ch
    for j in range(1, arch.depth):
        in_ch = enc[-1] if j == 1 else 2 * enc[arch.depth - j]
        out_ch = enc[arch.depth - j - 1]
        blocks.append(
            ConvBlockSpec(f"gen.dec{j}", in_ch, out_ch, 2, arch.norm_kind, "relu", True, True)
        )
    blocks.append(
        ConvBlockSpec("gen.out", 2 * enc[0], arch.in_channels, 2, "none", "tanh", True, False)
    )
    return blocks


def discriminator_blocks(arch: NetworkArch) -> list[ConvBlockSpec]:
    ch = arch.discriminator_channels()
    strides = (2, 2, 2, 1)
    blocks = []
    prev = arch.in_channels
    for i, (c, s) in enumerate(zip(ch, strides), start=1):
        blocks.append(
            ConvBlockSpec(
                f"disc.block{i}", prev, c, s, arch.norm_kind, "leaky_relu", False, True
            )
        )
        prev = c
    blocks.append(ConvBlockSpec("disc.final", prev, 1, 1, "none", "linear", False, False))
    return blocks


def _block_tensor_shapes(spec: ConvBlockSpec) -> dict[str, tuple[int, ...]]:
    k = 1 if spec.name == "disc.final" else 4
    if spec.transposed:
        conv_shape = (spec.in_channels, spec.out_channels, k, k)
    else:
        conv_shape = (spec.out_channels, spec.in_channels, k, k)
    shapes = {f"{spec.name}.conv.w": conv_shape}
    if spec.norm == "none":
        shapes[f"{spec.name}.conv.b"] = (spec.out_channels,)
    else:
        for stat in ("gamma", "beta", "running_mean", "running_var"):
            shapes[f"{spec.name}.norm.{stat}"] = (spec.out_channels,)
    if spec.attention:
        c = spec.out_channels
        shapes[f"{spec.name}.attn.wq"] = (c // 8, c)
        shapes[f"{spec.name}.attn.wk"] = (c // 8, c)
        shapes[f"{spec.name}.attn.wv"] = (c, c)
        shapes[f"{spec.name}.attn.mu"] = (1,)
    return shapes


def manifest_shapes(arch: NetworkArch) -> dict[str, tuple[int, ...]]:
    """Every tensor name the archive must contain, with its shape."""
    shapes: dict[str, tuple[int, ...]] = {}
    blocks = generator_blocks(arch)
    if arch.has_disc:
        blocks = blocks + discriminator_blocks(arch)
    for spec in blocks:
        shapes.update(_block_tensor_shapes(spec))
    for name in _META_FIELDS:
        shapes[f"meta/{name}"] = (1,)
    return shapes


def _meta_value(arch: NetworkArch, name: str) -> float:
    if name == "norm_kind":
        return float(NORM_KINDS.index(arch.norm_kind))
    if name == "has_disc":
        return 1.0 if arch.has_disc else 0.0
    return float(getattr(arch, name))


def arch_to_meta_tensors(arch: NetworkArch) -> dict[str, np.ndarray]:
    return {
        f"meta/{name}": np.array([_meta_value(arch, name)], dtype=np.float32)
        for name in _META_FIELDS
    }


def arch_from_meta_tensors(tensors: dict[str, np.ndarray]) -> NetworkArch:
    values = {}
    for name in _META_FIELDS:
        key = f"meta/{name}"
        if key not in tensors:
            raise MissingTensorError(f"weight archive is missing tensor {key!r}")
        values[name] = float(tensors[key][0])
    try:
        return NetworkArch(
            depth=int(values["depth"]),
            base_channels=int(values["base_channels"]),
            channel_cap=int(values["channel_cap"]),
            attention_min_res=int(values["attention_min_res"]),
            norm_kind=NORM_KINDS[int(values["norm_kind"])],
            in_channels=int(values["in_channels"]),
            disc_base_channels=int(values["disc_base_channels"]),
            has_disc=values["has_disc"] != 0.0,
        )
    except (ValueError, IndexError) as exc:
        raise WeightFormatError(f"invalid architecture metadata: {exc}") from exc


def splitmix64_unit_vector(size: int, seed: int = 0x5A175EED) -> np.ndarray:
    """Deterministic pseudo-random unit vector; identical across runtimes."""
    state = seed & 0xFFFFFFFFFFFFFFFF
    out = np.empty(size, dtype=np.float64)
    for i in range(size):
        state = (state + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
        z = z ^ (z >> 31)
        out[i] = (z >> 11) / float(1 << 53) - 0.5
    norm = np.linalg.norm(out)
    if norm == 0.0:
        out[0] = 1.0
        norm = 1.0
    return out / norm


def spectral_norm_estimate(kernel: np.ndarray, iters: int = 10) -> float:
    """Top singular value of the kernel flattened to (dim0, rest), by power iteration."""
    m = np.asarray(kernel, dtype=np.float64).reshape(kernel.shape[0], -1)
    v = splitmix64_unit_vector(m.shape[1])
    u = np.zeros(m.shape[0])
    for _ in range(iters):
        u = m @ v
        un = np.linalg.norm(u)
        if un == 0.0:
            return 0.0
        u /= un
        v = m.T @ u
        vn = np.linalg.norm(v)
        if vn == 0.0:
            return 0.0
        v /= vn
    return float(u @ (m @ v))


def is_spectral_constrained(name: str) -> bool:
    """Conv kernels and attention projections carry the spectral-norm bound."""
    return name.endswith(".conv.w") or name.rsplit(".", 1)[-1] in ("wq", "wk", "wv")


@dataclass(frozen=True, eq=False)
class GeneratorWeights:
    """Validated named-tensor archive plus its architecture metadata."""

    tensors: dict[str, np.ndarray]
    arch: NetworkArch

    def tensor(self, name: str) -> np.ndarray:
        try:
            return self.tensors[name]
        except KeyError:
            raise MissingTensorError(f"weight archive is missing tensor {name!r}") from None


def _validate(tensors: dict[str, np.ndarray], check_spectral: bool = True) -> GeneratorWeights:
    for name, arr in tensors.items():
        if not np.all(np.isfinite(arr)):
            raise WeightFormatError(f"tensor {name!r} contains non-finite values")
    arch = arch_from_meta_tensors(tensors)
    expected = manifest_shapes(arch)
    for name, shape in expected.items():
        if name not in tensors:
            raise MissingTensorError(f"weight archive is missing tensor {name!r}")
        if tuple(tensors[name].shape) != shape:
            raise WeightFormatError(
                f"tensor {name!r} has shape {tuple(tensors[name].shape)}, expected {shape}"
            )
    unexpected = set(tensors) - set(expected)
    if unexpected:
        raise WeightFormatError(f"unexpected tensors in archive: {sorted(unexpected)}")
    if check_spectral:
        for name, arr in tensors.items():
            if name.startswith("meta/") or not is_spectral_constrained(name):
                continue
            sigma = spectral_norm_estimate(arr)
            if sigma > 1.0 + SPECTRAL_TOLERANCE:
                raise WeightFormatError(
                    f"tensor {name!r} violates the spectral-norm bound: "
                    f"estimate {sigma:.6f} > 1 + {SPECTRAL_TOLERANCE}"
                )
    return GeneratorWeights(tensors=tensors, arch=arch)


def weights_from_tensors(
    tensors: dict[str, np.ndarray], check_spectral: bool = True
) -> GeneratorWeights:
    as_f32 = {k: np.ascontiguousarray(v, dtype=np.float32) for k, v in tensors.items()}
    return _validate(as_f32, check_spectral)


def write_tensor_archive(tensors: dict[str, np.ndarray], path) -> None:
    """Serialize a name->tensor map in the binary container format."""
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    buf.write(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        encoded = name.encode("utf-8")
        buf.write(struct.pack("<I", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def save_weights(weights: GeneratorWeights, path) -> None:
    write_tensor_archive(weights.tensors, path)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, count: int) -> bytes:
        if self.pos + count > len(self.data):
            raise WeightFormatError("weight archive is truncated")
        chunk = self.data[self.pos : self.pos + count]
        self.pos += count
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def read_tensor_archive(path) -> dict[str, np.ndarray]:
    """Parse the binary container; structural errors only, no manifest checks."""
    with open(path, "rb") as fh:
        raw = fh.read()
    reader = _Reader(raw)
    if reader.take(4) != MAGIC:
        raise WeightFormatError(f"{path}: bad magic; not a weight archive")
    version = reader.u32()
    if version != VERSION:
        raise WeightFormatError(f"{path}: unsupported format version {version}")
    count = reader.u32()
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        name_len = reader.u32()
        if name_len > 4096:
            raise WeightFormatError(f"{path}: implausible tensor name length {name_len}")
        try:
            name = reader.take(name_len).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise WeightFormatError(f"{path}: tensor name is not UTF-8") from exc
        rank = reader.u32()
        if rank > 8:
            raise WeightFormatError(f"{path}: implausible tensor rank {rank}")
        dims = struct.unpack(f"<{rank}I", reader.take(4 * rank)) if rank else ()
        size = int(np.prod(dims, dtype=np.int64)) if rank else 1
        if size < 0 or size > 1 << 30:
            raise WeightFormatError(f"{path}: implausible tensor size {size}")
        data = np.frombuffer(reader.take(4 * size), dtype="<f4").reshape(dims)
        if name in tensors:
            raise WeightFormatError(f"{path}: duplicate tensor {name!r}")
        tensors[name] = np.ascontiguousarray(data, dtype=np.float32)
    if reader.pos != len(raw):
        raise WeightFormatError(f"{path}: trailing bytes after last tensor")
    return tensors


def load_weights(path, check_spectral: bool = True) -> GeneratorWeights:
    return _validate(read_tensor_archive(path), check_spectral)


def apply_spectral_normalization(weights: GeneratorWeights, iters: int = 10) -> GeneratorWeights:
    """Divide every constrained kernel by its power-iteration top singular value.

    Idempotent within 1e-4: normalized kernels have estimate ~1 and dividing
    again changes nothing measurable.
    """
    out = {}
    for name, arr in weights.tensors.items():
        if not name.startswith("meta/") and is_spectral_constrained(name):
            sigma = spectral_norm_estimate(arr, iters=iters)
            if sigma > 0:
                arr = (arr.astype(np.float64) / sigma).astype(np.float32)
        out[name] = np.array(arr, dtype=np.float32)
    return _validate(out, check_spectral=False)
