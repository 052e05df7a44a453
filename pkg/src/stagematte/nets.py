"""Background-conditioned matting networks: teacher and two-stage student.

Both consume the camera image and the clean background plate; the teacher is
an encoder-decoder with skip connections, the student a low-resolution coarse
stage followed by a full-resolution residual refiner.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .raster import AlphaMask, DimensionError, Image


@dataclass(frozen=True)
class ConvLayer:
    name: str
    in_ch: int
    out_ch: int
    kernel: int = 3
    stride: int = 1
    activation: str = "relu"  # relu | sigmoid | linear


@dataclass(frozen=True)
class ArchSpec:
    role: str  # teacher | student
    layers: tuple

    def to_dict(self) -> dict:
        return {"role": self.role, "layers": [vars(l) for l in self.layers]}

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpec":
        return cls(role=d["role"], layers=tuple(ConvLayer(**l) for l in d["layers"]))

    def layer(self, name: str) -> ConvLayer:
        for l in self.layers:
            if l.name == name:
                return l
        raise KeyError(name)


def default_teacher_arch() -> ArchSpec:
    return ArchSpec(role="teacher", layers=(
        ConvLayer("enc1", 7, 16, stride=2),
        ConvLayer("enc2", 16, 32, stride=2),
        ConvLayer("enc3", 32, 64, stride=2),
        ConvLayer("mid", 64, 64),
        ConvLayer("dec2", 64 + 32, 32),
        ConvLayer("dec1", 32 + 16, 16),
        ConvLayer("dec0", 16 + 7, 16),
        ConvLayer("out", 16, 1, activation="sigmoid"),
    ))


def default_student_arch() -> ArchSpec:
    return ArchSpec(role="student", layers=(
        ConvLayer("c1", 7, 12),
        ConvLayer("c2", 12, 16),
        ConvLayer("c3", 16, 16),
        ConvLayer("c_out", 16, 1, activation="sigmoid"),
        ConvLayer("r1", 7, 12),
        ConvLayer("r2", 12, 12),
        ConvLayer("r_out", 12, 1, activation="linear"),
    ))


STUDENT_REFINER_LAYERS = ("r1", "r2", "r_out")


class ParamSet:
    """Named weight/bias tensors plus per-tensor Adam moment state."""

    def __init__(self, arch: ArchSpec, tensors: dict, adam_m=None, adam_v=None, step: int = 0):
        self.arch = arch
        self.tensors = tensors
        self.adam_m = adam_m or {k: np.zeros_like(v) for k, v in tensors.items()}
        self.adam_v = adam_v or {k: np.zeros_like(v) for k, v in tensors.items()}
        self.step = step

    def copy(self) -> "ParamSet":
        return ParamSet(self.arch,
                        {k: v.copy() for k, v in self.tensors.items()},
                        {k: v.copy() for k, v in self.adam_m.items()},
                        {k: v.copy() for k, v in self.adam_v.items()},
                        self.step)

    def count(self) -> int:
        return sum(v.size for v in self.tensors.values())

    def as_graph_tensors(self, trainable=None) -> dict:
        """Wrap each tensor for autodiff; `trainable` limits which get gradients."""
        out = {}
        for name, value in self.tensors.items():
            req = True if trainable is None else name in trainable
            out[name] = Tensor(value, requires_grad=req)
        return out


def init_params(arch: ArchSpec, seed: int) -> ParamSet:
    """Fan-in-scaled normal kernels, zero biases; deterministic per seed."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for layer in arch.layers:
        fan_in = layer.in_ch * layer.kernel * layer.kernel
        std = np.sqrt(2.0 / fan_in)
        tensors[f"{layer.name}.weight"] = rng.normal(
            0.0, std, size=(layer.out_ch, layer.in_ch, layer.kernel, layer.kernel)
        ).astype(ad.DTYPE)
        tensors[f"{layer.name}.bias"] = np.zeros(layer.out_ch, dtype=ad.DTYPE)
    return ParamSet(arch, tensors)


def _apply(layer: ConvLayer, graph: dict, x: Tensor) -> Tensor:
    pad = layer.kernel // 2
    y = ad.conv2d(x, graph[f"{layer.name}.weight"], graph[f"{layer.name}.bias"],
                  stride=layer.stride, pad=pad)
    if layer.activation == "relu":
        return ad.relu(y)
    if layer.activation == "sigmoid":
        return ad.sigmoid(y)
    return y


def input_stack(image: np.ndarray, background: np.ndarray) -> np.ndarray:
    """(N,H,W,3) image + background -> (N,H,W,7) with a |I-B| mean channel."""
    mad = np.abs(image - background).mean(axis=3, keepdims=True)
    return np.concatenate([image, background, mad], axis=3)


def teacher_graph(arch: ArchSpec, graph: dict, x: np.ndarray) -> Tensor:
    """Forward pass on a (N,H,W,7) input stack; returns (N,H,W,1) in (0,1)."""
    xin = ad.constant(x)
    e1 = _apply(arch.layer("enc1"), graph, xin)
    e2 = _apply(arch.layer("enc2"), graph, e1)
    e3 = _apply(arch.layer("enc3"), graph, e2)
    m = _apply(arch.layer("mid"), graph, e3)
    d2 = _apply(arch.layer("dec2"), graph, ad.concat_channels([ad.upsample_nearest(m, 2), e2]))
    d1 = _apply(arch.layer("dec1"), graph, ad.concat_channels([ad.upsample_nearest(d2, 2), e1]))
    d0 = _apply(arch.layer("dec0"), graph, ad.concat_channels([ad.upsample_nearest(d1, 2), xin]))
    return _apply(arch.layer("out"), graph, d0)


def student_graph(arch: ArchSpec, graph: dict, image: np.ndarray,
                  background: np.ndarray) -> tuple[Tensor, Tensor]:
    """Coarse (N,H/4,W/4,1) and refined (N,H,W,1) predictions."""
    h, w = image.shape[1], image.shape[2]
    img4 = _resize_nhwc(image, h // 4, w // 4)
    bg4 = _resize_nhwc(background, h // 4, w // 4)
    xc = ad.constant(input_stack(img4, bg4))
    c = _apply(arch.layer("c1"), graph, xc)
    c = _apply(arch.layer("c2"), graph, c)
    c = _apply(arch.layer("c3"), graph, c)
    coarse = _apply(arch.layer("c_out"), graph, c)

    up = ad.resize_bilinear(coarse, h, w)
    xr = ad.concat_channels([ad.constant(image), ad.constant(background), up])
    r = _apply(arch.layer("r1"), graph, xr)
    r = _apply(arch.layer("r2"), graph, r)
    residual = _apply(arch.layer("r_out"), graph, r)
    refined = ad.clamp01(ad.add(up, residual))
    return coarse, refined


def _resize_nhwc(x: np.ndarray, new_h: int, new_w: int) -> np.ndarray:
    return ad.resize_bilinear(ad.constant(x), new_h, new_w).data


def _to_batch(img: Image) -> np.ndarray:
    return img.data[None]


def forward_teacher(params: ParamSet, image: Image, background: Image) -> AlphaMask:
    if (image.height, image.width) != (background.height, background.width):
        raise DimensionError("image/background size mismatch")
    if image.height % 8 or image.width % 8:
        raise DimensionError(f"teacher needs dimensions divisible by 8, got "
                             f"{image.height}x{image.width}")
    x = input_stack(_to_batch(image), _to_batch(background))
    out = teacher_graph(params.arch, params.as_graph_tensors(trainable=()), x)
    return AlphaMask(out.data[0, :, :, 0])


def forward_student(params: ParamSet, image: Image, background: Image) -> tuple[AlphaMask, AlphaMask]:
    if (image.height, image.width) != (background.height, background.width):
        raise DimensionError("image/background size mismatch")
    if image.height % 4 or image.width % 4:
        raise DimensionError(f"student needs dimensions divisible by 4, got "
                             f"{image.height}x{image.width}")
    coarse, refined = student_graph(params.arch, params.as_graph_tensors(trainable=()),
                                    _to_batch(image), _to_batch(background))
    return AlphaMask(coarse.data[0, :, :, 0]), AlphaMask(refined.data[0, :, :, 0])


# --------------------------------------------------------------------------
# Optimizer

@dataclass
class AdamHyper:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params: ParamSet, grads: dict, hyper: AdamHyper) -> ParamSet:
    """One bias-corrected adaptive-moment update; advances the step counter."""
    t = params.step + 1
    for name, tensor in params.tensors.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(tensor)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for tensor {name!r}")
        m = params.adam_m[name]
        v = params.adam_v[name]
        m *= hyper.beta1
        m += (1 - hyper.beta1) * g
        v *= hyper.beta2
        v += (1 - hyper.beta2) * g * g
        m_hat = m / (1 - hyper.beta1**t)
        v_hat = v / (1 - hyper.beta2**t)
        tensor -= hyper.lr * m_hat / (np.sqrt(v_hat) + hyper.eps)
    params.step = t
    return params


# --------------------------------------------------------------------------
# Checkpoint container (deterministic: JSON header + raw float64 payload)

MAGIC = b"STAGEMATTE-CKPT1\n"


def save_checkpoint(params: ParamSet, path) -> None:
    path = Path(path)
    names = sorted(params.tensors)
    header = {
        "arch": params.arch.to_dict(),
        "step": params.step,
        "tensors": [{"name": n, "shape": list(params.tensors[n].shape),
                     "dtype": params.tensors[n].dtype.name} for n in names],
    }
    head = json.dumps(header, sort_keys=True).encode()
    with path.open("wb") as f:
        f.write(MAGIC)
        f.write(len(head).to_bytes(8, "little"))
        f.write(head)
        for group in (params.tensors, params.adam_m, params.adam_v):
            for n in names:
                arr = group[n]
                f.write(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes())


def load_checkpoint(path) -> ParamSet:
    path = Path(path)
    with path.open("rb") as f:
        if f.read(len(MAGIC)) != MAGIC:
            raise ValueError(f"not a checkpoint file: {path}")
        head_len = int.from_bytes(f.read(8), "little")
        header = json.loads(f.read(head_len))
        arch = ArchSpec.from_dict(header["arch"])
        groups = []
        for _ in range(3):
            group = {}
            for spec in header["tensors"]:
                shape = tuple(spec["shape"])
                dtype = np.dtype(spec.get("dtype", "float64"))
                count = int(np.prod(shape)) if shape else 1
                raw = f.read(count * dtype.itemsize)
                group[spec["name"]] = np.frombuffer(
                    raw, dtype=dtype.newbyteorder("<")).astype(dtype).reshape(shape)
            groups.append(group)
    return ParamSet(arch, groups[0], groups[1], groups[2], step=header["step"])
