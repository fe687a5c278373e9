"""Differentiable substrate: torch tensors and autograd plus the pieces around them.

What lives here is what torch does not give us in the shape we need:
deterministic setup, Xavier/zero initialisation, a central finite-difference
gradient checker that never touches autograd, Adam construction, and the
``MVP1`` parameter checkpoint format.
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np
import torch
from torch import nn

from .container import PARAMS_MAGIC
from .errors import CorruptHeaderError, GraphError, MissingFileError, TruncatedPayloadError


def set_determinism(seed: int) -> None:
    """Single-threaded, deterministic kernels, seeded torch RNG."""
    torch.set_num_threads(1)
    torch.use_deterministic_algorithms(True)
    torch.manual_seed(seed)


def expect_shape(x: torch.Tensor, shape: tuple, op: str) -> None:
    """Raise :class:`GraphError` unless ``x`` matches ``shape`` (``None`` = any size)."""
    ok = x.dim() == len(shape) and all(s is None or s == d for s, d in zip(shape, x.shape))
    if not ok:
        want = "x".join("*" if s is None else str(s) for s in shape)
        raise GraphError(f"{op}: expected shape {want}, got {tuple(x.shape)}")


def xavier_init_(module: nn.Module) -> nn.Module:
    """Uniform Xavier for weight tensors with >= 2 dims, zeros for biases."""
    for name, p in module.named_parameters():
        if name.endswith("bias"):
            nn.init.zeros_(p)
        elif p.dim() >= 2:
            nn.init.xavier_uniform_(p)
    return module


def param_store(module: nn.Module) -> "OrderedDict[str, nn.Parameter]":
    return OrderedDict(module.named_parameters())


def make_adam(params, lr: float, betas=(0.9, 0.999), eps: float = 1e-8) -> torch.optim.Adam:
    return torch.optim.Adam(params, lr=lr, betas=betas, eps=eps, foreach=False)


def adam_step(opt: torch.optim.Optimizer) -> None:
    opt.step()


@dataclass
class GradCheckReport:
    errors: dict[str, float]
    tol: float
    failures: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)


def grad_check(
    fn: Callable[[], torch.Tensor],
    params: Mapping[str, torch.Tensor],
    tol: float = 1e-4,
    step: float = 1e-5,
) -> GradCheckReport:
    """Compare autograd gradients of scalar ``fn()`` with central differences.

    ``params`` are float64 leaf tensors read by ``fn``. The error for each
    named tensor is ``max|analytic - numeric| / max(max|numeric|, max|analytic|)``.
    """
    names = list(params)
    tensors = [params[n] for n in names]
    for n, t in zip(names, tensors):
        if t.dtype != torch.float64:
            raise GraphError(f"grad_check: parameter {n!r} must be float64, got {t.dtype}")
        t.requires_grad_(True)
    out = fn()
    if out.numel() != 1:
        raise GraphError("grad_check: function must return a scalar")
    analytic = torch.autograd.grad(out, tensors, allow_unused=True)
    report = GradCheckReport({}, tol)
    with torch.no_grad():
        for n, t, a in zip(names, tensors, analytic):
            a = torch.zeros_like(t) if a is None else a.detach().clone()
            if not torch.all(torch.isfinite(a)):
                report.errors[n] = float("inf")
                report.failures.append(n)
                continue
            numeric = torch.zeros_like(t)
            flat = t.view(-1)
            num_flat = numeric.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + step
                f_plus = float(fn())
                flat[i] = orig - step
                f_minus = float(fn())
                flat[i] = orig
                num_flat[i] = (f_plus - f_minus) / (2 * step)
            scale = max(float(numeric.abs().max()), float(a.abs().max()), 1e-12)
            err = float((a - numeric).abs().max()) / scale
            if not np.isfinite(err):
                err = float("inf")
            report.errors[n] = err
            if not err <= tol:
                report.failures.append(n)
    return report


def save_checkpoint(module_or_params, path) -> None:
    """``MVP1`` | count | per param: name length, UTF-8 name, rank, dims, float32 data (all LE)."""
    params = (
        module_or_params.state_dict() if isinstance(module_or_params, nn.Module) else module_or_params
    )
    chunks = [PARAMS_MAGIC, struct.pack("<I", len(params))]
    for name, value in params.items():
        arr = np.asarray(value.detach().cpu().numpy(), dtype="<f4")  # keeps 0-d shape
        enc = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(enc)) + enc)
        chunks.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> "OrderedDict[str, torch.Tensor]":
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(path)
    raw = path.read_bytes()
    if raw[:4] != PARAMS_MAGIC:
        raise CorruptHeaderError(f"{path}: bad magic {raw[:4]!r}")
    pos = 4

    def take(n):
        nonlocal pos
        if pos + n > len(raw):
            raise TruncatedPayloadError(f"{path}: truncated at byte {pos}")
        chunk = raw[pos : pos + n]
        pos += n
        return chunk

    (count,) = struct.unpack("<I", take(4))
    out: OrderedDict[str, torch.Tensor] = OrderedDict()
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank)) if rank else ()
        n = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(take(4 * n), dtype="<f4").reshape(dims)
        out[name] = torch.from_numpy(arr.copy())
    if pos != len(raw):
        raise CorruptHeaderError(f"{path}: {len(raw) - pos} trailing bytes")
    return out
