"""Dense tensor ops with reverse-mode gradients, plus a finite-difference checker.

Tensors are ``torch.Tensor`` values; torch's autograd records the graph and
runs the backward pass. The functions here fix the op vocabulary the model is
written against, validate shapes with messages that name the op, and keep all
randomness on explicitly passed generators.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import torch
import torch.nn.functional as F

DEFAULT_DTYPE = torch.float32
ORACLE_DTYPE = torch.float64


class ShapeError(ValueError):
    """Raised when an op receives operands of incompatible shapes."""


class NonFiniteError(FloatingPointError):
    """Raised when a NaN or Inf shows up where a finite value is required."""


def _shape_error(op: str, a, b, why: str = "") -> ShapeError:
    msg = f"{op}: incompatible shapes {tuple(a)} and {tuple(b)}"
    return ShapeError(f"{msg} ({why})" if why else msg)


def make_generator(seed: int) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(int(seed))
    return g


def tensor(data, dtype=DEFAULT_DTYPE, requires_grad: bool = False) -> torch.Tensor:
    return torch.tensor(data, dtype=dtype, requires_grad=requires_grad)


def check_finite(x: torch.Tensor, what: str = "tensor") -> torch.Tensor:
    if not bool(torch.isfinite(x).all()):
        raise NonFiniteError(f"non-finite values in {what}")
    return x


# ---------------------------------------------------------------------------
# elementwise / structural ops


def matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.dim() < 1 or b.dim() < 1 or a.shape[-1] != b.shape[-2 if b.dim() > 1 else 0]:
        raise _shape_error("matmul", a.shape, b.shape, "inner dimensions differ")
    return a @ b


def _broadcastable(op: str, a: torch.Tensor, b: torch.Tensor) -> None:
    try:
        torch.broadcast_shapes(a.shape, b.shape)
    except RuntimeError:
        raise _shape_error(op, a.shape, b.shape, "not broadcastable") from None


def add(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    _broadcastable("add", a, b)
    return a + b


def mul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    _broadcastable("mul", a, b)
    return a * b


def scale(a: torch.Tensor, c: float) -> torch.Tensor:
    return a * c


def reshape(a: torch.Tensor, shape: Sequence[int]) -> torch.Tensor:
    shape = tuple(shape)
    known = math.prod(s for s in shape if s != -1)
    n = a.numel()
    if (-1 not in shape and known != n) or (-1 in shape and (known == 0 or n % known)):
        raise _shape_error("reshape", a.shape, shape, "element count differs")
    return a.reshape(shape)


def transpose(a: torch.Tensor, dim0: int = -2, dim1: int = -1) -> torch.Tensor:
    return a.transpose(dim0, dim1)


def concat(parts: Sequence[torch.Tensor], dim: int = -1) -> torch.Tensor:
    ref = parts[0]
    d = dim % ref.dim()
    for p in parts[1:]:
        if p.dim() != ref.dim() or any(
            p.shape[i] != ref.shape[i] for i in range(ref.dim()) if i != d
        ):
            raise _shape_error("concat", ref.shape, p.shape, f"mismatch off axis {dim}")
    return torch.cat(list(parts), dim=dim)


def slice_(a: torch.Tensor, dim: int, start: int, stop: int) -> torch.Tensor:
    if not 0 <= start <= stop <= a.shape[dim]:
        raise ShapeError(f"slice: range [{start}, {stop}) outside axis {dim} of {tuple(a.shape)}")
    return a.narrow(dim, start, stop - start)


def embedding(ids: torch.Tensor, table: torch.Tensor) -> torch.Tensor:
    if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= table.shape[0]):
        raise ShapeError(
            f"embedding: ids outside [0, {table.shape[0]}) for table {tuple(table.shape)}"
        )
    return F.embedding(ids, table)


def softmax(x: torch.Tensor, dim: int = -1) -> torch.Tensor:
    return torch.softmax(x, dim=dim)


def log_softmax(x: torch.Tensor, dim: int = -1) -> torch.Tensor:
    return torch.log_softmax(x, dim=dim)


def logsumexp(x: torch.Tensor, dim: int = -1, keepdim: bool = False) -> torch.Tensor:
    return torch.logsumexp(x, dim=dim, keepdim=keepdim)


def layer_norm(x, weight=None, bias=None, eps: float = 1e-5) -> torch.Tensor:
    d = x.shape[-1]
    for p in (weight, bias):
        if p is not None and tuple(p.shape) != (d,):
            raise _shape_error("layer_norm", x.shape, p.shape, "affine size != last dim")
    return F.layer_norm(x, (d,), weight, bias, eps)


def batch_norm(
    x: torch.Tensor,
    running_mean: torch.Tensor,
    running_var: torch.Tensor,
    weight: torch.Tensor | None = None,
    bias: torch.Tensor | None = None,
    training: bool = True,
    momentum: float = 0.1,
    eps: float = 1e-5,
    mask: torch.Tensor | None = None,
) -> torch.Tensor:
    """Batch norm over ``[B, C, T]`` with optional ``[B, T]`` validity mask.

    In training mode statistics come from valid positions only and the running
    buffers are updated in place (unbiased variance, as torch does).
    """
    if x.dim() != 3 or running_mean.shape[0] != x.shape[1]:
        raise _shape_error("batch_norm", x.shape, running_mean.shape, "expects [B, C, T]")
    if mask is None:
        mask = torch.ones(x.shape[0], x.shape[2], dtype=torch.bool)
    elif tuple(mask.shape) != (x.shape[0], x.shape[2]):
        raise _shape_error("batch_norm", x.shape, mask.shape, "mask must be [B, T]")
    m = mask.unsqueeze(1).to(x.dtype)
    if training:
        n = m.sum()
        mean = (x * m).sum(dim=(0, 2)) / n
        var = (((x - mean[None, :, None]) ** 2) * m).sum(dim=(0, 2)) / n
        with torch.no_grad():
            unbiased = var * n / max(float(n) - 1.0, 1.0)
            running_mean.mul_(1 - momentum).add_(momentum * mean.detach())
            running_var.mul_(1 - momentum).add_(momentum * unbiased.detach())
    else:
        mean, var = running_mean, running_var
    y = (x - mean[None, :, None]) / torch.sqrt(var[None, :, None] + eps)
    if weight is not None:
        y = y * weight[None, :, None]
    if bias is not None:
        y = y + bias[None, :, None]
    return y


def depthwise_conv1d(x: torch.Tensor, weight: torch.Tensor, bias=None) -> torch.Tensor:
    """Same-padded depthwise conv: x ``[B, C, T]``, weight ``[C, 1, K]``, K odd."""
    if x.dim() != 3 or weight.dim() != 3 or weight.shape[0] != x.shape[1] or weight.shape[1] != 1:
        raise _shape_error("depthwise_conv1d", x.shape, weight.shape, "expects [B,C,T] and [C,1,K]")
    k = weight.shape[2]
    if k % 2 == 0:
        raise ShapeError(f"depthwise_conv1d: kernel size {k} must be odd")
    return F.conv1d(x, weight, bias, padding=k // 2, groups=x.shape[1])


def pointwise_conv1d(x: torch.Tensor, weight: torch.Tensor, bias=None) -> torch.Tensor:
    """Kernel-1 conv: x ``[B, C_in, T]``, weight ``[C_out, C_in, 1]``."""
    if x.dim() != 3 or weight.dim() != 3 or weight.shape[1] != x.shape[1] or weight.shape[2] != 1:
        raise _shape_error(
            "pointwise_conv1d", x.shape, weight.shape, "expects [B,Cin,T] and [Cout,Cin,1]"
        )
    return F.conv1d(x, weight, bias)


def conv2d(x: torch.Tensor, weight: torch.Tensor, bias=None, stride: int = 1) -> torch.Tensor:
    """Unpadded 2-D conv: x ``[B, C_in, H, W]``, weight ``[C_out, C_in, kh, kw]``."""
    if x.dim() != 4 or weight.dim() != 4 or weight.shape[1] != x.shape[1]:
        raise _shape_error(
            "conv2d", x.shape, weight.shape, "expects [B,Cin,H,W] and [Cout,Cin,kh,kw]"
        )
    if x.shape[2] < weight.shape[2] or x.shape[3] < weight.shape[3]:
        raise _shape_error("conv2d", x.shape, weight.shape, "input smaller than kernel")
    return F.conv2d(x, weight, bias, stride=stride)


def glu(x: torch.Tensor, dim: int = -1) -> torch.Tensor:
    if x.shape[dim] % 2:
        raise ShapeError(f"glu: axis {dim} of {tuple(x.shape)} has odd size")
    a, b = x.chunk(2, dim=dim)
    return a * torch.sigmoid(b)


def swish(x: torch.Tensor) -> torch.Tensor:
    return x * torch.sigmoid(x)


# when grad_check is probing, relu records its active-unit pattern here
_relu_trace: list[torch.Tensor] | None = None


def relu(x: torch.Tensor) -> torch.Tensor:
    if _relu_trace is not None:
        _relu_trace.append((x > 0).detach().clone())
    return torch.relu(x)


def sigmoid(x: torch.Tensor) -> torch.Tensor:
    return torch.sigmoid(x)


def dropout(
    x: torch.Tensor, p: float, training: bool, generator: torch.Generator | None
) -> torch.Tensor:
    if not training or p <= 0.0:
        return x
    if p >= 1.0:
        return torch.zeros_like(x)
    keep = torch.rand(x.shape, generator=generator, dtype=x.dtype) >= p
    return x * keep.to(x.dtype) / (1.0 - p)


def masked_fill(x: torch.Tensor, mask: torch.Tensor, value: float) -> torch.Tensor:
    _broadcastable("masked_fill", x, mask)
    return x.masked_fill(mask, value)


def mean(x: torch.Tensor, dim: int, keepdim: bool = False) -> torch.Tensor:
    return x.mean(dim=dim, keepdim=keepdim)


def cross_entropy(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Mean cross-entropy of ``[N, V]`` logits against ``[N]`` class ids."""
    if logits.dim() != 2 or targets.shape != logits.shape[:1]:
        raise _shape_error("cross_entropy", logits.shape, targets.shape, "expects [N,V] and [N]")
    logp = log_softmax(logits, dim=-1)
    return -logp.gather(1, targets.long().unsqueeze(1)).mean()


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradReport:
    """Per-parameter comparison of analytic and central-difference gradients.

    ``max_rel_error`` divides each tensor's largest coordinate discrepancy by
    ``scale``, the largest gradient magnitude (analytic or numeric) over every
    checked coordinate, so tensors whose gradient is ~0 stay meaningful.
    ``kinks`` counts sampled coordinates skipped because the +-eps step moved a
    ReLU across zero; a central difference there is not a derivative estimate.
    """

    max_abs_error: dict[str, float] = field(default_factory=dict)
    max_rel_error: dict[str, float] = field(default_factory=dict)
    analytic: dict[str, list[float]] = field(default_factory=dict)
    numeric: dict[str, list[float]] = field(default_factory=dict)
    kinks: dict[str, int] = field(default_factory=dict)
    scale: float = 0.0

    @property
    def worst_rel(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    @property
    def worst_abs(self) -> float:
        return max(self.max_abs_error.values(), default=0.0)


def _traced(fn: Callable[[], torch.Tensor]) -> tuple[float, list[torch.Tensor]]:
    global _relu_trace
    _relu_trace = []
    try:
        value = fn().item()
        return value, _relu_trace
    finally:
        _relu_trace = None


def _same_pattern(a: list[torch.Tensor], b: list[torch.Tensor]) -> bool:
    return len(a) == len(b) and all(torch.equal(x, y) for x, y in zip(a, b))


def grad_check(
    fn: Callable[[], torch.Tensor],
    params: dict[str, torch.Tensor] | Sequence[torch.Tensor],
    eps: float = 1e-3,
    max_coords: int = 64,
    generator: torch.Generator | None = None,
) -> GradReport:
    """Compare autograd gradients of scalar ``fn()`` against central differences.

    ``params`` are leaf tensors that ``fn`` closes over; they are perturbed in
    place and restored. Tensors with more than ``max_coords`` elements are
    checked on a random sample of ``max_coords`` coordinates; sampled
    coordinates that straddle a ReLU kink are replaced by further samples.
    """
    if not 1e-5 <= eps <= 1e-2:
        raise ValueError(f"grad_check: eps={eps} outside [1e-5, 1e-2]")
    if not isinstance(params, dict):
        params = {f"p{i}": p for i, p in enumerate(params)}
    generator = generator or make_generator(0)

    for p in params.values():
        p.grad = None
    out = fn()
    if out.numel() != 1:
        raise ShapeError(f"grad_check: function returned shape {tuple(out.shape)}, not a scalar")
    check_finite(out.detach(), "grad_check function value")
    grads = torch.autograd.grad(out, list(params.values()), allow_unused=True)

    report = GradReport()
    with torch.no_grad():
        for (name, p), g in zip(params.items(), grads):
            g = torch.zeros_like(p) if g is None else g
            n = p.numel()
            order = torch.randperm(n, generator=generator).tolist() if n > max_coords else range(n)
            flat = p.view(-1)
            ana, num, kinks = [], [], 0
            for i in order:
                if len(ana) == max_coords:
                    break
                orig = flat[i].item()
                flat[i] = orig + eps
                hi = flat[i].item()
                fp, pat_hi = _traced(fn)
                flat[i] = orig - eps
                lo = flat[i].item()
                fm, pat_lo = _traced(fn)
                flat[i] = orig
                if not (math.isfinite(fp) and math.isfinite(fm)):
                    raise NonFiniteError(f"grad_check: non-finite value perturbing {name}[{i}]")
                if not _same_pattern(pat_hi, pat_lo):
                    kinks += 1
                    continue
                # step actually stored after rounding to the tensor dtype
                num.append((fp - fm) / (hi - lo))
                ana.append(g.reshape(-1)[i].item())
            a = torch.tensor(ana, dtype=torch.float64)
            b = torch.tensor(num, dtype=torch.float64)
            report.max_abs_error[name] = (a - b).abs().max().item() if ana else 0.0
            report.analytic[name] = ana
            report.numeric[name] = num
            report.kinks[name] = kinks
            if ana:
                report.scale = max(report.scale, a.abs().max().item(), b.abs().max().item())
    for name, err in report.max_abs_error.items():
        report.max_rel_error[name] = err / report.scale if report.scale > 0 else err
    return report
