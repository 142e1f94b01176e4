"""Selective state-space scan.

Diagonal continuous system ``h' = A h + B x``, ``y = C h`` discretized with a
zero-order hold and evaluated as the time-varying recurrence

    h_t = a_bar_t * h_{t-1} + b_bar_t * x_t,   y_t = C_t . h_t,   h_0 = 0

where ``a_bar``, ``b_bar`` and ``C`` depend on the current input.  Arrays use
the layout ``(..., L, D, n)``: any leading batch axes, sequence length,
channels, state size.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .numerics import Param, Tensor, as_tensor, custom_op, exp, expm1, linear, neg, softplus


class ConfigError(ValueError):
    pass


def _check_negative(A: np.ndarray) -> None:
    if not np.all(np.asarray(A) < 0):
        raise ConfigError("state matrix A must be strictly negative on its diagonal")


def discretize(delta, A, B) -> tuple[np.ndarray, np.ndarray]:
    """Zero-order-hold discretization of a diagonal system.

    ``a_bar = exp(delta*A)`` and ``b_bar = (delta*A)^-1 (exp(delta*A) - 1) delta*B``,
    which for diagonal ``A`` reduces to ``expm1(delta*A) / A * B``.

    ``delta`` is ``(..., D)``, ``A`` is ``(D, n)``, ``B`` is ``(..., n)``; scalars
    broadcast.  Returns two ``(..., D, n)`` arrays.
    """
    A = np.asarray(A, dtype=np.float64)
    _check_negative(A)
    delta = np.asarray(delta, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.ndim == 2:
        dA = delta[..., None] * A
        Bb = B[..., None, :]
    else:
        dA = delta * A
        Bb = B
    return np.exp(dA), np.expm1(dA) / A * Bb


def inverse_softplus(y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    return y + np.log(-np.expm1(-y))


class SsmParams:
    """Learnable parameters of one selective SSM over ``D`` channels.

    ``A = -exp(a_log)`` keeps the diagonal strictly negative for any value of
    the underlying parameter.
    """

    def __init__(self, a_log: np.ndarray, w_b: np.ndarray, w_c: np.ndarray,
                 w_delta: np.ndarray, delta_bias: np.ndarray, prefix: str = "ssm") -> None:
        D, n = np.shape(a_log)
        if np.shape(w_b) != (D, n) or np.shape(w_c) != (D, n):
            raise ConfigError(f"W_B/W_C must be {(D, n)}, got {np.shape(w_b)} and {np.shape(w_c)}")
        if np.shape(w_delta) != (D, 1) or np.shape(delta_bias) != (D,):
            raise ConfigError("W_delta must be (D, 1) and delta_bias (D,)")
        self.a_log = Param(a_log, f"{prefix}.a_log")
        self.w_b = Param(w_b, f"{prefix}.W_B")
        self.w_c = Param(w_c, f"{prefix}.W_C")
        self.w_delta = Param(w_delta, f"{prefix}.W_delta")
        self.delta_bias = Param(delta_bias, f"{prefix}.delta_bias")

    @classmethod
    def init(cls, D: int, n: int, rng: np.random.Generator, prefix: str = "ssm") -> "SsmParams":
        a = np.tile(np.arange(1, n + 1, dtype=np.float64), (D, 1))
        bound = 1.0 / np.sqrt(D)
        dt = rng.uniform(1e-3, 0.1, size=D)
        return cls(np.log(a),
                   rng.uniform(-bound, bound, (D, n)),
                   rng.uniform(-bound, bound, (D, n)),
                   rng.uniform(-bound, bound, (D, 1)),
                   inverse_softplus(dt), prefix)

    @classmethod
    def from_A(cls, A: np.ndarray, w_b, w_c, w_delta, delta_bias, prefix: str = "ssm"):
        A = np.asarray(A, dtype=np.float64)
        _check_negative(A)
        return cls(np.log(-A), w_b, w_c, w_delta, delta_bias, prefix)

    @property
    def A(self) -> np.ndarray:
        return -np.exp(self.a_log.data)

    @property
    def D(self) -> int:
        return self.a_log.shape[0]

    @property
    def n(self) -> int:
        return self.a_log.shape[1]

    def params(self) -> list[Param]:
        return [self.a_log, self.w_b, self.w_c, self.w_delta, self.delta_bias]


def selective_params(x, params: SsmParams) -> tuple[Tensor, Tensor, Tensor]:
    """Input-dependent ``B``, ``C`` (``(..., L, n)``) and step ``delta`` (``(..., L, D)``).

    ``B`` and ``C`` are bias-free linear maps of ``x``; ``delta`` is
    ``softplus(delta_bias + w_delta . x_t)`` with the scalar projection
    broadcast over channels.
    """
    x = as_tensor(x)
    if x.shape[-1] != params.D:
        raise ConfigError(f"input has {x.shape[-1]} channels, SSM expects {params.D}")
    B = linear(x, params.w_b)
    C = linear(x, params.w_c)
    delta = softplus(linear(x, params.w_delta) + params.delta_bias)
    return B, C, delta


@dataclass
class ScanInputs:
    """Per-step coefficients of the recurrence, layout ``(..., L, D, n)`` / ``(..., L, n)``."""

    a_bar: np.ndarray
    b_bar_x: np.ndarray
    c: np.ndarray

    def __post_init__(self) -> None:
        self.a_bar = np.asarray(self.a_bar, dtype=np.float64)
        self.b_bar_x = np.asarray(self.b_bar_x, dtype=np.float64)
        self.c = np.asarray(self.c, dtype=np.float64)
        if self.a_bar.shape != self.b_bar_x.shape or self.a_bar.ndim < 3:
            raise ValueError(f"a_bar {self.a_bar.shape} and b_bar_x {self.b_bar_x.shape} "
                             "must share a (..., L, D, n) shape")
        lead, (L, D, n) = self.a_bar.shape[:-3], self.a_bar.shape[-3:]
        if self.c.shape != (*lead, L, n):
            raise ValueError(f"c has shape {self.c.shape}, expected {(*lead, L, n)}")

    @property
    def length(self) -> int:
        return self.a_bar.shape[-3]


# -- recurrence kernels (sequence axis first) --------------------------------

def _recurrence_sequential(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    h = np.empty_like(b)
    prev = np.zeros_like(b[0])
    for t in range(a.shape[0]):
        prev = a[t] * prev + b[t]
        h[t] = prev
    return h


def _recurrence_parallel(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Work-efficient (Blelloch) scan of the affine maps ``h -> a h + b``.

    Elements compose as ``(a2, b2) o (a1, b1) = (a1 a2, a2 b1 + b2)``; the
    sequence is padded to a power of two with the identity ``(1, 0)``.
    """
    L = a.shape[0]
    P = 1 << max(0, (L - 1).bit_length())
    A = np.ones((P, *a.shape[1:]))
    B = np.zeros((P, *b.shape[1:]))
    A[:L] = a
    B[:L] = b
    s = 1
    while s < P:
        right, left = slice(2 * s - 1, P, 2 * s), slice(s - 1, P, 2 * s)
        B[right] = A[right] * B[left] + B[right]
        A[right] = A[left] * A[right]
        s *= 2
    A[P - 1] = 1.0
    B[P - 1] = 0.0
    s = P // 2
    while s >= 1:
        right, left = slice(2 * s - 1, P, 2 * s), slice(s - 1, P, 2 * s)
        ta, tb = A[left].copy(), B[left].copy()
        A[left] = A[right]
        B[left] = B[right]
        B[right] = ta * B[right] + tb
        A[right] = A[right] * ta
        s //= 2
    # exclusive prefix applied to h_0 = 0 is B; one more step gives h_t
    return a * B[:L] + b


_KERNELS = {"sequential": _recurrence_sequential, "parallel": _recurrence_parallel}


def scan_states(inp: ScanInputs, impl: str = "sequential") -> np.ndarray:
    """All hidden states ``h_1..h_L``, shaped like ``inp.a_bar``."""
    try:
        kernel = _KERNELS[impl]
    except KeyError:
        raise ValueError(f"unknown scan implementation {impl!r}") from None
    a = np.ascontiguousarray(np.moveaxis(inp.a_bar, -3, 0))
    b = np.ascontiguousarray(np.moveaxis(inp.b_bar_x, -3, 0))
    return np.moveaxis(kernel(a, b), 0, -3)


def _readout(h: np.ndarray, c: np.ndarray) -> np.ndarray:
    return (h * c[..., None, :]).sum(axis=-1)


def scan_sequential(inp: ScanInputs) -> np.ndarray:
    """Left-to-right evaluation; returns ``y`` with layout ``(..., L, D)``."""
    return _readout(scan_states(inp, "sequential"), inp.c)


def scan_parallel(inp: ScanInputs) -> np.ndarray:
    """Associative-scan evaluation with the same contract as :func:`scan_sequential`."""
    return _readout(scan_states(inp, "parallel"), inp.c)


def scan_backward(inp: ScanInputs, upstream_grad: np.ndarray, h: Optional[np.ndarray] = None,
                  impl: str = "sequential") -> ScanInputs:
    """Gradients of ``sum(upstream_grad * y)`` with respect to the scan inputs.

    The adjoint ``lam_t = dL/dh_t`` obeys the reversed recurrence
    ``lam_t = C_t g_t + a_bar_{t+1} lam_{t+1}``, evaluated with the same kernel
    as the forward pass on time-reversed arrays.
    """
    if h is None:
        h = scan_states(inp, impl)
    gy = np.asarray(upstream_grad, dtype=np.float64)
    grad_c = np.einsum("...ldn,...ld->...ln", h, gy)
    direct = gy[..., None] * inp.c[..., None, :]

    a = np.moveaxis(inp.a_bar, -3, 0)
    shifted = np.zeros_like(a)
    shifted[:-1] = a[1:]
    rev = _KERNELS[impl](shifted[::-1], np.moveaxis(direct, -3, 0)[::-1])
    lam = np.moveaxis(rev[::-1], 0, -3)

    h_prev = np.zeros_like(h)
    h_prev[..., 1:, :, :] = h[..., :-1, :, :]
    return ScanInputs(lam * h_prev, lam, grad_c)


def selective_scan(a_bar, b_bar_x, c, impl: str = "sequential") -> Tensor:
    """Differentiable scan on tensors; returns ``y`` of layout ``(..., L, D)``."""
    a_bar, b_bar_x, c = as_tensor(a_bar), as_tensor(b_bar_x), as_tensor(c)
    inp = ScanInputs(a_bar.data, b_bar_x.data, c.data)
    h = scan_states(inp, impl)

    def _bw(g):
        grads = scan_backward(inp, g, h, impl)
        return grads.a_bar, grads.b_bar_x, grads.c

    return custom_op(_readout(h, inp.c), (a_bar, b_bar_x, c), _bw, "selective_scan")


def ssm_forward(x, params: SsmParams, impl: str = "sequential") -> Tensor:
    """Run the selective SSM over ``x`` of shape ``(..., L, D)``.

    Discretization, scan and readout form a single tape node.  The sequential
    order runs a compiled loop; ``impl="parallel"`` uses the associative scan
    on whole arrays.
    """
    x = as_tensor(x)
    B, C, delta = selective_params(x, params)
    A = neg(exp(params.a_log))
    if impl == "sequential":
        return _ssm_compiled(x, delta, A, B, C)
    return _ssm_arrays(x, delta, A, B, C, impl)


def _ssm_compiled(x: Tensor, delta: Tensor, A: Tensor, B: Tensor, C: Tensor) -> Tensor:
    from ._ssm_kernels import ssm_fused_backward, ssm_fused_forward

    shape = x.shape
    L, D = shape[-2:]
    n = A.shape[1]

    def flat(arr, last):
        return np.ascontiguousarray(arr.reshape(-1, L, last))

    xd, dd, Bd, Cd = flat(x.data, D), flat(delta.data, D), flat(B.data, n), flat(C.data, n)
    Ad = np.ascontiguousarray(A.data)
    em1 = np.expm1(dd[..., None] * Ad)
    a_bar = em1 + 1.0
    q = em1 / Ad
    y, h = ssm_fused_forward(xd, a_bar, q, Bd, Cd)

    def _bw(g):
        gx, gd, gA, gB, gC = ssm_fused_backward(flat(g, D), xd, dd, Ad, Bd, Cd, h, a_bar, q)
        return (gx.reshape(shape), gd.reshape(shape), gA,
                gB.reshape(B.shape), gC.reshape(C.shape))

    return custom_op(y.reshape(shape), (x, delta, A, B, C), _bw, "ssm")


def _ssm_arrays(x: Tensor, delta: Tensor, A: Tensor, B: Tensor, C: Tensor, impl: str) -> Tensor:
    xd, Bd, Cd, dd, Ad = x.data, B.data, C.data, delta.data, A.data
    dA = dd[..., None] * Ad
    a_bar = np.exp(dA)
    em1 = np.expm1(dA)
    q = em1 / Ad
    qB = q * Bd[..., None, :]
    inp = ScanInputs(a_bar, qB * xd[..., None], Cd)
    h = scan_states(inp, impl)
    lead = tuple(range(xd.ndim - 1))

    def _bw(g):
        grads = scan_backward(inp, g, h, impl)
        gbx = grads.b_bar_x
        gx = (gbx * qB).sum(axis=-1)
        t = gbx * xd[..., None]
        gB = (t * q).sum(axis=-2)
        gq = t * Bd[..., None, :]
        g_dA = grads.a_bar * a_bar + gq * a_bar / Ad
        g_delta = (g_dA * Ad).sum(axis=-1)
        g_A = (g_dA * dd[..., None] - gq * em1 / (Ad * Ad)).sum(axis=lead)
        return gx, g_delta, g_A, gB, grads.c

    return custom_op(_readout(h, Cd), (x, delta, A, B, C), _bw, "ssm")
