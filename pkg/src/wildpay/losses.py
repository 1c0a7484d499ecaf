"""Training-loss arithmetic and the Adam update rule.

All losses are plain scalar formulas with analytic gradients, plus a
central-difference checker so the analytic forms can be audited during
tests.  Probabilities are clamped away from {0, 1} before any logarithm so
the cross-entropies stay finite; softmax subtracts the max logit before
exponentiating so large logits cannot overflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

#: Probabilities are clamped to [PROB_EPS, 1 - PROB_EPS] before log().
PROB_EPS = 1e-12


def clamp_probability(p: float) -> float:
    """Clamp a probability into the open interval where log() is finite."""
    return min(max(float(p), PROB_EPS), 1.0 - PROB_EPS)


def bce_objectness(p: float, p_star: int) -> float:
    """Binary cross-entropy between predicted objectness ``p`` and target.

    ``p_star`` must be 0 or 1.  ``p`` outside [0, 1] is rejected; values at
    the boundary are clamped rather than producing infinities.
    """
    if p_star not in (0, 1):
        raise ValueError(f"p_star must be 0 or 1, got {p_star}")
    if not (0.0 <= p <= 1.0):
        raise ValueError(f"p must be in [0, 1], got {p}")
    q = clamp_probability(p)
    return -(p_star * math.log(q) + (1 - p_star) * math.log(1.0 - q))


def bce_objectness_grad(p: float, p_star: int) -> float:
    """d/dp of :func:`bce_objectness` at the clamped probability."""
    if p_star not in (0, 1):
        raise ValueError(f"p_star must be 0 or 1, got {p_star}")
    if not (0.0 <= p <= 1.0):
        raise ValueError(f"p must be in [0, 1], got {p}")
    q = clamp_probability(p)
    return -(p_star / q) + (1 - p_star) / (1.0 - q)


def smooth_l1(x: float) -> float:
    """Huber-style penalty: quadratic inside |x| < 1, linear outside."""
    ax = abs(float(x))
    if ax < 1.0:
        return 0.5 * x * x
    return ax - 0.5


def smooth_l1_grad(x: float) -> float:
    """Derivative of :func:`smooth_l1`; the kink at |x| = 1 takes the
    linear branch's slope and the subgradient at 0 is 0."""
    x = float(x)
    if abs(x) < 1.0:
        return x
    return math.copysign(1.0, x) if x != 0.0 else 0.0


def rpn_reg_loss(t: Sequence[float], t_star: Sequence[float]) -> float:
    """Sum of smooth-L1 penalties over the four box-delta components."""
    if len(t) != 4 or len(t_star) != 4:
        raise ValueError(f"expected 4 components, got {len(t)} and {len(t_star)}")
    return math.fsum(smooth_l1(ti - si) for ti, si in zip(t, t_star))


def rpn_reg_loss_grad(t: Sequence[float], t_star: Sequence[float]) -> np.ndarray:
    """Gradient of :func:`rpn_reg_loss` with respect to ``t``."""
    if len(t) != 4 or len(t_star) != 4:
        raise ValueError(f"expected 4 components, got {len(t)} and {len(t_star)}")
    return np.array([smooth_l1_grad(ti - si) for ti, si in zip(t, t_star)], dtype=np.float64)


def softmax(logits: Sequence[float]) -> np.ndarray:
    """Numerically safe softmax (max-subtracted before exponentiation)."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1 or z.size < 1:
        raise ValueError("logits must be a non-empty 1-D sequence")
    shifted = z - np.max(z)
    ez = np.exp(shifted)
    return ez / np.sum(ez)


def softmax_ce(logits: Sequence[float], u: int) -> float:
    """Cross-entropy of a softmax over ``logits`` against true class ``u``."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1 or z.size < 1:
        raise ValueError("logits must be a non-empty 1-D sequence")
    if not (0 <= u < z.size):
        raise ValueError(f"class index {u} out of range for {z.size} logits")
    shifted = z - np.max(z)
    # log-sum-exp in shifted coordinates; the max cancels in the difference.
    log_norm = math.log(float(np.sum(np.exp(shifted))))
    return log_norm - float(shifted[u])


def softmax_ce_grad(logits: Sequence[float], u: int) -> np.ndarray:
    """Gradient of :func:`softmax_ce` w.r.t. the logits: softmax - onehot(u)."""
    probs = softmax(logits)
    if not (0 <= u < probs.size):
        raise ValueError(f"class index {u} out of range for {probs.size} logits")
    grad = probs.copy()
    grad[u] -= 1.0
    return grad


def relu(x):
    """Elementwise max(0, x); scalars in, scalar out."""
    if np.isscalar(x):
        return max(float(x), 0.0)
    return np.maximum(np.asarray(x), 0)


@dataclass(frozen=True)
class LossInputs:
    """All operands of the per-region losses in one record.

    The classifier side uses ``logits`` over K classes (index 0 is
    background) with true class ``u``; the regression side uses predicted
    deltas ``t`` against target ``v`` weighted by ``lam``, gated by the
    Iverson bracket [u >= 1] so background regions contribute no box loss.
    The objectness operands ``p``/``p_star`` and the RPN target ``t_star``
    ride along for callers scoring both stages from one record.
    """

    logits: tuple[float, ...]
    u: int
    t: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    v: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    lam: float = 1.0
    p: float = 0.5
    p_star: int = 0
    t_star: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        object.__setattr__(self, "logits", tuple(float(x) for x in self.logits))
        object.__setattr__(self, "t", tuple(float(x) for x in self.t))
        object.__setattr__(self, "v", tuple(float(x) for x in self.v))
        object.__setattr__(self, "t_star", tuple(float(x) for x in self.t_star))
        if len(self.logits) < 1:
            raise ValueError("logits must be non-empty")
        if not (0 <= self.u < len(self.logits)):
            raise ValueError(f"class index {self.u} out of range")
        if len(self.t) != 4 or len(self.v) != 4 or len(self.t_star) != 4:
            raise ValueError("box deltas must have 4 components")
        if self.lam < 0:
            raise ValueError(f"lam must be non-negative, got {self.lam}")
        if not (0.0 <= self.p <= 1.0):
            raise ValueError(f"p must be in [0, 1], got {self.p}")
        if self.p_star not in (0, 1):
            raise ValueError(f"p_star must be 0 or 1, got {self.p_star}")


def fast_rcnn_loss(inputs: LossInputs) -> float:
    """Per-region loss: softmax CE plus lam * [u >= 1] * smooth-L1 box loss."""
    cls = softmax_ce(inputs.logits, inputs.u)
    if inputs.u >= 1:
        reg = math.fsum(smooth_l1(ti - vi) for ti, vi in zip(inputs.t, inputs.v))
        return cls + inputs.lam * reg
    return cls


def total_loss(
    rpn_cls: float,
    rpn_reg: float,
    box_cls: float,
    box_reg: float,
    weights: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0),
) -> float:
    """Weighted sum of the four loss components (weights default to 1)."""
    terms = (rpn_cls, rpn_reg, box_cls, box_reg)
    for name, val in zip(("rpn_cls", "rpn_reg", "box_cls", "box_reg"), terms):
        if val < 0:
            raise ValueError(f"{name} must be non-negative, got {val}")
    if len(weights) != 4:
        raise ValueError("weights must have 4 components")
    if any(w < 0 for w in weights):
        raise ValueError(f"weights must be non-negative, got {weights}")
    return math.fsum(w * v for w, v in zip(weights, terms))


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


def _as_vector(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise ValueError(f"expected a 1-D parameter vector, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class AdamState:
    """Parameters plus first/second moment estimates for Adam.

    ``t`` counts completed steps; bias correction uses ``t + 1`` inside
    :func:`adam_step`.  Treat instances as immutable — updates return a new
    state.
    """

    theta: np.ndarray
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    eta: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self) -> None:
        object.__setattr__(self, "theta", _as_vector(self.theta))
        object.__setattr__(self, "m", _as_vector(self.m))
        object.__setattr__(self, "v", _as_vector(self.v))
        if not (self.theta.shape == self.m.shape == self.v.shape):
            raise ValueError("theta, m and v must have matching shapes")
        if (self.v < 0).any():
            raise ValueError("second-moment estimate v must be non-negative")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError(f"betas must be in [0, 1), got {self.beta1}, {self.beta2}")
        if self.eta <= 0 or self.epsilon <= 0:
            raise ValueError("eta and epsilon must be positive")
        if self.t < 0:
            raise ValueError(f"step count must be non-negative, got {self.t}")

    @classmethod
    def fresh(cls, theta, **hyper) -> "AdamState":
        """Initial state: zero moments, step count zero."""
        vec = _as_vector(theta)
        return cls(theta=vec, m=np.zeros_like(vec), v=np.zeros_like(vec), t=0, **hyper)


def adam_step(state: AdamState, gradient) -> AdamState:
    """One Adam update.

    Moments are updated with the usual exponential averages, bias-corrected
    by ``1 - beta^t`` for the new step count, and the parameter moves by
    ``eta * m_hat / (sqrt(v_hat) + epsilon)`` — epsilon sits outside the
    square root, so a unit first gradient moves theta by almost exactly
    ``-eta``.
    """
    g = _as_vector(gradient)
    if g.shape != state.theta.shape:
        raise ValueError(f"gradient shape {g.shape} != parameter shape {state.theta.shape}")
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * (g * g)
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    theta = state.theta - state.eta * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return replace(state, theta=theta, m=m, v=v, t=t)


def numerical_gradient(
    f: Callable[[np.ndarray], float], x, h: float = 1e-6
) -> np.ndarray:
    """Central finite-difference gradient of a scalar function.

    Used in tests to cross-check the analytic gradients above; accuracy is
    O(h^2) away from kinks.
    """
    if h <= 0:
        raise ValueError(f"step size must be positive, got {h}")
    x = _as_vector(x).copy()
    grad = np.zeros_like(x)
    for i in range(x.size):
        orig = x[i]
        x[i] = orig + h
        hi = f(x)
        x[i] = orig - h
        lo = f(x)
        x[i] = orig
        grad[i] = (hi - lo) / (2.0 * h)
    return grad
