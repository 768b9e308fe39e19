"""Dense linear algebra primitives, activations, and seeded randomness.

Everything here is pure, dtype-preserving, and deliberately boring. Training
runs in float32; gradient checking promotes the same code to float64. All
public functions raise NumericError on non-finite input instead of letting
NaN propagate silently.
"""

import numpy as np

from .errors import DimensionError, DomainError, NumericError

ENTROPY_EPS = 1e-12


def make_rng(seed):
    """Seeded PCG64 generator; identical seeds give identical streams everywhere."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def assert_finite(arr, what="array"):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {what}")


def affine(W, x, b):
    """W @ x + b for a 2-D weight, 1-D input, 1-D bias."""
    W = np.asarray(W)
    x = np.asarray(x)
    b = np.asarray(b)
    if W.ndim != 2 or x.ndim != 1 or b.ndim != 1:
        raise DimensionError(
            f"affine expects (2d, 1d, 1d), got {W.ndim}d/{x.ndim}d/{b.ndim}d")
    if W.shape[1] != x.shape[0]:
        raise DimensionError(f"affine: W cols {W.shape[1]} != x len {x.shape[0]}")
    if W.shape[0] != b.shape[0]:
        raise DimensionError(f"affine: W rows {W.shape[0]} != b len {b.shape[0]}")
    return W @ x + b


def sigmoid(z):
    """Numerically stable logistic function, elementwise."""
    z = np.asarray(z)
    assert_finite(z, "sigmoid input")
    # exp(-|z|) never overflows; both branches share it.
    e = np.exp(-np.abs(z))
    out = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return out if out.ndim else out[()]


def relu(v):
    v = np.asarray(v)
    assert_finite(v, "relu input")
    return np.maximum(v, 0)


def softplus(z):
    """log(1 + e^z) without overflow: log1p(e^-|z|) + max(z, 0)."""
    z = np.asarray(z)
    return np.log1p(np.exp(-np.abs(z))) + np.maximum(z, 0)


def logsumexp(v, axis=-1):
    v = np.asarray(v)
    m = np.max(v, axis=axis, keepdims=True)
    out = np.log(np.sum(np.exp(v - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis)


def softmax(v, axis=-1):
    """Max-subtracted softmax along `axis`; output sums to 1."""
    v = np.asarray(v)
    assert_finite(v, "softmax input")
    e = np.exp(v - np.max(v, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(v, axis=-1):
    v = np.asarray(v)
    assert_finite(v, "log_softmax input")
    return v - np.expand_dims(logsumexp(v, axis=axis), axis)


def bernoulli_entropy(p):
    """H(p) in nats for p in [0,1], clamped at 1e-12 so the boundary is exact 0."""
    p = np.asarray(p)
    if np.any(p < 0) or np.any(p > 1):
        raise DomainError("bernoulli_entropy: p outside [0, 1]")
    q = np.clip(p, ENTROPY_EPS, 1.0 - ENTROPY_EPS)
    out = -q * np.log(q) - (1.0 - q) * np.log(1.0 - q)
    # exact zero at the boundary rather than ~2.8e-11 from the clamp
    out = np.where((p == 0) | (p == 1), 0.0, out)
    return out if out.ndim else out[()]


def sigmoid_entropy(z):
    """H(sigmoid(z)) computed in logit space; finite for any finite z.

    H(s) = s*softplus(-z) + (1-s)*softplus(z). Its derivative w.r.t. z is
    -z*s*(1-s), which is what the training kernels use.
    """
    z = np.asarray(z)
    s = sigmoid(z)
    return s * softplus(-z) + (1.0 - s) * softplus(z)


def init_params(rng, fan_in, fan_out, scheme="uniform"):
    """(fan_out, fan_in) weight matrix; biases are always zeros, made elsewhere.

    uniform: U(-1/sqrt(fan_in), +1/sqrt(fan_in))
    normal:  N(0, 1/fan_in)
    """
    if fan_in < 1 or fan_out < 1:
        raise DimensionError("init_params: fan_in and fan_out must be >= 1")
    bound = 1.0 / np.sqrt(fan_in)
    if scheme == "uniform":
        return rng.uniform(-bound, bound, size=(fan_out, fan_in))
    if scheme == "normal":
        return rng.normal(0.0, bound, size=(fan_out, fan_in))
    raise DomainError(f"unknown init scheme {scheme!r}")


def init_uniform(rng, fan_in, shape, dtype):
    """Flat/paneled variant of init_params used by the packed model builder."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)
