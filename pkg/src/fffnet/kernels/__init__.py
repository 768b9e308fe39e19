"""Backend dispatch: one object-level API over the numba and numpy kernels.

Backend.step computes a full training step's losses and gradients for a
batch (gradients written into a preallocated ParamBundle); Backend.predict
runs hard-routed inference and returns predicted labels. Which build
executes is decided by fffnet.backend (FFFNET_BACKEND env flag).
"""

from dataclasses import dataclass

import numpy as np

from .. import backend as _backend
from ..errors import ConfigError, DimensionError
from ..model import FFFModel, VanillaModel


@dataclass
class StepStats:
    l_pred: float
    l_harden: float
    l_balance: float
    dispatch: np.ndarray  # per-leaf argmax counts for this batch; None for vanilla


class Backend:
    def __init__(self, resolved_name):
        if resolved_name == "numba":
            from . import nb_backend as mod
        elif resolved_name == "numpy":
            from . import np_backend as mod
        else:
            raise ConfigError(f"unknown resolved backend {resolved_name!r}")
        self.name = resolved_name
        self.is_jit = resolved_name == "numba"
        self._m = mod

    def _check(self, model, X):
        if X.ndim != 2 or X.shape[1] != model.input_dim:
            raise DimensionError(
                f"batch shape {X.shape} does not match input_dim {model.input_dim}")
        if self.is_jit:
            if model.dtype != np.float32 or X.dtype != np.float32:
                raise ConfigError("numba backend is float32-only")
            if not X.flags.c_contiguous:
                raise ConfigError("numba backend needs a C-contiguous batch")

    def step(self, model, X, y, grads, h=0.0, alpha=0.0, harden_batch_mean=True):
        """One batch of loss + gradients at the current parameters."""
        self._check(model, X)
        y = np.ascontiguousarray(y, dtype=np.int64)
        if y.shape != (X.shape[0],):
            raise DimensionError(
                f"label shape {y.shape} does not match batch of {X.shape[0]}")
        g = grads
        if isinstance(model, VanillaModel):
            p = model.params
            l_pred = self._m.step_vanilla(X, y, p["w1"], p["b1"], p["w2"], p["b2"],
                                          g["w1"], g["b1"], g["w2"], g["b2"])
            return StepStats(float(l_pred), 0.0, 0.0, None)
        p = model.params
        harden_norm = 1.0 / X.shape[0] if harden_batch_mean else 1.0
        dispatch = np.zeros(model.n_leaves, dtype=np.int64)
        common = (X, y, p["node_w"], p["node_b"], p["leaf_w1"], p["leaf_b1"],
                  p["leaf_w2"], p["leaf_b2"])
        if model.has_master:
            l_pred, l_harden, l_balance = self._m.step_fff_master(
                *common, p["m_w1"], p["m_b1"], p["m_w2"], p["m_b2"], p["kappa"],
                model.depth, float(h), harden_norm, float(alpha),
                g["node_w"], g["node_b"], g["leaf_w1"], g["leaf_b1"],
                g["leaf_w2"], g["leaf_b2"],
                g["m_w1"], g["m_b1"], g["m_w2"], g["m_b2"], g["kappa"], dispatch)
        else:
            l_pred, l_harden, l_balance = self._m.step_fff(
                *common, model.depth, float(h), harden_norm, float(alpha),
                g["node_w"], g["node_b"], g["leaf_w1"], g["leaf_b1"],
                g["leaf_w2"], g["leaf_b2"], dispatch)
        return StepStats(float(l_pred), float(l_harden), float(l_balance), dispatch)

    def predict(self, model, X):
        """Hard-routing argmax predictions for a batch."""
        self._check(model, X)
        p = model.params
        if isinstance(model, VanillaModel):
            return self._m.predict_vanilla(X, p["w1"], p["b1"], p["w2"], p["b2"])
        common = (X, p["node_w"], p["node_b"], p["leaf_w1"], p["leaf_b1"],
                  p["leaf_w2"], p["leaf_b2"])
        if model.has_master:
            return self._m.predict_fff_master(
                *common, p["m_w1"], p["m_b1"], p["m_w2"], p["m_b2"], p["kappa"],
                model.depth)
        return self._m.predict_fff(*common, model.depth)


_cache = {}


def get_backend(name=None):
    """Resolve `name` (or the FFFNET_BACKEND default) to a Backend instance."""
    resolved = _backend.resolve(name) if name else _backend.default_backend()
    if resolved not in _cache:
        _cache[resolved] = Backend(resolved)
    return _cache[resolved]


def available_backends():
    out = ["numpy"]
    if _backend.NUMBA_AVAILABLE:
        out.insert(0, "numba")
    return out
