"""The fast-feedforward architecture.

A depth-d binary tree: 2^d - 1 sigmoid node neurons stored in heap order
(node j has children 2j+1 and 2j+2, left child first) and 2^d one-hidden-layer
ReLU leaf blocks. A node's activation s is the probability mass sent to its
RIGHT child; the left child receives 1 - s. Leaf i sits at heap position
(2^d - 1) + i, so leaves are numbered left to right and the path to leaf i
spells i in big-endian bits (1 = right).

Training mixes every leaf's logits with the product-of-edges coefficient
c_i(x); inference descends one path (right iff s > 0.5, ties go left) and
evaluates exactly one leaf. An optional always-on master block is fused in
with a trainable weight k = sigmoid(kappa).

Parameters live in one flat buffer (ParamBundle) with named views so the
optimizer can treat the model as a single vector while kernels and
persistence read structured slices. Everything in this module is the
per-sample reference implementation: plain numpy, trace-based backward,
works in float32 or float64. The batched hot paths live in fffnet.kernels.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, DimensionError
from .numeric import assert_finite, init_uniform, relu, sigmoid


class ParamBundle:
    """A flat parameter vector plus named reshaped views into it.

    Views alias the flat buffer: updating bundle.flat in place (as Adam does)
    is immediately visible through every view, and vice versa.
    """

    def __init__(self, sections, dtype=np.float32, flat=None):
        self.sections = tuple((str(n), tuple(int(x) for x in s)) for n, s in sections)
        total = sum(int(np.prod(s)) for _, s in self.sections)
        if flat is None:
            flat = np.zeros(total, dtype=dtype)
        else:
            flat = np.asarray(flat)
            if flat.shape != (total,):
                raise DimensionError(
                    f"flat buffer has {flat.shape}, sections need ({total},)")
        self.flat = flat
        self._views = {}
        off = 0
        for name, shape in self.sections:
            n = int(np.prod(shape))
            self._views[name] = self.flat[off:off + n].reshape(shape)
            off += n

    def __getitem__(self, name):
        return self._views[name]

    def __setitem__(self, name, value):
        view = self._views[name]
        if value is not view:  # augmented assignment mutates the view itself
            view[...] = value

    def __contains__(self, name):
        return name in self._views

    @property
    def names(self):
        return tuple(n for n, _ in self.sections)

    @property
    def dtype(self):
        return self.flat.dtype

    @property
    def size(self):
        return self.flat.size

    def zeros_like(self):
        return ParamBundle(self.sections, dtype=self.flat.dtype)

    def copy(self):
        return ParamBundle(self.sections, flat=self.flat.copy())

    def astype(self, dtype):
        return ParamBundle(self.sections, flat=self.flat.astype(dtype))


@dataclass
class NodeUnit:
    """View of one sigmoid node neuron."""
    weight: np.ndarray
    bias: np.ndarray


@dataclass
class LeafBlock:
    """View of one ReLU block: logits = w2 @ relu(w1 @ x + b1) + b2."""
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @property
    def hidden_width(self):
        return self.w1.shape[0]

    def param_count(self):
        return self.w1.size + self.b1.size + self.w2.size + self.b2.size

    def forward(self, x):
        pre = self.w1 @ x + self.b1
        act = relu(pre)
        return self.w2 @ act + self.b2, pre, act


@dataclass
class MasterLeaf:
    block: LeafBlock
    kappa: np.ndarray  # length-1 view; k = sigmoid(kappa[0])

    @property
    def k(self):
        return float(sigmoid(self.kappa[0]))


@dataclass
class ForwardTrace:
    """Everything the backward pass and the loss terms need from one sample."""
    x: np.ndarray
    node_z: np.ndarray        # (2^d - 1,) pre-activations
    node_s: np.ndarray        # (2^d - 1,) sigmoid activations
    coeffs: np.ndarray        # (2^d,) mixture coefficients, sums to 1
    leaf_h_pre: np.ndarray    # (2^d, leaf_width)
    leaf_h_act: np.ndarray
    leaf_logits: np.ndarray   # (2^d, classes)
    fff_logits: np.ndarray    # (classes,) soft mixture output
    logits: np.ndarray        # final output (fused when a master is present)
    master_h_pre: Optional[np.ndarray] = None
    master_h_act: Optional[np.ndarray] = None
    master_logits: Optional[np.ndarray] = None
    k: Optional[float] = None


@dataclass
class EvalCounter:
    """Instrumentation for hard-routing inference; bumped per evaluation."""
    nodes: int = 0
    leaves: int = 0
    master: int = 0
    node_macs: int = 0
    leaf_macs: int = 0
    master_macs: int = 0


@dataclass(frozen=True)
class InferenceCost:
    node_neurons: int
    leaf_hidden_neurons: int
    macs: int
    master_hidden_neurons: int = 0
    master_macs: int = 0


class FFFModel:
    def __init__(self, depth, leaf_width, input_dim, class_count, master_width, params):
        if depth < 1:
            raise ConfigError(f"depth must be >= 1, got {depth}")
        if leaf_width < 1:
            raise ConfigError(f"leaf_width must be >= 1, got {leaf_width}")
        self.depth = int(depth)
        self.leaf_width = int(leaf_width)
        self.input_dim = int(input_dim)
        self.class_count = int(class_count)
        self.master_width = int(master_width)
        self.params = params

    # ---- construction ----

    @staticmethod
    def sections(depth, leaf_width, input_dim, class_count, master_width=0):
        nn_ = 2 ** depth - 1
        nl = 2 ** depth
        lw = leaf_width
        secs = [
            ("node_w", (nn_, input_dim)),
            ("node_b", (nn_,)),
            ("leaf_w1", (nl * lw, input_dim)),   # leaf i owns rows i*lw:(i+1)*lw
            ("leaf_b1", (nl * lw,)),
            ("leaf_w2", (class_count, nl * lw)),  # leaf i owns that column band
            ("leaf_b2", (nl, class_count)),
        ]
        if master_width:
            secs += [
                ("m_w1", (master_width, input_dim)),
                ("m_b1", (master_width,)),
                ("m_w2", (class_count, master_width)),
                ("m_b2", (class_count,)),
                ("kappa", (1,)),
            ]
        return secs

    @classmethod
    def build(cls, depth, leaf_width, rng, input_dim=784, class_count=10,
              master_width=0, dtype=np.float32):
        """Fresh model: uniform(+-1/sqrt(fan_in)) weights, zero biases, kappa 0."""
        params = ParamBundle(
            cls.sections(depth, leaf_width, input_dim, class_count, master_width),
            dtype=dtype)
        m = cls(depth, leaf_width, input_dim, class_count, master_width, params)
        p = params
        p["node_w"][:] = init_uniform(rng, input_dim, p["node_w"].shape, dtype)
        p["leaf_w1"][:] = init_uniform(rng, input_dim, p["leaf_w1"].shape, dtype)
        p["leaf_w2"][:] = init_uniform(rng, leaf_width, p["leaf_w2"].shape, dtype)
        if master_width:
            p["m_w1"][:] = init_uniform(rng, input_dim, p["m_w1"].shape, dtype)
            p["m_w2"][:] = init_uniform(rng, master_width, p["m_w2"].shape, dtype)
        return m

    def astype(self, dtype):
        return FFFModel(self.depth, self.leaf_width, self.input_dim,
                        self.class_count, self.master_width,
                        self.params.astype(dtype))

    # ---- structure ----

    @property
    def n_nodes(self):
        return 2 ** self.depth - 1

    @property
    def n_leaves(self):
        return 2 ** self.depth

    @property
    def train_width(self):
        return self.n_leaves * self.leaf_width

    @property
    def has_master(self):
        return self.master_width > 0

    @property
    def dtype(self):
        return self.params.dtype

    def node(self, j):
        return NodeUnit(self.params["node_w"][j], self.params["node_b"][j:j + 1])

    def leaf(self, i):
        lw = self.leaf_width
        sl = slice(i * lw, (i + 1) * lw)
        p = self.params
        return LeafBlock(p["leaf_w1"][sl], p["leaf_b1"][sl],
                         p["leaf_w2"][:, sl], p["leaf_b2"][i])

    @property
    def master(self):
        if not self.has_master:
            return None
        p = self.params
        return MasterLeaf(LeafBlock(p["m_w1"], p["m_b1"], p["m_w2"], p["m_b2"]),
                          p["kappa"])


# ---- forward/backward reference implementations ----


def _check_input(model, x):
    x = np.asarray(x)
    if x.shape != (model.input_dim,):
        raise DimensionError(
            f"input shape {x.shape}, model expects ({model.input_dim},)")
    return x


def _node_acts(model, x):
    z = model.params["node_w"] @ x + model.params["node_b"]
    return z, sigmoid(z)


def _heap_masses(depth, s):
    """Probability mass reaching each heap position; positions >= 2^d - 1 are leaves."""
    nn_ = 2 ** depth - 1
    m = np.empty(nn_ + 2 ** depth, dtype=s.dtype)
    m[0] = 1.0
    for j in range(nn_):
        m[2 * j + 1] = m[j] * (1.0 - s[j])
        m[2 * j + 2] = m[j] * s[j]
    return m


def mixture_coefficients(model, x):
    """Per-leaf routing weights c and the node activations they came from.

    c_i is the product of edge probabilities on the root-to-leaf-i path;
    the c_i sum to 1 up to rounding because each node splits its incoming
    mass exactly.
    """
    x = _check_input(model, x)
    _, s = _node_acts(model, x)
    masses = _heap_masses(model.depth, s)
    return masses[model.n_nodes:].copy(), s


def forward_train(model, x):
    """Soft-mixture forward over all leaves: logits = sum_i c_i(x) * l_i(x)."""
    x = _check_input(model, x)
    z, s = _node_acts(model, x)
    masses = _heap_masses(model.depth, s)
    c = masses[model.n_nodes:].copy()
    nl, lw, cc = model.n_leaves, model.leaf_width, model.class_count
    h_pre = np.empty((nl, lw), dtype=x.dtype)
    h_act = np.empty((nl, lw), dtype=x.dtype)
    ll = np.empty((nl, cc), dtype=x.dtype)
    logits = np.zeros(cc, dtype=x.dtype)
    for i in range(nl):
        out, pre, act = model.leaf(i).forward(x)
        h_pre[i], h_act[i], ll[i] = pre, act, out
        logits = logits + c[i] * out
    assert_finite(logits, "forward_train logits")
    return logits, ForwardTrace(x=x, node_z=z, node_s=s, coeffs=c,
                                leaf_h_pre=h_pre, leaf_h_act=h_act,
                                leaf_logits=ll, fff_logits=logits,
                                logits=logits)


def forward_train_ml(model, x):
    """Fused training forward: k * FFF(x) + (1 - k) * master(x)."""
    if not model.has_master:
        raise ConfigError("forward_train_ml requires a master block")
    fff_logits, trace = forward_train(model, x)
    ml = model.master
    m_out, m_pre, m_act = ml.block.forward(x)
    k = ml.k
    fused = k * fff_logits + (1.0 - k) * m_out
    assert_finite(fused, "forward_train_ml logits")
    trace.master_h_pre, trace.master_h_act = m_pre, m_act
    trace.master_logits, trace.k = m_out, k
    trace.logits = fused.astype(x.dtype)
    return trace.logits, trace


def descend(model, x, counter=None):
    """Hard routing: take the right child iff s > 0.5; s == 0.5 goes left."""
    j = 0
    for _ in range(model.depth):
        nu = model.node(j)
        z = float(nu.weight @ x) + float(nu.bias[0])
        if counter is not None:
            counter.nodes += 1
            counter.node_macs += model.input_dim
        j = 2 * j + 2 if z > 0 else 2 * j + 1  # sigmoid(z) > 0.5 iff z > 0
    return j - model.n_nodes


def forward_inference(model, x, counter=None):
    """Single-path forward: d node evaluations, one leaf evaluation."""
    x = _check_input(model, x)
    leaf_idx = descend(model, x, counter)
    lb = model.leaf(leaf_idx)
    logits, _, _ = lb.forward(x)
    if counter is not None:
        counter.leaves += 1
        counter.leaf_macs += lb.hidden_width * model.input_dim \
            + model.class_count * lb.hidden_width
    return logits, leaf_idx


def forward_inference_ml(model, x, counter=None):
    """Hard-routed leaf fused with the master block: k*l*(x) + (1-k)*ML(x)."""
    if not model.has_master:
        raise ConfigError("forward_inference_ml requires a master block")
    x = _check_input(model, x)
    leaf_logits, leaf_idx = forward_inference(model, x, counter)
    ml = model.master
    m_out, _, _ = ml.block.forward(x)
    if counter is not None:
        counter.master += 1
        counter.master_macs += model.master_width * model.input_dim \
            + model.class_count * model.master_width
    k = ml.k
    return (k * leaf_logits + (1.0 - k) * m_out).astype(x.dtype), leaf_idx


def backward(model, trace, dlogits, dcoeffs=None, node_entropy_scale=0.0, out=None):
    """Per-sample analytic gradients, accumulated into `out`.

    dlogits seeds the chain from the sample's final output (fused output when
    a master is present). dcoeffs adds a direct gradient on the mixture
    coefficients, which is how the load-balance term enters: its dispatch
    fractions are frozen, so only the coefficient path carries gradient.
    node_entropy_scale adds d/dz of the node-entropy sum, i.e.
    scale * (-z * s * (1 - s)) per node. Leaf parameters never receive
    gradient from dcoeffs or from the entropy term, only from dlogits.
    """
    if out is None:
        out = model.params.zeros_like()
    x, s, z, c = trace.x, trace.node_s, trace.node_z, trace.coeffs
    nl, lw = model.n_leaves, model.leaf_width
    nn_ = model.n_nodes
    dlogits = np.asarray(dlogits, dtype=x.dtype)

    if trace.k is not None:
        k = trace.k
        dfff = k * dlogits
        dml = (1.0 - k) * dlogits
        dk = float(dlogits @ (trace.fff_logits - trace.master_logits))
        out["kappa"][0] += dk * k * (1.0 - k)
        out["m_w2"] += np.outer(dml, trace.master_h_act)
        out["m_b2"] += dml
        dh = (model.params["m_w2"].T @ dml) * (trace.master_h_pre > 0)
        out["m_w1"] += np.outer(dh, x)
        out["m_b1"] += dh
    else:
        dfff = dlogits

    # leaves: d(logits)/d(leaf params) carries the sample's coefficient
    dc = np.empty(nl, dtype=x.dtype)
    for i in range(nl):
        sl = slice(i * lw, (i + 1) * lw)
        dll = c[i] * dfff
        out["leaf_w2"][:, sl] += np.outer(dll, trace.leaf_h_act[i])
        out["leaf_b2"][i] += dll
        dact = model.params["leaf_w2"][:, sl].T @ dll
        dpre = dact * (trace.leaf_h_pre[i] > 0)
        out["leaf_w1"][sl] += np.outer(dpre, x)
        out["leaf_b1"][sl] += dpre
        dc[i] = dfff @ trace.leaf_logits[i]
    if dcoeffs is not None:
        dc = dc + np.asarray(dcoeffs, dtype=x.dtype)

    # tree: combine child gradients upward, then convert to node logits
    masses = _heap_masses(model.depth, s)
    gh = np.empty(nn_ + nl, dtype=x.dtype)
    gh[nn_:] = dc
    dz = np.empty(nn_, dtype=x.dtype)
    for j in range(nn_ - 1, -1, -1):
        gl, gr = gh[2 * j + 1], gh[2 * j + 2]
        gh[j] = (1.0 - s[j]) * gl + s[j] * gr
        ds = masses[j] * (gr - gl)
        sp = s[j] * (1.0 - s[j])
        dz[j] = ds * sp + node_entropy_scale * (-z[j] * sp)
    out["node_w"] += dz[:, None] * x[None, :]
    out["node_b"] += dz
    return out


def inference_cost(model):
    """Counts for one hard-routed sample; master cost reported separately."""
    if isinstance(model, VanillaModel):
        w = model.width
        return InferenceCost(node_neurons=0, leaf_hidden_neurons=w,
                             macs=w * model.input_dim + model.class_count * w)
    d, lw = model.depth, model.leaf_width
    macs = d * model.input_dim + lw * model.input_dim + model.class_count * lw
    mm = 0
    if model.has_master:
        mm = model.master_width * model.input_dim \
            + model.class_count * model.master_width
    return InferenceCost(node_neurons=d, leaf_hidden_neurons=lw, macs=macs,
                         master_hidden_neurons=model.master_width,
                         master_macs=mm)


def training_neuron_count(model):
    """Neurons touched by the soft forward: all leaf hidden units plus all nodes."""
    if isinstance(model, VanillaModel):
        return model.width
    return model.n_leaves * model.leaf_width + model.n_nodes


# ---- width-matched plain feedforward baseline ----


class VanillaModel:
    """One-hidden-layer ReLU net of width w; the comparison baseline."""

    def __init__(self, width, input_dim, class_count, params):
        self.width = int(width)
        self.input_dim = int(input_dim)
        self.class_count = int(class_count)
        self.params = params

    @staticmethod
    def sections(width, input_dim, class_count):
        return [("w1", (width, input_dim)), ("b1", (width,)),
                ("w2", (class_count, width)), ("b2", (class_count,))]

    @property
    def block(self):
        p = self.params
        return LeafBlock(p["w1"], p["b1"], p["w2"], p["b2"])

    @property
    def dtype(self):
        return self.params.dtype

    def astype(self, dtype):
        return VanillaModel(self.width, self.input_dim, self.class_count,
                            self.params.astype(dtype))

    def forward(self, x):
        return self.block.forward(x)


def build_vanilla_ff(input_dim, width, class_count, rng, dtype=np.float32):
    if width < 1:
        raise ConfigError(f"width must be >= 1, got {width}")
    params = ParamBundle(VanillaModel.sections(width, input_dim, class_count),
                         dtype=dtype)
    params["w1"][:] = init_uniform(rng, input_dim, params["w1"].shape, dtype)
    params["w2"][:] = init_uniform(rng, width, params["w2"].shape, dtype)
    return VanillaModel(width, input_dim, class_count, params)


def vanilla_backward(model, x, pre, act, dlogits, out=None):
    """Analytic gradients for the plain block; mirrors backward() conventions."""
    if out is None:
        out = model.params.zeros_like()
    out["w2"] += np.outer(dlogits, act)
    out["b2"] += dlogits
    dh = (model.params["w2"].T @ dlogits) * (pre > 0)
    out["w1"] += np.outer(dh, x)
    out["b1"] += dh
    return out
