"""Dense float64 tensors with tape-based reverse-mode differentiation.

Ops record onto the innermost active Tape; with no tape active they run as
plain numpy, which is how evaluation/prediction paths stay cheap. The tape
is a flat list in execution order, so walking it backwards is a reverse
topological traversal; gradients accumulate (never overwrite) so shared
parameters receive the sum of all their contributions.

Reductions that cross the frame axis of the tracker (softmax denominators,
pairwise dot products, per-row affine maps) are implemented with summation
orders that do not depend on row position, so permuting frames permutes
forward results bit-for-bit. Backward passes carry no such guarantee.
"""

import math
import struct

import numpy as np

from . import kernels

_TAPES = []


class Tape:
    """Records ops in execution order; context manager activates it."""

    def __init__(self):
        self._nodes = []

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        assert _TAPES and _TAPES[-1] is self
        _TAPES.pop()
        return False

    def __len__(self):
        return len(self._nodes)

    def backward(self, loss):
        """Seed d(loss)=1 and run all recorded backward steps in reverse."""
        if loss.grad is None:
            loss.grad = np.ones_like(loss.data)
        for out, fn in reversed(self._nodes):
            if out.grad is not None:
                fn(out.grad)
        self._nodes.clear()


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.data.shape}, grad={self.grad is not None})"


def constant(data, name=None):
    return Tensor(data, requires_grad=False, name=name)


def parameter(data, name=None):
    return Tensor(data, requires_grad=True, name=name)


def _record(parents, out_data, backward):
    """Create the op output; register `backward` if a tape is live."""
    out = Tensor(out_data)
    if _TAPES and any(p.requires_grad for p in parents):
        out.requires_grad = True
        _TAPES[-1]._nodes.append((out, backward))
    return out


def _accum(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def _grad_buffer(t):
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    return t.grad


# ---------------------------------------------------------------------------
# gathers


def embedding_lookup(table, indices):
    """Row gather table[indices]; backward scatter-adds into the table."""
    idx = np.asarray(indices, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise IndexError(f"embedding index out of range for table of {table.data.shape[0]} rows")
    out_data = table.data[idx]

    def backward(g):
        if table.requires_grad:
            np.add.at(_grad_buffer(table), idx, g)

    return _record([table], out_data, backward)


def bag_rows(table, bags):
    """Per-bag sums of table rows: out[k] = sum(table[bags[k]]); empty bag -> 0.

    One tape node per call; this is the trigram-hash workhorse.
    """
    counts = np.array([len(b) for b in bags], dtype=np.intp)
    flat = np.concatenate([np.asarray(b, dtype=np.intp) for b in bags]) if bags else np.zeros(0, dtype=np.intp)
    if flat.size and (flat.min() < 0 or flat.max() >= table.data.shape[0]):
        raise IndexError(f"bag index out of range for table of {table.data.shape[0]} rows")
    out_data = np.zeros((len(bags), table.data.shape[1]))
    pos = 0
    for k, c in enumerate(counts):
        if c:
            out_data[k] = table.data[flat[pos:pos + c]].sum(axis=0)
        pos += c

    def backward(g):
        if table.requires_grad and flat.size:
            np.add.at(_grad_buffer(table), flat, np.repeat(g, counts, axis=0))

    return _record([table], out_data, backward)


# ---------------------------------------------------------------------------
# shape plumbing


def row(x, i):
    """Select row i of a matrix as a vector."""
    i = int(i)
    out_data = x.data[i].copy()

    def backward(g):
        if x.requires_grad:
            _grad_buffer(x)[i] += g

    return _record([x], out_data, backward)


def column(x, j):
    """Select column j of a matrix as a vector."""
    j = int(j)
    out_data = x.data[:, j].copy()

    def backward(g):
        if x.requires_grad:
            _grad_buffer(x)[:, j] += g

    return _record([x], out_data, backward)


def stack_rows(vecs):
    """Stack 1-D tensors into a (len(vecs), d) matrix."""
    out_data = np.stack([v.data for v in vecs], axis=0)

    def backward(g):
        for k, v in enumerate(vecs):
            _accum(v, g[k])

    return _record(list(vecs), out_data, backward)


def stack_cols(vecs):
    """Stack 1-D tensors into an (n, len(vecs)) matrix."""
    out_data = np.stack([v.data for v in vecs], axis=1)

    def backward(g):
        for k, v in enumerate(vecs):
            _accum(v, g[:, k])

    return _record(list(vecs), out_data, backward)


def concat_vec(vecs):
    """Concatenate 1-D tensors."""
    out_data = np.concatenate([v.data for v in vecs])
    sizes = [v.data.shape[0] for v in vecs]

    def backward(g):
        pos = 0
        for v, s in zip(vecs, sizes):
            _accum(v, g[pos:pos + s])
            pos += s

    return _record(list(vecs), out_data, backward)


def concat_cols(mats):
    """Concatenate 2-D tensors along axis 1."""
    out_data = np.concatenate([m.data for m in mats], axis=1)
    widths = [m.data.shape[1] for m in mats]

    def backward(g):
        pos = 0
        for m, w in zip(mats, widths):
            _accum(m, g[:, pos:pos + w])
            pos += w

    return _record(list(mats), out_data, backward)


def broadcast_rows(vec, n):
    """Tile a vector into n identical rows."""
    out_data = np.broadcast_to(vec.data, (n, vec.data.shape[0])).copy()

    def backward(g):
        if vec.requires_grad:
            _accum(vec, g.sum(axis=0))

    return _record([vec], out_data, backward)


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b):
    out_data = a.data + b.data

    def backward(g):
        _accum(a, g)
        _accum(b, g)

    return _record([a, b], out_data, backward)


def add_n(terms):
    out_data = terms[0].data.copy()
    for t in terms[1:]:
        out_data += t.data

    def backward(g):
        for t in terms:
            _accum(t, g)

    return _record(list(terms), out_data, backward)


def scale_const(x, c):
    c = float(c)
    out_data = x.data * c

    def backward(g):
        _accum(x, g * c)

    return _record([x], out_data, backward)


def mul_scalar(x, s):
    """Elementwise x * s where s is a 0-d parameter tensor."""
    out_data = x.data * s.data

    def backward(g):
        _accum(x, g * s.data)
        if s.requires_grad:
            _accum(s, np.sum(g * x.data))

    return _record([x, s], out_data, backward)


def add_scalar(x, s):
    """Elementwise x + s where s is a 0-d parameter tensor."""
    out_data = x.data + s.data

    def backward(g):
        _accum(x, g)
        if s.requires_grad:
            _accum(s, np.sum(g))

    return _record([x, s], out_data, backward)


# ---------------------------------------------------------------------------
# activations


def tanh(x):
    out_data = np.tanh(x.data)

    def backward(g):
        _accum(x, g * (1.0 - out_data * out_data))

    return _record([x], out_data, backward)


def sigmoid(x):
    out_data = np.where(x.data >= 0, 1.0 / (1.0 + np.exp(-np.abs(x.data))),
                        np.exp(-np.abs(x.data)) / (1.0 + np.exp(-np.abs(x.data))))

    def backward(g):
        _accum(x, g * out_data * (1.0 - out_data))

    return _record([x], out_data, backward)


def relu(x):
    out_data = np.maximum(x.data, 0.0)

    def backward(g):
        _accum(x, g * (x.data > 0))

    return _record([x], out_data, backward)


_ACTIVATIONS = {"identity": None, "tanh": tanh, "sigmoid": sigmoid, "relu": relu}


# ---------------------------------------------------------------------------
# linear maps


def affine_vec(x, W, b):
    """W @ x + b for a 1-D x; W is (out, in)."""
    if W.data.shape[1] != x.data.shape[0]:
        raise ValueError(f"affine_vec shape mismatch: W {W.data.shape} vs x {x.data.shape}")
    out_data = W.data @ x.data + b.data

    def backward(g):
        _accum(x, g @ W.data)
        if W.requires_grad:
            _accum(W, np.outer(g, x.data))
        _accum(b, g)

    return _record([x, W, b], out_data, backward)


def affine_rows(X, W, b):
    """Per-row W @ x + b for a 2-D X (rows are independent items).

    The reduction runs along the last axis of an (n, out, in) product, so its
    summation order is a function of `in` alone — row position never changes
    the result, which keeps frame-indexed batches permutation-equivariant.
    """
    if W.data.shape[1] != X.data.shape[1]:
        raise ValueError(f"affine_rows shape mismatch: W {W.data.shape} vs X {X.data.shape}")
    out_data = (X.data[:, None, :] * W.data[None, :, :]).sum(axis=2) + b.data

    def backward(g):
        _accum(X, g @ W.data)
        if W.requires_grad:
            _accum(W, g.T @ X.data)
        if b.requires_grad:
            _accum(b, g.sum(axis=0))

    return _record([X, W, b], out_data, backward)


def dense(x, W, b, activation="identity"):
    """Affine map plus named activation; accepts 1-D or 2-D x."""
    if activation not in _ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    y = affine_vec(x, W, b) if x.data.ndim == 1 else affine_rows(x, W, b)
    act = _ACTIVATIONS[activation]
    return y if act is None else act(y)


def pairwise_dot(A, B):
    """All-pairs dot products: out[i, j] = A[i] . B[j].

    Same order-stability note as affine_rows: per-pair reductions over the
    shared axis only, so permuting B's rows permutes columns bit-for-bit.
    """
    if A.data.shape[1] != B.data.shape[1]:
        raise ValueError(f"pairwise_dot shape mismatch: {A.data.shape} vs {B.data.shape}")
    out_data = (A.data[:, None, :] * B.data[None, :, :]).sum(axis=2)

    def backward(g):
        _accum(A, g @ B.data)
        _accum(B, g.T @ A.data)

    return _record([A, B], out_data, backward)


def row_max(X):
    """Per-row maximum of a matrix; gradient flows to the first argmax."""
    arg = np.argmax(X.data, axis=1)
    out_data = X.data[np.arange(X.data.shape[0]), arg]

    def backward(g):
        if X.requires_grad:
            buf = _grad_buffer(X)
            np.add.at(buf, (np.arange(X.data.shape[0]), arg), g)

    return _record([X], out_data, backward)


# ---------------------------------------------------------------------------
# recurrent core


def gru_sequence(X, h0, W, U, b, reverse=False):
    """GRU scan over X (T, E) -> states (T, H); kernel-backed forward/BPTT.

    Gates: z = sig(xWz + hUz + bz), r = sig(xWr + hUr + br),
    c = tanh(xWc + (r*h)Uc + bc), h' = (1-z)*h + z*c.
    """
    T = X.data.shape[0]
    Hd = h0.data.shape[0]
    if W.data.shape != (X.data.shape[1], 3 * Hd) or U.data.shape != (Hd, 3 * Hd):
        raise ValueError(f"gru_sequence shape mismatch: X {X.data.shape}, W {W.data.shape}, U {U.data.shape}")
    if T == 0:
        return _record([X, h0, W, U, b], np.zeros((0, Hd)), lambda g: None)
    H, Z, R, C = kernels.gru_forward(np.ascontiguousarray(X.data), h0.data, W.data, U.data, b.data, reverse)

    def backward(g):
        dX, dh0, dW, dU, db = kernels.gru_backward(
            np.ascontiguousarray(X.data), h0.data, W.data, U.data,
            Z, R, C, H, np.ascontiguousarray(g), reverse)
        _accum(X, dX)
        _accum(h0, dh0)
        _accum(W, dW)
        _accum(U, dU)
        _accum(b, db)

    return _record([X, h0, W, U, b], H, backward)


def gru_cell(x, h_prev, W, U, b):
    """Single GRU step on a 1-D input; returns the new hidden state."""
    X = stack_rows([x])
    h = gru_sequence(X, h_prev, W, U, b)
    return row(h, 0)


def bigru_encode(X, Wf, Uf, bf, Wb, Ub, bb):
    """Concat of final forward and backward GRU states over X (T, E).

    Empty sequences produce a zero summary: encoders face frames without
    constraints and acts without arguments, and the forward pass must stay
    total there.
    """
    Hd = bf.data.shape[0] // 3
    if X.data.shape[0] == 0:
        return constant(np.zeros(2 * Hd))
    h0 = constant(np.zeros(Hd))
    fwd = gru_sequence(X, h0, Wf, Uf, bf, reverse=False)
    bwd = gru_sequence(X, h0, Wb, Ub, bb, reverse=True)
    return concat_vec([row(fwd, X.data.shape[0] - 1), row(bwd, 0)])


def bigru_states(X, Wf, Uf, bf, Wb, Ub, bb):
    """Per-position concat of forward and backward GRU states: (T, 2H)."""
    Hd = bf.data.shape[0] // 3
    if X.data.shape[0] == 0:
        return constant(np.zeros((0, 2 * Hd)))
    h0 = constant(np.zeros(Hd))
    fwd = gru_sequence(X, h0, Wf, Uf, bf, reverse=False)
    bwd = gru_sequence(X, h0, Wb, Ub, bb, reverse=True)
    return concat_cols([fwd, bwd])


# ---------------------------------------------------------------------------
# probabilities and losses


def softmax_rows(X):
    """Row softmax, stabilized by max subtraction.

    Denominators use math.fsum (correctly rounded, order-independent), so
    permuting entries within a row permutes the outputs exactly.
    """
    xd = X.data
    out_data = np.empty_like(xd)
    for i in range(xd.shape[0]):
        e = np.exp(xd[i] - np.max(xd[i]))
        out_data[i] = e / math.fsum(e)

    def backward(g):
        dots = np.einsum("ij,ij->i", g, out_data)
        _accum(X, out_data * (g - dots[:, None]))

    return _record([X], out_data, backward)


def nll_rows(P, pooled_cols):
    """Sum of -log of pooled probabilities, one pool of columns per row.

    pooled_cols[i] is the tuple of columns whose mass counts as correct for
    row i; masses are fsum-pooled before the log.
    """
    if P.data.shape[0] != len(pooled_cols):
        raise ValueError("nll_rows: one column pool per row required")
    masses = np.array([math.fsum(P.data[i, list(cols)]) for i, cols in enumerate(pooled_cols)])
    out_data = np.array(-np.sum(np.log(masses)))

    def backward(g):
        if P.requires_grad:
            buf = _grad_buffer(P)
            for i, cols in enumerate(pooled_cols):
                buf[i, list(cols)] += -float(g) / masses[i]

    return _record([P], out_data, backward)


def softmax_ce(logits, target):
    """Softmax + cross-entropy on a 1-D logit vector; returns (probs, loss)."""
    k = logits.data.shape[0]
    if not 0 <= int(target) < k:
        raise IndexError(f"target {target} out of range for {k} classes")
    P = softmax_rows(stack_rows([logits]))
    loss = nll_rows(P, [(int(target),)])
    return row(P, 0), loss


def bce_with_logits(Z, Y):
    """Sum of binary cross-entropies; Y is a constant 0/1 array like Z.

    Computed from logits (max(z,0) - z*y + log1p(exp(-|z|))) so large |z|
    cannot overflow.
    """
    zd, yd = Z.data, np.asarray(Y.data if isinstance(Y, Tensor) else Y, dtype=np.float64)
    out_data = np.array(np.sum(np.maximum(zd, 0.0) - zd * yd + np.log1p(np.exp(-np.abs(zd)))))

    def backward(g):
        p = np.where(zd >= 0, 1.0 / (1.0 + np.exp(-np.abs(zd))),
                     np.exp(-np.abs(zd)) / (1.0 + np.exp(-np.abs(zd))))
        _accum(Z, float(g) * (p - yd))

    return _record([Z], out_data, backward)


# ---------------------------------------------------------------------------
# initialization


def init_embedding(rng, rows, dim):
    return rng.uniform(-0.1, 0.1, size=(rows, dim))


def init_dense(rng, out_dim, in_dim):
    bound = 1.0 / math.sqrt(in_dim)
    return rng.uniform(-bound, bound, size=(out_dim, in_dim))


def init_gru(rng, in_dim, hidden):
    """W (in,3H), U (H,3H), b (3H,) with uniform(+-1/sqrt(fan_in)) weights."""
    wb = 1.0 / math.sqrt(in_dim)
    ub = 1.0 / math.sqrt(hidden)
    W = rng.uniform(-wb, wb, size=(in_dim, 3 * hidden))
    U = rng.uniform(-ub, ub, size=(hidden, 3 * hidden))
    return W, U, np.zeros(3 * hidden)


# ---------------------------------------------------------------------------
# optimizer


class NonFiniteGradient(RuntimeError):
    pass


class Adam:
    """Bias-corrected Adam over a name->Tensor parameter dict."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self._v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name in sorted(self.params):
            p = self.params[name]
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient(f"non-finite gradient in parameter {name!r}")
            m = self._m[name]
            v = self._v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


# ---------------------------------------------------------------------------
# checkpoint io

_MAGIC = b"FTRK"
_VERSION = 1


def save_tensors(path, named, meta=None):
    """Versioned binary container of named float64 tensors.

    Layout: magic, u16 version, u64 header length, canonical-JSON header
    (meta + names + shapes), then raw little-endian C-order float64 blobs in
    header order. Deterministic byte-for-byte for identical inputs.
    """
    import json

    names = sorted(named)
    header = {
        "meta": meta or {},
        "tensors": [{"name": n, "shape": list(np.asarray(named[n]).shape)} for n in names],
    }
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<H", _VERSION))
        fh.write(struct.pack("<Q", len(hb)))
        fh.write(hb)
        for n in names:
            arr = np.ascontiguousarray(np.asarray(named[n], dtype=np.float64))
            fh.write(arr.astype("<f8", copy=False).tobytes(order="C"))


def load_tensors(path):
    """Inverse of save_tensors; returns (dict name->array, meta)."""
    import json

    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError(f"{path}: not a frametrack checkpoint")
        (version,) = struct.unpack("<H", fh.read(2))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        out = {}
        for spec in header["tensors"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(8 * count)
            out[spec["name"]] = np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(shape)
    return out, header["meta"]


# ---------------------------------------------------------------------------
# gradient checking


def numeric_gradients(build, tensors, eps=1e-5):
    """Central finite differences of build() w.r.t. each tensor's data.

    build() must re-run the forward from the tensors' current .data and
    return a scalar Tensor; it is evaluated with no tape active.
    """
    grads = []
    for t in tensors:
        g = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            fp = build().item()
            flat[i] = keep - eps
            fm = build().item()
            flat[i] = keep
            gflat[i] = (fp - fm) / (2.0 * eps)
        grads.append(g)
    return grads


def gradcheck(build, tensors, eps=1e-5):
    """Max relative error between tape gradients and central differences."""
    for t in tensors:
        t.grad = None
    with Tape() as tape:
        loss = build()
        tape.backward(loss)
    worst = 0.0
    numeric = numeric_gradients(build, tensors, eps=eps)
    for t, n in zip(tensors, numeric):
        a = t.grad if t.grad is not None else np.zeros_like(t.data)
        err = np.abs(a - n) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
        if err.size:
            worst = max(worst, float(err.max()))
    return worst
