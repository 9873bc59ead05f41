"""Fully connected ReLU networks and their constructive algebra.

A network is a list of affine layers ``(W_n, B_n)``; the realization applies
``max(., 0)`` after every layer except the last.  Its *dimension vector* is
``(k_0, k_1, ..., k_{H+1})`` and its parameter count is
``sum_n k_n (k_{n-1} + 1)``.

Two operations on dimension vectors mirror the network constructions:

* ``dim_compose(a, b)`` (composition, ``a`` after ``b``)::

      (b_0, ..., b_H2, b_last + a_0, a_1, ..., a_last)

* ``dim_sum(a, b)`` (parallel sum of equally deep networks)::

      (a_0, a_1 + b_1, ..., a_H + b_H, b_last)

Weights are stored as ``scipy.sparse`` CSR matrices.  The constructions below
produce block-structured networks whose parameter count (which counts every
entry, zero or not) is far larger than their number of nonzeros, and dense
storage would not fit in memory for moderately deep estimators.
"""

from __future__ import annotations

import json
from collections.abc import Sequence
from dataclasses import dataclass
from functools import reduce

import numpy as np
import scipy.sparse as sp

FORMAT_TAG = "pidemlp.relunet/1"


class ShapeError(ValueError):
    pass


# ---------------------------------------------------------------------------
# dimension vectors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DimVector:
    dims: tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(k) for k in self.dims)
        if len(dims) < 2:
            raise ShapeError(f"dimension vector needs at least 2 entries, got {dims}")
        if any(k < 1 for k in dims):
            raise ShapeError(f"dimension vector entries must be >= 1, got {dims}")
        object.__setattr__(self, "dims", dims)

    def __len__(self) -> int:
        return len(self.dims)

    def __getitem__(self, i):
        return self.dims[i]

    def __iter__(self):
        return iter(self.dims)

    @property
    def sup_norm(self) -> int:
        return max(self.dims)

    @property
    def input_dim(self) -> int:
        return self.dims[0]

    @property
    def output_dim(self) -> int:
        return self.dims[-1]

    def __repr__(self) -> str:
        return f"DimVector{self.dims}"


def _dv(x) -> DimVector:
    return x if isinstance(x, DimVector) else DimVector(tuple(x))


def param_count(dv) -> int:
    dims = _dv(dv).dims
    return sum(dims[n] * (dims[n - 1] + 1) for n in range(1, len(dims)))


def dim_sum(a, b) -> DimVector:
    a, b = _dv(a), _dv(b)
    if len(a) != len(b):
        raise ShapeError(f"dim_sum needs equal lengths, got {len(a)} and {len(b)}")
    if a[0] != b[0] or a[-1] != b[-1]:
        raise ShapeError(f"dim_sum needs matching endpoints, got {a} and {b}")
    inner = tuple(x + y for x, y in zip(a.dims[1:-1], b.dims[1:-1]))
    return DimVector((a[0],) + inner + (b[-1],))


def dim_compose(a, b) -> DimVector:
    """Dimension vector of ``a`` after ``b``."""
    a, b = _dv(a), _dv(b)
    if a[0] != b[-1]:
        raise ShapeError(f"cannot compose: input of {a} does not match output of {b}")
    return DimVector(b.dims[:-1] + (b[-1] + a[0],) + a.dims[1:])


def standard_dim(n: int, d: int) -> DimVector:
    """``(d, 2d, ..., 2d, d)`` with ``n`` entries."""
    if n < 3:
        raise ShapeError(f"standard dimension vector needs n >= 3, got {n}")
    if d < 1:
        raise ShapeError(f"d must be >= 1, got {d}")
    return DimVector((d,) + (2 * d,) * (n - 2) + (d,))


# ---------------------------------------------------------------------------
# networks
# ---------------------------------------------------------------------------


def _as_csr(w) -> sp.csr_matrix:
    if sp.issparse(w):
        m = sp.csr_matrix(w, dtype=np.float64)
    else:
        arr = np.asarray(w, dtype=np.float64)
        if arr.ndim != 2:
            raise ShapeError(f"weight must be a matrix, got shape {arr.shape}")
        m = sp.csr_matrix(arr)
    m.eliminate_zeros()
    return m


class ReluNetwork:
    """Immutable list of ``(weight, bias)`` layers with ReLU between layers."""

    __slots__ = ("_layers", "_dims")

    def __init__(self, layers: Sequence[tuple]):
        if not layers:
            raise ShapeError("a network needs at least one layer")
        built = []
        for w, b in layers:
            w = _as_csr(w)
            b = np.array(b, dtype=np.float64).reshape(-1)
            if w.shape[0] != b.shape[0]:
                raise ShapeError(f"bias length {b.shape[0]} does not match weight rows {w.shape[0]}")
            b.setflags(write=False)
            built.append((w, b))
        for (w_prev, _), (w, _) in zip(built, built[1:]):
            if w.shape[1] != w_prev.shape[0]:
                raise ShapeError(
                    f"layer input {w.shape[1]} does not match previous output {w_prev.shape[0]}"
                )
        self._layers = tuple(built)
        self._dims = DimVector((built[0][0].shape[1],) + tuple(w.shape[0] for w, _ in built))

    @property
    def layers(self) -> tuple:
        return self._layers

    @property
    def dims(self) -> DimVector:
        return self._dims

    @property
    def depth(self) -> int:
        """Length of the dimension vector (number of hidden layers + 2)."""
        return len(self._dims)

    @property
    def input_dim(self) -> int:
        return self._dims[0]

    @property
    def output_dim(self) -> int:
        return self._dims[-1]

    @property
    def param_count(self) -> int:
        return param_count(self._dims)

    def stored_scalars(self) -> int:
        """Number of weight and bias scalars held, counting structural zeros."""
        return sum(w.shape[0] * w.shape[1] + b.shape[0] for w, b in self._layers)

    def nnz(self) -> int:
        return sum(w.nnz + int(np.count_nonzero(b)) for w, b in self._layers)

    def __call__(self, x):
        return realize(self, x)

    def __repr__(self) -> str:
        return f"ReluNetwork(dims={self._dims.dims}, nnz={self.nnz()})"


def realize(net: ReluNetwork, x) -> np.ndarray:
    """Evaluate the network at one point (shape ``(k0,)``) or a batch ``(N, k0)``."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    h = x[:, None] if single else x.T
    if h.shape[0] != net.input_dim:
        raise ShapeError(f"input has dimension {h.shape[0]}, network expects {net.input_dim}")
    last = len(net.layers) - 1
    for i, (w, b) in enumerate(net.layers):
        h = w @ h + b[:, None]
        if i < last:
            np.maximum(h, 0.0, out=h)
    return h[:, 0] if single else h.T


def dense_layers(net: ReluNetwork) -> list[tuple[np.ndarray, np.ndarray]]:
    return [(w.toarray(), np.array(b)) for w, b in net.layers]


# ---------------------------------------------------------------------------
# constructions
# ---------------------------------------------------------------------------


def identity_net(d: int, depth: int) -> ReluNetwork:
    """Network with dimension vector ``standard_dim(depth, d)`` realizing the identity."""
    if depth < 3:
        raise ShapeError(f"identity_net needs depth >= 3, got {depth}")
    eye = sp.identity(d, format="csr")
    first = sp.vstack([eye, -eye], format="csr")
    layers = [(first, np.zeros(2 * d))]
    for _ in range(depth - 3):
        layers.append((sp.identity(2 * d, format="csr"), np.zeros(2 * d)))
    layers.append((sp.hstack([eye, -eye], format="csr"), np.zeros(d)))
    return ReluNetwork(layers)


def _affine_identity(d: int) -> ReluNetwork:
    return ReluNetwork([(sp.identity(d, format="csr"), np.zeros(d))])


def zero_net(dims) -> ReluNetwork:
    """All-zero network with the given dimension vector (realizes 0)."""
    dims = _dv(dims).dims
    return ReluNetwork(
        [(sp.csr_matrix((dims[n], dims[n - 1])), np.zeros(dims[n])) for n in range(1, len(dims))]
    )


def affine_net(matrix, offset=None) -> ReluNetwork:
    """Depth-3 network ``(k, 2k, l)`` realizing ``x -> matrix @ x + offset``.

    The hidden layer carries ``(x^+, x^-)``; the output layer applies
    ``[A, -A]``.
    """
    a = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    rows, cols = a.shape
    offset = np.zeros(rows) if offset is None else np.asarray(offset, dtype=np.float64).reshape(rows)
    eye = sp.identity(cols, format="csr")
    first = sp.vstack([eye, -eye], format="csr")
    out = sp.hstack([sp.csr_matrix(a), sp.csr_matrix(-a)], format="csr")
    return ReluNetwork([(first, np.zeros(2 * cols)), (out, offset)])


def affine_wrap(net: ReluNetwork, lam: float, shift_in=None, shift_out=None) -> ReluNetwork:
    """Same architecture, realizing ``x -> lam * (net(x + shift_in) + shift_out)``."""
    layers = list(net.layers)
    if shift_in is not None:
        shift_in = np.asarray(shift_in, dtype=np.float64).reshape(net.input_dim)
        w, b = layers[0]
        layers[0] = (w, b + w @ shift_in)
    w, b = layers[-1]
    if shift_out is not None:
        b = b + np.asarray(shift_out, dtype=np.float64).reshape(net.output_dim)
    layers[-1] = (w * float(lam), float(lam) * b)
    return ReluNetwork(layers)


def compose_nets(a: ReluNetwork, b: ReluNetwork) -> ReluNetwork:
    """Network realizing ``a`` after ``b`` with dimension vector ``dim_compose(a, b)``.

    The output layer of ``b`` becomes a hidden layer producing ``(z^+, z^-)``
    and the first layer of ``a`` reads ``z = z^+ - z^-``.
    """
    if a.input_dim != b.output_dim:
        raise ShapeError(f"cannot compose: a expects {a.input_dim} inputs, b gives {b.output_dim}")
    wb, bb = b.layers[-1]
    wa, ba = a.layers[0]
    split = (sp.vstack([wb, -wb], format="csr"), np.concatenate([bb, -bb]))
    join = (sp.hstack([wa, -wa], format="csr"), ba)
    return ReluNetwork(list(b.layers[:-1]) + [split, join] + list(a.layers[1:]))


def sum_nets(coeffs: Sequence[float], nets: Sequence[ReluNetwork]) -> ReluNetwork:
    """Network realizing ``sum_i coeffs[i] * nets[i]``; dimension vector is the folded ``dim_sum``."""
    if len(coeffs) != len(nets) or not nets:
        raise ShapeError("sum_nets needs one coefficient per network and at least one network")
    depth = nets[0].depth
    k_in, k_out = nets[0].input_dim, nets[0].output_dim
    for net in nets:
        if net.depth != depth:
            raise ShapeError(f"sum_nets needs equal depths, got {depth} and {net.depth}")
        if net.input_dim != k_in or net.output_dim != k_out:
            raise ShapeError("sum_nets needs equal input and output dimensions")
    coeffs = [float(c) for c in coeffs]
    n_layers = depth - 1
    if n_layers == 1:
        w = reduce(lambda acc, cn: acc + cn[0] * cn[1].layers[0][0], zip(coeffs, nets), sp.csr_matrix((k_out, k_in)))
        b = sum(c * net.layers[0][1] for c, net in zip(coeffs, nets))
        return ReluNetwork([(w, b)])
    layers = [
        (
            sp.vstack([net.layers[0][0] for net in nets], format="csr"),
            np.concatenate([net.layers[0][1] for net in nets]),
        )
    ]
    for n in range(1, n_layers - 1):
        layers.append(
            (
                sp.block_diag([net.layers[n][0] for net in nets], format="csr"),
                np.concatenate([net.layers[n][1] for net in nets]),
            )
        )
    layers.append(
        (
            sp.hstack([c * net.layers[-1][0] for c, net in zip(coeffs, nets)], format="csr"),
            sum(c * net.layers[-1][1] for c, net in zip(coeffs, nets)),
        )
    )
    return ReluNetwork(layers)


def extend_depth(net: ReluNetwork, extra: int) -> ReluNetwork:
    """Same realization with the dimension vector lengthened by ``extra``."""
    if extra < 0:
        raise ValueError(f"extra must be >= 0, got {extra}")
    if extra == 0:
        return net
    q = net.output_dim
    pad = _affine_identity(q) if extra == 1 else identity_net(q, extra + 1)
    return compose_nets(pad, net)


def sup_norm_chain_bound_check(nets: Sequence[ReluNetwork]) -> bool:
    """Width of the composed chain vs. the max of member widths and doubled interfaces.

    ``nets[0]`` is applied last (outermost).
    """
    dims = [net.dims for net in nets]
    chain = reduce(dim_compose, dims)
    interfaces = [2 * net.input_dim for net in nets[:-1]]
    bound = max([dv.sup_norm for dv in dims] + interfaces)
    return chain.sup_norm <= bound


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def to_record(net: ReluNetwork, sparse: bool | None = None) -> dict:
    """Self-describing record; floats survive a JSON round trip exactly.

    Dense layers are row-major nested lists.  Sparse layers (chosen
    automatically above one million stored scalars) list nonzeros as
    ``[row, col, value]`` in row-major order.
    """
    if sparse is None:
        sparse = net.stored_scalars() > 1_000_000
    layers = []
    for w, b in net.layers:
        entry = {"bias": [float(v) for v in b]}
        if sparse:
            coo = w.tocoo()
            order = np.lexsort((coo.col, coo.row))
            entry["weight_nonzeros"] = [
                [int(coo.row[i]), int(coo.col[i]), float(coo.data[i])] for i in order
            ]
        else:
            entry["weight"] = [[float(v) for v in row] for row in w.toarray()]
        layers.append(entry)
    return {"format": FORMAT_TAG, "dims": list(net.dims.dims), "layers": layers}


def from_record(record: dict) -> ReluNetwork:
    if record.get("format") != FORMAT_TAG:
        raise ValueError(f"unknown network format {record.get('format')!r}")
    dims = record["dims"]
    layers = []
    for n, entry in enumerate(record["layers"], start=1):
        shape = (dims[n], dims[n - 1])
        if "weight" in entry:
            w = np.array(entry["weight"], dtype=np.float64).reshape(shape)
        else:
            nz = entry["weight_nonzeros"]
            rows = [r for r, _, _ in nz]
            cols = [c for _, c, _ in nz]
            vals = [v for _, _, v in nz]
            w = sp.csr_matrix((vals, (rows, cols)), shape=shape)
        layers.append((w, entry["bias"]))
    net = ReluNetwork(layers)
    if list(net.dims.dims) != list(dims):
        raise ValueError(f"record dims {dims} disagree with layer shapes {net.dims.dims}")
    return net


def dumps(net: ReluNetwork, sparse: bool | None = None) -> str:
    return json.dumps(to_record(net, sparse))


def loads(text: str) -> ReluNetwork:
    return from_record(json.loads(text))
