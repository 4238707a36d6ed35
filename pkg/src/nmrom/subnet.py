"""Decoder subnet restricted to the active paths feeding selected outputs.

The active entries are found by back-propagating an indicator error through a
binarized, linearized copy of the decoder fed with an all-ones input: an entry
lies on a path to a selected output exactly when its gradient is positive.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .autoencoder import Decoder


def _step(x):
    # s(x) = 1 for x > 0, including s(0) = 0
    return (x > 0).astype(np.float64)


@dataclass(frozen=True)
class ActivePathMarking:
    W2: sp.csr_matrix  # m x M2, binary
    W1: np.ndarray  # M2 x f, binary
    b1: np.ndarray  # M2, binary


def mark_active_paths(decoder, H):
    """Binary markers over ``W2``, ``W1`` and ``b1`` for outputs ``H``."""
    m, M2 = decoder.W2.shape
    f = decoder.latent_dim
    H = np.asarray(H, dtype=np.int64)
    # binarize: nonzero stored entries are edges
    W2b = sp.csr_matrix(decoder.W2, copy=True)
    W2b.eliminate_zeros()
    W2b.data[:] = 1.0
    W1b = (decoder.W1 != 0.0).astype(np.float64)
    b1b = (decoder.b1 != 0.0).astype(np.float64)
    # linearized forward pass of an all-ones input
    y0 = np.ones(f)
    y1 = W1b @ y0 + b1b
    # indicator error on the selected outputs, then the chain rule
    e = np.zeros(m)
    e[H] = 1.0
    back = np.asarray(W2b.T @ e).ravel()
    gW2 = sp.diags(e) @ W2b @ sp.diags(y1)  # (e y1^T) restricted to the edges of W2
    gW1 = np.outer(back, y0) * W1b
    gb1 = back * b1b
    gW2 = sp.csr_matrix(gW2)
    gW2.data = _step(gW2.data)
    gW2.eliminate_zeros()
    return ActivePathMarking(gW2, _step(gW1), _step(gb1))


class SubnetDecoder:
    """Outputs ``H`` of a decoder computed from the active hidden nodes only.

    Rows follow the sorted order of ``output_index``; every requested output is
    kept, even one with no active path (it then evaluates to zero).
    """

    def __init__(self, W1, b1, W2, act, output_index, hidden_index):
        self.output_index = np.asarray(output_index, dtype=np.int64)
        self.hidden_index = np.asarray(hidden_index, dtype=np.int64)
        W2 = sp.csr_matrix(W2)
        density = W2.nnz / max(1, W2.shape[0] * W2.shape[1])
        # small dense products beat sparse ones once the block is fairly full
        self._net = Decoder(W1, b1, W2.toarray() if density > 0.2 else W2, act)
        self.nnz = int(W2.nnz)

    @property
    def latent_dim(self):
        return self._net.latent_dim

    @property
    def output_dim(self):
        return len(self.output_index)

    @property
    def kept_hidden(self):
        return len(self.hidden_index)

    @property
    def W1(self):
        return self._net.W1

    @property
    def b1(self):
        return self._net.b1

    @property
    def W2(self):
        return self._net.W2

    def forward(self, y):
        return self._net.forward(y)

    __call__ = forward

    def jacobian(self, y):
        return self._net.jacobian(y)

    def forward_and_jacobian(self, y):
        return self._net.forward_and_jacobian(y)

    def jacobian_derivative(self, y):
        return self._net.jacobian_derivative(y)


def extract_subnet(decoder, H):
    """Prune ``decoder`` to the paths that reach the outputs in ``H``."""
    H = np.unique(np.asarray(H, dtype=np.int64).ravel())
    if H.size == 0:
        raise ValueError("output index set H must be nonempty")
    if H[0] < 0 or H[-1] >= decoder.output_dim:
        raise IndexError(f"output indices out of range [0, {decoder.output_dim})")
    mark = mark_active_paths(decoder, H)
    W2H = sp.csr_matrix(decoder.W2)[H].multiply(mark.W2[H]).tocsc()
    kept = np.flatnonzero(np.diff(W2H.indptr))
    W2sn = W2H[:, kept].tocsr()
    W1sn = (decoder.W1 * mark.W1)[kept]
    b1sn = (decoder.b1 * mark.b1)[kept]
    return SubnetDecoder(W1sn, b1sn, W2sn, decoder.act, H, kept)


def subnet_forward(subnet, y):
    return subnet.forward(y)


def subnet_jacobian(subnet, y):
    return subnet.jacobian(y)


def measure_subnet_cost(subnet):
    return {"kept_hidden": subnet.kept_hidden, "nnz": subnet.nnz + subnet.W1.size + subnet.b1.size}

