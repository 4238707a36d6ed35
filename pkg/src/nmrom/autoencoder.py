"""Shallow masked autoencoder.

Encoder: ``en(x) = We2 s(We1 x + be1) + be2`` (one hidden layer, linear latent
layer). Decoder: ``de(y) = (S * W2) s(W1 y + b1)`` with a sparsity mask ``S``
and no output bias. ``W2`` is stored in CSR form on the mask pattern, so masked
entries are structurally zero and can never be trained.

Gradients are derived by hand; training uses Adam with a plateau learning-rate
schedule and validation-based early stopping.
"""

import math
from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .exceptions import DimensionMismatchError, DivergenceError
from .pod import NormalizationStats, SnapshotMatrix, compute_normalization, validation_split

# --- activations -----------------------------------------------------------


def _sigmoid(x):
    return expit(x)


def _dsigmoid(x):
    s = expit(x)
    return s * (1.0 - s)


def _d2sigmoid(x):
    s = expit(x)
    return s * (1.0 - s) * (1.0 - 2.0 * s)


def _swish(x):
    return x * expit(x)


def _dswish(x):
    s = expit(x)
    return s + x * s * (1.0 - s)


def _d2swish(x):
    s = expit(x)
    return s * (1.0 - s) * (2.0 + x * (1.0 - 2.0 * s))


def _linear(x):
    return np.array(x, dtype=np.float64, copy=True)


def _dlinear(x):
    return np.ones_like(x)


def _d2linear(x):
    return np.zeros_like(x)


@numba.njit(cache=True)
def _act_pair_kernel(x, a, da, swish):
    x = x.reshape(-1)
    a = a.reshape(-1)
    da = da.reshape(-1)
    for i in range(x.size):
        xi = x[i]
        # logistic, stable for either sign
        if xi >= 0.0:
            s = 1.0 / (1.0 + np.exp(-xi))
        else:
            e = np.exp(xi)
            s = e / (1.0 + e)
        ds = s * (1.0 - s)
        if swish:
            a[i] = xi * s
            da[i] = s + xi * ds
        else:
            a[i] = s
            da[i] = ds


def _pair(x, swish):
    x = np.ascontiguousarray(x, dtype=np.float64)
    a = np.empty_like(x)
    da = np.empty_like(x)
    _act_pair_kernel(x, a, da, swish)
    return a, da


def _sigmoid_pair(x):
    return _pair(x, False)


def _swish_pair(x):
    return _pair(x, True)


def _linear_pair(x):
    return _linear(x), np.ones_like(x)


_PAIRS = {"sigmoid": _sigmoid_pair, "swish": _swish_pair, "linear": _linear_pair}

ACTIVATIONS = {
    "sigmoid": (_sigmoid, _dsigmoid, _d2sigmoid),
    "swish": (_swish, _dswish, _d2swish),
    "linear": (_linear, _dlinear, _d2linear),  # test stub
}


def activation(name):
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}; choose from {sorted(ACTIVATIONS)}") from None


# --- masks -----------------------------------------------------------------


def mask_width(m, b, delta_b):
    return b + (m - 1) * delta_b


def build_mask_1d(m, b, delta_b):
    """Row ``i`` has ones at columns ``i*delta_b ... i*delta_b + b - 1``."""
    if m < 1 or b < 1 or delta_b < 1:
        raise ValueError("m, b and delta_b must be >= 1")
    M2 = mask_width(m, b, delta_b)
    cols = (np.arange(m)[:, None] * delta_b + np.arange(b)[None, :]).ravel()
    indptr = np.arange(m + 1) * b
    return sp.csr_matrix((np.ones(m * b), cols, indptr), shape=(m, M2))


def build_mask_2d(nx_int, ny_int, b, delta_b):
    """1D generator rows OR'd over each point's 5-point neighbourhood."""
    m = nx_int * ny_int
    base = build_mask_1d(m, b, delta_b)
    p = np.arange(m)
    i, j = p % nx_int, p // nx_int
    rows, cols = [p], [p]
    for ok, q in ((i > 0, p - 1), (i < nx_int - 1, p + 1), (j > 0, p - nx_int), (j < ny_int - 1, p + nx_int)):
        rows.append(p[ok])
        cols.append(q[ok])
    A = sp.csr_matrix((np.ones(sum(len(r) for r in rows)), (np.concatenate(rows), np.concatenate(cols))), shape=(m, m))
    S = (A @ base).tocsr()
    S.data[:] = 1.0
    S.sort_indices()
    return S


# --- maps ------------------------------------------------------------------


class Decoder:
    """``y -> W2 s(W1 y + b1)``; ``W2`` may be dense or sparse."""

    def __init__(self, W1, b1, W2, act):
        self.W1 = np.asarray(W1, dtype=np.float64)
        self.b1 = np.asarray(b1, dtype=np.float64)
        self.W2 = W2
        self.act = act
        self._s, self._ds, self._d2s = activation(act)
        if self.W1.shape[0] != self.b1.shape[0] or W2.shape[1] != self.W1.shape[0]:
            raise DimensionMismatchError("decoder layer shapes are inconsistent")

    @property
    def latent_dim(self):
        return self.W1.shape[1]

    @property
    def output_dim(self):
        return self.W2.shape[0]

    def _check(self, y):
        y = np.asarray(y, dtype=np.float64)
        if y.shape[-1] != self.latent_dim:
            raise DimensionMismatchError(f"latent vector has length {y.shape[-1]}, expected {self.latent_dim}")
        return y

    def forward(self, y):
        y = self._check(y)
        if y.ndim == 2:
            return np.asarray((self.W2 @ self._s(y @ self.W1.T + self.b1).T).T)
        return np.asarray(self.W2 @ self._s(self.W1 @ y + self.b1)).ravel()

    __call__ = forward

    def jacobian(self, y):
        y = self._check(y)
        z = self.W1 @ y + self.b1
        return np.asarray(self.W2 @ (self._ds(z)[:, None] * self.W1))

    def forward_and_jacobian(self, y):
        y = self._check(y)
        z = self.W1 @ y + self.b1
        out = np.asarray(self.W2 @ self._s(z)).ravel()
        return out, np.asarray(self.W2 @ (self._ds(z)[:, None] * self.W1))

    def jacobian_derivative(self, y):
        """``D[k] = dJ/dy_k``, shape ``(f, m, f)``."""
        y = self._check(y)
        z = self.W1 @ y + self.b1
        d2 = self._d2s(z)
        f = self.latent_dim
        out = np.empty((f, self.output_dim, f))
        for k in range(f):
            out[k] = np.asarray(self.W2 @ ((d2 * self.W1[:, k])[:, None] * self.W1))
        return out


class Encoder:
    """``x -> We2 s(We1 x + be1) + be2``."""

    def __init__(self, We1, be1, We2, be2, act):
        self.We1 = np.asarray(We1, dtype=np.float64)
        self.be1 = np.asarray(be1, dtype=np.float64)
        self.We2 = np.asarray(We2, dtype=np.float64)
        self.be2 = np.asarray(be2, dtype=np.float64)
        self.act = act
        self._s = activation(act)[0]

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.We1.shape[1]:
            raise DimensionMismatchError(f"input has length {x.shape[-1]}, expected {self.We1.shape[1]}")
        if x.ndim == 2:
            return self._s(x @ self.We1.T + self.be1) @ self.We2.T + self.be2
        return self.We2 @ self._s(self.We1 @ x + self.be1) + self.be2

    __call__ = forward


# --- parameters ------------------------------------------------------------

PARAM_NAMES = ("We1", "be1", "We2", "be2", "W1", "b1", "W2")


@dataclass
class AutoencoderParams:
    """All trainable tensors plus the mask pattern and normalization.

    ``W2`` holds the values of the masked output layer aligned with
    ``mask_indices``/``mask_indptr`` (CSR of shape ``(m, M2)``).
    """

    We1: np.ndarray
    be1: np.ndarray
    We2: np.ndarray
    be2: np.ndarray
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    mask_indices: np.ndarray
    mask_indptr: np.ndarray
    hidden_width: int
    activation: str = "swish"
    norm: NormalizationStats = None
    meta: dict = field(default_factory=dict)

    @property
    def m(self):
        return len(self.mask_indptr) - 1

    @property
    def latent_dim(self):
        return self.W1.shape[1]

    def tensors(self):
        return {k: getattr(self, k) for k in PARAM_NAMES}

    def W2_sparse(self, values=None):
        vals = self.W2 if values is None else values
        return sp.csr_matrix((vals, self.mask_indices, self.mask_indptr), shape=(self.m, self.hidden_width))

    def mask(self):
        return self.W2_sparse(np.ones_like(self.W2))

    def W2_dense(self):
        return self.W2_sparse().toarray()

    def decoder(self):
        """Decoder in normalized coordinates."""
        return Decoder(self.W1, self.b1, self.W2_sparse(), self.activation)

    def encoder(self):
        return Encoder(self.We1, self.be1, self.We2, self.be2, self.activation)

    def copy(self):
        kw = {k: v.copy() for k, v in self.tensors().items()}
        return AutoencoderParams(
            **kw,
            mask_indices=self.mask_indices,
            mask_indptr=self.mask_indptr,
            hidden_width=self.hidden_width,
            activation=self.activation,
            norm=self.norm,
            meta=dict(self.meta),
        )

    def n_weights(self):
        """Learnable entries; masked-out decoder weights are not counted."""
        return int(sum(v.size for v in self.tensors().values()))


def _uniform(rng, bound, shape):
    return rng.uniform(-bound, bound, size=shape)


def init_params(mask, latent_dim, hidden_dim, act="swish", seed=0, norm=None, meta=None):
    """Kaiming-uniform initialization (bound ``1/sqrt(fan_in)`` as in common
    deep-learning defaults). For the masked layer, fan-in is the number of
    unmasked entries in the row."""
    mask = sp.csr_matrix(mask)
    mask.sort_indices()
    m, M2 = mask.shape
    rng = np.random.default_rng(seed)
    We1 = _uniform(rng, 1.0 / math.sqrt(m), (hidden_dim, m))
    be1 = _uniform(rng, 1.0 / math.sqrt(m), hidden_dim)
    We2 = _uniform(rng, 1.0 / math.sqrt(hidden_dim), (latent_dim, hidden_dim))
    be2 = _uniform(rng, 1.0 / math.sqrt(hidden_dim), latent_dim)
    W1 = _uniform(rng, 1.0 / math.sqrt(latent_dim), (M2, latent_dim))
    b1 = _uniform(rng, 1.0 / math.sqrt(latent_dim), M2)
    nnz_row = np.diff(mask.indptr)
    if np.any(nnz_row == 0):
        raise ValueError("every mask row needs at least one nonzero")
    bounds = np.repeat(1.0 / np.sqrt(nnz_row), nnz_row)
    W2 = rng.uniform(-1.0, 1.0, size=mask.nnz) * bounds
    return AutoencoderParams(
        We1, be1, We2, be2, W1, b1, W2,
        mask_indices=mask.indices.astype(np.int64),
        mask_indptr=mask.indptr.astype(np.int64),
        hidden_width=M2,
        activation=act,
        norm=norm if norm is not None else NormalizationStats.identity(m),
        meta=dict(meta or {}),
    )


# --- loss and gradients ----------------------------------------------------

@numba.njit(cache=True)
def _masked_outer_kernel(dT, aT, rows, cols, out):
    B = dT.shape[1]
    for k in range(rows.size):
        r = rows[k]
        c = cols[k]
        acc = 0.0
        for b in range(B):
            acc += dT[r, b] * aT[c, b]
        out[k] = acc


def _masked_outer(delta, act, rows, cols):
    """``sum_b delta[b, rows] * act[b, cols]`` for each stored entry."""
    out = np.empty(len(rows))
    _masked_outer_kernel(np.ascontiguousarray(delta.T), np.ascontiguousarray(act.T),
                         np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64), out)
    return out


def _row_ids(params):
    return np.repeat(np.arange(params.m), np.diff(params.mask_indptr))


def autoencoder_loss_grads(params, X, row_ids=None):
    """Mean-squared reconstruction loss of normalized batch ``X`` (rows are samples)
    and its gradient with respect to every tensor in :data:`PARAM_NAMES`."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValueError("batch must be a non-empty 2D array")
    if X.shape[1] != params.m:
        raise DimensionMismatchError(f"batch feature dim {X.shape[1]} != {params.m}")
    activation(params.activation)
    pair = _PAIRS[params.activation]
    W2 = params.W2_sparse()
    B, m = X.shape
    z1 = X @ params.We1.T + params.be1
    a1, da1 = pair(z1)
    y = a1 @ params.We2.T + params.be2
    z2 = y @ params.W1.T + params.b1
    a2, da2 = pair(z2)
    out = np.asarray((W2 @ a2.T).T)
    diff = out - X
    loss = float(np.sum(diff * diff) / (B * m))

    d_out = (2.0 / (B * m)) * diff
    rows = _row_ids(params) if row_ids is None else row_ids
    gW2 = _masked_outer(d_out, a2, rows, params.mask_indices)
    dz2 = np.asarray((W2.T @ d_out.T).T) * da2
    gW1 = dz2.T @ y
    gb1 = dz2.sum(axis=0)
    dy = dz2 @ params.W1
    gWe2 = dy.T @ a1
    gbe2 = dy.sum(axis=0)
    dz1 = (dy @ params.We2) * da1
    gWe1 = dz1.T @ X
    gbe1 = dz1.sum(axis=0)
    grads = {"We1": gWe1, "be1": gbe1, "We2": gWe2, "be2": gbe2, "W1": gW1, "b1": gb1, "W2": gW2}
    return loss, grads


def reconstruct(params, X):
    """Autoencoder output in normalized coordinates for rows of ``X``."""
    return params.decoder().forward(params.encoder().forward(X))


def reconstruction_loss(params, X, batch=512):
    X = np.asarray(X, dtype=np.float64)
    total = 0.0
    for s in range(0, X.shape[0], batch):
        d = reconstruct(params, X[s:s + batch]) - X[s:s + batch]
        total += float(np.sum(d * d))
    return total / X.size


# --- Adam ------------------------------------------------------------------


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


@numba.njit(cache=True, fastmath=True)
def _adam_kernel(p, g, m, v, beta1, beta2, step, c2_sqrt, eps):
    p = p.reshape(-1)
    g = g.reshape(-1)
    m = m.reshape(-1)
    v = v.reshape(-1)
    for i in range(p.size):
        gi = g[i]
        mi = beta1 * m[i] + (1.0 - beta1) * gi
        vi = beta2 * v[i] + (1.0 - beta2) * gi * gi
        m[i] = mi
        v[i] = vi
        p[i] -= step * mi / (np.sqrt(vi) / c2_sqrt + eps)


def adam_update(state, params, grads, lr):
    """One bias-corrected Adam step, applied in place to the arrays in ``params``.

    The update is ``p -= lr * m_hat / (sqrt(v_hat) + eps)`` with
    ``m_hat = m / (1 - beta1^t)`` and ``v_hat = v / (1 - beta2^t)``; it runs as a
    single fused loop because it is memory-bound on the wide encoder layer.
    """
    state.t += 1
    c1 = 1.0 - state.beta1**state.t
    c2 = 1.0 - state.beta2**state.t
    for k, g in grads.items():
        p = params[k]
        if k not in state.m:
            state.m[k] = np.zeros_like(p)
            state.v[k] = np.zeros_like(p)
        _adam_kernel(p, np.ascontiguousarray(g), state.m[k], state.v[k],
                     state.beta1, state.beta2, lr / c1, np.sqrt(c2), state.eps)
    return state


# --- training --------------------------------------------------------------


@dataclass
class TrainingConfig:
    batch_size: int = 20
    max_epochs: int = 10000
    lr: float = 1e-3
    lr_decay: float = 10.0
    lr_patience: int = 10
    stop_patience: int = 200
    seed: int = 0
    val_fraction: float = 0.1
    stagnation_tol: float = 1e-6
    overfit_ratio: float = 3.0

    def __post_init__(self):
        for name in ("batch_size", "max_epochs", "lr", "lr_decay", "lr_patience", "stop_patience", "overfit_ratio"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in [0, 1)")


@dataclass
class TrainingResult:
    params: AutoencoderParams
    train_loss: list
    val_loss: list
    best_epoch: int
    lr_history: list

    @property
    def epochs(self):
        return len(self.train_loss)

    @property
    def overfit_ratio(self):
        if not self.val_loss:
            return 1.0
        tr = self.train_loss[self.best_epoch]
        return self.val_loss[self.best_epoch] / tr if tr > 0 else math.inf

    def overfit(self, limit=3.0):
        return self.overfit_ratio > limit


class _Plateau:
    """Counts epochs without a relative improvement of at least ``tol``."""

    def __init__(self, tol):
        self.tol = tol
        self.best = math.inf
        self.bad = 0

    def step(self, value):
        if value < self.best * (1.0 - self.tol):
            self.best = value
            self.bad = 0
            return True
        self.bad += 1
        return False


def train_autoencoder(snapshots, mask, config, latent_dim, hidden_dim, act="swish", target="[-1,1]",
                      norm=None, meta=None, log=None):
    """Train on the columns of ``snapshots`` (raw states, ``m x N``).

    Deterministic given ``config.seed``. Returns the parameters with the best
    validation loss (training loss if there is no validation set).
    """
    S = snapshots.data if isinstance(snapshots, SnapshotMatrix) else np.asarray(snapshots, dtype=np.float64)
    if norm is None:
        norm = compute_normalization(S, target)
    X = norm.normalize(S.T)
    N = X.shape[0]
    tr_idx, val_idx = validation_split(N, config.val_fraction, config.seed)
    Xtr, Xval = X[tr_idx], X[val_idx]
    meta = dict(meta or {})
    meta.update(seed=config.seed)
    params = init_params(mask, latent_dim, hidden_dim, act, seed=config.seed, norm=norm, meta=meta)
    rows = _row_ids(params)
    tensors = params.tensors()
    rng = np.random.default_rng(config.seed + 1)
    adam = AdamState()
    lr = config.lr
    lr_plateau = _Plateau(config.stagnation_tol)
    stop_plateau = _Plateau(config.stagnation_tol)
    best = params.copy()
    best_epoch = 0
    hist_tr, hist_val, hist_lr = [], [], []
    for epoch in range(config.max_epochs):
        order = rng.permutation(len(Xtr))
        total = 0.0
        for s in range(0, len(order), config.batch_size):
            batch = Xtr[order[s:s + config.batch_size]]
            loss, grads = autoencoder_loss_grads(params, batch, rows)
            if not math.isfinite(loss):
                raise DivergenceError(f"training loss became non-finite at epoch {epoch}")
            adam_update(adam, tensors, grads, lr)
            total += loss * len(batch)
        train_loss = total / len(Xtr)
        val_loss = reconstruction_loss(params, Xval) if len(Xval) else train_loss
        if not math.isfinite(val_loss):
            raise DivergenceError(f"validation loss became non-finite at epoch {epoch}")
        hist_tr.append(train_loss)
        hist_val.append(val_loss)
        hist_lr.append(lr)
        if log is not None:
            log(epoch, train_loss, val_loss, lr)
        if not lr_plateau.step(train_loss) and lr_plateau.bad >= config.lr_patience:
            lr /= config.lr_decay
            lr_plateau.bad = 0
        if stop_plateau.step(val_loss):
            best = params.copy()
            best_epoch = epoch
        elif stop_plateau.bad >= config.stop_patience:
            break
    return TrainingResult(best, hist_tr, hist_val, best_epoch, hist_lr)


# --- scaled maps -----------------------------------------------------------


@dataclass
class ScaledMaps:
    """``h`` acts on ``u - u_ref``; ``g`` returns ``u - u_ref``."""

    h: Encoder
    g: Decoder
    u_ref: np.ndarray

    def encode(self, u):
        return self.h(np.asarray(u) - self.u_ref)

    def decode(self, y):
        return self.u_ref + self.g(y)


def extract_scaled_maps(params):
    """Fold the normalization into the first encoder and last decoder layers."""
    norm = params.norm
    h = Encoder(params.We1 * norm.u_scale[None, :], params.be1, params.We2, params.be2, params.activation)
    row_scale = np.repeat(1.0 / norm.u_scale, np.diff(params.mask_indptr))
    g = Decoder(params.W1, params.b1, params.W2_sparse(params.W2 * row_scale), params.activation)
    return ScaledMaps(h, g, norm.u_ref.copy())


def compute_aic(e, n_weights, n_samples):
    """``ln(e) + 2 N_w / N``."""
    if not e > 0:
        raise ValueError("loss must be positive for AIC")
    if n_samples <= 0:
        raise ValueError("sample count must be positive")
    return math.log(e) + 2.0 * n_weights / n_samples


def nonlinear_projection_error(traj, h, g, u_ref):
    """Relative error of ``u -> u_ref + g(h(u - u_ref))`` over a trajectory."""
    states = traj.states if hasattr(traj, "states") else np.asarray(traj)
    D = states - u_ref
    E = D - g(h(D))
    den = float(np.sum(states**2))
    if den == 0.0:
        raise ZeroDivisionError("all reference states are zero")
    return float(np.sqrt(np.sum(E**2) / den))
