"""A small float64 tensor engine with reverse-mode autodiff, plus the layers the agents use.

Only what the recurrent actor-critic needs: dense algebra, a handful of
pointwise nonlinearities, slicing/stacking, log-softmax and gather. Every op
records a closure that pushes the output gradient to its parents.
"""

from __future__ import annotations

import contextlib
from typing import Iterable

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording a graph (rollouts, evaluation)."""
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    # graph plumbing ------------------------------------------------------
    @staticmethod
    def _make(data, parents, backward) -> "Tensor":
        out = Tensor(data)
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        return out

    def _accum(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        """Populate ``.grad`` on every leaf reachable from this scalar.

        The graph is released afterwards; a second call without a new forward
        pass raises.
        """
        if self._consumed:
            raise RuntimeError("backward() already called on this graph; run a new forward pass")
        if self.data.size != 1:
            raise ValueError("backward() needs a scalar loss")
        order, seen, stack = [], set(), [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accum(g)
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg
        for node in order:
            if node._backward is not None:
                node._parents = ()
                node._backward = None
        self._consumed = True

    # arithmetic ----------------------------------------------------------
    def __add__(self, other):
        other = as_tensor(other)
        a, b = self.data.shape, other.data.shape
        return Tensor._make(self.data + other.data, (self, other),
                            lambda g: (_unbroadcast(g, a), _unbroadcast(g, b)))

    __radd__ = __add__

    def __sub__(self, other):
        other = as_tensor(other)
        a, b = self.data.shape, other.data.shape
        return Tensor._make(self.data - other.data, (self, other),
                            lambda g: (_unbroadcast(g, a), _unbroadcast(-g, b)))

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __mul__(self, other):
        other = as_tensor(other)
        x, y = self.data, other.data
        return Tensor._make(x * y, (self, other),
                            lambda g: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        x, y = self.data, other.data
        return Tensor._make(x / y, (self, other),
                            lambda g: (_unbroadcast(g / y, x.shape), _unbroadcast(-g * x / (y * y), y.shape)))

    def __neg__(self):
        return Tensor._make(-self.data, (self,), lambda g: (-g,))

    def __matmul__(self, other):
        other = as_tensor(other)
        x, y = self.data, other.data
        return Tensor._make(x @ y, (self, other), lambda g: (g @ y.T, x.T @ g))

    def __getitem__(self, idx):
        shape = self.data.shape

        def back(g):
            full = np.zeros(shape)
            full[idx] = g
            return (full,)

        return Tensor._make(self.data[idx], (self,), back)

    def reshape(self, *shape):
        old = self.data.shape
        return Tensor._make(self.data.reshape(*shape), (self,), lambda g: (g.reshape(old),))

    # reductions ----------------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False):
        shape = self.data.shape

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape),)

        return Tensor._make(self.data.sum(axis=axis, keepdims=keepdims), (self,), back)

    def mean(self, axis=None):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis) * (1.0 / n)

    # pointwise -----------------------------------------------------------
    def tanh(self):
        y = np.tanh(self.data)
        return Tensor._make(y, (self,), lambda g: (g * (1.0 - y * y),))

    def sigmoid(self):
        y = 0.5 * (1.0 + np.tanh(0.5 * self.data))
        return Tensor._make(y, (self,), lambda g: (g * y * (1.0 - y),))

    def exp(self):
        y = np.exp(self.data)
        return Tensor._make(y, (self,), lambda g: (g * y,))

    def log(self):
        x = self.data
        return Tensor._make(np.log(x), (self,), lambda g: (g / x,))

    def square(self):
        x = self.data
        return Tensor._make(x * x, (self,), lambda g: (2.0 * g * x,))

    def clip(self, lo, hi):
        """Clamp values; the gradient passes only where ``lo <= x <= hi``."""
        x = self.data
        inside = (x >= lo) & (x <= hi)
        return Tensor._make(np.clip(x, lo, hi), (self,), lambda g: (g * inside,))

    def log_softmax(self):
        """Log-softmax over the last axis."""
        x = self.data
        shifted = x - x.max(axis=-1, keepdims=True)
        y = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
        p = np.exp(y)
        return Tensor._make(y, (self,), lambda g: (g - p * g.sum(axis=-1, keepdims=True),))

    def gather(self, index):
        """Pick ``self[..., index[...]]`` along the last axis."""
        idx = np.asarray(index, dtype=np.int64)[..., None]
        shape = self.data.shape

        def back(g):
            full = np.zeros(shape)
            np.put_along_axis(full, idx, g[..., None], axis=-1)
            return (full,)

        return Tensor._make(np.take_along_axis(self.data, idx, axis=-1)[..., 0], (self,), back)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def minimum(a, b) -> Tensor:
    """Elementwise min; on ties the gradient goes to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.data <= b.data
    return Tensor._make(np.where(pick_a, a.data, b.data), (a, b),
                        lambda g: (_unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)))


def maximum(a, b) -> Tensor:
    """Elementwise max; on ties the gradient goes to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.data >= b.data
    return Tensor._make(np.where(pick_a, a.data, b.data), (a, b),
                        lambda g: (_unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)))


def stack(tensors: list[Tensor], axis: int = 0) -> Tensor:
    n = len(tensors)
    return Tensor._make(np.stack([t.data for t in tensors], axis=axis), tuple(tensors),
                        lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)))


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    sizes = np.cumsum([t.data.shape[axis] for t in tensors])[:-1]
    return Tensor._make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors),
                        lambda g: tuple(np.split(g, sizes, axis=axis)))


# ----------------------------------------------------------------------------
# layers


def orthogonal(rng: np.random.Generator, rows: int, cols: int, gain: float = 1.0) -> np.ndarray:
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return np.ascontiguousarray(gain * q[:rows, :cols])


class Module:
    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        out = []
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                out.append((prefix + name, value))
            elif isinstance(value, Module):
                out.extend(value.named_parameters(f"{prefix}{name}."))
            elif isinstance(value, list) and value and isinstance(value[0], Module):
                for i, m in enumerate(value):
                    out.extend(m.named_parameters(f"{prefix}{name}.{i}."))
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = np.zeros_like(p.data)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for k, p in self.named_parameters():
            if state[k].shape != p.data.shape:
                raise ValueError(f"shape mismatch for {k}: {state[k].shape} vs {p.data.shape}")
            p.data = np.array(state[k], dtype=np.float64)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, gain: float = 1.0):
        self.W = Tensor(orthogonal(rng, n_in, n_out, gain), requires_grad=True)
        self.b = Tensor(np.zeros(n_out), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.W + self.b


class GRUCell(Module):
    """Gated recurrent unit; gate order in the packed weights is (reset, update, candidate)."""

    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator):
        self.n_in, self.hidden = n_in, hidden
        self.W_in = Tensor(np.concatenate([orthogonal(rng, n_in, hidden) for _ in range(3)], axis=1), requires_grad=True)
        self.W_h = Tensor(np.concatenate([orthogonal(rng, hidden, hidden) for _ in range(3)], axis=1), requires_grad=True)
        self.b_in = Tensor(np.zeros(3 * hidden), requires_grad=True)
        self.b_h = Tensor(np.zeros(3 * hidden), requires_grad=True)

    def input_projection(self, x: Tensor) -> Tensor:
        return x @ self.W_in + self.b_in

    def step_projected(self, xp: Tensor, h: Tensor) -> Tensor:
        """One recurrence step given a precomputed input projection ``xp``."""
        H = self.hidden
        hp = h @ self.W_h + self.b_h
        r = (xp[:, :H] + hp[:, :H]).sigmoid()
        z = (xp[:, H:2 * H] + hp[:, H:2 * H]).sigmoid()
        n = (xp[:, 2 * H:] + r * hp[:, 2 * H:]).tanh()
        return n + z * (h - n)

    def __call__(self, x: Tensor, h: Tensor) -> Tensor:
        if x.shape[-1] != self.n_in or h.shape[-1] != self.hidden or x.shape[0] != h.shape[0]:
            raise ValueError(f"GRU shape mismatch: x {x.shape}, h {h.shape}, cell ({self.n_in}, {self.hidden})")
        return self.step_projected(self.input_projection(x), h)


class RecurrentNet(Module):
    """input -> linear+tanh -> GRU -> one linear head per output group."""

    def __init__(self, n_in: int, hidden: int, head_sizes: Iterable[int], rng: np.random.Generator,
                 head_gain: float = 1.0):
        self.n_in, self.hidden = n_in, hidden
        self.fc = Linear(n_in, hidden, rng)
        self.gru = GRUCell(hidden, hidden, rng)
        self.heads = [Linear(hidden, n, rng, gain=head_gain) for n in head_sizes]

    def step(self, x, h) -> tuple[list[Tensor], Tensor]:
        """Single time step for a batch: ``x`` (B, n_in), ``h`` (B, hidden)."""
        x, h = as_tensor(x), as_tensor(h)
        h = self.gru(self.fc(x).tanh(), h)
        return [head(h) for head in self.heads], h

    def sequence(self, xs, h0) -> list[Tensor]:
        """Unroll over ``xs`` (L, B, n_in) from ``h0`` (B, hidden); head outputs are (L*B, n)."""
        xs = np.asarray(xs.data if isinstance(xs, Tensor) else xs)
        L, B, _ = xs.shape
        xp = self.gru.input_projection(self.fc(Tensor(xs.reshape(L * B, -1))).tanh())
        hs = gru_sequence(self.gru, xp, as_tensor(h0), L)
        return [head(hs) for head in self.heads]


def gru_sequence(cell: GRUCell, xp: Tensor, h0: Tensor, length: int) -> Tensor:
    """Run the recurrence over ``length`` steps as one graph node.

    ``xp`` is the stacked input projection (length*B, 3H), rows grouped by
    time step. Returns all hidden states (length*B, H). The backward pass is
    hand-written BPTT; it is checked against the step-by-step composition
    and finite differences in the test suite.
    """
    H = cell.hidden
    X = xp.data
    B = h0.data.shape[0]
    W_h, b_h = cell.W_h.data, cell.b_h.data
    h_prev = np.empty((length, B, H))
    gates = np.empty((length, B, 3 * H))  # r, z, n
    hn_all = np.empty((length, B, H))
    out = np.empty((length, B, H))
    h = h0.data
    for t in range(length):
        x = X[t * B:(t + 1) * B]
        hp = h @ W_h + b_h
        r = 0.5 * (1.0 + np.tanh(0.5 * (x[:, :H] + hp[:, :H])))
        z = 0.5 * (1.0 + np.tanh(0.5 * (x[:, H:2 * H] + hp[:, H:2 * H])))
        n = np.tanh(x[:, 2 * H:] + r * hp[:, 2 * H:])
        h_prev[t] = h
        gates[t, :, :H], gates[t, :, H:2 * H], gates[t, :, 2 * H:] = r, z, n
        hn_all[t] = hp[:, 2 * H:]
        h = n + z * (h - n)
        out[t] = h

    def back(g):
        g = g.reshape(length, B, H)
        d_pre = np.empty((length, B, 3 * H))  # gradient w.r.t. input-side pre-activations
        d_hp = np.empty((length, B, 3 * H))  # gradient w.r.t. h @ W_h + b_h
        dh = np.zeros((B, H))
        for t in reversed(range(length)):
            r, z, n = gates[t, :, :H], gates[t, :, H:2 * H], gates[t, :, 2 * H:]
            dh = dh + g[t]
            dn = dh * (1.0 - z)
            dz = dh * (h_prev[t] - n)
            dpre_n = dn * (1.0 - n * n)
            dpre_r = dpre_n * hn_all[t] * r * (1.0 - r)
            dpre_z = dz * z * (1.0 - z)
            d_pre[t, :, :H], d_pre[t, :, H:2 * H], d_pre[t, :, 2 * H:] = dpre_r, dpre_z, dpre_n
            d_hp[t, :, :H], d_hp[t, :, H:2 * H], d_hp[t, :, 2 * H:] = dpre_r, dpre_z, dpre_n * r
            dh = dh * z + d_hp[t] @ W_h.T
        flat_hp = d_hp.reshape(length * B, 3 * H)
        dW = h_prev.reshape(length * B, H).T @ flat_hp
        return d_pre.reshape(length * B, 3 * H), dh, dW, flat_hp.sum(axis=0)

    return Tensor._make(out.reshape(length * B, H), (xp, h0, cell.W_h, cell.b_h), back)


class FrozenStack:
    """Graph-free snapshot of K structurally identical nets, evaluated together.

    Used by rollout workers: same arithmetic as ``RecurrentNet.step`` but on
    plain arrays, batched over nets with ``np.matmul``. Rebuild after every
    parameter update.
    """

    def __init__(self, nets: list[RecurrentNet]):
        def grab(get):
            return np.stack([np.array(get(n), dtype=np.float64) for n in nets])

        self.hidden = nets[0].hidden
        self.fc_W = grab(lambda n: n.fc.W.data)
        self.fc_b = grab(lambda n: n.fc.b.data)[:, None, :]
        self.W_in = grab(lambda n: n.gru.W_in.data)
        self.b_in = grab(lambda n: n.gru.b_in.data)[:, None, :]
        self.W_h = grab(lambda n: n.gru.W_h.data)
        self.b_h = grab(lambda n: n.gru.b_h.data)[:, None, :]
        self.head_sizes = [head.W.data.shape[1] for head in nets[0].heads]
        # all heads fused into one matrix per net; slices are taken after the product
        self.head_W = np.concatenate([grab(lambda n, k=k: n.heads[k].W.data) for k in range(len(self.head_sizes))], axis=-1)
        self.head_b = np.concatenate([grab(lambda n, k=k: n.heads[k].b.data) for k in range(len(self.head_sizes))], axis=-1)
        self._splits = np.cumsum(self.head_sizes)[:-1]

    def step(self, x: np.ndarray, h: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        """``x`` (K, B, n_in), ``h`` (K, B, hidden) -> head outputs (K, B, n_k) and new hidden."""
        H = self.hidden
        K = x.shape[0]
        h_new = np.empty(h.shape)
        out = np.empty(h.shape[:2] + (self.head_W.shape[-1],))
        # a loop of 2D products beats one batched 3D product at these tiny shapes
        for k in range(K):
            xp = np.tanh(x[k] @ self.fc_W[k] + self.fc_b[k]) @ self.W_in[k] + self.b_in[k]
            hp = h[k] @ self.W_h[k] + self.b_h[k]
            rz = 0.5 * (1.0 + np.tanh(0.5 * (xp[:, :2 * H] + hp[:, :2 * H])))
            n = np.tanh(xp[:, 2 * H:] + rz[:, :H] * hp[:, 2 * H:])
            h_new[k] = n + rz[:, H:] * (h[k] - n)
            out[k] = h_new[k] @ self.head_W[k] + self.head_b[k]
        return np.split(out, self._splits, axis=-1), h_new


# ----------------------------------------------------------------------------
# categorical policy heads


def categorical_log_prob(logits: list[Tensor], actions: np.ndarray) -> Tensor:
    """Joint log-probability of factorised actions: sum of per-head log-probs."""
    total = None
    for k, lg in enumerate(logits):
        lp = lg.log_softmax().gather(actions[..., k])
        total = lp if total is None else total + lp
    return total


def categorical_entropy(logits: list[Tensor]) -> Tensor:
    total = None
    for lg in logits:
        logp = lg.log_softmax()
        ent = -(logp.exp() * logp).sum(axis=-1)
        total = ent if total is None else total + ent
    return total


def softmax(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def sample_action(logits, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sample one index per head and row.

    ``logits`` is a list of (B, n_k) arrays. Returns ``(actions (B, K), log_prob (B,), entropy (B,))``
    where log-prob and entropy are summed over heads.
    """
    arrays = [np.atleast_2d(lg.data if isinstance(lg, Tensor) else np.asarray(lg, dtype=float)) for lg in logits]
    if not all(np.all(np.isfinite(a)) for a in arrays):
        raise FloatingPointError("non-finite logits")
    B = arrays[0].shape[0]
    draws = rng.random((B, len(arrays)))
    actions = np.zeros((B, len(arrays)), dtype=np.int64)
    log_prob = np.zeros(B)
    entropy = np.zeros(B)
    for k, lg in enumerate(arrays):
        shifted = lg - lg.max(axis=-1, keepdims=True)
        logp = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
        p = np.exp(logp)
        cdf = np.cumsum(p, axis=-1)
        idx = (draws[:, k:k + 1] * cdf[:, -1:] >= cdf).sum(axis=-1)
        idx = np.minimum(idx, lg.shape[-1] - 1)
        actions[:, k] = idx
        log_prob += logp[np.arange(B), idx]
        entropy -= (p * logp).sum(axis=-1)
    return actions, log_prob, entropy


# ----------------------------------------------------------------------------
# optimisation and checkpoints


class Adam:
    def __init__(self, params: list[Tensor], lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
                 max_grad_norm: float | None = None):
        self.params = list(params)
        self.lr, self.betas, self.eps = lr, tuple(betas), eps
        self.max_grad_norm = max_grad_norm
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = np.zeros_like(p.data)

    def grad_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in self.params if p.grad is not None)))

    def step(self) -> float:
        norm = self.grad_norm()
        scale = 1.0
        if self.max_grad_norm is not None and norm > self.max_grad_norm:
            scale = self.max_grad_norm / (norm + 1e-12)
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad * scale
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return norm


def save_checkpoint(path, modules: dict[str, Module]) -> None:
    """Write every parameter as a named float64 array (``<module>/<param>``) to an ``.npz`` file."""
    arrays = {f"{name}/{k}": v for name, m in modules.items() for k, v in m.state_dict().items()}
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path, modules: dict[str, Module]) -> None:
    with np.load(path) as data:
        for name, m in modules.items():
            prefix = f"{name}/"
            m.load_state_dict({k[len(prefix):]: data[k] for k in data.files if k.startswith(prefix)})
