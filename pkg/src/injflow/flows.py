"""Bijective flow layers: affine coupling and affine autoregressive maps.

Both kinds are exactly invertible in closed form and carry analytic
log-determinants.  Conditioner subnets are small tanh MLPs; log-scales are
hard-clamped to [-scale_clamp, scale_clamp] before exponentiation so every
layer stays invertible and admits a finite Lipschitz bound on norm balls.
"""

from __future__ import annotations

import numpy as np

from ._util import as_batch, as_rng, spectral_norm, unbatch
from .errors import InvalidArgumentError, InvalidLayerError, NumericError

SCALE_CLAMP = 5.0
DEFAULT_SUBNET_WIDTH = 32


class Mlp:
    """Fully-connected subnet: tanh hidden layers, linear output.

    final_scale multiplies the output layer's init; zero makes the subnet
    start as the constant-zero map so the surrounding flow starts at the
    identity.
    """

    def __init__(self, sizes, rng=None, final_scale: float = 0.0,
                 weights=None, biases=None):
        self.sizes = [int(s) for s in sizes]
        if len(self.sizes) < 2:
            raise InvalidLayerError("Mlp needs at least input and output sizes")
        if weights is not None:
            self.weights = [np.asarray(w, dtype=float).copy() for w in weights]
            self.biases = [np.asarray(b, dtype=float).copy() for b in biases]
        else:
            rng = as_rng(rng)
            self.weights, self.biases = [], []
            for k in range(len(self.sizes) - 1):
                fan_in = self.sizes[k]
                scale = 1.0 / np.sqrt(fan_in)
                if k == len(self.sizes) - 2:
                    scale *= final_scale
                self.weights.append(rng.normal(0.0, 1.0, size=(self.sizes[k + 1], fan_in)) * scale)
                self.biases.append(np.zeros(self.sizes[k + 1]))

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    def __call__(self, x):
        h = np.atleast_2d(np.asarray(x, dtype=float))
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.T + b[None, :]
            if k != last:
                h = np.tanh(h)
        return h

    def forward_with_cache(self, X):
        acts = [X]
        h = X
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.T + b[None, :]
            if k != last:
                h = np.tanh(h)
            acts.append(h)
        return h, acts

    def vjp(self, cache, grad_out):
        acts = cache
        grads = {}
        g = grad_out
        last = len(self.weights) - 1
        for k in range(last, -1, -1):
            if k != last:
                g = g * (1.0 - acts[k + 1] ** 2)  # tanh'
            grads[f"w{k}"] = g.T @ acts[k]
            grads[f"b{k}"] = g.sum(axis=0)
            g = g @ self.weights[k]
        return g, grads

    def parameters(self):
        out = []
        for k in range(len(self.weights)):
            out.append((f"w{k}", self.weights[k]))
            out.append((f"b{k}", self.biases[k]))
        return out

    def lipschitz_bound(self) -> float:
        prod = 1.0
        for w in self.weights:
            prod *= spectral_norm(w)
        return prod

    def output_bound(self, radius: float) -> float:
        """Bound on ||output||_2 over inputs with norm <= radius."""
        r = radius
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            r = spectral_norm(w) * r + float(np.linalg.norm(b))
            if k != last:
                r = min(r, np.sqrt(w.shape[0]))  # |tanh| <= 1 per coordinate
        return r

    def to_config(self) -> dict:
        return {"sizes": self.sizes,
                "weights": [w.tolist() for w in self.weights],
                "biases": [b.tolist() for b in self.biases]}

    @classmethod
    def from_config(cls, cfg: dict) -> "Mlp":
        return cls(cfg["sizes"], weights=cfg["weights"], biases=cfg["biases"])


def _clamp(s: np.ndarray, clamp: float) -> np.ndarray:
    return np.clip(s, -clamp, clamp)


def _block_norm_bound(diag_norm: float, cross_norm: float) -> float:
    """sigma_max of [[diag_norm, cross_norm], [0, 1]]: upper bound for the
    operator norm of a 2x2 block-triangular Jacobian with those block norms."""
    return spectral_norm(np.array([[diag_norm, cross_norm], [0.0, 1.0]]))


class CouplingLayer:
    """Affine coupling: permute, split at d, rescale-and-shift the head.

    y = [a * exp(s(b)) + t(b), b] with (a, b) the split of the permuted
    input; exactly invertible for any subnets since exp(s) > 0.
    """

    def __init__(self, dim: int, split: int, s_net, t_net, perm=None,
                 scale_clamp: float = SCALE_CLAMP):
        if not (1 <= split < dim):
            raise InvalidLayerError(f"split must satisfy 1 <= d < n, got {split}/{dim}")
        self.dim = int(dim)
        self.split = int(split)
        self.s_net = s_net
        self.t_net = t_net
        self.scale_clamp = float(scale_clamp)
        if perm is None:
            perm = np.arange(dim)
        self.perm = np.asarray(perm, dtype=int)
        if sorted(self.perm.tolist()) != list(range(dim)):
            raise InvalidLayerError("perm must be a permutation of 0..n-1")

    def _subnet_out(self, net, b, what: str):
        out = np.atleast_2d(np.asarray(net(b), dtype=float))
        if not np.all(np.isfinite(out)):
            raise NumericError(f"non-finite {what} subnet output")
        if out.shape != (b.shape[0], self.split):
            raise InvalidArgumentError(
                f"{what} subnet returned shape {out.shape}, "
                f"expected ({b.shape[0]}, {self.split})")
        return out

    def forward(self, x):
        X, single = as_batch(x, self.dim)
        xp = X[:, self.perm]
        a, b = xp[:, :self.split], xp[:, self.split:]
        s = _clamp(self._subnet_out(self.s_net, b, "scale"), self.scale_clamp)
        t = self._subnet_out(self.t_net, b, "shift")
        out = np.concatenate([a * np.exp(s) + t, b], axis=1)
        return unbatch(out, single)

    def inverse(self, y):
        Y, single = as_batch(y, self.dim)
        ya, b = Y[:, :self.split], Y[:, self.split:]
        s = _clamp(self._subnet_out(self.s_net, b, "scale"), self.scale_clamp)
        t = self._subnet_out(self.t_net, b, "shift")
        a = (ya - t) * np.exp(-s)
        out = np.empty_like(Y)
        out[:, self.perm] = np.concatenate([a, b], axis=1)
        return unbatch(out, single)

    def log_det(self, x):
        X, single = as_batch(x, self.dim)
        b = X[:, self.perm][:, self.split:]
        s = _clamp(self._subnet_out(self.s_net, b, "scale"), self.scale_clamp)
        return unbatch(s.sum(axis=1), single)

    def forward_with_cache(self, X):
        xp = X[:, self.perm]
        a, b = xp[:, :self.split], xp[:, self.split:]
        s_raw, s_cache = self.s_net.forward_with_cache(b)
        t, t_cache = self.t_net.forward_with_cache(b)
        s = _clamp(s_raw, self.scale_clamp)
        es = np.exp(s)
        out = np.concatenate([a * es + t, b], axis=1)
        return out, {"a": a, "es": es, "s_raw": s_raw,
                     "s_cache": s_cache, "t_cache": t_cache}

    def vjp(self, cache, grad_out):
        d = self.split
        gya, gb = grad_out[:, :d], grad_out[:, d:].copy()
        es, a = cache["es"], cache["a"]
        ga = gya * es
        gs = gya * a * es
        gs = gs * (np.abs(cache["s_raw"]) < self.scale_clamp)
        gb_s, s_grads = self.s_net.vjp(cache["s_cache"], gs)
        gb_t, t_grads = self.t_net.vjp(cache["t_cache"], gya)
        gb += gb_s + gb_t
        gx = np.empty_like(grad_out)
        gx[:, self.perm] = np.concatenate([ga, gb], axis=1)
        grads = {f"s_net.{k}": v for k, v in s_grads.items()}
        grads.update({f"t_net.{k}": v for k, v in t_grads.items()})
        return gx, grads

    def parameters(self):
        out = [(f"s_net.{k}", v) for k, v in self.s_net.parameters()]
        out += [(f"t_net.{k}", v) for k, v in self.t_net.parameters()]
        return out

    def _scale_range(self, radius: float) -> float:
        zero = np.zeros((1, self.dim - self.split))
        s0 = float(np.abs(np.asarray(self.s_net(zero))).max())
        return min(self.scale_clamp,
                   s0 + self.s_net.lipschitz_bound() * radius)

    def lipschitz_bound(self, radius: float) -> float:
        """Valid on the ball ||x||_2 <= radius (the head a enters the
        cross-derivative scaled by its magnitude, so no global bound exists)."""
        s_max = self._scale_range(radius)
        es = float(np.exp(s_max))
        cross = radius * es * self.s_net.lipschitz_bound() + self.t_net.lipschitz_bound()
        return _block_norm_bound(es, cross)

    def output_radius(self, radius: float) -> float:
        s_max = self._scale_range(radius)
        t_bound = self.t_net.output_bound(radius)
        head = radius * float(np.exp(s_max)) + t_bound
        return float(np.sqrt(head ** 2 + radius ** 2))

    def to_config(self) -> dict:
        return {"kind": "coupling", "dim": self.dim, "split": self.split,
                "perm": self.perm.tolist(), "scale_clamp": self.scale_clamp,
                "s_net": self.s_net.to_config(), "t_net": self.t_net.to_config()}

    @classmethod
    def from_config(cls, cfg: dict) -> "CouplingLayer":
        return cls(cfg["dim"], cfg["split"], Mlp.from_config(cfg["s_net"]),
                   Mlp.from_config(cfg["t_net"]), perm=cfg["perm"],
                   scale_clamp=cfg["scale_clamp"])


class AutoregressiveLayer:
    """Affine autoregressive map: y_i = x_i exp(ls_i) + sh_i where the
    conditioner of coordinate i sees only x_{1..i-1}; the first coordinate's
    conditioner is a learnable constant pair."""

    def __init__(self, dim: int, conditioners=None, first_params=None,
                 rng=None, hidden=(DEFAULT_SUBNET_WIDTH,),
                 scale_clamp: float = SCALE_CLAMP, final_scale: float = 0.0):
        if dim < 1:
            raise InvalidLayerError("dim must be >= 1")
        self.dim = int(dim)
        self.scale_clamp = float(scale_clamp)
        self.first_params = (np.zeros(2) if first_params is None
                             else np.asarray(first_params, dtype=float).copy())
        if self.first_params.shape != (2,):
            raise InvalidLayerError("first_params must be (log_scale, shift)")
        if conditioners is None:
            rng = as_rng(rng)
            conditioners = [Mlp([i, *hidden, 2], rng=rng, final_scale=final_scale)
                            for i in range(1, dim)]
        if len(conditioners) != dim - 1:
            raise InvalidLayerError("need one conditioner per coordinate past the first")
        self.conditioners = list(conditioners)

    def _cond_out(self, i: int, prefix: np.ndarray) -> np.ndarray:
        out = np.atleast_2d(np.asarray(self.conditioners[i - 1](prefix), dtype=float))
        if not np.all(np.isfinite(out)):
            raise NumericError(f"non-finite conditioner output at coordinate {i}")
        if out.shape != (prefix.shape[0], 2):
            raise InvalidArgumentError(
                f"conditioner {i} returned shape {out.shape}, expected (N, 2)")
        return out

    def _scales_shifts(self, X: np.ndarray):
        n_pts = X.shape[0]
        ls = np.empty((n_pts, self.dim))
        sh = np.empty((n_pts, self.dim))
        ls[:, 0] = self.first_params[0]
        sh[:, 0] = self.first_params[1]
        for i in range(1, self.dim):
            out = self._cond_out(i, X[:, :i])
            ls[:, i] = out[:, 0]
            sh[:, i] = out[:, 1]
        return _clamp(ls, self.scale_clamp), sh

    def forward(self, x):
        X, single = as_batch(x, self.dim)
        ls, sh = self._scales_shifts(X)
        return unbatch(X * np.exp(ls) + sh, single)

    def inverse(self, y):
        Y, single = as_batch(y, self.dim)
        X = np.empty_like(Y)
        ls0 = np.clip(self.first_params[0], -self.scale_clamp, self.scale_clamp)
        X[:, 0] = (Y[:, 0] - self.first_params[1]) * np.exp(-ls0)
        for i in range(1, self.dim):
            out = self._cond_out(i, X[:, :i])
            ls = np.clip(out[:, 0], -self.scale_clamp, self.scale_clamp)
            X[:, i] = (Y[:, i] - out[:, 1]) * np.exp(-ls)
        return unbatch(X, single)

    def log_det(self, x):
        X, single = as_batch(x, self.dim)
        ls, _ = self._scales_shifts(X)
        return unbatch(ls.sum(axis=1), single)

    def forward_with_cache(self, X):
        n_pts = X.shape[0]
        ls_raw = np.empty((n_pts, self.dim))
        sh = np.empty((n_pts, self.dim))
        caches = [None]
        ls_raw[:, 0] = self.first_params[0]
        sh[:, 0] = self.first_params[1]
        for i in range(1, self.dim):
            out, c = self.conditioners[i - 1].forward_with_cache(X[:, :i])
            caches.append(c)
            ls_raw[:, i] = out[:, 0]
            sh[:, i] = out[:, 1]
        ls = _clamp(ls_raw, self.scale_clamp)
        els = np.exp(ls)
        return X * els + sh, {"x": X, "els": els, "ls_raw": ls_raw, "caches": caches}

    def vjp(self, cache, grad_out):
        X, els = cache["x"], cache["els"]
        mask = np.abs(cache["ls_raw"]) < self.scale_clamp
        gx = grad_out * els
        grads = {}
        g_ls = grad_out * X * els * mask
        g_sh = grad_out
        for i in range(self.dim - 1, 0, -1):
            gcond = np.stack([g_ls[:, i], g_sh[:, i]], axis=1)
            gprefix, cgrads = self.conditioners[i - 1].vjp(cache["caches"][i], gcond)
            gx[:, :i] += gprefix
            grads.update({f"cond{i}.{k}": v for k, v in cgrads.items()})
        grads["first"] = np.array([g_ls[:, 0].sum(), g_sh[:, 0].sum()])
        return gx, grads

    def parameters(self):
        out = [("first", self.first_params)]
        for i, cond in enumerate(self.conditioners, start=1):
            out += [(f"cond{i}.{k}", v) for k, v in cond.parameters()]
        return out

    def lipschitz_bound(self, radius: float) -> float:
        """Ball-certified bound via the operator norm of the entrywise
        coefficient-bound matrix of the (lower-triangular) Jacobian."""
        g = np.zeros((self.dim, self.dim))
        ls0 = min(abs(float(self.first_params[0])), self.scale_clamp)
        g[0, 0] = np.exp(ls0)
        for i in range(1, self.dim):
            cond = self.conditioners[i - 1]
            zero = np.zeros((1, i))
            out0 = np.atleast_2d(np.asarray(cond(zero), dtype=float))
            lip = cond.lipschitz_bound()
            s_max = min(self.scale_clamp, abs(float(out0[0, 0])) + lip * radius)
            es = float(np.exp(s_max))
            g[i, i] = es
            g[i, :i] = radius * es * lip + lip
        return spectral_norm(g)

    def output_radius(self, radius: float) -> float:
        bounds = np.zeros(self.dim)
        ls0 = min(abs(float(self.first_params[0])), self.scale_clamp)
        bounds[0] = radius * np.exp(ls0) + abs(float(self.first_params[1]))
        for i in range(1, self.dim):
            cond = self.conditioners[i - 1]
            out0 = np.atleast_2d(np.asarray(cond(np.zeros((1, i))), dtype=float))
            lip = cond.lipschitz_bound()
            s_max = min(self.scale_clamp, abs(float(out0[0, 0])) + lip * radius)
            sh_max = abs(float(out0[0, 1])) + lip * radius
            bounds[i] = radius * np.exp(s_max) + sh_max
        return float(np.linalg.norm(bounds))

    def to_config(self) -> dict:
        return {"kind": "autoregressive", "dim": self.dim,
                "scale_clamp": self.scale_clamp,
                "first": self.first_params.tolist(),
                "conditioners": [c.to_config() for c in self.conditioners]}

    @classmethod
    def from_config(cls, cfg: dict) -> "AutoregressiveLayer":
        conds = [Mlp.from_config(c) for c in cfg["conditioners"]]
        return cls(cfg["dim"], conditioners=conds, first_params=cfg["first"],
                   scale_clamp=cfg["scale_clamp"])


class FlowBlock:
    """Ordered stack of flow layers of a common dimension; empty = identity."""

    def __init__(self, dim: int, layers=None):
        self.dim = int(dim)
        self.layers = list(layers or [])
        for layer in self.layers:
            if layer.dim != self.dim:
                raise InvalidLayerError(
                    f"layer dim {layer.dim} does not match block dim {self.dim}")

    def forward(self, x):
        X, single = as_batch(x, self.dim)
        for layer in self.layers:
            X = layer.forward(X)
        return unbatch(X, single)

    def inverse(self, y):
        Y, single = as_batch(y, self.dim)
        for layer in reversed(self.layers):
            Y = layer.inverse(Y)
        return unbatch(Y, single)

    def log_det(self, x):
        X, single = as_batch(x, self.dim)
        total = np.zeros(X.shape[0])
        for layer in self.layers:
            total += np.atleast_1d(layer.log_det(X))
            X = layer.forward(X)
        return unbatch(total, single)

    def forward_with_cache(self, X):
        caches = []
        for layer in self.layers:
            X, c = layer.forward_with_cache(X)
            caches.append(c)
        return X, caches

    def vjp(self, caches, grad_out):
        grads = {}
        g = grad_out
        for idx in range(len(self.layers) - 1, -1, -1):
            g, lgrads = self.layers[idx].vjp(caches[idx], g)
            grads.update({f"layer{idx}.{k}": v for k, v in lgrads.items()})
        return g, grads

    def parameters(self):
        out = []
        for idx, layer in enumerate(self.layers):
            out += [(f"layer{idx}.{k}", v) for k, v in layer.parameters()]
        return out

    def lipschitz_bound(self, radius: float) -> float:
        bound = 1.0
        r = radius
        for layer in self.layers:
            bound *= layer.lipschitz_bound(r)
            r = layer.output_radius(r)
        return bound

    def output_radius(self, radius: float) -> float:
        r = radius
        for layer in self.layers:
            r = layer.output_radius(r)
        return r

    def to_config(self) -> dict:
        return {"kind": "flow_block", "dim": self.dim,
                "layers": [layer.to_config() for layer in self.layers]}

    @classmethod
    def from_config(cls, cfg: dict) -> "FlowBlock":
        layers = []
        for lc in cfg["layers"]:
            if lc["kind"] == "coupling":
                layers.append(CouplingLayer.from_config(lc))
            elif lc["kind"] == "autoregressive":
                layers.append(AutoregressiveLayer.from_config(lc))
            else:
                raise InvalidArgumentError(f"unknown flow layer kind {lc['kind']!r}")
        return cls(cfg["dim"], layers)


def log_det_jacobian(layer_or_block, x):
    """Log |det J| at x: sum of clamped log-scales, additive over stacks."""
    return layer_or_block.log_det(x)


def identity_block(dim: int) -> FlowBlock:
    return FlowBlock(dim, [])


def make_coupling_block(dim: int, n_layers: int, rng=None,
                        hidden: int = DEFAULT_SUBNET_WIDTH,
                        final_scale: float = 0.0,
                        scale_clamp: float = SCALE_CLAMP) -> FlowBlock:
    """Stack of affine couplings with alternating reversal permutations."""
    if dim < 2:
        raise InvalidLayerError("coupling layers need dim >= 2")
    rng = as_rng(rng)
    layers = []
    split = dim // 2
    for k in range(n_layers):
        perm = np.arange(dim) if k % 2 == 0 else np.arange(dim)[::-1]
        cond_in = dim - split
        s_net = Mlp([cond_in, hidden, hidden, split], rng=rng, final_scale=final_scale)
        t_net = Mlp([cond_in, hidden, hidden, split], rng=rng, final_scale=final_scale)
        layers.append(CouplingLayer(dim, split, s_net, t_net, perm=perm,
                                    scale_clamp=scale_clamp))
    return FlowBlock(dim, layers)


def make_autoregressive_block(dim: int, n_layers: int, rng=None,
                              hidden: int = DEFAULT_SUBNET_WIDTH,
                              final_scale: float = 0.0,
                              scale_clamp: float = SCALE_CLAMP) -> FlowBlock:
    rng = as_rng(rng)
    layers = [AutoregressiveLayer(dim, rng=rng, hidden=(hidden,),
                                  scale_clamp=scale_clamp, final_scale=final_scale)
              for _ in range(n_layers)]
    return FlowBlock(dim, layers)
