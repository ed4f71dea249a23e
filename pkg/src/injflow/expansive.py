"""Injective dimension-raising layers with constructive injectivity checks.

Four kinds: zero padding, full-rank linear maps, single injective ReLU
layers ReLU(Wx) with W = [B; -DB; M], and stacks of such ReLU layers with
doubling widths.  Every kind carries a computable Lipschitz bound (operator
norm of the assembled weights) and a report-style injectivity validation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._util import as_batch, as_rng, spectral_norm, unbatch
from .errors import InvalidArgumentError, InvalidLayerError

RANK_TOLERANCE = 1e-10


@dataclass(frozen=True)
class InjectivityReport:
    ok: bool
    detail: str


class ExpansiveLayer:
    """Base class: an injective Lipschitz map R^n -> R^m with m > n."""

    kind = "abstract"

    def __init__(self, in_dim: int, out_dim: int):
        if in_dim < 1 or out_dim <= in_dim:
            raise InvalidLayerError(
                f"expansive layer needs out_dim > in_dim >= 1, "
                f"got {in_dim} -> {out_dim}")
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim)

    def __call__(self, x):
        X, single = as_batch(x, self.in_dim)
        return unbatch(self._apply(X), single)

    def _apply(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def forward_with_cache(self, X: np.ndarray):
        return self._apply(X), None

    def vjp(self, cache, grad_out: np.ndarray):
        """Returns (grad wrt input, dict of parameter gradients)."""
        raise NotImplementedError

    def parameters(self):
        return []

    def lipschitz_bound(self) -> float:
        raise NotImplementedError

    def output_radius(self, radius: float) -> float:
        return self.lipschitz_bound() * radius

    def validate(self) -> InjectivityReport:
        raise NotImplementedError

    def to_config(self) -> dict:
        raise NotImplementedError


class ZeroPad(ExpansiveLayer):
    """x -> [x; 0]: appends out_dim - in_dim zero coordinates."""

    kind = "zero_pad"

    def _apply(self, X):
        out = np.zeros((X.shape[0], self.out_dim))
        out[:, :self.in_dim] = X
        return out

    def vjp(self, cache, grad_out):
        return grad_out[:, :self.in_dim], {}

    def lipschitz_bound(self) -> float:
        return 1.0

    def validate(self) -> InjectivityReport:
        return InjectivityReport(True, "zero padding is an isometric embedding")

    def to_config(self) -> dict:
        return {"kind": self.kind, "n": self.in_dim, "m": self.out_dim}

    @classmethod
    def from_config(cls, cfg: dict) -> "ZeroPad":
        return cls(cfg["n"], cfg["m"])


class LinearExpansive(ExpansiveLayer):
    """x -> Wx for a full-rank tall matrix W (rank checked at construction)."""

    kind = "linear"

    def __init__(self, weight, check: bool = True):
        w = np.asarray(weight, dtype=float)
        if w.ndim != 2:
            raise InvalidLayerError("weight must be a matrix")
        super().__init__(w.shape[1], w.shape[0])
        self.weight = w.copy()
        if check:
            report = self.validate()
            if not report.ok:
                raise InvalidLayerError(report.detail)

    def _apply(self, X):
        return X @ self.weight.T

    def vjp(self, cache, grad_out):
        # cache is the input batch (needed for the weight gradient).
        grads = {"weight": grad_out.T @ cache}
        return grad_out @ self.weight, grads

    def forward_with_cache(self, X):
        return self._apply(X), X

    def parameters(self):
        return [("weight", self.weight)]

    def lipschitz_bound(self) -> float:
        return spectral_norm(self.weight)

    def validate(self) -> InjectivityReport:
        sv = np.linalg.svd(self.weight, compute_uv=False)
        if sv.size == 0 or sv[0] == 0.0:
            return InjectivityReport(False, "zero weight matrix has rank 0")
        if sv[-1] <= RANK_TOLERANCE * sv[0]:
            return InjectivityReport(
                False, f"rank-deficient: sigma_min/sigma_max = {sv[-1] / sv[0]:.3e}")
        return InjectivityReport(True, f"full column rank (cond {sv[0] / sv[-1]:.3e})")

    def to_config(self) -> dict:
        return {"kind": self.kind, "n": self.in_dim, "m": self.out_dim,
                "weight": self.weight.tolist()}

    @classmethod
    def from_config(cls, cfg: dict) -> "LinearExpansive":
        return cls(np.asarray(cfg["weight"], dtype=float))


def assemble_relu_weight(b_mat: np.ndarray, d_diag: np.ndarray,
                         m_mat: np.ndarray | None) -> np.ndarray:
    """Stack [B; -diag(d) B; M] into the full (m x n) weight."""
    rows = [b_mat, -d_diag[:, None] * b_mat]
    if m_mat is not None and m_mat.size:
        rows.append(m_mat)
    return np.vstack(rows)


class InjectiveRelu(ExpansiveLayer):
    """x -> ReLU(Wx) with W = [B; -DB; M], B invertible, D positive diagonal.

    Globally injective: for each coordinate of alpha = Bx, either the B row
    or the -DB row is active, so alpha (and hence x) is recoverable.
    """

    kind = "injective_relu"

    def __init__(self, b_mat, d_diag, m_mat=None, check: bool = True):
        b = np.asarray(b_mat, dtype=float)
        d = np.asarray(d_diag, dtype=float).ravel()
        m = None if m_mat is None else np.atleast_2d(np.asarray(m_mat, dtype=float))
        if b.ndim != 2 or b.shape[0] != b.shape[1]:
            raise InvalidLayerError("B must be square")
        n = b.shape[0]
        if d.shape != (n,):
            raise InvalidLayerError("D must be a length-n positive diagonal")
        if m is not None and m.size and m.shape[1] != n:
            raise InvalidLayerError("M must have n columns")
        extra = 0 if m is None or not m.size else m.shape[0]
        super().__init__(n, 2 * n + extra)
        self.b_mat = b.copy()
        self.d_diag = d.copy()
        self.m_mat = None if m is None or not m.size else m.copy()
        if check:
            report = self.validate()
            if not report.ok:
                raise InvalidLayerError(report.detail)
        self.weight = assemble_relu_weight(self.b_mat, self.d_diag, self.m_mat)

    def _apply(self, X):
        return np.maximum(X @ self.weight.T, 0.0)

    def forward_with_cache(self, X):
        pre = X @ self.weight.T
        return np.maximum(pre, 0.0), pre

    def vjp(self, cache, grad_out):
        mask = (cache > 0.0).astype(float)
        return (grad_out * mask) @ self.weight, {}

    def lipschitz_bound(self) -> float:
        # ReLU is 1-Lipschitz, so the assembled weight's norm dominates.
        return spectral_norm(self.weight)

    def validate(self) -> InjectivityReport:
        if np.any(self.d_diag <= 0.0):
            return InjectivityReport(False, "D has non-positive entries")
        sv = np.linalg.svd(self.b_mat, compute_uv=False)
        if sv[-1] <= RANK_TOLERANCE * max(sv[0], 1e-300):
            return InjectivityReport(
                False, f"B nearly singular: sigma_min = {sv[-1]:.3e}")
        return InjectivityReport(
            True, f"[B; -DB; M] form with cond(B) = {sv[0] / sv[-1]:.3e}")

    @property
    def projection_compatible(self) -> bool:
        """True when the closed-form pseudo-inverse applies (m = 2n, M empty)."""
        return self.m_mat is None and self.out_dim == 2 * self.in_dim

    def to_config(self) -> dict:
        cfg = {"kind": self.kind, "n": self.in_dim, "m": self.out_dim,
               "b": self.b_mat.tolist(), "d": self.d_diag.tolist()}
        if self.m_mat is not None:
            cfg["m_rows"] = self.m_mat.tolist()
        return cfg

    @classmethod
    def from_config(cls, cfg: dict) -> "InjectiveRelu":
        m = cfg.get("m_rows")
        return cls(np.asarray(cfg["b"], dtype=float),
                   np.asarray(cfg["d"], dtype=float),
                   None if m is None else np.asarray(m, dtype=float))


class InjectiveReluNetwork(ExpansiveLayer):
    """Stack of [B; -DB; M]-form ReLU layers with biases and doubling widths.

    Each hidden layer doubles (at least) the width, and biases satisfy
    b_lower >= -D b_upper coordinate-wise so that no input lands in a dead
    zone of the paired rows; the composition is then injective.
    """

    kind = "injective_relu_network"

    def __init__(self, layer_params: list[dict], check: bool = True):
        if not layer_params:
            raise InvalidLayerError("need at least one layer")
        self._layers = []
        for lp in layer_params:
            b = np.asarray(lp["b"], dtype=float)
            d = np.asarray(lp["d"], dtype=float).ravel()
            m = lp.get("m_rows")
            m = None if m is None else np.atleast_2d(np.asarray(m, dtype=float))
            if m is not None and not m.size:
                m = None
            n = b.shape[0]
            extra = 0 if m is None else m.shape[0]
            width = 2 * n + extra
            bias = np.asarray(lp.get("bias", np.zeros(width)), dtype=float).ravel()
            if bias.shape != (width,):
                raise InvalidLayerError("bias length must match layer width")
            self._layers.append({"b": b.copy(), "d": d.copy(),
                                 "m": None if m is None else m.copy(),
                                 "bias": bias.copy(),
                                 "weight": assemble_relu_weight(b, d, m)})
        super().__init__(self._layers[0]["b"].shape[0],
                         self._layers[-1]["weight"].shape[0])
        if check:
            report = self.validate()
            if not report.ok:
                raise InvalidLayerError(report.detail)

    def _apply(self, X):
        h = X
        for lp in self._layers:
            h = np.maximum(h @ lp["weight"].T + lp["bias"][None, :], 0.0)
        return h

    def forward_with_cache(self, X):
        pres = []
        h = X
        for lp in self._layers:
            pre = h @ lp["weight"].T + lp["bias"][None, :]
            pres.append(pre)
            h = np.maximum(pre, 0.0)
        return h, pres

    def vjp(self, cache, grad_out):
        g = grad_out
        for lp, pre in zip(reversed(self._layers), reversed(cache)):
            g = (g * (pre > 0.0)) @ lp["weight"]
        return g, {}

    def lipschitz_bound(self) -> float:
        prod = 1.0
        for lp in self._layers:
            prod *= spectral_norm(lp["weight"])
        return prod

    def output_radius(self, radius: float) -> float:
        r = radius
        for lp in self._layers:
            r = spectral_norm(lp["weight"]) * r + float(np.linalg.norm(lp["bias"]))
        return r

    def validate(self) -> InjectivityReport:
        prev_width = self.in_dim
        for idx, lp in enumerate(self._layers):
            n = lp["b"].shape[0]
            if n != prev_width:
                return InjectivityReport(
                    False, f"layer {idx}: expects input width {n}, got {prev_width}")
            width = lp["weight"].shape[0]
            if width < 2 * n:
                return InjectivityReport(
                    False, f"layer {idx}: width {width} < 2x input {n}")
            if np.any(lp["d"] <= 0.0):
                return InjectivityReport(False, f"layer {idx}: D not positive")
            sv = np.linalg.svd(lp["b"], compute_uv=False)
            if sv[-1] <= RANK_TOLERANCE * max(sv[0], 1e-300):
                return InjectivityReport(False, f"layer {idx}: B nearly singular")
            b1 = lp["bias"][:n]
            b2 = lp["bias"][n:2 * n]
            if np.any(b2 + lp["d"] * b1 < -1e-12):
                return InjectivityReport(
                    False, f"layer {idx}: biases open a dead zone "
                           "(need b_lower >= -D b_upper)")
            prev_width = width
        return InjectivityReport(
            True, f"{len(self._layers)} stacked [B; -DB; M] layers, widths double")

    def to_config(self) -> dict:
        layers = []
        for lp in self._layers:
            entry = {"b": lp["b"].tolist(), "d": lp["d"].tolist(),
                     "bias": lp["bias"].tolist()}
            if lp["m"] is not None:
                entry["m_rows"] = lp["m"].tolist()
            layers.append(entry)
        return {"kind": self.kind, "n": self.in_dim, "m": self.out_dim,
                "layers": layers}

    @classmethod
    def from_config(cls, cfg: dict) -> "InjectiveReluNetwork":
        return cls(cfg["layers"])


def validate_injectivity(layer: ExpansiveLayer) -> InjectivityReport:
    """Kind-specific sufficient injectivity check, report-style."""
    return layer.validate()


# --- constructors ----------------------------------------------------------


def random_orthonormal_columns(n: int, m: int, rng) -> np.ndarray:
    q, _ = np.linalg.qr(as_rng(rng).normal(size=(m, n)))
    return q[:, :n]


def random_well_conditioned(n: int, rng, spread=(0.8, 1.25)) -> np.ndarray:
    rng = as_rng(rng)
    q1, _ = np.linalg.qr(rng.normal(size=(n, n)))
    q2, _ = np.linalg.qr(rng.normal(size=(n, n)))
    s = rng.uniform(spread[0], spread[1], size=n)
    return q1 @ np.diag(s) @ q2


def random_linear_expansive(n: int, m: int, rng) -> LinearExpansive:
    return LinearExpansive(random_orthonormal_columns(n, m, rng))


def random_injective_relu(n: int, m: int, rng,
                          d_range=(0.5, 2.0)) -> InjectiveRelu:
    rng = as_rng(rng)
    if m < 2 * n:
        raise InvalidLayerError("injective ReLU layer needs m >= 2n")
    b = random_well_conditioned(n, rng)
    d = rng.uniform(d_range[0], d_range[1], size=n)
    m_extra = m - 2 * n
    m_mat = rng.normal(size=(m_extra, n)) if m_extra else None
    return InjectiveRelu(b, d, m_mat)


def random_injective_relu_network(n: int, depth: int, rng,
                                  with_bias: bool = True) -> InjectiveReluNetwork:
    rng = as_rng(rng)
    layers = []
    width = n
    for _ in range(depth):
        b = random_well_conditioned(width, rng)
        d = rng.uniform(0.5, 2.0, size=width)
        bias = np.zeros(2 * width)
        if with_bias:
            b1 = rng.normal(0, 0.2, size=width)
            b2 = -d * b1 + rng.uniform(0.0, 0.3, size=width)
            bias = np.concatenate([b1, b2])
        layers.append({"b": b, "d": d, "bias": bias})
        width = 2 * width
    return InjectiveReluNetwork(layers)


_EXPANSIVE_KINDS = {
    "zero_pad": ZeroPad,
    "linear": LinearExpansive,
    "injective_relu": InjectiveRelu,
    "injective_relu_network": InjectiveReluNetwork,
}


def expansive_from_config(cfg: dict) -> ExpansiveLayer:
    kind = cfg.get("kind")
    if kind not in _EXPANSIVE_KINDS:
        raise InvalidArgumentError(f"unknown expansive kind {kind!r}")
    return _EXPANSIVE_KINDS[kind].from_config(cfg)
