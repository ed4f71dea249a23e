"""Exact layer-wise projection onto the network's range.

Linear expansive layers invert through the normal equations; injective ReLU
layers with W = [B; -DB] invert through the closed-form sign-pattern
selection R+(y) = (M_y W)^{-1} M_y y; flow blocks invert exactly.  Composing
the stage inverses back-to-front gives an idempotent (generally
non-orthogonal) projection onto the range of the whole network.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import lsq_linear

from .errors import InvalidArgumentError, InvalidLayerError, UnsupportedLayerError
from .expansive import InjectiveRelu, LinearExpansive, ZeroPad
from .flows import FlowBlock
from .network import InjectiveNetwork

# |y_i - y_{i+n}| below this (relative) threshold flags a tie between the
# two per-coordinate minimizers.
TIE_RELATIVE_TOLERANCE = 1e-12


@dataclass(frozen=True)
class ReluProjectionWorkspace:
    """Sign-pattern bookkeeping for one query y in R^{2n}.

    c = max([[I, -I], [-I, I]] y, 0); Delta_ii = 1 iff c_{i+n} > 0; the
    selection matrix M_y = [(I - Delta), Delta] picks, per coordinate, which
    of the paired rows carries the preimage information.
    """

    c: np.ndarray
    delta: np.ndarray
    m_y: np.ndarray
    tie_indices: tuple[int, ...]

    @property
    def pattern(self) -> str:
        return "".join("1" if b else "0" for b in self.delta.astype(int))


@dataclass(frozen=True)
class ProjectionResult:
    """Preimage x, range point y_hat, residual ||y - y_hat||, tie flag."""

    x: np.ndarray
    y_hat: np.ndarray
    residual: float
    tie_flag: bool


def relu_workspace(y, tie_tol: float = TIE_RELATIVE_TOLERANCE) -> ReluProjectionWorkspace:
    yv = np.asarray(y, dtype=float).ravel()
    if yv.size % 2 != 0 or yv.size == 0:
        raise InvalidArgumentError("query must live in R^{2n}")
    n = yv.size // 2
    head, tail = yv[:n], yv[n:]
    c = np.concatenate([np.maximum(head - tail, 0.0), np.maximum(tail - head, 0.0)])
    delta = (c[n:] > 0.0).astype(float)
    m_y = np.hstack([np.diag(1.0 - delta), np.diag(delta)])
    ties = tuple(int(i) for i in
                 np.nonzero(np.abs(head - tail) <= tie_tol * np.maximum(1.0, np.abs(head)))[0])
    return ReluProjectionWorkspace(c=c, delta=delta, m_y=m_y, tie_indices=ties)


def _check_relu_params(b_mat, d_diag):
    b = np.asarray(b_mat, dtype=float)
    d = np.asarray(d_diag, dtype=float).ravel()
    if b.ndim != 2 or b.shape[0] != b.shape[1]:
        raise InvalidLayerError("B must be square")
    if d.shape != (b.shape[0],):
        raise InvalidLayerError("D must be a length-n diagonal")
    if np.any(d <= 0.0):
        raise InvalidLayerError("D must be positive")
    sv = np.linalg.svd(b, compute_uv=False)
    if sv[-1] <= 1e-12 * max(sv[0], 1e-300):
        raise InvalidLayerError("B must be invertible")
    return b, d


def relu_pseudo_inverse(b_mat, d_diag, y) -> ProjectionResult:
    """Least-squares preimage of y under x -> ReLU([B; -DB] x).

    Solves (M_y W) x = M_y y through the per-coordinate form of the
    selection: in alpha = Bx coordinates, alpha_i = y_i on the inactive-tail
    pattern and alpha_i = -y_{i+n}/D_ii on the active one.  When a pair
    (y_i, y_{i+n}) is entirely negative the selected value is clipped to the
    range corner alpha_i = 0, which is the actual per-coordinate minimizer
    there (the raw selection formula would overshoot past the corner).
    Away from ties (y_i = y_{i+n}) the result is the unique minimizer of
    ||y - ReLU(Wx)||_2; on ties it is one of the minimizers and tie_flag
    is set.
    """
    b, d = _check_relu_params(b_mat, d_diag)
    n = b.shape[0]
    yv = np.asarray(y, dtype=float).ravel()
    if yv.shape != (2 * n,):
        raise InvalidArgumentError(f"query must have dimension {2 * n}")
    ws = relu_workspace(yv)
    head, tail = yv[:n], yv[n:]
    alpha = np.where(ws.delta == 0.0,
                     np.maximum(head, 0.0),
                     -np.maximum(tail, 0.0) / d)
    try:
        x = np.linalg.solve(b, alpha)
    except np.linalg.LinAlgError as err:  # pragma: no cover - guarded above
        raise RuntimeError("B unexpectedly singular after validation") from err
    w_mat = np.vstack([b, -d[:, None] * b])
    y_hat = np.maximum(w_mat @ x, 0.0)
    return ProjectionResult(x=x, y_hat=y_hat,
                            residual=float(np.linalg.norm(yv - y_hat)),
                            tie_flag=bool(ws.tie_indices))


def linear_pseudo_inverse(weight, y) -> ProjectionResult:
    """Unique least-squares preimage of y under x -> Wx (normal equations)."""
    w = np.asarray(weight, dtype=float)
    yv = np.asarray(y, dtype=float).ravel()
    if w.ndim != 2 or yv.shape != (w.shape[0],):
        raise InvalidArgumentError("weight must be (m, n) and y must be in R^m")
    sv = np.linalg.svd(w, compute_uv=False)
    if sv[-1] <= 1e-12 * max(sv[0], 1e-300):
        raise InvalidLayerError("weight must have full column rank")
    x, *_ = np.linalg.lstsq(w, yv, rcond=None)
    y_hat = w @ x
    return ProjectionResult(x=x, y_hat=y_hat,
                            residual=float(np.linalg.norm(yv - y_hat)),
                            tie_flag=False)


def _invert_expansive(stage, z):
    if isinstance(stage, ZeroPad):
        return z[:stage.in_dim], False
    if isinstance(stage, LinearExpansive):
        res = linear_pseudo_inverse(stage.weight, z)
        return res.x, False
    if isinstance(stage, InjectiveRelu):
        if not stage.projection_compatible:
            raise UnsupportedLayerError(
                "closed-form ReLU projection needs m = 2n and no extra M rows")
        res = relu_pseudo_inverse(stage.b_mat, stage.d_diag, z)
        return res.x, res.tie_flag
    raise UnsupportedLayerError(
        f"projection does not support expansive kind {stage.kind!r}")


def project_to_range(net: InjectiveNetwork, y) -> ProjectionResult:
    """Project y onto the network's range by stage-wise inversion.

    Flow blocks invert exactly; expansive layers invert through their
    pseudo-inverses.  Idempotent but in general not orthogonal.
    """
    yv = np.asarray(y, dtype=float).ravel()
    if yv.shape != (net.ambient_dim,):
        raise InvalidArgumentError(
            f"query must have dimension {net.ambient_dim}")
    z = yv
    tie = False
    for idx in range(len(net.stages) - 1, -1, -1):
        stage = net.stages[idx]
        try:
            if isinstance(stage, FlowBlock):
                z = np.asarray(stage.inverse(z), dtype=float)
            else:
                z, stage_tie = _invert_expansive(stage, z)
                tie = tie or stage_tie
        except UnsupportedLayerError:
            raise
        except Exception as err:
            from .errors import NumericError
            raise NumericError(f"stage {idx} inversion failed: {err}",
                               stage_index=idx) from err
        if not np.all(np.isfinite(z)):
            from .errors import NumericError
            raise NumericError("non-finite stage inverse", stage_index=idx)
    y_hat = np.asarray(net.forward(z), dtype=float)
    return ProjectionResult(x=z, y_hat=y_hat,
                            residual=float(np.linalg.norm(yv - y_hat)),
                            tie_flag=tie)


def map_projection_regions(b_mat, d_diag, grid) -> list[str]:
    """Label each grid point by the diagonal of Delta_y as a 0/1 string.

    Adjacent cells with different labels straddle a discontinuity boundary
    of the range projection.
    """
    b, d = _check_relu_params(b_mat, d_diag)
    n = b.shape[0]
    pts = grid.points if hasattr(grid, "points") else np.atleast_2d(np.asarray(grid, float))
    if pts.shape[1] != 2 * n:
        raise InvalidArgumentError(f"grid must have dimension {2 * n}")
    return [relu_workspace(row).pattern for row in pts]


# --- independent optimality oracle ----------------------------------------


def brute_force_relu_projection(b_mat, d_diag, y, value_tol: float = 1e-9):
    """Enumerate all 2^n sign patterns and solve each cone-constrained
    least-squares problem numerically; return (best residual, minimizers).

    In alpha = Bx coordinates the range restricted to a sign pattern is
    affine, so each pattern yields a bounded least-squares problem over its
    cone.  Minimizers within value_tol of the best feasible value are
    collected and deduplicated.  Independent of the closed-form path: this
    route never builds c(y), Delta_y, or M_y.
    """
    b, d = _check_relu_params(b_mat, d_diag)
    n = b.shape[0]
    yv = np.asarray(y, dtype=float).ravel()
    if yv.shape != (2 * n,):
        raise InvalidArgumentError(f"query must have dimension {2 * n}")
    best_val = np.inf
    solutions: list[tuple[float, np.ndarray]] = []
    for bits in range(2 ** n):
        signs = np.array([(bits >> i) & 1 for i in range(n)])  # 1 = negative cone
        # On this cone ReLU([alpha; -D alpha]) = A alpha with A affine.
        a_mat = np.zeros((2 * n, n))
        lb = np.where(signs == 1, -np.inf, 0.0)
        ub = np.where(signs == 1, 0.0, np.inf)
        for i in range(n):
            if signs[i] == 1:
                a_mat[n + i, i] = -d[i]
            else:
                a_mat[i, i] = 1.0
        res = lsq_linear(a_mat, yv, bounds=(lb, ub), tol=1e-14)
        alpha = res.x
        fitted = np.maximum(np.concatenate([alpha, -d * alpha]), 0.0)
        val = float(np.linalg.norm(yv - fitted))
        solutions.append((val, np.linalg.solve(b, alpha)))
        best_val = min(best_val, val)
    keep: list[np.ndarray] = []
    for val, x in solutions:
        if val <= best_val + value_tol:
            if not any(np.linalg.norm(x - k) <= 1e-7 * max(1.0, np.linalg.norm(k))
                       for k in keep):
                keep.append(x)
    return best_val, keep
