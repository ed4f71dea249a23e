"""Gradient-based fitting of injective networks to manifold-supported targets.

Two losses drive the two-phase layerwise schedule: a symmetric mean-squared
Chamfer surrogate for the manifold phase (the trace reports the true
directed sup-inf alongside), and a sliced squared-W2 surrogate for the
density phase.  Gradients are analytic reverse-mode passes through the
stage VJPs; the Lipschitz estimate of the network is tracked during the
knotted-target experiment.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from ._util import as_rng, pairwise_sq_dists
from .errors import InvalidArgumentError, InvalidConfigError, NumericError
from .expansive import LinearExpansive, random_orthonormal_columns
from .flows import (
    AutoregressiveLayer,
    FlowBlock,
    make_coupling_block,
)
from .geometry import (
    ManifoldTarget,
    arc_target,
    planar_circle_target,
    sample_circle,
    trefoil_target,
)
from .network import InjectiveNetwork, lipschitz_estimate

CSV_FLOAT_FORMAT = "%.17g"
TRACE_COLUMNS = ("step", "loss", "directed_supinf", "sliced_w2",
                 "lipschitz_estimate")


# --- point-set losses (value and gradient wrt the generated set) -----------


def chamfer_loss_and_grad(generated: np.ndarray, target: np.ndarray):
    """Symmetric mean-squared Chamfer distance and its gradient in the
    generated points (argmin selections treated as locally constant)."""
    if generated.size == 0 or target.size == 0:
        raise InvalidArgumentError("batches must be non-empty")
    d2 = pairwise_sq_dists(generated, target)
    jmin = np.argmin(d2, axis=1)          # generated -> target
    imin = np.argmin(d2, axis=0)          # target -> generated
    n_g, n_t = generated.shape[0], target.shape[0]
    value = float(d2[np.arange(n_g), jmin].mean() + d2[imin, np.arange(n_t)].mean())
    grad = 2.0 * (generated - target[jmin]) / n_g
    np.add.at(grad, imin, 2.0 * (generated[imin] - target) / n_t)
    return value, grad


def sliced_w2sq_loss_and_grad(generated: np.ndarray, target: np.ndarray,
                              directions: np.ndarray):
    """Dimension-scaled mean of squared 1-D W2 over the given unit directions,
    differentiable through the sorting-based quantile coupling.

    Batches must have equal size (uniform weights); directions is (d, K).
    """
    if generated.size == 0 or target.size == 0:
        raise InvalidArgumentError("batches must be non-empty")
    if generated.shape[0] != target.shape[0]:
        raise InvalidArgumentError("sliced loss needs equal-size batches")
    n, d = generated.shape
    k = directions.shape[1]
    pg = generated @ directions
    pt = target @ directions
    order_g = np.argsort(pg, axis=0, kind="stable")
    order_t = np.argsort(pt, axis=0, kind="stable")
    diffs = np.take_along_axis(pg, order_g, axis=0) - np.take_along_axis(pt, order_t, axis=0)
    value = float(d * np.mean(diffs ** 2))
    gproj = np.zeros_like(pg)
    np.put_along_axis(gproj, order_g, 2.0 * d * diffs / (n * k), axis=0)
    grad = gproj @ directions.T
    return value, grad


def draw_directions(dim: int, count: int, rng) -> np.ndarray:
    dirs = as_rng(rng).normal(size=(dim, count))
    return dirs / np.linalg.norm(dirs, axis=0, keepdims=True)


# --- network losses ---------------------------------------------------------


def manifold_loss(net: InjectiveNetwork, latent_batch, target_batch) -> float:
    """Symmetric Chamfer between E(latent batch) and the target batch."""
    gen = np.atleast_2d(np.asarray(net.forward(latent_batch), dtype=float))
    value, _ = chamfer_loss_and_grad(gen, np.atleast_2d(np.asarray(target_batch, float)))
    return value


def density_loss(net: InjectiveNetwork, latent_batch, target_batch,
                 n_projections: int = 64, seed: int = 0) -> float:
    """Sliced squared-W2 between E#(latent batch) and the target batch."""
    gen = np.atleast_2d(np.asarray(net.forward(latent_batch), dtype=float))
    tgt = np.atleast_2d(np.asarray(target_batch, dtype=float))
    dirs = draw_directions(tgt.shape[1], n_projections, seed)
    value, _ = sliced_w2sq_loss_and_grad(gen, tgt, dirs)
    return value


def compute_gradients(net: InjectiveNetwork, loss: str, latent_batch,
                      target_batch, trainable=None, directions=None,
                      loss_weights=None):
    """Loss value and analytic parameter gradients for the named loss.

    loss is 'manifold' or 'density'; loss_weights optionally mixes both
    ({'manifold': w_m, 'density': w_d}), in which case `directions` must be
    given for the density part.  Returns (value, {(stage, name): grad}).
    """
    X = np.atleast_2d(np.asarray(latent_batch, dtype=float))
    T = np.atleast_2d(np.asarray(target_batch, dtype=float))
    if X.shape[0] == 0 or T.shape[0] == 0:
        raise InvalidArgumentError("batches must be non-empty")
    weights = dict(loss_weights) if loss_weights else {loss: 1.0}
    weights.setdefault(loss, 1.0)
    gen, caches = net.forward_with_cache(X)
    total = 0.0
    grad_gen = np.zeros_like(gen)
    for name, w in weights.items():
        if w == 0.0:
            continue
        if name == "manifold":
            v, g = chamfer_loss_and_grad(gen, T)
        elif name == "density":
            if directions is None:
                raise InvalidArgumentError("density loss needs projection directions")
            v, g = sliced_w2sq_loss_and_grad(gen, T, directions)
        else:
            raise InvalidArgumentError(f"unknown loss {name!r}")
        total += w * v
        grad_gen += w * g
    _, stage_grads = net.vjp(caches, grad_gen, trainable=trainable)
    flat = {}
    for sidx, grads in stage_grads.items():
        for pname, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient at stage {sidx} "
                                   f"parameter {pname}", stage_index=sidx)
            flat[(sidx, pname)] = g
    return float(total), flat


class Adam:
    """Adaptive moment estimation over a list of ((stage, name), array)."""

    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = {key: arr for key, arr in params}
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.v = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.t = 0

    def step(self, grads: dict) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for key, g in grads.items():
            if key not in self.params:
                continue
            m = self.m[key]
            v = self.v[key]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (self.lr / b1c) * m / (np.sqrt(v / b2c) + self.eps)
            self.params[key][...] -= update


# --- configuration and traces ----------------------------------------------


@dataclass(frozen=True)
class PhaseConfig:
    trainable_stages: tuple
    loss: str
    steps: int
    learning_rate: float
    loss_weights: dict | None = None

    def __post_init__(self):
        if self.steps <= 0:
            raise InvalidConfigError("steps must be > 0")
        if self.learning_rate <= 0:
            raise InvalidConfigError("learning_rate must be > 0")
        if self.loss not in ("manifold", "density"):
            raise InvalidConfigError(f"unknown loss {self.loss!r}")


@dataclass(frozen=True)
class TrainingConfig:
    phases: tuple
    batch_size: int = 256
    seed: int = 0
    loss_weights: dict = field(default_factory=dict)
    lipschitz_log_interval: int = 50
    n_projections: int = 64

    def __post_init__(self):
        if self.batch_size < 1:
            raise InvalidConfigError("batch_size must be >= 1")
        if self.lipschitz_log_interval < 1:
            raise InvalidConfigError("lipschitz_log_interval must be >= 1")
        object.__setattr__(self, "phases", tuple(self.phases))

    def validate_for(self, net: InjectiveNetwork) -> None:
        n_stages = len(net.stages)
        for pidx, phase in enumerate(self.phases):
            trainable = set(phase.trainable_stages)
            if not trainable:
                raise InvalidConfigError(f"phase {pidx}: no trainable stages")
            if any(s < 0 or s >= n_stages for s in trainable):
                raise InvalidConfigError(
                    f"phase {pidx}: stage index out of range 0..{n_stages - 1}")
            frozen = set(range(n_stages)) - trainable
            if trainable & frozen:
                raise InvalidConfigError(
                    f"phase {pidx}: stages marked both frozen and trainable")

    def to_dict(self) -> dict:
        return {
            "phases": [{"trainable_stages": list(p.trainable_stages),
                        "loss": p.loss, "steps": p.steps,
                        "learning_rate": p.learning_rate,
                        **({"loss_weights": p.loss_weights}
                           if p.loss_weights else {})}
                       for p in self.phases],
            "batch_size": self.batch_size,
            "seed": self.seed,
            "loss_weights": dict(self.loss_weights),
            "lipschitz_log_interval": self.lipschitz_log_interval,
            "n_projections": self.n_projections,
        }

    @classmethod
    def from_dict(cls, cfg: dict) -> "TrainingConfig":
        phases = tuple(
            PhaseConfig(trainable_stages=tuple(p["trainable_stages"]),
                        loss=p["loss"], steps=int(p["steps"]),
                        learning_rate=float(p["learning_rate"]),
                        loss_weights=p.get("loss_weights"))
            for p in cfg.get("phases", ()))
        return cls(phases=phases,
                   batch_size=int(cfg.get("batch_size", 256)),
                   seed=int(cfg.get("seed", 0)),
                   loss_weights=dict(cfg.get("loss_weights", {})),
                   lipschitz_log_interval=int(cfg.get("lipschitz_log_interval", 50)),
                   n_projections=int(cfg.get("n_projections", 64)))


@dataclass(frozen=True)
class TraceRecord:
    step: int
    loss: float
    directed_supinf: float
    sliced_w2: float
    lipschitz_estimate: float


class TrainingTrace:
    """Append-only diagnostic log with strictly increasing step indices."""

    def __init__(self):
        self.records: list[TraceRecord] = []

    def append(self, record: TraceRecord) -> None:
        if self.records and record.step <= self.records[-1].step:
            raise InvalidArgumentError("trace steps must increase")
        values = (record.loss, record.directed_supinf, record.sliced_w2,
                  record.lipschitz_estimate)
        if not all(np.isfinite(v) for v in values):
            raise NumericError(f"non-finite trace values at step {record.step}")
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def final(self) -> TraceRecord:
        return self.records[-1]

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(TRACE_COLUMNS) + "\n")
            for r in self.records:
                row = [str(r.step)] + [CSV_FLOAT_FORMAT % getattr(r, c)
                                       for c in TRACE_COLUMNS[1:]]
                fh.write(",".join(row) + "\n")


def _digest(net: InjectiveNetwork, stage_indices) -> str:
    h = hashlib.sha256()
    for sidx, name, arr in net.parameters(stage_indices=sorted(stage_indices)):
        h.update(f"{sidx}:{name}".encode())
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


@dataclass
class LayerwiseResult:
    trace: TrainingTrace
    phase_end_steps: list
    phase_losses: list
    frozen_digests: list
    frozen_intact: bool

    def record_at_phase_end(self, loss_name: str) -> TraceRecord:
        """Trace record at the end of the last phase using the named loss."""
        ends = [s for s, l in zip(self.phase_end_steps, self.phase_losses)
                if l == loss_name]
        if not ends:
            raise InvalidArgumentError(f"no phase with loss {loss_name!r}")
        step = ends[-1]
        return next(r for r in reversed(self.trace.records) if r.step <= step)


def _run_phases(net, config, latent_sampler, target_sampler, eval_latent,
                eval_target, trace=None, lipschitz_samples=None):
    """Shared schedule runner; diagnostics are evaluated on the fixed
    eval sets at every lipschitz_log_interval steps."""

    config.validate_for(net)
    rng = as_rng(config.seed)
    trace = trace if trace is not None else TrainingTrace()
    lip_pts = eval_latent if lipschitz_samples is None else lipschitz_samples
    interval = config.lipschitz_log_interval
    diag_seed = int(as_rng(config.seed + 1).integers(0, 2 ** 31))
    global_step = 0
    phase_end_steps = []
    phase_losses = []
    frozen_digests = []
    frozen_intact = True

    diag_dirs = draw_directions(eval_target.shape[1], config.n_projections,
                                diag_seed)

    def record(step, weights):
        """Diagnostics on the fixed eval sets, free of batch sampling noise."""
        gen = np.atleast_2d(np.asarray(net.forward(eval_latent), dtype=float))
        loss_value = 0.0
        for name, w in weights.items():
            if w == 0.0:
                continue
            if name == "manifold":
                loss_value += w * chamfer_loss_and_grad(gen, eval_target)[0]
            else:
                loss_value += w * sliced_w2sq_loss_and_grad(
                    gen, eval_target, diag_dirs)[0]
        supinf = metrics.directed_supinf(eval_target, gen)
        w2 = metrics.wasserstein2_sliced(
            metrics.EmpiricalMeasure.uniform(gen),
            metrics.EmpiricalMeasure.uniform(eval_target),
            n_projections=128, seed=diag_seed)
        lip = lipschitz_estimate(net, lip_pts)
        trace.append(TraceRecord(step=step, loss=loss_value,
                                 directed_supinf=supinf, sliced_w2=w2,
                                 lipschitz_estimate=lip))

    for phase in config.phases:
        trainable = sorted(set(phase.trainable_stages))
        frozen = sorted(set(range(len(net.stages))) - set(trainable))
        before = _digest(net, frozen) if frozen else ""
        weights = phase.loss_weights or config.loss_weights or None
        eff_weights = dict(weights) if weights else {phase.loss: 1.0}
        eff_weights.setdefault(phase.loss, 1.0)
        optimizer = Adam(
            [((sidx, name), arr)
             for sidx, name, arr in net.parameters(stage_indices=trainable)],
            lr=phase.learning_rate)
        for local_step in range(phase.steps):
            latent = latent_sampler(config.batch_size, rng)
            target = target_sampler(config.batch_size, rng)
            needs_dirs = eff_weights.get("density", 0.0) > 0.0
            dirs = (draw_directions(target.shape[1], config.n_projections, rng)
                    if needs_dirs else None)
            if global_step % interval == 0:
                record(global_step, eff_weights)
            _, grads = compute_gradients(
                net, phase.loss, latent, target, trainable=set(trainable),
                directions=dirs, loss_weights=weights)
            optimizer.step(grads)
            global_step += 1
        # Final state of the phase.
        record(global_step, eff_weights)
        global_step += 1
        after = _digest(net, frozen) if frozen else ""
        frozen_digests.append((before, after))
        frozen_intact = frozen_intact and (before == after)
        phase_end_steps.append(global_step - 1)
        phase_losses.append(phase.loss)

    return LayerwiseResult(trace=trace, phase_end_steps=phase_end_steps,
                           phase_losses=phase_losses,
                           frozen_digests=frozen_digests,
                           frozen_intact=frozen_intact)


def run_layerwise(net: InjectiveNetwork, target: ManifoldTarget,
                  config: TrainingConfig, eval_count: int = 512) -> LayerwiseResult:
    """Two-phase layerwise schedule against a parametrized target.

    Latent batches and target parameter batches are drawn from the same base
    distribution on the target's parameter domain, so the density phase
    compares E#mu against f#mu directly.  Diagnostics use deterministic
    parameter grids so coverage gaps reflect the fit, not sampling noise.
    """
    if target.intrinsic_dim != net.latent_dim:
        raise InvalidConfigError(
            f"target intrinsic dim {target.intrinsic_dim} must equal the "
            f"network latent dim {net.latent_dim}")
    sampler = _param_sampler(target)

    def latent_sampler(count, rng):
        return sampler(count, rng)

    def target_sampler(count, rng):
        return target.map_points(sampler(count, rng))

    lo, hi = _PARAM_DOMAINS[target.domain]
    grid = np.linspace(lo, hi, eval_count)[:, None]
    eval_latent = grid
    eval_target = target.map_points(grid)
    return _run_phases(net, config, latent_sampler, target_sampler,
                       eval_latent, eval_target)


_PARAM_DOMAINS = {
    "interval[-1, 1]": (-1.0, 1.0),
    "interval[0, 2pi)": (0.0, 2.0 * np.pi),
}


def _param_sampler(target: ManifoldTarget):
    if target.domain not in _PARAM_DOMAINS:
        raise InvalidConfigError(
            f"no parameter sampler for domain {target.domain!r}")
    lo, hi = _PARAM_DOMAINS[target.domain]

    def sample(count, rng):
        return as_rng(rng).uniform(lo, hi, size=(count, target.intrinsic_dim))
    return sample


# --- experiment builders -----------------------------------------------------


def build_layerwise_toy_network(seed: int = 0, hidden: int = 24,
                                flow_depth: int = 3) -> InjectiveNetwork:
    """n=1 -> o=2 -> m=3 network for the layerwise toy experiment."""
    rng = as_rng(seed)
    t0 = FlowBlock(1, [AutoregressiveLayer(1, rng=rng)])
    r1 = LinearExpansive(random_orthonormal_columns(1, 2, rng))
    t1 = make_coupling_block(2, flow_depth, rng=rng, hidden=hidden)
    r2 = LinearExpansive(random_orthonormal_columns(2, 3, rng))
    t2 = make_coupling_block(3, flow_depth, rng=rng, hidden=hidden)
    return InjectiveNetwork([t0, r1, t1, r2, t2])


def default_layerwise_config(seed: int = 0, phase1_steps: int = 2400,
                             phase2_steps: int = 600) -> TrainingConfig:
    """Manifold phase on the outer stages (with a density component, since
    the dim-1 inner flow is affine and cannot reshape the latent measure
    beyond an affine map), then the frozen-outer density phase on T0.
    Both phases anneal their learning rates over successive legs."""
    leg1 = max(1, phase1_steps // 2)
    leg2 = max(1, phase1_steps // 3)
    leg3 = max(1, phase1_steps - leg1 - leg2)
    leg4 = max(1, (2 * phase2_steps) // 3)
    leg5 = max(1, phase2_steps - leg4)
    mix = {"manifold": 1.0, "density": 0.5}
    return TrainingConfig(
        phases=(
            PhaseConfig(trainable_stages=(1, 2, 3, 4), loss="manifold",
                        steps=leg1, learning_rate=5e-3, loss_weights=mix),
            PhaseConfig(trainable_stages=(1, 2, 3, 4), loss="manifold",
                        steps=leg2, learning_rate=1.2e-3, loss_weights=mix),
            PhaseConfig(trainable_stages=(1, 2, 3, 4), loss="manifold",
                        steps=leg3, learning_rate=3e-4, loss_weights=mix),
            PhaseConfig(trainable_stages=(0,), loss="density",
                        steps=leg4, learning_rate=1e-2),
            PhaseConfig(trainable_stages=(0,), loss="density",
                        steps=leg5, learning_rate=3e-3),
        ),
        batch_size=320, seed=seed, lipschitz_log_interval=50,
        n_projections=64)


def run_layerwise_toy(seed: int = 0, phase1_steps: int = 2400,
                      phase2_steps: int = 600):
    net = build_layerwise_toy_network(seed=seed)
    config = default_layerwise_config(seed=seed, phase1_steps=phase1_steps,
                                      phase2_steps=phase2_steps)
    target = arc_target()
    result = run_layerwise(net, target, config)
    return net, result


def build_obstruction_network(seed: int = 0, hidden: int = 40,
                              t0_depth: int = 2,
                              t1_depth: int = 10) -> InjectiveNetwork:
    """Extendable-by-construction family: planar flow, full-rank linear
    R^2 -> R^3, then an ambient flow block."""
    rng = as_rng(seed)
    t0 = make_coupling_block(2, t0_depth, rng=rng, hidden=hidden)
    r1 = LinearExpansive(random_orthonormal_columns(2, 3, rng))
    t1 = make_coupling_block(3, t1_depth, rng=rng, hidden=hidden)
    return InjectiveNetwork([t0, r1, t1])


class _ArclengthSampler:
    """Inverse-CDF sampler making a curve target uniform in arclength."""

    def __init__(self, target: ManifoldTarget, grid_size: int = 4096):
        theta = np.linspace(0.0, 2.0 * np.pi, grid_size, endpoint=False)[:, None]
        pts = target.map_points(theta)
        seg = np.linalg.norm(np.diff(np.vstack([pts, pts[:1]]), axis=0), axis=1)
        cdf = np.concatenate([[0.0], np.cumsum(seg)])
        self._cdf = cdf / cdf[-1]
        self._theta = np.linspace(0.0, 2.0 * np.pi, grid_size + 1)

    def theta(self, u) -> np.ndarray:
        return np.interp(np.asarray(u, dtype=float), self._cdf, self._theta)

    def sample(self, count, rng) -> np.ndarray:
        return self.theta(as_rng(rng).uniform(size=count))[:, None]

    def grid(self, count) -> np.ndarray:
        return self.theta((np.arange(count) + 0.5) / count)[:, None]


@dataclass
class ObstructionResult:
    treatment: TrainingTrace
    control: TrainingTrace
    summary: dict


def run_obstruction_experiment(seed: int = 0, steps_manifold: int = 2500,
                               steps_density: int = 3500,
                               batch_size: int = 256,
                               trefoil_scale: float = 1.0,
                               control_radius: float = 2.0,
                               lipschitz_log_interval: int = 50,
                               eval_count: int = 512) -> ObstructionResult:
    """Identical-budget paired runs: trefoil treatment vs planar-circle control.

    Both arms share the architecture, initialization seed, schedule, and
    latent base measure (uniform on the unit circle in R^2); only the target
    differs.  Target batches are uniform in arclength on the curve.  Traces
    record the Lipschitz estimate over a fixed fine latent grid so
    squeeze-induced stretching is visible.
    """
    targets = {
        "treatment": trefoil_target(scale=trefoil_scale),
        "control": planar_circle_target(radius=control_radius, tilt=0.35,
                                        center=(0.1, 0.0, 0.1)),
    }
    leg1 = max(1, steps_density // 2)
    leg2 = max(1, (3 * steps_density) // 10)
    leg3 = max(1, steps_density - leg1 - leg2)
    density_mix = {"density": 1.0, "manifold": 0.1}
    traces = {}
    for arm, target in targets.items():
        net = build_obstruction_network(seed=seed)
        config = TrainingConfig(
            phases=(
                PhaseConfig(trainable_stages=(0, 1, 2), loss="manifold",
                            steps=steps_manifold, learning_rate=5e-3,
                            loss_weights={"manifold": 1.0, "density": 0.5}),
                PhaseConfig(trainable_stages=(0, 1, 2), loss="density",
                            steps=leg1, learning_rate=2e-3,
                            loss_weights=density_mix),
                PhaseConfig(trainable_stages=(0, 1, 2), loss="density",
                            steps=leg2, learning_rate=7e-4,
                            loss_weights=density_mix),
                PhaseConfig(trainable_stages=(0, 1, 2), loss="density",
                            steps=leg3, learning_rate=2.5e-4,
                            loss_weights=density_mix),
            ),
            batch_size=batch_size, seed=seed,
            lipschitz_log_interval=lipschitz_log_interval,
            n_projections=64)
        arclen = _ArclengthSampler(target)

        def latent_sampler(count, rng):
            theta = as_rng(rng).uniform(0.0, 2.0 * np.pi, size=count)
            return np.column_stack([np.cos(theta), np.sin(theta)])

        def target_sampler(count, rng, _t=target, _s=arclen):
            return _t.map_points(_s.sample(count, rng))

        eval_latent = sample_circle(eval_count, mode="grid").points
        eval_target = target.map_points(arclen.grid(eval_count))
        result = _run_phases(net, config, latent_sampler, target_sampler,
                             eval_latent, eval_target,
                             lipschitz_samples=eval_latent)
        traces[arm] = result.trace

    control = traces["control"]
    treatment = traces["treatment"]
    control_final_lip = control.final.lipschitz_estimate
    control_final_w2 = control.final.sliced_w2
    tight = [r for r in treatment.records if r.sliced_w2 < 0.1]
    summary = {
        "control_final_sliced_w2": control_final_w2,
        "control_final_lipschitz": control_final_lip,
        "control_max_lipschitz": float(control.column("lipschitz_estimate").max()),
        "treatment_min_sliced_w2": float(treatment.column("sliced_w2").min()),
        "treatment_steps_below_0.1": len(tight),
        "treatment_min_lipschitz_when_tight":
            min((r.lipschitz_estimate for r in tight), default=float("nan")),
        "lipschitz_ratio":
            (min((r.lipschitz_estimate for r in tight), default=float("nan"))
             / control_final_lip) if control_final_lip > 0 else float("nan"),
        # Experiment-design constants, not values from the source material.
        "control_lipschitz_ceiling": 20.0,
        "ratio_threshold": 10.0,
    }
    return ObstructionResult(treatment=treatment, control=control,
                             summary=summary)
