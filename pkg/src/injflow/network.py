"""The composed injective network: flow blocks alternating with expansive layers.

Stage order is T0, R1, T1, ..., RL, TL with non-decreasing dimensions; every
expansive layer must pass its injectivity validation, so the composition is
injective from the latent space into the ambient space.
"""

from __future__ import annotations

import json

import numpy as np

from ._util import as_batch, unbatch
from .errors import InvalidArgumentError, InvalidLayerError, NumericError
from .expansive import ExpansiveLayer, expansive_from_config
from .flows import FlowBlock

DEFAULT_DOMAIN_RADIUS = 10.0
CHECKPOINT_FORMAT = "injflow-checkpoint-v1"


class InjectiveNetwork:
    """Alternating composition [T0, R1, T1, ..., RL, TL], applied in order."""

    def __init__(self, stages, check: bool = True):
        self.stages = list(stages)
        if check:
            self._validate()

    def _validate(self) -> None:
        if not self.stages:
            raise InvalidLayerError("network needs at least one stage")
        if not isinstance(self.stages[0], FlowBlock):
            raise InvalidLayerError("stage 0 must be a flow block (T0)")
        expect_flow = True
        dim = self.stages[0].dim
        for idx, stage in enumerate(self.stages):
            if expect_flow:
                if not isinstance(stage, FlowBlock):
                    raise InvalidLayerError(f"stage {idx}: expected a flow block")
                if stage.dim != dim:
                    raise InvalidLayerError(
                        f"stage {idx}: flow dim {stage.dim} does not match {dim}")
            else:
                if not isinstance(stage, ExpansiveLayer):
                    raise InvalidLayerError(f"stage {idx}: expected an expansive layer")
                if stage.in_dim != dim:
                    raise InvalidLayerError(
                        f"stage {idx}: expansive input {stage.in_dim} "
                        f"does not match {dim}")
                if stage.out_dim < stage.in_dim:
                    raise InvalidLayerError(
                        f"stage {idx}: dimensions must be non-decreasing")
                report = stage.validate()
                if not report.ok:
                    raise InvalidLayerError(f"stage {idx}: {report.detail}")
                dim = stage.out_dim
            expect_flow = not expect_flow
        if not isinstance(self.stages[-1], FlowBlock):
            raise InvalidLayerError("network must end with a flow block (TL)")

    @property
    def latent_dim(self) -> int:
        return self.stages[0].dim

    @property
    def ambient_dim(self) -> int:
        return self.stages[-1].dim

    def flow_blocks(self):
        return [s for s in self.stages if isinstance(s, FlowBlock)]

    def expansive_layers(self):
        return [s for s in self.stages if isinstance(s, ExpansiveLayer)]

    def forward(self, x):
        X, single = as_batch(x, self.latent_dim, "latent input")
        for idx, stage in enumerate(self.stages):
            try:
                X = stage.forward(X) if isinstance(stage, FlowBlock) else stage(X)
            except NumericError as err:
                raise NumericError(str(err), stage_index=idx) from err
            if not np.all(np.isfinite(X)):
                raise NumericError("non-finite stage output", stage_index=idx)
        return unbatch(X, single)

    def forward_with_cache(self, X: np.ndarray):
        caches = []
        for stage in self.stages:
            X, c = stage.forward_with_cache(X)
            caches.append(c)
        return X, caches

    def vjp(self, caches, grad_out, trainable=None):
        """Backpropagate grad_out through all stages.

        Returns (grad wrt latent batch, {stage_idx: {param_name: grad}});
        parameter gradients are collected only for stages in `trainable`
        (all stages when None).
        """
        grads: dict[int, dict] = {}
        g = grad_out
        for idx in range(len(self.stages) - 1, -1, -1):
            g, sgrads = self.stages[idx].vjp(caches[idx], g)
            if sgrads and (trainable is None or idx in trainable):
                grads[idx] = sgrads
        return g, grads

    def parameters(self, stage_indices=None):
        """[(stage_idx, name, array)] of trainable parameters."""
        out = []
        for idx, stage in enumerate(self.stages):
            if stage_indices is not None and idx not in stage_indices:
                continue
            for name, arr in stage.parameters():
                out.append((idx, name, arr))
        return out

    def lipschitz_bound(self, radius: float = DEFAULT_DOMAIN_RADIUS) -> float:
        """Product of per-stage bounds, certified on ||x||_2 <= radius.

        Latent-dependent coupling scales make a global constant unattainable;
        the per-stage input radii are propagated through the composition.
        """
        bound = 1.0
        r = radius
        for stage in self.stages:
            if isinstance(stage, FlowBlock):
                bound *= stage.lipschitz_bound(r)
                r = stage.output_radius(r)
            else:
                bound *= stage.lipschitz_bound()
                r = stage.output_radius(r)
        return bound

    def to_config(self) -> dict:
        return {"format": CHECKPOINT_FORMAT,
                "stages": [s.to_config() for s in self.stages]}

    def save_checkpoint(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_config(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def from_config(cls, cfg: dict) -> "InjectiveNetwork":
        if cfg.get("format") != CHECKPOINT_FORMAT:
            raise InvalidArgumentError(
                f"unknown checkpoint format {cfg.get('format')!r}")
        stages = []
        for sc in cfg["stages"]:
            if sc["kind"] == "flow_block":
                stages.append(FlowBlock.from_config(sc))
            else:
                stages.append(expansive_from_config(sc))
        return cls(stages)

    @classmethod
    def load_checkpoint(cls, path) -> "InjectiveNetwork":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_config(json.load(fh))


def lipschitz_estimate(net, samples, min_separation: float = 1e-9,
                       chunk: int = 256) -> float:
    """Max difference quotient ||E(x) - E(x')|| / ||x - x'|| over sample pairs.

    Pairs closer than min_separation are skipped; raises when fewer than two
    usable pairs remain.  Always bounded by lipschitz_bound at a radius
    covering the samples.
    """
    pts = samples.points if hasattr(samples, "points") else np.asarray(samples, float)
    pts = np.atleast_2d(pts)
    if pts.shape[0] < 2:
        raise InvalidArgumentError("need at least 2 samples")
    fwd = net.forward if hasattr(net, "forward") else net
    Y = np.atleast_2d(np.asarray(fwd(pts), dtype=float))
    best = 0.0
    usable = 0
    n = pts.shape[0]
    for start in range(0, n, chunk):
        xs = pts[start:start + chunk]
        ys = Y[start:start + chunk]
        dx = np.linalg.norm(xs[:, None, :] - pts[None, :, :], axis=2)
        dy = np.linalg.norm(ys[:, None, :] - Y[None, :, :], axis=2)
        mask = dx > min_separation
        usable += int(mask.sum())
        if mask.any():
            best = max(best, float((dy[mask] / dx[mask]).max()))
    if usable < 2:
        raise InvalidArgumentError("fewer than 2 usable sample pairs")
    return best
