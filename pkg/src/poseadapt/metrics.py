"""Pose evaluation: ADD, ADD-S, average recall, and prediction helpers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import InvalidArgumentError, NonPositiveDepthError
from .geometry import (
    AnchorSet,
    CameraIntrinsics,
    ObjectModel,
    Pose,
    apply_pose,
    compose_pose,
    compose_with_initial_guess,
)

HIT_FACTOR = 0.1  # hit when distance < 10% of the object diameter


@dataclass(frozen=True)
class EvalRecord:
    sample_id: str
    add: float
    add_s: float
    hit: bool


def add_metric(p: Pose, gt: Pose, model: ObjectModel):
    """Mean Euclidean deviation of model points under the two poses."""
    if len(model.points) == 0:
        raise InvalidArgumentError("empty object model")
    d = apply_pose(p, model.points) - apply_pose(gt, model.points)
    return float(np.linalg.norm(d, axis=1).mean())


def add_s_metric(p: Pose, gt: Pose, model: ObjectModel):
    """Mean closest-point deviation; exact O(n^2) search."""
    if len(model.points) == 0:
        raise InvalidArgumentError("empty object model")
    a = apply_pose(p, model.points)
    b = apply_pose(gt, model.points)
    diff = a[:, None, :] - b[None, :, :]
    return float(np.sqrt((diff * diff).sum(-1)).min(axis=1).mean())


def evaluate_pose(p: Pose, gt: Pose, model: ObjectModel, sample_id="") -> EvalRecord:
    """ADD plus ADD-S, with the hit decision using ADD-S for symmetric
    models and ADD otherwise."""
    a = add_metric(p, gt, model)
    s = add_s_metric(p, gt, model)
    dist = s if model.is_symmetric else a
    return EvalRecord(sample_id=sample_id, add=a, add_s=s,
                      hit=bool(dist < HIT_FACTOR * model.diameter))


def average_recall(records):
    """Percentage of hit records."""
    records = list(records)
    if not records:
        raise InvalidArgumentError("no evaluation records")
    return 100.0 * sum(r.hit for r in records) / len(records)


# ---------------------------------------------------------------------------
# prediction


def predict_poses(net, observations, anchors: AnchorSet, cam: CameraIntrinsics,
                  inits=None):
    """Most-likely pose per observation row (arg-max anchors + residuals).

    A depth residual that would push z non-positive falls back to the bare
    bin center so evaluation never dies on a half-trained network.  When
    ``inits`` is given, each network pose composes with its initial guess.
    """
    obs = np.asarray(observations, dtype=float)
    with ad.no_grad():
        out = net.forward(obs)
    picks = out.picks()
    B = obs.shape[0]
    ones = np.zeros(B, dtype=int)
    i_rot = picks.get("rot", ones)
    i_vx = picks.get("vx", ones)
    i_vy = picks.get("vy", ones)
    i_z = picks.get("z", ones)
    poses = []
    for b in range(B):
        rot_res = (out.residuals["rot"].data[b, i_rot[b]]
                   if "rot" in out.residuals else np.array([1.0, 0, 0, 0, 1.0, 0]))
        dvx = float(out.residuals["vx"].data[b, i_vx[b]]) if "vx" in out.residuals else 0.0
        dvy = float(out.residuals["vy"].data[b, i_vy[b]]) if "vy" in out.residuals else 0.0
        dz = float(out.residuals["z"].data[b, i_z[b]]) if "z" in out.residuals else 0.0
        cls_picks = (i_rot[b], i_vx[b], i_vy[b], i_z[b])
        try:
            pose = compose_pose(cls_picks, (rot_res, dvx, dvy, dz), anchors, cam)
        except NonPositiveDepthError:
            pose = compose_pose(cls_picks, (rot_res, dvx, dvy, 0.0), anchors, cam)
        if inits is not None:
            pose = compose_with_initial_guess(pose, inits[b])
        poses.append(pose)
    return poses, out


def confidence_scores(out):
    """Per-branch max classifier probability, (B,) arrays keyed by branch."""
    return {name: probs.data.max(axis=1) for name, probs in out.probs.items()}


def scalar_mae(predicted, actual):
    """Mean absolute error between two scalar sequences."""
    predicted = np.asarray(predicted, dtype=float)
    actual = np.asarray(actual, dtype=float)
    if predicted.shape != actual.shape or predicted.size == 0:
        raise InvalidArgumentError("MAE needs equal-length nonempty sequences")
    return float(np.abs(predicted - actual).mean())
