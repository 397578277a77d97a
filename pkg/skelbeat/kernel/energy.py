"""Energy quantities over classifier logits and the motion manifold distance.

log p(x) is represented up to its normalizer by the log-sum-exp of the
logits. The conditional adversarial density of x~ given (x, y) is
g(x~)[y] - lambda * d(x, x~), with d the bone-length plus dynamics distance.

Array functions take motion batches (..., M, J, 3) and the B x 2 bone array
of the topology; the named operations accept Motion objects as well.
"""
import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from skelbeat.kernel.autodiff import ComputeGraph
from skelbeat.kernel.skeleton import Motion, SkeletonError, \
    bone_lengths_array

logger = logging.getLogger(__name__)

ORDERS = (0, 1, 2)


class EnergyError(Exception):
    """Inputs of an energy quantity do not fit together."""


@dataclass(frozen=True)
class ManifoldDistanceConfig:
    """Weight lambda of the manifold distance and the derivative orders used.
    The norm is always the squared Euclidean one."""
    lam: float = 1e-3
    orders: Tuple[int, ...] = ORDERS

    def __post_init__(self):
        if not self.lam >= 0:
            raise EnergyError("lambda must be non-negative, got %r"
                              % (self.lam,))
        if not set(self.orders) <= set(ORDERS):
            raise EnergyError("derivative orders %s are not a subset of %s"
                              % (self.orders, ORDERS))


def _positions(motion) -> np.ndarray:
    return motion.positions if isinstance(motion, Motion) \
        else np.asarray(motion, dtype=np.float64)


def _check_pair(x, x_adv):
    if isinstance(x, Motion) and isinstance(x_adv, Motion) \
            and x.topology != x_adv.topology:
        raise EnergyError("motions use different topologies")
    a, b = _positions(x), _positions(x_adv)
    if a.shape != b.shape:
        raise EnergyError("motions of shape %s and %s differ in length or "
                          "joints" % (a.shape, b.shape))
    return a, b


def _bones_of(x, bones):
    if bones is not None:
        return np.asarray(bones, dtype=np.int64).reshape(-1, 2)
    if isinstance(x, Motion):
        return x.topology.bone_array
    raise EnergyError("bones are needed for plain position arrays")


def _diff_adjoint(values: np.ndarray) -> np.ndarray:
    """Transpose of the forward difference along the frame axis."""
    return -np.diff(values, axis=-3, prepend=0.0, append=0.0)


def manifold_distance_array(x: np.ndarray, x_adv: np.ndarray,
                            bones: np.ndarray,
                            orders=ORDERS) -> np.ndarray:
    """Distance d per motion of a batch; shape (...) for (..., M, J, 3)."""
    frames, joints = x.shape[-3], x.shape[-2]
    total = np.zeros(x.shape[:-3])
    if len(bones):
        delta = bone_lengths_array(x, bones) - bone_lengths_array(x_adv,
                                                                  bones)
        total = total + np.sum(delta ** 2, axis=(-2, -1)) / (
            frames * len(bones))
    error = x_adv - x
    for order in orders:
        if frames < order + 1:
            raise SkeletonError("order %d derivative needs %d frames"
                                % (order, order + 1))
        diff = np.diff(error, n=order, axis=-3) if order else error
        total = total + np.sum(diff ** 2, axis=(-3, -2, -1)) / (
            (frames - order) * joints)
    return total


def manifold_distance_grad_array(x: np.ndarray, x_adv: np.ndarray,
                                 bones: np.ndarray,
                                 orders=ORDERS) -> np.ndarray:
    """Gradient of d with respect to x_adv, shaped like x_adv."""
    frames, joints = x.shape[-3], x.shape[-2]
    grad = np.zeros_like(x_adv)
    if len(bones):
        parents, children = bones[:, 0], bones[:, 1]
        vectors = x_adv[..., children, :] - x_adv[..., parents, :]
        lengths = np.linalg.norm(vectors, axis=-1)
        target = bone_lengths_array(x, bones)
        safe = np.where(lengths > 0.0, lengths, 1.0)
        # the bone term has no unique direction at zero length; use 0
        unit = np.where(lengths[..., None] > 0.0,
                        vectors / safe[..., None], 0.0)
        local = (2.0 / (frames * len(bones))) * (lengths - target)[
            ..., None] * unit
        for b, (parent, child) in enumerate(bones):
            grad[..., child, :] += local[..., b, :]
            grad[..., parent, :] -= local[..., b, :]
    error = x_adv - x
    for order in orders:
        scale = 2.0 / ((frames - order) * joints)
        diff = np.diff(error, n=order, axis=-3) if order else error
        for _ in range(order):
            diff = _diff_adjoint(diff)
        grad += scale * diff
    return grad


def manifold_distance(x, x_adv, cfg: ManifoldDistanceConfig = None,
                      bones=None) -> float:
    """Bone-length plus dynamics distance between two motions."""
    cfg = cfg or ManifoldDistanceConfig()
    a, b = _check_pair(x, x_adv)
    return float(manifold_distance_array(a, b, _bones_of(x, bones),
                                         cfg.orders))


# --- logit energies ----------------------------------------------------------

def _logit_objective(model, x, reduce: str, labels=None):
    """Value and input gradient of a per-sample logit reduction.

    reduce is 'lse' (log-sum-exp), 'mean' or 'select' (class logit).
    """
    flat, single = model._as_batch(_positions(x))
    graph = ComputeGraph()
    x_node = graph.input('x', flat)
    logits = model.build_logits(graph, x_node)
    if reduce == 'lse':
        per_sample = graph.logsumexp(logits)
    elif reduce == 'mean':
        per_sample = graph.mean(logits, axis=-1)
    else:
        labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
        per_sample = graph.select(logits, labels)
    total = graph.sum(per_sample)
    graph.forward(output=total)
    grad = graph.backward(total, [x_node])[0]
    shape = np.shape(_positions(x))
    if single:
        return float(per_sample.value[0]), grad.reshape(shape)
    return per_sample.value.copy(), grad.reshape(shape)


def log_px_unnorm(model, motion):
    """log sum_y exp g(x)[y], the log-density up to its normalizer."""
    return _logit_objective(model, motion, 'lse')[0]


def logit_mean_u(model, motion):
    """Arithmetic mean of the logits."""
    return _logit_objective(model, motion, 'mean')[0]


def log_cond_adv(model, x_adv, x, y, cfg: ManifoldDistanceConfig = None,
                 bones=None):
    """g(x~)[y] - lambda * d(x, x~), unnormalized."""
    cfg = cfg or ManifoldDistanceConfig()
    a, b = _check_pair(x, x_adv)
    bones = _bones_of(x, bones)
    selected = _logit_objective(model, b, 'select', y)[0]
    distance = manifold_distance_array(a, b, bones, cfg.orders)
    value = selected - cfg.lam * distance
    return float(value) if np.ndim(value) == 0 else value


def grad_log_px_wrt_input(model, motion) -> np.ndarray:
    return _logit_objective(model, motion, 'lse')[1]


def log_px_and_grad(model, motion):
    """(log p(x) up to a constant, its input gradient) in one pass."""
    return _logit_objective(model, motion, 'lse')


def grad_logit_mean_u_wrt_input(model, motion) -> np.ndarray:
    return _logit_objective(model, motion, 'mean')[1]


def grad_log_cond_adv_wrt_input(model, x_adv, x, y,
                                cfg: ManifoldDistanceConfig = None,
                                bones=None) -> np.ndarray:
    """Gradient of log_cond_adv with respect to x_adv."""
    cfg = cfg or ManifoldDistanceConfig()
    a, b = _check_pair(x, x_adv)
    bones = _bones_of(x, bones)
    grad = _logit_objective(model, b, 'select', y)[1]
    if cfg.lam:
        grad = grad - cfg.lam * manifold_distance_grad_array(
            a, b, bones, cfg.orders)
    return grad
