"""Base classifier, appended heads and the Bayesian head ensemble.

All gradients are computed with the autodiff tape. Inputs are motion
batches of shape (n, M, J, 3); a single motion (M, J, 3) is accepted
everywhere and yields unbatched results.
"""
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
from scipy.special import logsumexp, softmax

from skelbeat.kernel.autodiff import ComputeGraph, Node
from skelbeat.kernel.params import ParamError, ParamVector

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = '1.0'
CHECKPOINT_KINDS = ('base', 'ensemble')
HEAD_INPUTS = ('logits', 'latent')
HEAD_INIT_STD = 0.01


class ModelError(Exception):
    """Base error of classifier models."""


class ArchitectureError(ModelError):
    """Input or parameters do not match the architecture."""


class CheckpointDigestError(ModelError):
    """Stored parameter digest does not match the stored parameters."""


class FrozenBaseError(CheckpointDigestError):
    """The base parameters of an ensemble changed."""


@dataclass(frozen=True)
class Architecture:
    """Layer layout of a base classifier: flattened motion -> hidden ReLU
    layers -> C logits."""
    frames: int
    joints: int
    class_count: int
    hidden: Tuple[int, ...] = (64,)

    def __post_init__(self):
        if self.frames < 1 or self.joints < 1:
            raise ArchitectureError("frames and joints must be positive")
        if self.class_count < 2:
            raise ArchitectureError("at least 2 classes are needed, got %d"
                                    % self.class_count)
        if any(width < 1 for width in self.hidden):
            raise ArchitectureError("hidden widths must be positive: %s"
                                    % (self.hidden,))
        object.__setattr__(self, 'hidden', tuple(int(w) for w in self.hidden))

    @property
    def input_dim(self) -> int:
        return self.frames * self.joints * 3

    @property
    def feature_dim(self) -> int:
        """Width of the last hidden activation."""
        return self.hidden[-1] if self.hidden else self.input_dim

    @property
    def layer_shapes(self) -> List[Tuple[int, int]]:
        widths = [self.input_dim] + list(self.hidden) + [self.class_count]
        return list(zip(widths[:-1], widths[1:]))

    def to_serializable(self) -> dict:
        return {'frames': self.frames, 'joints': self.joints,
                'class_count': self.class_count, 'hidden': list(self.hidden)}

    @classmethod
    def from_serializable(cls, data) -> 'Architecture':
        try:
            return cls(int(data['frames']), int(data['joints']),
                       int(data['class_count']), tuple(data['hidden']))
        except (KeyError, TypeError, ValueError) as ex:
            raise ArchitectureError("invalid architecture descriptor: %s"
                                    % ex) from ex


def cross_entropy(logits: np.ndarray, labels) -> np.ndarray:
    """Per-row softmax cross-entropy."""
    labels = np.asarray(labels)
    picked = np.take_along_axis(logits, labels[..., None], axis=-1)[..., 0]
    return logsumexp(logits, axis=-1) - picked


class Classifier:
    """Common interface of everything that can be evaluated and attacked."""
    architecture: Architecture = None

    @property
    def class_count(self) -> int:
        return self.architecture.class_count

    def _as_batch(self, x) -> Tuple[np.ndarray, bool]:
        """Flatten x to (n, D) and tell whether it was a single motion."""
        x = np.asarray(x, dtype=np.float64)
        arch = self.architecture
        expected = (arch.frames, arch.joints, 3)
        if x.shape[-3:] != expected or x.ndim not in (3, 4):
            raise ArchitectureError("input of shape %s does not fit %s"
                                    % (x.shape, expected))
        single = x.ndim == 3
        return x.reshape(1 if single else x.shape[0], -1), single

    def predict_proba(self, x) -> np.ndarray:
        raise NotImplementedError

    def predict(self, x):
        proba = self.predict_proba(x)
        label = np.argmax(proba, axis=-1)
        return int(label) if np.ndim(label) == 0 else label

    def input_gradient(self, x, labels) -> Tuple[np.ndarray, np.ndarray]:
        """Cross-entropy gradient with respect to each input motion.

        Returns:
            (gradients shaped like x, per-sample losses)
        """
        raise NotImplementedError


class BaseClassifier(Classifier):
    """Feed-forward network g_theta with ReLU hidden layers.

    Args:
        architecture: layer layout
        params: blocks w0, b0, w1, b1, ... matching the layout
    """

    def __init__(self, architecture: Architecture, params: ParamVector):
        self.architecture = architecture
        expected = []
        for i, (fan_in, fan_out) in enumerate(architecture.layer_shapes):
            expected += [('w%d' % i, (fan_in, fan_out)), ('b%d' % i,
                                                          (fan_out,))]
        if [(n, params[n].shape) for n in params] != expected:
            raise ArchitectureError(
                "parameter blocks %s do not match architecture %s"
                % ([(n, params[n].shape) for n in params], expected))
        self.params = params

    @classmethod
    def initialize(cls, architecture: Architecture,
                   rng: np.random.Generator) -> 'BaseClassifier':
        """He-normal weights, zero biases."""
        params = ParamVector()
        for i, (fan_in, fan_out) in enumerate(architecture.layer_shapes):
            params.add('w%d' % i, rng.normal(0.0, np.sqrt(2.0 / fan_in),
                                             size=(fan_in, fan_out)))
            params.add('b%d' % i, np.zeros(fan_out))
        return cls(architecture, params)

    @classmethod
    def zeros(cls, architecture: Architecture) -> 'BaseClassifier':
        params = ParamVector()
        for i, (fan_in, fan_out) in enumerate(architecture.layer_shapes):
            params.add('w%d' % i, np.zeros((fan_in, fan_out)))
            params.add('b%d' % i, np.zeros(fan_out))
        return cls(architecture, params)

    @property
    def layer_count(self) -> int:
        return len(self.architecture.layer_shapes)

    def digest(self) -> str:
        return self.params.digest()

    def with_params(self, params: ParamVector) -> 'BaseClassifier':
        return BaseClassifier(self.architecture, params)

    def build(self, graph: ComputeGraph, x_node: Node, trainable=False
              ) -> Tuple[Node, Node, Dict[str, Node]]:
        """Append the network to a graph.

        Args:
            x_node: (n, D) flattened input
            trainable: parameters become param leaves instead of constants

        Returns:
            (logits node, last hidden activation node, parameter nodes)
        """
        leaves = {}
        for name, value in self.params.items():
            leaves[name] = graph.param(name, value) if trainable \
                else graph.constant(value)
        hidden = x_node
        features = x_node
        for i in range(self.layer_count):
            hidden = graph.affine(hidden, leaves['w%d' % i],
                                  leaves['b%d' % i])
            if i < self.layer_count - 1:
                hidden = graph.relu(hidden)
                features = hidden
        return hidden, features, leaves

    def build_logits(self, graph: ComputeGraph, x_node: Node) -> Node:
        return self.build(graph, x_node)[0]

    def forward(self, x) -> Tuple[np.ndarray, np.ndarray]:
        """(logits, last hidden activation) for a batch, both 2D."""
        flat, _ = self._as_batch(x)
        graph = ComputeGraph()
        logits, features, _ = self.build(graph, graph.input('x', flat))
        graph.forward()
        return logits.value, features.value

    def logits(self, x) -> np.ndarray:
        values = self.forward(x)[0]
        return values[0] if np.ndim(x) == 3 else values

    def predict_proba(self, x) -> np.ndarray:
        return softmax(self.logits(x), axis=-1)

    def input_gradient(self, x, labels):
        return _input_gradient(self, x, labels)


class AppendedHead:
    """Two affine layers with tanh between: in_dim -> C -> C.

    Args:
        params: blocks w1, b1, w2, b2
        index: position of the head in its ensemble
    """
    BLOCKS = ('w1', 'b1', 'w2', 'b2')

    def __init__(self, params: ParamVector, index: int = 0):
        if tuple(params.names) != self.BLOCKS:
            raise ArchitectureError("head blocks %s, expected %s"
                                    % (params.names, self.BLOCKS))
        in_dim, width = params['w1'].shape
        if params['b1'].shape != (width,) \
                or params['w2'].shape != (width, width) \
                or params['b2'].shape != (width,):
            raise ArchitectureError("head blocks have inconsistent shapes")
        self.params = params
        self.index = index

    @property
    def input_dim(self) -> int:
        return self.params['w1'].shape[0]

    @property
    def class_count(self) -> int:
        return self.params['w2'].shape[1]

    @classmethod
    def initialize(cls, input_dim: int, class_count: int,
                   rng: np.random.Generator, index: int = 0,
                   std: float = HEAD_INIT_STD) -> 'AppendedHead':
        """Small Gaussian weights and zero biases, so the member starts close
        to the base classifier."""
        params = ParamVector()
        params.add('w1', rng.normal(0.0, std, size=(input_dim, class_count)))
        params.add('b1', np.zeros(class_count))
        params.add('w2', rng.normal(0.0, std,
                                    size=(class_count, class_count)))
        params.add('b2', np.zeros(class_count))
        return cls(params, index)

    @classmethod
    def zeros(cls, input_dim: int, class_count: int,
              index: int = 0) -> 'AppendedHead':
        params = ParamVector({'w1': np.zeros((input_dim, class_count)),
                              'b1': np.zeros(class_count),
                              'w2': np.zeros((class_count, class_count)),
                              'b2': np.zeros(class_count)})
        return cls(params, index)

    def with_params(self, params: ParamVector) -> 'AppendedHead':
        return AppendedHead(params, self.index)

    def leaves(self, graph: ComputeGraph, trainable=False) -> Dict[str, Node]:
        return {name: graph.param(name, value) if trainable
                else graph.constant(value)
                for name, value in self.params.items()}

    def build(self, graph: ComputeGraph, phi: Node, skip: Node,
              trainable=False, leaves: Dict[str, Node] = None
              ) -> Tuple[Node, Dict[str, Node]]:
        """Member logits f(phi) + skip.

        Args:
            leaves: parameter nodes to reuse, e.g. to apply one head to
                several batches of a graph

        Returns:
            (member logits node, parameter nodes)
        """
        if leaves is None:
            leaves = self.leaves(graph, trainable)
        hidden = graph.tanh(graph.affine(phi, leaves['w1'], leaves['b1']))
        out = graph.affine(hidden, leaves['w2'], leaves['b2'])
        return graph.add(out, skip), leaves

    def __repr__(self):
        return "<AppendedHead %d: %d -> %d>" % (self.index, self.input_dim,
                                                self.class_count)


class BeatEnsemble(Classifier):
    """Frozen base classifier plus N appended heads with skip connection.

    Member i predicts f_i(phi(x)) + g(x) where phi(x) are the base logits
    (head_input 'logits') or the last hidden activation ('latent').
    """

    def __init__(self, base: BaseClassifier, heads: Sequence[AppendedHead],
                 head_input: str = 'logits', base_digest: str = None):
        if head_input not in HEAD_INPUTS:
            raise ModelError("head input '%s' is none of %s"
                             % (head_input, HEAD_INPUTS))
        if not heads:
            raise ModelError("an ensemble needs at least one head")
        self.base = base
        self.architecture = base.architecture
        self.head_input = head_input
        in_dim = self.head_input_dim(base.architecture, head_input)
        for head in heads:
            if head.input_dim != in_dim \
                    or head.class_count != base.class_count:
                raise ArchitectureError(
                    "head %d maps %d -> %d, ensemble needs %d -> %d"
                    % (head.index, head.input_dim, head.class_count, in_dim,
                       base.class_count))
        self.heads: List[AppendedHead] = list(heads)
        self.base_digest = base_digest or base.digest()

    @staticmethod
    def head_input_dim(architecture: Architecture, head_input: str) -> int:
        if head_input == 'latent':
            return architecture.feature_dim
        return architecture.class_count

    @classmethod
    def initialize(cls, base: BaseClassifier, head_count: int,
                   rngs: Sequence[np.random.Generator],
                   head_input: str = 'logits') -> 'BeatEnsemble':
        in_dim = cls.head_input_dim(base.architecture, head_input)
        heads = [AppendedHead.initialize(in_dim, base.class_count, rngs[i], i)
                 for i in range(head_count)]
        return cls(base, heads, head_input)

    @property
    def head_count(self) -> int:
        return len(self.heads)

    def verify_base(self):
        """Raise FrozenBaseError if the base parameters were modified."""
        digest = self.base.digest()
        if digest != self.base_digest:
            raise FrozenBaseError("base classifier digest changed from %s to "
                                  "%s" % (self.base_digest, digest))

    def member(self, index: int) -> 'BeatEnsemble':
        """Single-member ensemble of head index."""
        if not 0 <= index < self.head_count:
            raise ModelError("member %d outside [0, %d)"
                             % (index, self.head_count))
        return BeatEnsemble(self.base, [self.heads[index]], self.head_input,
                            self.base_digest)

    def first(self, count: int) -> 'BeatEnsemble':
        """Ensemble of the first count heads."""
        if not 1 <= count <= self.head_count:
            raise ModelError("cannot take %d of %d heads"
                             % (count, self.head_count))
        return BeatEnsemble(self.base, self.heads[:count], self.head_input,
                            self.base_digest)

    def build_members(self, graph: ComputeGraph, x_node: Node) -> List[Node]:
        logits, features, _ = self.base.build(graph, x_node)
        phi = logits if self.head_input == 'logits' else features
        return [head.build(graph, phi, logits)[0] for head in self.heads]

    def build_logits(self, graph: ComputeGraph, x_node: Node) -> Node:
        """Logits of a single-member ensemble."""
        if self.head_count != 1:
            raise ModelError("logits are defined per member, this ensemble "
                             "has %d heads" % self.head_count)
        return self.build_members(graph, x_node)[0]

    def member_logits_all(self, x) -> np.ndarray:
        """(N, n, C) logits of every member, or (N, C) for one motion."""
        flat, single = self._as_batch(x)
        graph = ComputeGraph()
        members = self.build_members(graph, graph.input('x', flat))
        graph.forward()
        values = np.stack([node.value for node in members])
        return values[:, 0] if single else values

    def logits(self, x) -> np.ndarray:
        """Logits of a single-member ensemble."""
        if self.head_count != 1:
            raise ModelError("logits are defined per member, this ensemble "
                             "has %d heads" % self.head_count)
        return self.member_logits_all(x)[0]

    def predict_proba(self, x) -> np.ndarray:
        return softmax(self.member_logits_all(x), axis=-1).mean(axis=0)

    def input_gradient(self, x, labels):
        return _input_gradient(self, x, labels)

    def __repr__(self):
        return "<BeatEnsemble N=%d head_input=%s>" % (self.head_count,
                                                      self.head_input)


def _input_gradient(model: Union[BaseClassifier, BeatEnsemble], x, labels):
    """Per-sample cross-entropy input gradients, averaged over members."""
    flat, single = model._as_batch(x)
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if labels.shape != (flat.shape[0],):
        raise ArchitectureError("%d labels for %d inputs"
                                % (labels.size, flat.shape[0]))
    graph = ComputeGraph()
    x_node = graph.input('x', flat)
    if isinstance(model, BeatEnsemble):
        members = model.build_members(graph, x_node)
    else:
        members = [model.build_logits(graph, x_node)]
    losses = [graph.softmax_ce(m, labels) for m in members]
    total = losses[0]
    for loss in losses[1:]:
        total = total + loss
    # softmax_ce averages over the batch, undo it to get per-sample terms
    objective = graph.scale(total, flat.shape[0] / len(members))
    graph.forward(output=objective)
    grad = graph.backward(objective, [x_node])[0]
    per_sample = np.mean([cross_entropy(m.value, labels) for m in members],
                         axis=0)
    shape = np.shape(x)
    if single:
        return grad.reshape(shape), float(per_sample[0])
    return grad.reshape(shape), per_sample


# --- operations by name ------------------------------------------------------

def base_logits(base: BaseClassifier, motion) -> np.ndarray:
    return base.logits(motion)


def member_logits(ensemble: BeatEnsemble, motion, index: int) -> np.ndarray:
    return ensemble.member(index).logits(motion)


def predict_bma(ensemble: BeatEnsemble, motion) -> np.ndarray:
    """Mean of the member softmax outputs."""
    return ensemble.predict_proba(motion)


def expected_input_gradient(ensemble: BeatEnsemble, motion,
                            label) -> np.ndarray:
    """Member-averaged cross-entropy gradient with respect to positions."""
    return ensemble.input_gradient(motion, label)[0]


# --- checkpoints -------------------------------------------------------------

def checkpoint_document(model: Union[BaseClassifier, BeatEnsemble],
                        topology_digest: str, source: str = None) -> dict:
    from skelbeat import VERSION

    if isinstance(model, BeatEnsemble):
        model.verify_base()
        base = model.base
        kind = 'ensemble'
    else:
        base = model
        kind = 'base'
    document = {
        'version': CHECKPOINT_VERSION,
        'kind': kind,
        'arch': base.architecture.to_serializable(),
        'topology_digest': topology_digest,
        'created': {'toolkit_version': VERSION, 'source': source},
        'base_digest': base.digest(),
        'base': base.params.to_serializable(),
        'heads': [],
        'head_digests': [],
        'head_input': None,
    }
    if kind == 'ensemble':
        document['heads'] = [h.params.to_serializable() for h in model.heads]
        document['head_digests'] = [h.params.digest() for h in model.heads]
        document['head_input'] = model.head_input
    return document


def checkpoint_save(model: Union[BaseClassifier, BeatEnsemble],
                    path: Union[str, Path], topology_digest: str,
                    source: str = None):
    """Write a model as versioned JSON with parameter digests."""
    document = checkpoint_document(model, topology_digest, source)
    with open(path, 'w', encoding='utf-8') as file:
        json.dump(document, file, sort_keys=True, allow_nan=False)
        file.write('\n')
    logger.debug("Saved %s checkpoint to %s", document['kind'], path)


@dataclass
class Checkpoint:
    """A loaded model with the metadata stored next to it."""
    model: Union[BaseClassifier, BeatEnsemble]
    kind: str
    topology_digest: str
    base_digest: str
    created: dict


def checkpoint_load(path: Union[str, Path], class_count: int = None,
                    topology_digest: str = None,
                    base_digest: str = None) -> Checkpoint:
    """Read a checkpoint and verify it.

    Args:
        class_count: expected C, ArchitectureError otherwise
        topology_digest: expected topology, ArchitectureError otherwise
        base_digest: expected frozen base, FrozenBaseError otherwise

    Raises:
        CheckpointDigestError: stored parameters do not match their digests
    """
    with open(path, 'r', encoding='utf-8') as file:
        try:
            document = json.load(file)
        except ValueError as ex:
            raise ModelError("checkpoint %s is no JSON document: %s"
                             % (path, ex)) from ex
    if document.get('version') != CHECKPOINT_VERSION:
        raise ModelError("unsupported checkpoint version %r"
                         % document.get('version'))
    kind = document.get('kind')
    if kind not in CHECKPOINT_KINDS:
        raise ModelError("checkpoint kind %r is none of %s"
                         % (kind, CHECKPOINT_KINDS))
    architecture = Architecture.from_serializable(document['arch'])
    if class_count is not None and architecture.class_count != class_count:
        raise ArchitectureError("checkpoint %s has %d classes, expected %d"
                                % (path, architecture.class_count,
                                   class_count))
    if topology_digest is not None \
            and document.get('topology_digest') != topology_digest:
        raise ArchitectureError("checkpoint %s was trained on another "
                                "skeleton topology" % path)
    try:
        base_params = ParamVector.from_serializable(document['base'])
        heads = [ParamVector.from_serializable(h) for h in document['heads']]
        head_digests = list(document['head_digests'])
    except (ParamError, KeyError, TypeError) as ex:
        raise ModelError("invalid parameters in %s: %s" % (path, ex)) from ex
    if len(head_digests) != len(heads):
        raise ModelError("checkpoint %s stores %d heads but %d head digests"
                         % (path, len(heads), len(head_digests)))
    if base_params.digest() != document['base_digest']:
        raise CheckpointDigestError("base parameters of %s do not match the "
                                    "stored digest" % path)
    for i, (params, digest) in enumerate(zip(heads, head_digests)):
        if params.digest() != digest:
            raise CheckpointDigestError("head %d of %s does not match the "
                                        "stored digest" % (i, path))
    if base_digest is not None and document['base_digest'] != base_digest:
        raise FrozenBaseError("checkpoint %s was built on base %s, expected "
                              "%s" % (path, document['base_digest'],
                                      base_digest))
    base = BaseClassifier(architecture, base_params)
    if kind == 'base':
        model = base
    else:
        model = BeatEnsemble(
            base, [AppendedHead(p, i) for i, p in enumerate(heads)],
            document['head_input'], document['base_digest'])
    return Checkpoint(model, kind, document.get('topology_digest'),
                      document['base_digest'], document.get('created', {}))
