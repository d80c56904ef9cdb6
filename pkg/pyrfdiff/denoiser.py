# Copyright (c) 2024-2026, pyrfdiff developers
# All rights reserved.
#
# SPDX-License-Identifier: BSD-3-Clause

"""Toy eps-prediction denoiser, its training loop and its model file.

   The network is a dense tanh perceptron over the flattened noisy layout,
   the conditioning channels, a time channel and a learned template
   embedding. It runs on a reduced board grid (16 x 16 by default).
"""

#pylint: disable-msg=too-many-arguments
#pylint: disable-msg=too-many-locals
#pylint: disable-msg=invalid-name

from binascii import crc32
from dataclasses import dataclass
from logging import getLogger
from math import isqrt
from struct import calcsize as scalc, pack as spack, unpack_from as sunpack
from typing import Callable, List, Optional, Sequence, Tuple
import numpy as np
from .core import (CH_SPARAMS, CH_TEMPLATE, COMPONENTS,
                   CONDITIONING_CHANNELS, BoardGrid, ConditioningBundle,
                   DatasetStats, FormatError, NumericError, TemplateId,
                   UsageError, encode_conditioning_channels,
                   template_channel_value, template_from_channel)
from .diffusion import NoiseSchedule


MODEL_MAGIC = b'RFDN'
MODEL_VERSION = 1

DATA_CHANNELS = 2
INPUT_CHANNELS = DATA_CHANNELS + CONDITIONING_CHANNELS + 1
EMBEDDING_ROWS = len(TemplateId)
EMBEDDING_WIDTH = 8

TRAINING_FACTOR = 4
"""Board downsampling factor from the dataset grid to the model grid."""


class ModelFileError(FormatError):
    """Invalid model file"""

    def __init__(self, msg: str, offset: int):
        super().__init__(f'{msg} (at byte {offset})')
        self.offset = offset


@dataclass
class Batch:
    """One training batch on the model grid."""

    x_t: np.ndarray
    t: np.ndarray
    cond: np.ndarray
    eps: np.ndarray

    def __len__(self):
        return self.x_t.shape[0]


class AdamState:
    """Adam moments of a parameter list."""

    def __init__(self, params: Sequence[np.ndarray], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999,
                 epsilon: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.m = [np.zeros_like(param) for param in params]
        self.v = [np.zeros_like(param) for param in params]
        self.step_count = 0

    def update(self, params: Sequence[np.ndarray],
               grads: Sequence[np.ndarray]) -> None:
        """Apply one step to `params`, in place."""
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for param, grad, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * (grad * grad)
            param -= (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.epsilon)


class ToyDenoiser:
    """Dense tanh network predicting the noise of a noisy layout.

       :param weights: (rows, cols) matrices of the dense layers
       :param biases: (cols,) vectors of the dense layers
       :param embedding: (6, width) template embedding table, the NULL
                         template using the last row
    """

    def __init__(self, weights: Sequence[np.ndarray],
                 biases: Sequence[np.ndarray], embedding: np.ndarray):
        self.log = getLogger('pyrfdiff.denoiser')
        self.weights = [np.array(w, dtype=float) for w in weights]
        self.biases = [np.array(b, dtype=float) for b in biases]
        self.embedding = np.array(embedding, dtype=float)
        if not self.weights or len(self.weights) != len(self.biases):
            raise NumericError('Invalid layer definition')
        for pos, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise NumericError(f'Invalid shape of layer {pos}')
            if pos and w.shape[0] != self.weights[pos-1].shape[1]:
                raise NumericError(f'Layer {pos} does not chain')
        outputs = self.weights[-1].shape[1]
        side = isqrt(outputs // DATA_CHANNELS)
        if DATA_CHANNELS * side * side != outputs:
            raise NumericError(f'Output width {outputs} is not a board')
        self.side = side
        width = self.weights[0].shape[0] - INPUT_CHANNELS * side * side
        if self.embedding.shape != (EMBEDDING_ROWS, width) or width < 1:
            raise NumericError('Embedding does not match the input layer')
        self.log.debug('%d dense layers on a %dx%d grid, %d parameters',
                       len(self.weights), side, side, self.parameter_count)

    @classmethod
    def create(cls, side: int = 16, hidden: int = 512, depth: int = 3,
               seed: int = 0, zero_output: bool = True,
               embedding_width: int = EMBEDDING_WIDTH) -> 'ToyDenoiser':
        """Create a freshly initialized network.

           Hidden weights are drawn with variance 1/fan_in; a zero output
           layer makes the initial prediction exactly zero.
        """
        rng = np.random.default_rng(seed)
        dims = [INPUT_CHANNELS * side * side + embedding_width] + \
            [hidden] * depth + [DATA_CHANNELS * side * side]
        weights, biases = [], []
        for pos, (rows, cols) in enumerate(zip(dims[:-1], dims[1:])):
            if zero_output and pos == depth:
                weights.append(np.zeros((rows, cols)))
            else:
                weights.append(rng.standard_normal((rows, cols)) /
                               np.sqrt(rows))
            biases.append(np.zeros(cols))
        embedding = 0.1 * rng.standard_normal((EMBEDDING_ROWS,
                                               embedding_width))
        return cls(weights, biases, embedding)

    @property
    def grid(self) -> BoardGrid:
        """Model grid over the default 8 mm board."""
        return BoardGrid(self.side, BoardGrid().side_mm / self.side)

    def parameters(self) -> List[np.ndarray]:
        """Trainable arrays: weights, then biases, then the embedding."""
        return self.weights + self.biases + [self.embedding]

    @property
    def parameter_count(self) -> int:
        return sum(param.size for param in self.parameters())

    def quantized(self) -> 'ToyDenoiser':
        """Copy whose parameters are exactly representable as float32."""
        def _q(array):
            return array.astype(np.float32).astype(float)
        return ToyDenoiser([_q(w) for w in self.weights],
                           [_q(b) for b in self.biases],
                           _q(self.embedding))

    def _inputs(self, x_t: np.ndarray, t, cond: np.ndarray) \
            -> Tuple[np.ndarray, np.ndarray]:
        count, side = x_t.shape[0], self.side
        if x_t.shape[1:] != (DATA_CHANNELS, side, side):
            raise NumericError(f'Invalid data shape {x_t.shape}')
        cond = np.broadcast_to(cond, (count, CONDITIONING_CHANNELS,
                                      side, side))
        t = np.broadcast_to(np.asarray(t, dtype=float), (count,))
        rows = np.array([template_from_channel(value).embedding_row
                         for value in cond[:, CH_TEMPLATE, 0, 0]])
        inputs = np.concatenate(
            [x_t.reshape(count, -1), cond.reshape(count, -1),
             np.repeat(t[:, None], side * side, axis=1),
             self.embedding[rows]], axis=1)
        return inputs, rows

    def _forward(self, inputs: np.ndarray) -> List[np.ndarray]:
        activations = [inputs]
        last = len(self.weights) - 1
        for pos, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = activations[-1] @ w + b
            activations.append(z if pos == last else np.tanh(z))
        return activations

    def __call__(self, x_t: np.ndarray, t, cond) -> np.ndarray:
        """Predict the noise of a (B, 2, n, n) batch.

           :param t: scalar time or (B,) times
           :param cond: (17, n, n) conditioning shared by the batch, or
                        (B, 17, n, n)
        """
        x_t = np.asarray(x_t, dtype=float)
        inputs, _ = self._inputs(x_t, t, cond)
        return self._forward(inputs)[-1].reshape(x_t.shape)

    def loss(self, batch: Batch) -> float:
        """Mean squared noise prediction error per element."""
        return float(np.mean((self(batch.x_t, batch.t, batch.cond) -
                              batch.eps) ** 2))

    def gradients(self, batch: Batch) -> Tuple[float, List[np.ndarray]]:
        """Loss and its gradient, in :meth:`parameters` order."""
        inputs, rows = self._inputs(batch.x_t, batch.t, batch.cond)
        activations = self._forward(inputs)
        diff = activations[-1] - batch.eps.reshape(len(batch), -1)
        loss = float(np.mean(diff ** 2))
        grad = 2.0 * diff / diff.size
        wgrads, bgrads = [], []
        for pos in reversed(range(len(self.weights))):
            if pos != len(self.weights) - 1:
                grad = grad * (1.0 - activations[pos + 1] ** 2)
            wgrads.append(activations[pos].T @ grad)
            bgrads.append(grad.sum(axis=0))
            grad = grad @ self.weights[pos].T
        egrad = np.zeros_like(self.embedding)
        np.add.at(egrad, rows, grad[:, -self.embedding.shape[1]:])
        return loss, wgrads[::-1] + bgrads[::-1] + [egrad]


def predict(model: ToyDenoiser, x_t: np.ndarray, t, cond) -> np.ndarray:
    """Denoiser interface entry point."""
    return model(x_t, t, cond)


class TrainingSet:
    """Clean layouts and conditioning channels on the model grid.

       :param x0: (N, 2, n, n) layouts in [-1, 1]
       :param cond: (N, 17, n, n) full conditioning
    """

    def __init__(self, x0: np.ndarray, cond: np.ndarray):
        self.x0 = np.asarray(x0, dtype=float)
        self.cond = np.asarray(cond, dtype=float)
        if self.x0.shape[0] != self.cond.shape[0]:
            raise UsageError('Layout and conditioning counts differ')

    def __len__(self):
        return self.x0.shape[0]

    @property
    def side(self) -> int:
        return self.x0.shape[-1]

    @classmethod
    def from_records(cls, records: Sequence, stats: DatasetStats,
                     factor: int = TRAINING_FACTOR) -> 'TrainingSet':
        """Downsample dataset records by box averaging and encode their
           conditioning on the reduced grid."""
        x0, cond = [], []
        for record in records:
            layout = record.layout.downsample(factor)
            x0.append(2.0 * layout.as_array() - 1.0)
            bundle = ConditioningBundle(record.feeds, record.substrate,
                                        record.sparams, record.template)
            cond.append(encode_conditioning_channels(bundle, layout.grid,
                                                     stats))
        if not x0:
            raise UsageError('Empty training set')
        return cls(np.stack(x0), np.stack(cond))

    def draw(self, rng: np.random.Generator, size: int,
             schedule: NoiseSchedule,
             mask_probability: float = 0.3,
             null_probability: float = 0.2) -> Batch:
        """Draw a noised batch with randomly dropped conditioning.

           Each S-parameter component is hidden with `mask_probability`
           and the template replaced by NULL with `null_probability`.
        """
        index = rng.integers(0, len(self), size)
        t = rng.uniform(0.0, 1.0, size)
        eps = rng.standard_normal((size,) + self.x0.shape[1:])
        hidden = rng.random((size, len(COMPONENTS))) < mask_probability
        null = rng.random(size) < null_probability
        cond = self.cond[index].copy()
        for comp in range(len(COMPONENTS)):
            first = CH_SPARAMS + 3 * comp
            cond[hidden[:, comp], first:first + 3] = 0.0
        cond[null, CH_TEMPLATE] = template_channel_value(TemplateId.NULL)
        alpha = np.asarray(schedule.alpha(t))[:, None, None, None]
        sigma = np.asarray(schedule.sigma(t))[:, None, None, None]
        return Batch(alpha * self.x0[index] + sigma * eps, t, cond, eps)


def train(training_set: TrainingSet, steps: int, batch: int = 32,
          seed: int = 0, lr: float = 1e-3, mask_probability: float = 0.3,
          null_probability: float = 0.2, hidden: int = 512,
          log_every: int = 100, model: Optional[ToyDenoiser] = None,
          progress: Optional[Callable[[int, float], None]] = None) \
        -> Tuple[ToyDenoiser, List[float]]:
    """Train a denoiser with Adam on the eps-MSE objective.

       :param training_set: the data
       :param steps: optimizer steps
       :param seed: seeds both the initialization and the batch stream
       :param model: optional starting point, a fresh network otherwise
       :param progress: optional callback with (step, loss)
       :return: the float32-exact trained model and the per-step losses
       :raise UsageError: if the training set is empty
    """
    log = getLogger('pyrfdiff.denoiser')
    if not len(training_set):
        raise UsageError('Empty training set')
    model = model or ToyDenoiser.create(training_set.side, hidden,
                                        seed=seed)
    if model.side != training_set.side:
        raise UsageError('Model and training grids differ')
    schedule = NoiseSchedule()
    rng = np.random.default_rng(seed)
    params = model.parameters()
    adam = AdamState(params, lr)
    losses = []
    for step in range(steps):
        data = training_set.draw(rng, batch, schedule, mask_probability,
                                 null_probability)
        loss, grads = model.gradients(data)
        if not np.isfinite(loss):
            raise NumericError(f'Training diverged at step {step}')
        adam.update(params, grads)
        losses.append(loss)
        if log_every and not step % log_every:
            log.info('step %d: mse %.5f', step, loss)
        if progress:
            progress(step, loss)
    return model.quantized(), losses


def save_model(model: ToyDenoiser, path: str) -> None:
    """Write a model file; parameters are stored as float32."""
    layers = list(zip(model.weights, model.biases))
    chunks = [spack('<4sII', MODEL_MAGIC, MODEL_VERSION, len(layers))]
    chunks.extend(spack('<II', *w.shape) for w, _ in layers)
    chunks.extend(w.astype('<f4').tobytes() for w, _ in layers)
    chunks.extend(b.astype('<f4').tobytes() for _, b in layers)
    chunks.append(model.embedding.astype('<f4').tobytes())
    payload = b''.join(chunks)
    with open(path, 'wb') as mfp:
        mfp.write(payload)
        mfp.write(spack('<I', crc32(payload)))
    getLogger('pyrfdiff.denoiser').info('Saved %d parameters to %s',
                                        model.parameter_count, path)


def _read(data: bytes, offset: int, fmt: str, what: str) -> tuple:
    if offset + scalc(fmt) > len(data):
        raise ModelFileError(f'Truncated {what}', len(data))
    return sunpack(fmt, data, offset)


def _read_array(data: bytes, offset: int, shape: Tuple[int, ...],
                what: str) -> np.ndarray:
    size = 4 * int(np.prod(shape))
    if offset + size > len(data):
        raise ModelFileError(f'Truncated {what}', len(data))
    return np.frombuffer(data, dtype='<f4', count=size // 4,
                         offset=offset).reshape(shape).astype(float)


def load_model(path: str) -> ToyDenoiser:
    """Read a model file.

       :raise ModelFileError: on a bad magic, version, size or checksum
    """
    with open(path, 'rb') as mfp:
        data = mfp.read()
    magic, version, count = _read(data, 0, '<4sII', 'header')
    if magic != MODEL_MAGIC:
        raise ModelFileError('Not a model file', 0)
    if version != MODEL_VERSION:
        raise ModelFileError(f'Unsupported version {version}', 4)
    if not 0 < count < 64:
        raise ModelFileError(f'Invalid layer count {count}', 8)
    offset = scalc('<4sII')
    shapes = []
    for _ in range(count):
        shapes.append(_read(data, offset, '<II', 'layer table'))
        offset += scalc('<II')
    weights, biases = [], []
    for rows, cols in shapes:
        weights.append(_read_array(data, offset, (rows, cols), 'weights'))
        offset += 4 * rows * cols
    for _, cols in shapes:
        biases.append(_read_array(data, offset, (cols,), 'biases'))
        offset += 4 * cols
    side2 = shapes[-1][1] // DATA_CHANNELS
    width = shapes[0][0] - INPUT_CHANNELS * side2
    if width < 1:
        raise ModelFileError('Inconsistent layer table', scalc('<4sII'))
    embedding = _read_array(data, offset, (EMBEDDING_ROWS, width),
                            'embedding')
    offset += 4 * EMBEDDING_ROWS * width
    crc, = _read(data, offset, '<I', 'checksum')
    if crc != crc32(data[:offset]):
        raise ModelFileError('Checksum mismatch', offset)
    if offset + 4 != len(data):
        raise ModelFileError('Trailing bytes', offset + 4)
    try:
        return ToyDenoiser(weights, biases, embedding)
    except NumericError as exc:
        raise ModelFileError(str(exc), scalc('<4sII')) from exc
