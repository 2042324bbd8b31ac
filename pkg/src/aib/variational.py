"""Diagonal Gaussians: reparameterized sampling, KL to the spherical prior.

Both the attention distribution and the latent distribution are diagonal
Gaussians produced by network heads; the prior is the fixed standard
normal. Noise funnels through ``NoiseSource`` so a whole run is
reproducible from one root seed: each named stream is an independent
generator derived from the root seed, and every draw records its element
offset within the stream so it can be reproduced in isolation.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DimensionError, DomainError
from . import tensor as T
from .tensor import Tensor


@dataclass(frozen=True)
class DiagonalGaussian:
    """Elementwise-independent Gaussian with strictly positive scale."""

    mu: Tensor
    sigma: Tensor

    def __post_init__(self):
        if self.mu.data.shape != self.sigma.data.shape:
            raise DimensionError(
                f"mu shape {self.mu.data.shape} != sigma shape {self.sigma.data.shape}"
            )
        if not np.all(self.sigma.data > 0):
            raise DomainError("sigma must be strictly positive elementwise")

    @property
    def shape(self):
        return self.mu.data.shape


@dataclass(frozen=True)
class NoiseDraw:
    """A block of standard-normal values plus its provenance in the stream."""

    epsilon: np.ndarray
    stream: str
    offset: int  # elements consumed from the stream before this draw


class NoiseSource:
    """Named deterministic standard-normal streams from a single root seed.

    Streams are independent PCG64 generators keyed by
    ``SeedSequence(seed, spawn_key=(crc32(name),))``, so adding a new
    stream never perturbs existing ones.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gens: dict[str, np.random.Generator] = {}
        self._offsets: dict[str, int] = {}

    def _sequence(self, stream: str) -> np.random.SeedSequence:
        key = zlib.crc32(stream.encode("utf-8"))
        return np.random.SeedSequence(self.seed, spawn_key=(key,))

    def generator(self, stream: str) -> np.random.Generator:
        """The raw generator behind a stream (for non-Gaussian utility draws)."""
        if stream not in self._gens:
            self._gens[stream] = np.random.Generator(
                np.random.PCG64(self._sequence(stream))
            )
            self._offsets[stream] = 0
        return self._gens[stream]

    def draw(self, stream: str, shape) -> NoiseDraw:
        """Next standard-normal block from ``stream``."""
        gen = self.generator(stream)
        offset = self._offsets[stream]
        shape = tuple(int(s) for s in shape)
        eps = gen.standard_normal(shape)
        n = 1
        for s in shape:
            n *= s
        self._offsets[stream] = offset + n
        return NoiseDraw(epsilon=eps, stream=stream, offset=offset)

    def draw_at(self, stream: str, offset: int, shape) -> NoiseDraw:
        """Reproduce the draw that started ``offset`` elements into ``stream``.

        Uses a fresh generator, so the live stream position is untouched.
        """
        gen = np.random.Generator(np.random.PCG64(self._sequence(stream)))
        if offset:
            gen.standard_normal(int(offset))
        return NoiseDraw(
            epsilon=gen.standard_normal(tuple(int(s) for s in shape)),
            stream=stream,
            offset=int(offset),
        )


def standard_normal_source(seed: int) -> NoiseSource:
    return NoiseSource(seed)


def reparam_sample(dist: DiagonalGaussian, noise) -> Tensor:
    """mu + sigma * epsilon; differentiable in mu and sigma only."""
    eps = noise.epsilon if isinstance(noise, NoiseDraw) else np.asarray(noise)
    if eps.shape != dist.shape:
        raise DimensionError(
            f"noise shape {eps.shape} != distribution shape {dist.shape}"
        )
    return T.add(dist.mu, T.mul(dist.sigma, Tensor(eps)))


def kl_to_standard_normal(dist: DiagonalGaussian) -> Tensor:
    """KL(N(mu, diag(sigma^2)) || N(0, I)), summed over all elements.

    Sum_k 1/2 (mu_k^2 + sigma_k^2 - 1 - 2 ln sigma_k). Non-negative, zero
    exactly at (mu, sigma) = (0, 1).
    """
    mu, sigma = dist.mu, dist.sigma
    inner = T.sub(
        T.sub(T.add(T.square(mu), T.square(sigma)), 1.0),
        T.mul(T.log(sigma), 2.0),
    )
    return T.mul(T.sum_all(inner), 0.5)
