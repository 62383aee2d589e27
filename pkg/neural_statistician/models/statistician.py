# neural_statistician/models/statistician.py
"""
The neural statistician.

- StatisticNetwork: q(c | D), instance encoder -> exchangeable pooling -> post-pool net.
- InferenceNets:    q(z_i | z_{i+1}, x, c) for i = L..1.
- GenerativeNets:   p(z_i | z_{i+1}, c) latent decoders and p(x | z_{1:L}, c).
- NeuralStatistician.elbo: R_D - C_D - L_D, averaged over the datasets of a batch.

Layers are numbered 1..L with L the top latent. Lists are stored bottom-up,
so layer i lives at index i - 1. Noise is always explicit: pass an rng, a
frozen noise object, or neither (zero noise, i.e. the mean path).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from neural_statistician.core.errors import StatisticianError
from neural_statistician.core.optim import Parameter
from neural_statistician.core.tensor import (
    ShapeError,
    Tensor,
    TensorLike,
    as_tensor,
    broadcast_to,
    concat,
    max_,
    mean,
    neg,
    no_grad,
    reshape,
    sigmoid,
    sum_,
)
from neural_statistician.models.distributions import (
    GaussianParams,
    bernoulli_log_prob,
    clamp_log_var,
    kl_diag,
    kl_to_standard,
    log_pdf,
    reparam_sample,
    split_gaussian,
)
from neural_statistician.models.layers import MLP, Head
from neural_statistician.models.schemas import ModelConfig

logger = logging.getLogger(__name__)

# added to dropped encoder features before max pooling
_MASKED_OUT = -1e9

Observation = Union[GaussianParams, Tensor]


class ModelError(StatisticianError):
    """Raised for inputs that do not conform to the model configuration."""


@dataclass
class ElboNoise:
    """Standard-normal draws for one Monte-Carlo estimate of the bound."""

    context: np.ndarray  # (B, c_dim)
    latents: List[np.ndarray]  # layer i at index i - 1, each (B, N, z_dim)

    @classmethod
    def draw(
        cls, rng: np.random.Generator, batch_size: int, sample_size: int, config: ModelConfig
    ) -> "ElboNoise":
        context = rng.standard_normal((batch_size, config.c_dim))
        # top-down, matching the order in which the latents are sampled
        latents = [
            rng.standard_normal((batch_size, sample_size, config.z_dim))
            for _ in range(config.n_stochastic_layers)
        ][::-1]
        return cls(context, latents)

    @classmethod
    def stack(cls, per_set: Sequence["ElboNoise"]) -> "ElboNoise":
        """Concatenate single-dataset noise objects along the batch axis."""
        context = np.concatenate([n.context for n in per_set], axis=0)
        latents = [
            np.concatenate([n.latents[i] for n in per_set], axis=0)
            for i in range(len(per_set[0].latents))
        ]
        return cls(context, latents)


@dataclass
class ElboTerms:
    """Per-dataset bound decomposition, averaged over the batch."""

    r_d: Tensor
    c_d: Tensor
    l_d: Tensor
    total: Tensor

    @property
    def loss(self) -> Tensor:
        return neg(self.total)

    def to_dict(self) -> Dict[str, float]:
        return {
            "total": self.total.item(),
            "r_d": self.r_d.item(),
            "c_d": self.c_d.item(),
            "l_d": self.l_d.item(),
        }


def draw_keep_mask(rng: np.random.Generator, batch_size: int, sample_size: int, rate: float) -> np.ndarray:
    """Sample-dropout mask; one uniformly chosen sample per dataset is always kept."""
    keep = rng.random((batch_size, sample_size)) >= rate
    forced = rng.integers(sample_size, size=batch_size)
    keep[np.arange(batch_size), forced] = True
    return keep


class StatisticNetwork:
    def __init__(self, config: ModelConfig, rng: np.random.Generator) -> None:
        self.config = config
        self.encoder = MLP(
            "statistic.encoder",
            config.n_features,
            config.hidden_width,
            config.hidden_depth,
            config.activation,
            rng,
        )
        pooled_dim = self.encoder.out_dim + (1 if config.append_count_feature else 0)
        self.post_pool = Head(
            "statistic.post_pool",
            pooled_dim,
            config.hidden_width,
            config.hidden_depth,
            2 * config.c_dim,
            config.activation,
            rng,
        )

    def parameters(self) -> List[Parameter]:
        return self.encoder.parameters() + self.post_pool.parameters()

    def features(self, x: Tensor) -> Tensor:
        return self.encoder(x)

    def pool(self, e: Tensor, keep: Optional[np.ndarray]) -> Tensor:
        pooling = self.config.pooling
        batch_size, sample_size = e.shape[0], e.shape[1]
        if keep is None:
            v = {"mean": mean, "sum": sum_}.get(pooling, max_)(e, axis=1)
            counts = np.full(batch_size, float(sample_size))
        else:
            if keep.shape != (batch_size, sample_size):
                raise ShapeError("pool", keep.shape, (batch_size, sample_size))
            counts = keep.sum(axis=1).astype(np.float64)
            if np.any(counts == 0):
                raise ModelError("sample dropout removed every sample of a dataset")
            mask = Tensor(keep.astype(np.float64)[..., None])
            if pooling == "max":
                v = max_(e + Tensor((mask.data - 1.0) * -_MASKED_OUT), axis=1)
            else:
                v = sum_(e * mask, axis=1)
                if pooling == "mean":
                    v = v * Tensor(1.0 / counts[:, None])
        if self.config.append_count_feature:
            v = concat([v, Tensor(counts[:, None] / self.config.max_set_size)], axis=-1)
        return v

    def forward(self, x: Tensor, keep: Optional[np.ndarray] = None) -> Tuple[GaussianParams, Tensor]:
        """Return q(c | D) and the instance features e_i = E(x_i)."""
        e = self.features(x)
        v = self.pool(e, keep)
        return split_gaussian(self.post_pool(v), self.config.c_dim), e


class InferenceNets:
    """q(z_L | x, c) and q(z_i | z_{i+1}, x, c)."""

    def __init__(self, config: ModelConfig, x_dim: int, rng: np.random.Generator) -> None:
        self.config = config
        L = config.n_stochastic_layers
        self.heads: List[Head] = []
        for layer in range(1, L + 1):
            in_dim = x_dim + config.c_dim + (config.z_dim if layer < L else 0)
            self.heads.append(
                Head(
                    f"inference.{layer}",
                    in_dim,
                    config.hidden_width,
                    config.hidden_depth,
                    2 * config.z_dim,
                    config.activation,
                    rng,
                )
            )

    def parameters(self) -> List[Parameter]:
        return [p for head in self.heads for p in head.parameters()]

    def params(self, layer: int, x: Tensor, c: Tensor, z_next: Optional[Tensor]) -> GaussianParams:
        parts = [x, c] if z_next is None else [z_next, x, c]
        return split_gaussian(self.heads[layer - 1](concat(parts, axis=-1)), self.config.z_dim)


class GenerativeNets:
    """Latent decoders p(z_L | c), p(z_i | z_{i+1}, c) and the observation decoder."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator) -> None:
        self.config = config
        L = config.n_stochastic_layers
        self.latent_decoders: List[Head] = []
        for layer in range(1, L + 1):
            in_dim = config.c_dim + (config.z_dim if layer < L else 0)
            self.latent_decoders.append(
                Head(
                    f"generative.latent.{layer}",
                    in_dim,
                    config.hidden_width,
                    config.hidden_depth,
                    2 * config.z_dim,
                    config.activation,
                    rng,
                )
            )

        n = config.n_features
        per_feature_variance = config.likelihood == "gaussian" and not config.shared_observation_variance
        self.observation_decoder = Head(
            "generative.observation",
            L * config.z_dim + config.c_dim,
            config.hidden_width,
            config.hidden_depth,
            2 * n if per_feature_variance else n,
            config.activation,
            rng,
        )
        self.observation_log_var: Optional[Parameter] = None
        if config.likelihood == "gaussian" and config.shared_observation_variance:
            self.observation_log_var = Parameter("generative.observation.log_var", Tensor(np.zeros(n)))

    def parameters(self) -> List[Parameter]:
        params = [p for head in self.latent_decoders for p in head.parameters()]
        params += self.observation_decoder.parameters()
        if self.observation_log_var is not None:
            params.append(self.observation_log_var)
        return params


class NeuralStatistician:
    """Statistic network, inference networks (phi) and generative networks (theta)."""

    def __init__(self, config: ModelConfig, seed: int = 0) -> None:
        rng = np.random.default_rng(seed)
        self.config = config
        self.statistic = StatisticNetwork(config, rng)
        x_dim = self.statistic.encoder.out_dim if config.shared_encoder else config.n_features
        self.inference = InferenceNets(config, x_dim, rng)
        self.generative = GenerativeNets(config, rng)

        names = [p.name for p in self.parameters()]
        if len(set(names)) != len(names):
            raise ModelError("duplicate parameter names")
        logger.debug(
            "Built model with %d parameter tensors (%d scalars)",
            len(names),
            sum(p.value.size for p in self.parameters()),
        )

    # ------------------------------------------------------------------
    # Parameters
    # ------------------------------------------------------------------

    def parameters(self) -> List[Parameter]:
        return (
            self.statistic.parameters()
            + self.inference.parameters()
            + self.generative.parameters()
        )

    def named_parameters(self) -> Dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    # ------------------------------------------------------------------
    # Input helpers
    # ------------------------------------------------------------------

    def _values(self, batch: Any) -> Tensor:
        x = as_tensor(getattr(batch, "values", batch))
        if x.ndim != 3:
            raise ShapeError("batch", x.shape, detail="expected (batch, sample, feature)")
        if x.shape[0] == 0 or x.shape[1] == 0:
            raise ModelError(f"empty dataset batch with shape {x.shape}")
        if x.shape[2] != self.config.n_features:
            raise ShapeError("batch", x.shape, detail=f"expected {self.config.n_features} features")
        return x

    def _expand_context(self, c: TensorLike, lead: Tuple[int, ...]) -> Tensor:
        c = as_tensor(c)
        if c.shape[-1] != self.config.c_dim:
            raise ShapeError("context", c.shape, detail=f"expected last axis {self.config.c_dim}")
        if c.shape[:-1] == lead:
            return c
        prefix = c.shape[:-1]
        if len(prefix) > len(lead) or lead[: len(prefix)] != prefix:
            raise ShapeError("context", c.shape, lead)
        padded = prefix + (1,) * (len(lead) - len(prefix)) + (self.config.c_dim,)
        return broadcast_to(reshape(c, padded), lead + (self.config.c_dim,))

    def _inference_input(self, x: Tensor, features: Optional[Tensor]) -> Tensor:
        if not self.config.shared_encoder:
            return x
        return features if features is not None else self.statistic.features(x)

    @staticmethod
    def _eps(
        noise: Optional[Sequence[np.ndarray]],
        index: int,
        rng: Optional[np.random.Generator],
        shape: Tuple[int, ...],
    ) -> np.ndarray:
        if noise is not None:
            eps = np.asarray(noise[index], dtype=np.float64)
            if eps.shape != shape:
                raise ShapeError("noise", eps.shape, shape)
            return eps
        if rng is not None:
            return rng.standard_normal(shape)
        return np.zeros(shape)

    # ------------------------------------------------------------------
    # Model pieces
    # ------------------------------------------------------------------

    def encode_context(
        self,
        batch: TensorLike,
        rng: Optional[np.random.Generator] = None,
        training: bool = False,
        keep_mask: Optional[np.ndarray] = None,
    ) -> GaussianParams:
        """q(c | D) for each dataset of the batch."""
        x = self._values(batch)
        keep = self._keep_mask(x, rng, training, keep_mask)
        params, _ = self.statistic.forward(x, keep)
        return params

    def _keep_mask(
        self,
        x: Tensor,
        rng: Optional[np.random.Generator],
        training: bool,
        keep_mask: Optional[np.ndarray],
    ) -> Optional[np.ndarray]:
        if keep_mask is not None:
            return np.asarray(keep_mask, dtype=bool)
        if not training or self.config.sample_dropout_rate == 0.0:
            return None
        if rng is None:
            raise ModelError("sample dropout during training needs an rng or an explicit keep mask")
        return draw_keep_mask(rng, x.shape[0], x.shape[1], self.config.sample_dropout_rate)

    def infer_latents(
        self,
        x: TensorLike,
        c: TensorLike,
        rng: Optional[np.random.Generator] = None,
        noise: Optional[Sequence[np.ndarray]] = None,
        features: Optional[Tensor] = None,
    ) -> Tuple[List[Tensor], List[GaussianParams]]:
        """Sample z_L, ..., z_1 top-down from the inference networks."""
        x = as_tensor(x)
        if x.shape[-1] != self.config.n_features:
            raise ShapeError("infer_latents", x.shape, detail=f"expected {self.config.n_features} features")
        lead = x.shape[:-1]
        c_exp = self._expand_context(c, lead)
        h = self._inference_input(x, features)

        L = self.config.n_stochastic_layers
        samples: List[Optional[Tensor]] = [None] * L
        params: List[Optional[GaussianParams]] = [None] * L
        z_next: Optional[Tensor] = None
        for layer in range(L, 0, -1):
            q = self.inference.params(layer, h, c_exp, z_next)
            z = reparam_sample(q, self._eps(noise, layer - 1, rng, q.shape))
            samples[layer - 1], params[layer - 1] = z, q
            z_next = z
        return samples, params

    def decode_latent_params(self, z_next: Optional[TensorLike], c: TensorLike, layer: int) -> GaussianParams:
        """p(z_L | c) when layer == L, else p(z_layer | z_{layer+1}, c)."""
        L = self.config.n_stochastic_layers
        if not 1 <= layer <= L:
            raise ModelError(f"layer must be in 1..{L}, got {layer}")
        if layer == L and z_next is not None:
            raise ModelError(f"layer {L} is the top layer and takes no z_next")
        if layer < L and z_next is None:
            raise ModelError(f"layer {layer} needs z_{layer + 1}")

        decoder = self.generative.latent_decoders[layer - 1]
        if z_next is None:
            c_in = as_tensor(c)
            self._expand_context(c_in, c_in.shape[:-1])
            return split_gaussian(decoder(c_in), self.config.z_dim)
        z_next = as_tensor(z_next)
        if z_next.shape[-1] != self.config.z_dim:
            raise ShapeError("decode_latent_params", z_next.shape, detail=f"expected {self.config.z_dim} units")
        c_exp = self._expand_context(c, z_next.shape[:-1])
        return split_gaussian(decoder(concat([z_next, c_exp], axis=-1)), self.config.z_dim)

    def decode_observation(self, zs: Sequence[TensorLike], c: TensorLike) -> Observation:
        """GaussianParams over x, or per-feature Bernoulli probabilities."""
        L = self.config.n_stochastic_layers
        if len(zs) != L:
            raise ModelError(f"expected {L} latent layers, got {len(zs)}")
        zs = [as_tensor(z) for z in zs]
        for z in zs:
            if z.shape != zs[0].shape or z.shape[-1] != self.config.z_dim:
                raise ShapeError("decode_observation", zs[0].shape, z.shape)
        c_exp = self._expand_context(c, zs[0].shape[:-1])
        raw = self.generative.observation_decoder(concat(list(zs) + [c_exp], axis=-1))

        if self.config.likelihood == "bernoulli":
            return sigmoid(raw)
        log_var_param = self.generative.observation_log_var
        if log_var_param is None:
            return split_gaussian(raw, self.config.n_features)
        log_var = broadcast_to(clamp_log_var(log_var_param.value), raw.shape)
        return GaussianParams(raw, log_var)

    def log_likelihood(self, x: TensorLike, observation: Observation) -> Tensor:
        if isinstance(observation, GaussianParams):
            return log_pdf(x, observation)
        return bernoulli_log_prob(x, observation)

    # ------------------------------------------------------------------
    # Bound
    # ------------------------------------------------------------------

    def elbo(
        self,
        batch: TensorLike,
        rng: Optional[np.random.Generator] = None,
        *,
        noise: Optional[Sequence[ElboNoise]] = None,
        keep_mask: Optional[np.ndarray] = None,
        training: bool = False,
        n_samples: int = 1,
    ) -> ElboTerms:
        """
        Monte-Carlo estimate of the per-dataset bound, averaged over the batch.

        C_D is closed form; R_D and L_D average `n_samples` reparameterized
        draws of (c, z_{1:L}). The KLs inside L_D are closed form conditional
        on the sampled c and parents z_{i+1}, shared by q and p.
        """
        x = self._values(batch)
        B, N, _ = x.shape
        keep = self._keep_mask(x, rng, training, keep_mask)
        q_c, e = self.statistic.forward(x, keep)
        c_d = mean(kl_to_standard(q_c))

        draws: Sequence[Optional[ElboNoise]] = noise if noise is not None else [None] * n_samples
        if not draws:
            raise ModelError("elbo needs at least one Monte-Carlo sample")
        L = self.config.n_stochastic_layers

        r_parts: List[Tensor] = []
        l_parts: List[Tensor] = []
        for draw in draws:
            eps_c = self._eps(None if draw is None else [draw.context], 0, rng, q_c.shape)
            c = reparam_sample(q_c, eps_c)
            # p(z_L | c) is evaluated once per datapoint, like q(z_L | x, c)
            c_points = self._expand_context(c, (B, N))
            zs, qs = self.infer_latents(
                x, c, rng, noise=None if draw is None else draw.latents, features=e
            )
            observation = self.decode_observation(zs, c)
            r_parts.append(mean(sum_(self.log_likelihood(x, observation), axis=1)))

            kl: Optional[Tensor] = None
            for layer in range(L, 0, -1):
                z_next = zs[layer] if layer < L else None
                p = self.decode_latent_params(z_next, c_points if z_next is None else c, layer)
                term = kl_diag(qs[layer - 1], p)
                kl = term if kl is None else kl + term
            l_parts.append(mean(sum_(kl, axis=1)))

        r_d = _average(r_parts)
        l_d = _average(l_parts)
        return ElboTerms(r_d=r_d, c_d=c_d, l_d=l_d, total=r_d - c_d - l_d)

    # ------------------------------------------------------------------
    # Inference-time helpers
    # ------------------------------------------------------------------

    def context_posterior(self, points: TensorLike) -> GaussianParams:
        """q(c | D) for one set (m, n) or a stack of sets (B, m, n), without recording a graph."""
        data = as_tensor(points)
        with no_grad():
            if data.ndim == 2:
                params = self.encode_context(reshape(data, (1,) + data.shape))
                return params.row(0)
            return self.encode_context(data).detach()


def _average(parts: List[Tensor]) -> Tensor:
    if len(parts) == 1:
        return parts[0]
    total = parts[0]
    for part in parts[1:]:
        total = total + part
    return total * (1.0 / len(parts))
