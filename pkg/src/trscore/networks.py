"""Network bodies for score regression on snippet-feature sequences.

Two architectures share one Gaussian regression head:

* a Mixer encoder (alternating token mixing across snippets and channel
  mixing across feature dimensions, each with a pre-norm residual MLP) used
  by the teacher and, with its own parameter set, by the student;
* a cross-attention comparator that scores one sequence against a reference
  exemplar sequence and regresses their score difference.

Forward functions accept a single ``T x D`` sequence or a stacked
``B x T x D`` batch and return predictions of matching rank.
"""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterSet, Tensor
from .errors import ContractError, DimensionError

LOG_SIGMA_BOUND = 10.0


@dataclass
class FeatureSequence:
    """T x D snippet-feature matrix with an id and an optional score label."""

    features: Tensor
    sample_id: str
    score: float | None = None

    def __post_init__(self):
        if not isinstance(self.features, Tensor):
            self.features = Tensor(self.features)
        if self.features.ndim != 2:
            raise DimensionError(
                f"features must be 2-D (T x D), got shape {self.features.shape}"
            )
        t, d = self.features.shape
        if t < 1 or d < 1:
            raise DimensionError(f"features need T >= 1 and D >= 1, got {t} x {d}")
        if self.score is not None:
            self.score = float(self.score)

    @property
    def num_snippets(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def labeled(self) -> bool:
        return self.score is not None


@dataclass(frozen=True)
class NetworkArch:
    """Shapes of both network bodies for a dataset with T snippets, D dims."""

    t: int
    d: int
    mixer_layers: int = 2
    token_hidden: int = 0  # 0 = default (T)
    channel_hidden: int = 0  # 0 = default (D)
    d_k: int = 0  # 0 = default (max(1, D // 4))
    attn_mlp_hidden: int = 0  # 0 = default (D)
    attn_blocks: int = 1

    def __post_init__(self):
        if self.t < 1 or self.d < 1:
            raise DimensionError(f"need T >= 1 and D >= 1, got {self.t} x {self.d}")
        object.__setattr__(self, "token_hidden", self.token_hidden or self.t)
        object.__setattr__(self, "channel_hidden", self.channel_hidden or self.d)
        object.__setattr__(self, "d_k", self.d_k or max(1, self.d // 4))
        object.__setattr__(self, "attn_mlp_hidden", self.attn_mlp_hidden or self.d)

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "d": self.d,
            "mixer_layers": self.mixer_layers,
            "token_hidden": self.token_hidden,
            "channel_hidden": self.channel_hidden,
            "d_k": self.d_k,
            "attn_mlp_hidden": self.attn_mlp_hidden,
            "attn_blocks": self.attn_blocks,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "NetworkArch":
        return cls(**{k: int(v) for k, v in raw.items()})


@dataclass
class ScorePrediction:
    """Predicted score mu with Gaussian standard deviation sigma (> 0).

    ``mu`` and ``sigma`` stay in the autodiff graph; scalar accessors detach.
    For batched predictions both have shape ``(B,)``.
    """

    mu: Tensor
    sigma: Tensor

    def __post_init__(self):
        if not isinstance(self.mu, Tensor):
            self.mu = Tensor(self.mu)
        if not isinstance(self.sigma, Tensor):
            self.sigma = Tensor(self.sigma)
        if self.mu.shape != self.sigma.shape:
            raise DimensionError(
                f"mu/sigma shapes disagree: {self.mu.shape} vs {self.sigma.shape}"
            )
        if np.any(self.sigma.array <= 0.0):
            raise ContractError("sigma must be strictly positive")

    @property
    def mu_value(self) -> float:
        return self.mu.item()

    @property
    def sigma_value(self) -> float:
        return self.sigma.item()

    @property
    def mu_values(self) -> np.ndarray:
        return self.mu.array.reshape(-1).copy()

    @property
    def sigma_values(self) -> np.ndarray:
        return self.sigma.array.reshape(-1).copy()


@dataclass
class TeacherParams:
    """Mixer encoder + regression head; used by teacher and student alike."""

    arch: NetworkArch
    params: ParameterSet

    def copy(self) -> "TeacherParams":
        return TeacherParams(self.arch, self.params.copy())


@dataclass
class ReferenceParams:
    """Cross-attention comparator + regression head."""

    arch: NetworkArch
    params: ParameterSet

    def copy(self) -> "ReferenceParams":
        return ReferenceParams(self.arch, self.params.copy())


def _weight(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def _add_head(ps: ParameterSet, rng: np.random.Generator, d: int) -> None:
    # two raw outputs: mu and the log of sigma
    ps.new("head.weight", _weight(rng, d, 2))
    ps.new("head.bias", np.zeros(2))


def init_teacher_params(arch: NetworkArch, rng: np.random.Generator) -> TeacherParams:
    """Fresh encoder+head parameters; identical seeds give identical values."""
    ps = ParameterSet()
    for i in range(arch.mixer_layers):
        ps.new(f"mixer.{i}.norm_token.scale", np.ones(arch.d))
        ps.new(f"mixer.{i}.norm_token.shift", np.zeros(arch.d))
        ps.new(f"mixer.{i}.token_in", _weight(rng, arch.t, arch.token_hidden))
        ps.new(f"mixer.{i}.token_out", _weight(rng, arch.token_hidden, arch.t))
        ps.new(f"mixer.{i}.norm_channel.scale", np.ones(arch.d))
        ps.new(f"mixer.{i}.norm_channel.shift", np.zeros(arch.d))
        ps.new(f"mixer.{i}.channel_in", _weight(rng, arch.d, arch.channel_hidden))
        ps.new(f"mixer.{i}.channel_out", _weight(rng, arch.channel_hidden, arch.d))
    _add_head(ps, rng, arch.d)
    return TeacherParams(arch, ps)


def init_reference_params(
    arch: NetworkArch, rng: np.random.Generator
) -> ReferenceParams:
    ps = ParameterSet()
    for i in range(arch.attn_blocks):
        ps.new(f"attn.{i}.norm_in.scale", np.ones(arch.d))
        ps.new(f"attn.{i}.norm_in.shift", np.zeros(arch.d))
        ps.new(f"attn.{i}.w_query", _weight(rng, arch.d, arch.d_k))
        ps.new(f"attn.{i}.w_key", _weight(rng, arch.d, arch.d_k))
        ps.new(f"attn.{i}.w_value", _weight(rng, arch.d, arch.d_k))
        ps.new(f"attn.{i}.w_out", _weight(rng, arch.d_k, arch.d))
        ps.new(f"attn.{i}.norm_mlp.scale", np.ones(arch.d))
        ps.new(f"attn.{i}.norm_mlp.shift", np.zeros(arch.d))
        ps.new(f"attn.{i}.mlp_in", _weight(rng, arch.d, arch.attn_mlp_hidden))
        ps.new(f"attn.{i}.mlp_out", _weight(rng, arch.attn_mlp_hidden, arch.d))
    _add_head(ps, rng, arch.d)
    return ReferenceParams(arch, ps)


def _as_tensor(x) -> Tensor:
    if isinstance(x, FeatureSequence):
        return x.features
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _check_sequence_shape(x: Tensor, arch: NetworkArch, what: str) -> None:
    if x.ndim not in (2, 3) or x.shape[-2:] != (arch.t, arch.d):
        raise DimensionError(
            f"{what} must be (T x D) or (B x T x D) with T={arch.t}, "
            f"D={arch.d}, got shape {x.shape}"
        )


def mixer_forward(params: TeacherParams, features) -> Tensor:
    """Encode a sequence through the Mixer layers (shape-preserving).

    Each layer applies a pre-norm token-mixing MLP across the snippet axis
    with a residual connection, then a pre-norm channel-mixing MLP across the
    feature axis with a residual connection. GELU sits between the paired
    projections.
    """
    x = _as_tensor(features)
    _check_sequence_shape(x, params.arch, "mixer input")
    ps = params.params
    for i in range(params.arch.mixer_layers):
        normed = ad.layer_norm(
            x, ps[f"mixer.{i}.norm_token.scale"].tensor,
            ps[f"mixer.{i}.norm_token.shift"].tensor,
        )
        tok = ad.transpose_last_two(normed)
        tok = ad.matmul(tok, ps[f"mixer.{i}.token_in"].tensor)
        tok = ad.gelu(tok)
        tok = ad.matmul(tok, ps[f"mixer.{i}.token_out"].tensor)
        x = ad.add(x, ad.transpose_last_two(tok))

        normed = ad.layer_norm(
            x, ps[f"mixer.{i}.norm_channel.scale"].tensor,
            ps[f"mixer.{i}.norm_channel.shift"].tensor,
        )
        ch = ad.matmul(normed, ps[f"mixer.{i}.channel_in"].tensor)
        ch = ad.gelu(ch)
        ch = ad.matmul(ch, ps[f"mixer.{i}.channel_out"].tensor)
        x = ad.add(x, ch)
    return x


def regression_head(params, encoded: Tensor) -> ScorePrediction:
    """Mean-pool over snippets, then a linear map to (mu, log sigma).

    sigma is the exponential of the second raw output, so positivity holds by
    construction. Works for any container whose parameter set carries
    ``head.weight`` and ``head.bias``.
    """
    ps = params.params
    if encoded.ndim < 2:
        raise DimensionError(
            f"regression head needs >= 2 dimensions, got shape {encoded.shape}"
        )
    single = encoded.ndim == 2
    pooled = ad.mean(encoded, axis=-2)
    if single:
        pooled = ad.reshape(pooled, (1, pooled.shape[-1]))
    raw = ad.add(ad.matmul(pooled, ps["head.weight"].tensor), ps["head.bias"].tensor)
    mu = ad.select_index(raw, 0)
    # bounding log-sigma keeps sigma positive yet finite under extreme
    # optimizer excursions
    sigma = ad.exp(ad.clip(ad.select_index(raw, 1), -LOG_SIGMA_BOUND, LOG_SIGMA_BOUND))
    if single:
        mu = ad.reshape(mu, ())
        sigma = ad.reshape(sigma, ())
    return ScorePrediction(mu, sigma)


def teacher_forward(params: TeacherParams, v) -> ScorePrediction:
    """Directly regress a quality score from one sequence (teacher/student)."""
    return regression_head(params, mixer_forward(params, v))


def _attention_block(
    params: ReferenceParams, i: int, x: Tensor, exemplar: Tensor
) -> tuple[Tensor, Tensor]:
    """One cross-attention block; returns (output, attention weights)."""
    ps = params.params
    scale = ps[f"attn.{i}.norm_in.scale"].tensor
    shift = ps[f"attn.{i}.norm_in.shift"].tensor
    q_in = ad.layer_norm(x, scale, shift)
    kv_in = ad.layer_norm(exemplar, scale, shift)
    q = ad.matmul(q_in, ps[f"attn.{i}.w_query"].tensor)
    k = ad.matmul(kv_in, ps[f"attn.{i}.w_key"].tensor)
    v = ad.matmul(kv_in, ps[f"attn.{i}.w_value"].tensor)
    logits = ad.mul(
        ad.matmul(q, ad.transpose_last_two(k)),
        Tensor(1.0 / math.sqrt(params.arch.d_k)),
    )
    weights = ad.softmax_last_dim(logits)
    attended = ad.matmul(ad.matmul(weights, v), ps[f"attn.{i}.w_out"].tensor)
    x = ad.add(x, attended)

    normed = ad.layer_norm(
        x, ps[f"attn.{i}.norm_mlp.scale"].tensor,
        ps[f"attn.{i}.norm_mlp.shift"].tensor,
    )
    h = ad.matmul(normed, ps[f"attn.{i}.mlp_in"].tensor)
    h = ad.gelu(h)
    h = ad.matmul(h, ps[f"attn.{i}.mlp_out"].tensor)
    return ad.add(x, h), weights


def reference_forward(params: ReferenceParams, v_query, v_exemplar) -> ScorePrediction:
    """Regress the relative score of ``v_query`` against a scored exemplar.

    The query sequence attends over the exemplar (queries from the first
    input, keys and values from the second), followed by a residual MLP and
    the shared regression head; mu is the predicted score difference.
    """
    x = _as_tensor(v_query)
    ex = _as_tensor(v_exemplar)
    _check_sequence_shape(x, params.arch, "reference query")
    _check_sequence_shape(ex, params.arch, "reference exemplar")
    if x.shape != ex.shape:
        raise DimensionError(
            f"query and exemplar shapes disagree: {x.shape} vs {ex.shape}"
        )
    for i in range(params.arch.attn_blocks):
        x, _ = _attention_block(params, i, x, ex)
    return regression_head(params, x)


def attention_maps(params: ReferenceParams, v_query, v_exemplar) -> list[np.ndarray]:
    """Per-block attention weights (query snippets x exemplar snippets)."""
    with ad.no_grad():
        x = _as_tensor(v_query)
        ex = _as_tensor(v_exemplar)
        maps = []
        for i in range(params.arch.attn_blocks):
            x, weights = _attention_block(params, i, x, ex)
            maps.append(weights.array.copy())
    return maps
