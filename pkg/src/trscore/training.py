"""Two-stage semi-supervised training loop.

Stage one (burn-in) trains the teacher and the reference comparator on
labeled data only. Stage two initializes the student as a copy of the teacher
and trains it on labeled data plus pseudo-labeled unlabeled data, where the
pseudo-label for each unlabeled sample is assembled from the teacher's
prediction on a weakly augmented view and the reference network's recovered
absolute score, both filtered through confidence memories. The teacher
receives no gradients after burn-in; it trails the student through a
per-epoch exponential moving average.

An epoch makes one shuffled pass over the labeled set in batches of
``batch_size``; during the TRS stage every labeled batch is paired with an
equal-sized unlabeled batch (a fixed 1:1 structure, drawn from a per-epoch
shuffled pass over the unlabeled pool, wrapping around when the pool is
small). Each batch pair drives one optimizer step; the EMA update runs once
per epoch after the last step.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import rng as streams
from .autodiff import ParameterSet, Tensor
from .errors import ConfigurationError, ContractError, MetricUndefinedError
from .memory import REFERENCE, TEACHER, ConfidenceMemory, fuse_pseudo_label
from .networks import (
    FeatureSequence,
    NetworkArch,
    ReferenceParams,
    TeacherParams,
    init_reference_params,
    init_teacher_params,
    reference_forward,
    teacher_forward,
)
from .objectives import (
    BetaSchedule,
    LossBreakdown,
    beta_at,
    gaussian_nll,
    supervised_loss,
    unsupervised_loss,
)

BURN_IN = "burn_in"
TRS = "trs"


@dataclass(frozen=True)
class ComponentToggles:
    """Ablation switches mirroring the component grid."""

    reference_network: bool = True
    teacher_memory: bool = True
    reference_memory: bool = True


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 0.99  # EMA momentum
    burn_in_epochs: int = 30
    max_epochs: int = 150
    learning_rate: float = 2e-4
    seed: int = 0
    batch_size: int = 4
    component_toggles: ComponentToggles = field(default_factory=ComponentToggles)
    augment_noise_std: float = 0.4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    beta_peak: float = 0.2
    beta_sharpness: float = 5.0
    beta_horizon: float = 200.0

    def validate(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise ConfigurationError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.burn_in_epochs < 1:
            raise ConfigurationError(
                f"burn_in_epochs must be positive, got {self.burn_in_epochs}"
            )
        if self.max_epochs <= self.burn_in_epochs:
            raise ConfigurationError(
                f"max_epochs ({self.max_epochs}) must exceed burn_in_epochs "
                f"({self.burn_in_epochs})"
            )
        if self.learning_rate <= 0.0:
            raise ConfigurationError(
                f"learning_rate must be positive, got {self.learning_rate}"
            )
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be positive, got {self.batch_size}")
        if self.augment_noise_std < 0.0:
            raise ConfigurationError(
                f"augment_noise_std must be nonnegative, got {self.augment_noise_std}"
            )

    def schedule(self) -> BetaSchedule:
        return BetaSchedule(self.beta_peak, self.beta_sharpness, self.beta_horizon)

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "burn_in_epochs": self.burn_in_epochs,
            "max_epochs": self.max_epochs,
            "learning_rate": self.learning_rate,
            "seed": self.seed,
            "batch_size": self.batch_size,
            "reference_network": self.component_toggles.reference_network,
            "teacher_memory": self.component_toggles.teacher_memory,
            "reference_memory": self.component_toggles.reference_memory,
            "augment_noise_std": self.augment_noise_std,
            "adam_beta1": self.adam_beta1,
            "adam_beta2": self.adam_beta2,
            "adam_epsilon": self.adam_epsilon,
            "beta_peak": self.beta_peak,
            "beta_sharpness": self.beta_sharpness,
            "beta_horizon": self.beta_horizon,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        known = cls().to_dict()
        unknown = set(raw) - set(known)
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        merged = dict(known, **raw)
        toggles = ComponentToggles(
            reference_network=bool(merged.pop("reference_network")),
            teacher_memory=bool(merged.pop("teacher_memory")),
            reference_memory=bool(merged.pop("reference_memory")),
        )
        ints = {"burn_in_epochs", "max_epochs", "seed", "batch_size"}
        kwargs = {
            k: (int(v) if k in ints else float(v)) for k, v in merged.items()
        }
        return cls(component_toggles=toggles, **kwargs)


class Adam:
    """Adam with bias correction over one parameter set."""

    def __init__(
        self,
        params: ParameterSet,
        learning_rate: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ):
        self.params = params
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self._step = 0
        self._m = {name: np.zeros(p.tensor.numel) for name, p in params.items()}
        self._v = {name: np.zeros(p.tensor.numel) for name, p in params.items()}

    def zero_grad(self) -> None:
        self.params.zero_grad()

    def step(self) -> None:
        self._step += 1
        correct1 = 1.0 - self.beta1 ** self._step
        correct2 = 1.0 - self.beta2 ** self._step
        for name, p in self.params.items():
            g = p.tensor.grad
            if g is None:
                continue
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = self.learning_rate * (m / correct1) / (
                np.sqrt(v / correct2) + self.epsilon
            )
            flat = p.array.reshape(-1) - update
            p.assign(flat.reshape(p.array.shape))


def adam_for(params: ParameterSet, config: TrainConfig) -> Adam:
    return Adam(
        params,
        config.learning_rate,
        config.adam_beta1,
        config.adam_beta2,
        config.adam_epsilon,
    )


def ema_update(theta_t: ParameterSet, theta_s: ParameterSet, alpha: float) -> ParameterSet:
    """Blend teacher toward student: alpha * theta_t + (1 - alpha) * theta_s.

    Returns a fresh parameter set; both inputs are left untouched.
    """
    if not 0.0 < alpha < 1.0:
        raise ContractError(f"alpha must lie in (0, 1), got {alpha}")
    theta_t.assert_matches(theta_s)
    blended = ParameterSet()
    for name, p in theta_t.items():
        blended.new(name, alpha * p.array + (1.0 - alpha) * theta_s[name].array)
    return blended


def augment(
    f: FeatureSequence,
    strength: str,
    rng: np.random.Generator,
    noise_std: float = 0.0,
) -> FeatureSequence:
    """Label-invariant feature augmentation.

    Weak: reverse the snippet order with probability 1/2. Strong: the weak
    transform plus zero-mean Gaussian noise (std ``noise_std``) on every
    feature. Returns a new sequence; the input is untouched.
    """
    if strength not in ("weak", "strong"):
        raise ContractError(f"strength must be 'weak' or 'strong', got {strength!r}")
    arr = f.features.array
    if rng.random() < 0.5:
        arr = arr[::-1]
    if strength == "strong":
        arr = arr + rng.normal(0.0, noise_std, size=arr.shape)
    return FeatureSequence(Tensor(arr), f.sample_id, f.score)


@dataclass
class TrsState:
    """Everything the two-stage loop mutates between epochs."""

    theta_t: TeacherParams
    theta_s: TeacherParams | None
    theta_f: ReferenceParams
    epoch: int
    stage: str
    m_t: ConfidenceMemory
    m_r: ConfidenceMemory
    seed: int
    opt_teacher: Adam
    opt_student: Adam | None
    opt_reference: Adam


def init_state(config: TrainConfig, arch: NetworkArch) -> TrsState:
    theta_t = init_teacher_params(arch, streams.derive(config.seed, streams.INIT_TEACHER))
    theta_f = init_reference_params(
        arch, streams.derive(config.seed, streams.INIT_REFERENCE)
    )
    return TrsState(
        theta_t=theta_t,
        theta_s=None,
        theta_f=theta_f,
        epoch=0,
        stage=BURN_IN,
        m_t=ConfidenceMemory(TEACHER),
        m_r=ConfidenceMemory(REFERENCE),
        seed=config.seed,
        opt_teacher=adam_for(theta_t.params, config),
        opt_student=None,
        opt_reference=adam_for(theta_f.params, config),
    )


# -- batched helpers ----------------------------------------------------------


def _stack(samples: Sequence[FeatureSequence]) -> np.ndarray:
    return np.stack([s.features.array for s in samples])


def _labels(samples: Sequence[FeatureSequence]) -> np.ndarray:
    return np.array([s.score for s in samples], dtype=np.float64)


def _augmented_stack(
    samples: Sequence[FeatureSequence],
    strength: str,
    purpose: int,
    seed: int,
    epoch: int,
    noise_std: float,
) -> np.ndarray:
    """Stack per-sample augmented views, one RNG stream per (sample, epoch)."""
    out = []
    for s in samples:
        gen = streams.derive(seed, purpose, epoch, streams.id_hash(s.sample_id))
        out.append(augment(s, strength, gen, noise_std).features.array)
    return np.stack(out)


def _batch_bounds(n: int, batch_size: int) -> list[tuple[int, int]]:
    return [(lo, min(lo + batch_size, n)) for lo in range(0, n, batch_size)]


def _direct_nll(net: TeacherParams, x: np.ndarray, targets: np.ndarray) -> Tensor:
    """Summed Gaussian NLL of direct predictions over a stacked batch."""
    return ad.sum(gaussian_nll(targets, teacher_forward(net, Tensor(x))))


def _supervised_batch(
    direct_net: TeacherParams,
    reference_net: ReferenceParams,
    x: np.ndarray,
    x_exemplar: np.ndarray,
    s: np.ndarray,
    s_exemplar: np.ndarray,
) -> tuple[Tensor, Tensor]:
    """Summed supervised terms over one labeled batch with its exemplars."""
    direct_pred = teacher_forward(direct_net, Tensor(x))
    relative_pred = reference_forward(reference_net, Tensor(x), Tensor(x_exemplar))
    l_reg_s, l_reg_r = supervised_loss(direct_pred, relative_pred, s, s_exemplar)
    return ad.sum(l_reg_s), ad.sum(l_reg_r)


def _predict_direct(
    net: TeacherParams, x: np.ndarray, chunk: int
) -> tuple[np.ndarray, np.ndarray]:
    mus, sigmas = [], []
    with ad.no_grad():
        for lo in range(0, x.shape[0], chunk):
            pred = teacher_forward(net, Tensor(x[lo : lo + chunk]))
            mus.append(pred.mu_values)
            sigmas.append(pred.sigma_values)
    return np.concatenate(mus), np.concatenate(sigmas)


def _predict_relative(
    net: ReferenceParams, x_query: np.ndarray, x_exemplar: np.ndarray, chunk: int
) -> tuple[np.ndarray, np.ndarray]:
    mus, sigmas = [], []
    with ad.no_grad():
        for lo in range(0, x_query.shape[0], chunk):
            pred = reference_forward(
                net, Tensor(x_query[lo : lo + chunk]), Tensor(x_exemplar[lo : lo + chunk])
            )
            mus.append(pred.mu_values)
            sigmas.append(pred.sigma_values)
    return np.concatenate(mus), np.concatenate(sigmas)


# -- epochs -------------------------------------------------------------------


def burn_in_epoch(
    state: TrsState, labeled: Sequence[FeatureSequence], config: TrainConfig
) -> LossBreakdown:
    """Supervised epoch for teacher (and reference, when enabled).

    Each labeled sample is scored directly by the teacher and, paired with a
    uniformly drawn labeled partner, relatively by the reference network; the
    summed supervised loss drives one optimizer step. Advances the epoch.
    """
    if state.stage != BURN_IN:
        raise ContractError(f"burn_in_epoch requires stage {BURN_IN!r}, got {state.stage!r}")
    if not labeled:
        raise ConfigurationError("burn-in requires at least one labeled sample")
    use_reference = config.component_toggles.reference_network
    epoch = state.epoch
    x = _stack(labeled)
    s = _labels(labeled)
    n = len(labeled)

    order = streams.derive(state.seed, streams.SHUFFLE_LABELED, epoch).permutation(n)
    if use_reference:
        partner = streams.derive(state.seed, streams.PAIR_LABELED, epoch).integers(0, n, n)

    sum_s = 0.0
    sum_r = 0.0
    for lo, hi in _batch_bounds(n, config.batch_size):
        idx = order[lo:hi]
        state.opt_teacher.zero_grad()
        state.opt_reference.zero_grad()
        if use_reference:
            pair = partner[idx]
            batch_s, batch_r = _supervised_batch(
                state.theta_t, state.theta_f, x[idx], x[pair], s[idx], s[pair]
            )
            total = ad.add(
                ad.mul(batch_s, Tensor(1.0 / idx.size)),
                ad.mul(batch_r, Tensor(1.0 / idx.size)),
            )
            sum_r += batch_r.item()
        else:
            batch_s = _direct_nll(state.theta_t, x[idx], s[idx])
            total = ad.mul(batch_s, Tensor(1.0 / idx.size))
        total.backward()
        state.opt_teacher.step()
        if use_reference:
            state.opt_reference.step()
        sum_s += batch_s.item()

    state.epoch = epoch + 1
    return LossBreakdown.from_terms(sum_s / n, sum_r / n, 0.0, 0.0)


def initialize_student(state: TrsState, config: TrainConfig) -> TrsState:
    """Copy the teacher into a fresh student and enter the TRS stage.

    Clears both confidence memories (they describe unlabeled data, which
    burn-in never touched) and gives the student its own optimizer.
    """
    if state.stage != BURN_IN or state.theta_s is not None:
        raise ContractError("student already initialized")
    if state.epoch != config.burn_in_epochs:
        raise ContractError(
            f"student must be initialized at epoch {config.burn_in_epochs}, "
            f"current epoch is {state.epoch}"
        )
    state.theta_s = state.theta_t.copy()
    state.opt_student = adam_for(state.theta_s.params, config)
    state.stage = TRS
    state.m_t.clear()
    state.m_r.clear()
    return state


def _pseudo_labels(
    state: TrsState,
    batch: Sequence[FeatureSequence],
    x_weak: np.ndarray,
    x_exemplar: np.ndarray | None,
    s_exemplar: np.ndarray | None,
    config: TrainConfig,
) -> np.ndarray:
    """Assemble pseudo-labels for one unlabeled batch (no gradients).

    The teacher side is the memory score (or the current prediction when the
    teacher memory is off); the reference side recovers an absolute score as
    exemplar label plus predicted difference, again memory-filtered when
    enabled. Without the reference network the teacher side alone is the
    pseudo-label.
    """
    toggles = config.component_toggles
    epoch = state.epoch

    mu_t, sigma_t = _predict_direct(state.theta_t, x_weak, len(batch))
    t_side = np.empty(len(batch))
    for j, sample in enumerate(batch):
        if toggles.teacher_memory:
            state.m_t.maybe_write(sample.sample_id, mu_t[j], sigma_t[j], epoch)
            t_side[j] = state.m_t.read(sample.sample_id).score
        else:
            t_side[j] = mu_t[j]

    if not toggles.reference_network:
        return t_side

    delta_mu, delta_sigma = _predict_relative(
        state.theta_f, x_weak, x_exemplar, len(batch)
    )
    recovered = s_exemplar + delta_mu

    s_bar = np.empty(len(batch))
    for j, sample in enumerate(batch):
        if toggles.reference_memory:
            state.m_r.maybe_write(sample.sample_id, recovered[j], delta_sigma[j], epoch)
            r_score = state.m_r.read(sample.sample_id).score
        else:
            r_score = recovered[j]
        if toggles.teacher_memory and toggles.reference_memory:
            s_bar[j] = fuse_pseudo_label(
                state.m_t.read(sample.sample_id), state.m_r.read(sample.sample_id)
            )
        else:
            s_bar[j] = (t_side[j] + r_score) / 2.0
    return s_bar


def trs_epoch(
    state: TrsState,
    labeled: Sequence[FeatureSequence],
    unlabeled: Sequence[FeatureSequence],
    beta: float,
    config: TrainConfig,
) -> LossBreakdown:
    """One teacher-reference-student epoch.

    Per batch pair: pseudo-labels are produced without gradients from weakly
    augmented unlabeled views, the student learns from strongly augmented
    views against them plus the supervised loss on the labeled batch, and one
    optimizer step updates student and reference. The teacher receives no
    gradients; it trails the student by a single EMA update after the last
    step of the epoch.
    """
    if state.stage != TRS:
        raise ContractError(f"trs_epoch requires stage {TRS!r}, got {state.stage!r}")
    if not labeled:
        raise ConfigurationError("the TRS stage requires labeled samples for pairing")
    toggles = config.component_toggles
    epoch = state.epoch
    n = len(labeled)
    m = len(unlabeled)
    x_lab = _stack(labeled)
    s_lab = _labels(labeled)

    order = streams.derive(state.seed, streams.SHUFFLE_LABELED, epoch).permutation(n)
    if toggles.reference_network:
        partner = streams.derive(state.seed, streams.PAIR_LABELED, epoch).integers(0, n, n)
    if m:
        unlab_order = streams.derive(
            state.seed, streams.SHUFFLE_UNLABELED, epoch
        ).permutation(m)
        if toggles.reference_network:
            unlab_partner = streams.derive(
                state.seed, streams.PAIR_UNLABELED, epoch
            ).integers(0, n, m)

    sum_s = sum_r = sum_u = 0.0
    unlab_count = 0
    cursor = 0
    for lo, hi in _batch_bounds(n, config.batch_size):
        idx = order[lo:hi]
        state.opt_student.zero_grad()
        state.opt_reference.zero_grad()

        if toggles.reference_network:
            pair = partner[idx]
            batch_s, batch_r = _supervised_batch(
                state.theta_s, state.theta_f, x_lab[idx], x_lab[pair],
                s_lab[idx], s_lab[pair],
            )
            total = ad.add(
                ad.mul(batch_s, Tensor(1.0 / idx.size)),
                ad.mul(batch_r, Tensor(1.0 / idx.size)),
            )
            sum_r += batch_r.item()
        else:
            batch_s = _direct_nll(state.theta_s, x_lab[idx], s_lab[idx])
            total = ad.mul(batch_s, Tensor(1.0 / idx.size))
        sum_s += batch_s.item()

        if m:
            # 1:1 pairing: an unlabeled batch of the same size, wrapping over
            # the per-epoch shuffle when the pool runs out
            slots = [unlab_order[(cursor + j) % m] for j in range(idx.size)]
            cursor += idx.size
            batch = [unlabeled[int(j)] for j in slots]
            x_weak = _augmented_stack(
                batch, "weak", streams.AUGMENT_WEAK, state.seed, epoch,
                config.augment_noise_std,
            )
            x_strong = _augmented_stack(
                batch, "strong", streams.AUGMENT_STRONG, state.seed, epoch,
                config.augment_noise_std,
            )
            if toggles.reference_network:
                exemplar = np.array([unlab_partner[int(j)] for j in slots])
                s_bar = _pseudo_labels(
                    state, batch, x_weak, x_lab[exemplar], s_lab[exemplar], config
                )
            else:
                s_bar = _pseudo_labels(state, batch, x_weak, None, None, config)
            student_pred = teacher_forward(state.theta_s, Tensor(x_strong))
            batch_u = ad.sum(unsupervised_loss(student_pred, s_bar))
            total = ad.add(total, ad.mul(batch_u, Tensor(beta / len(batch))))
            sum_u += batch_u.item()
            unlab_count += len(batch)

        total.backward()
        state.opt_student.step()
        if toggles.reference_network:
            state.opt_reference.step()

    state.theta_t = TeacherParams(
        state.theta_t.arch,
        ema_update(state.theta_t.params, state.theta_s.params, config.alpha),
    )
    state.epoch = epoch + 1
    return LossBreakdown.from_terms(
        sum_s / n,
        sum_r / n,
        sum_u / unlab_count if unlab_count else 0.0,
        beta,
    )


# -- full runs ----------------------------------------------------------------


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    l_reg_s: float
    l_reg_r: float
    l_unsup: float
    beta: float
    total: float
    val_spearman: float

    @classmethod
    def from_breakdown(
        cls, epoch: int, bd: LossBreakdown, val_spearman: float
    ) -> "EpochMetrics":
        return cls(
            epoch, bd.l_reg_s, bd.l_reg_r, bd.l_unsup, bd.beta, bd.total, val_spearman
        )


METRICS_COLUMNS = ("epoch", "l_reg_s", "l_reg_r", "l_unsup", "beta", "total", "val_spearman")


def write_metrics_csv(rows: Sequence[EpochMetrics], path) -> None:
    """Metrics CSV with shortest-round-trip float formatting."""
    lines = [",".join(METRICS_COLUMNS) + "\n"]
    for r in rows:
        lines.append(
            f"{r.epoch},{r.l_reg_s!r},{r.l_reg_r!r},{r.l_unsup!r},"
            f"{r.beta!r},{r.total!r},{r.val_spearman!r}\n"
        )
    Path(path).write_text("".join(lines), encoding="utf-8")


def _check_training_sets(
    labeled: Sequence[FeatureSequence], unlabeled: Sequence[FeatureSequence]
) -> tuple[int, int]:
    if not labeled:
        raise ConfigurationError("training requires at least one labeled sample")
    seen: set[str] = set()
    for sample in list(labeled) + list(unlabeled):
        if sample.sample_id in seen:
            raise ConfigurationError(f"duplicate sample id {sample.sample_id!r}")
        seen.add(sample.sample_id)
    for sample in labeled:
        if sample.score is None:
            raise ConfigurationError(f"labeled sample {sample.sample_id!r} has no score")
    t, d = labeled[0].features.shape
    for sample in list(labeled) + list(unlabeled):
        if sample.features.shape != (t, d):
            raise ConfigurationError(
                f"sample {sample.sample_id!r} has shape {sample.features.shape}, "
                f"expected ({t}, {d})"
            )
    return t, d


def _safe_val_spearman(net: TeacherParams | None, val_set) -> float:
    from .evaluation import evaluate

    if net is None or not val_set:
        return float("nan")
    try:
        rho, _ = evaluate(net, val_set)
    except MetricUndefinedError:
        return float("nan")
    return rho


def train(
    config: TrainConfig,
    labeled_set: Sequence[FeatureSequence],
    unlabeled_set: Sequence[FeatureSequence],
    val_set: Sequence[FeatureSequence] | None = None,
    arch: NetworkArch | None = None,
    checkpoint_dir=None,
) -> tuple[TeacherParams, TeacherParams, list[EpochMetrics]]:
    """Run burn-in, student initialization and the TRS stage end to end.

    Returns the final teacher and student parameters and one metrics row per
    epoch. Validation Spearman is computed with the student only (NaN during
    burn-in, when no student exists); without an explicit validation set the
    labeled training samples are used. When ``checkpoint_dir`` is given the
    final run state is saved there.
    """
    config.validate()
    _check_training_sets(labeled_set, unlabeled_set)
    t, d = labeled_set[0].features.shape
    arch = arch or NetworkArch(t=t, d=d)
    schedule = config.schedule()
    state = init_state(config, arch)
    val = list(val_set) if val_set is not None else list(labeled_set)

    metrics: list[EpochMetrics] = []
    for epoch in range(config.max_epochs):
        if epoch < config.burn_in_epochs:
            bd = burn_in_epoch(state, labeled_set, config)
            rho = float("nan")
        else:
            if epoch == config.burn_in_epochs:
                initialize_student(state, config)
            bd = trs_epoch(
                state, labeled_set, unlabeled_set, beta_at(epoch, schedule), config
            )
            rho = _safe_val_spearman(state.theta_s, val)
        metrics.append(EpochMetrics.from_breakdown(epoch, bd, rho))

    if checkpoint_dir is not None:
        save_checkpoint(checkpoint_dir, state, config)
    return state.theta_t, state.theta_s, metrics


def train_supervised(
    config: TrainConfig,
    labeled_set: Sequence[FeatureSequence],
    val_set: Sequence[FeatureSequence] | None = None,
    arch: NetworkArch | None = None,
) -> tuple[TeacherParams, list[EpochMetrics]]:
    """Labeled-data-only baseline with the same epoch budget.

    Mirrors the two-stage structure (parameter copy and fresh optimizer at
    the burn-in boundary) so its loss trajectory is epoch-for-epoch
    comparable with a semi-supervised run, but involves no unlabeled data,
    pseudo-labels, memories, EMA or reference network.
    """
    config.validate()
    _check_training_sets(labeled_set, [])
    t, d = labeled_set[0].features.shape
    arch = arch or NetworkArch(t=t, d=d)
    net = init_teacher_params(arch, streams.derive(config.seed, streams.INIT_TEACHER))
    opt = adam_for(net.params, config)
    x = _stack(labeled_set)
    s = _labels(labeled_set)
    n = len(labeled_set)
    val = list(val_set) if val_set is not None else list(labeled_set)

    metrics: list[EpochMetrics] = []
    for epoch in range(config.max_epochs):
        if epoch == config.burn_in_epochs:
            net = net.copy()
            opt = adam_for(net.params, config)
        order = streams.derive(config.seed, streams.SHUFFLE_LABELED, epoch).permutation(n)
        sum_s = 0.0
        for lo, hi in _batch_bounds(n, config.batch_size):
            idx = order[lo:hi]
            opt.zero_grad()
            batch_s = _direct_nll(net, x[idx], s[idx])
            ad.mul(batch_s, Tensor(1.0 / idx.size)).backward()
            opt.step()
            sum_s += batch_s.item()
        rho = (
            _safe_val_spearman(net, val)
            if epoch >= config.burn_in_epochs
            else float("nan")
        )
        bd = LossBreakdown.from_terms(sum_s / n, 0.0, 0.0, 0.0)
        metrics.append(EpochMetrics.from_breakdown(epoch, bd, rho))
    return net, metrics


# -- checkpointing ------------------------------------------------------------

_BIN_VERSION = 1


def save_parameter_set(params: ParameterSet, path) -> None:
    """Name table (name, shape per parameter) followed by raw float64 data."""
    chunks = [struct.pack("<II", _BIN_VERSION, len(params))]
    for name, p in params.items():
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", p.tensor.ndim))
        chunks.append(struct.pack(f"<{p.tensor.ndim}I", *p.tensor.shape))
    for p in params:
        chunks.append(p.array.astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_parameter_set(path) -> ParameterSet:
    blob = Path(path).read_bytes()
    version, count = struct.unpack_from("<II", blob, 0)
    if version != _BIN_VERSION:
        raise ContractError(f"unsupported parameter file version {version}")
    offset = 8
    table: list[tuple[str, tuple[int, ...]]] = []
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        name = blob[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<B", blob, offset)
        offset += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, offset)
        offset += 4 * ndim
        table.append((name, tuple(shape)))
    params = ParameterSet()
    for name, shape in table:
        numel = int(np.prod(shape, dtype=np.int64)) if shape else 1
        values = np.frombuffer(blob, dtype="<f8", count=numel, offset=offset)
        offset += 8 * numel
        params.new(name, values.reshape(shape))
    return params


def save_checkpoint(directory, state: TrsState, config: TrainConfig) -> None:
    """Spec'd layout: params_{t,s,f}.bin, memory_{t,r}.tsv, state.json."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_parameter_set(state.theta_t.params, directory / "params_t.bin")
    if state.theta_s is not None:
        save_parameter_set(state.theta_s.params, directory / "params_s.bin")
    save_parameter_set(state.theta_f.params, directory / "params_f.bin")
    state.m_t.save_tsv(directory / "memory_t.tsv")
    state.m_r.save_tsv(directory / "memory_r.tsv")
    payload = {
        "epoch": state.epoch,
        "stage": state.stage,
        "rng_state": {"seed": state.seed, "next_epoch": state.epoch},
        "config": config.to_dict(),
        "arch": state.theta_t.arch.to_dict(),
    }
    (directory / "state.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_checkpoint(directory) -> tuple[TrsState, TrainConfig]:
    """Restore a saved run state.

    Optimizer moments are not part of the checkpoint layout, so resumed
    optimizers start fresh.
    """
    directory = Path(directory)
    payload = json.loads((directory / "state.json").read_text(encoding="utf-8"))
    config = TrainConfig.from_dict(payload["config"])
    arch = NetworkArch.from_dict(payload["arch"])
    theta_t = TeacherParams(arch, load_parameter_set(directory / "params_t.bin"))
    theta_f = ReferenceParams(arch, load_parameter_set(directory / "params_f.bin"))
    student_path = directory / "params_s.bin"
    theta_s = (
        TeacherParams(arch, load_parameter_set(student_path))
        if student_path.exists()
        else None
    )
    state = TrsState(
        theta_t=theta_t,
        theta_s=theta_s,
        theta_f=theta_f,
        epoch=int(payload["epoch"]),
        stage=str(payload["stage"]),
        m_t=ConfidenceMemory.load_tsv(directory / "memory_t.tsv", TEACHER),
        m_r=ConfidenceMemory.load_tsv(directory / "memory_r.tsv", REFERENCE),
        seed=int(payload["rng_state"]["seed"]),
        opt_teacher=adam_for(theta_t.params, config),
        opt_student=adam_for(theta_s.params, config) if theta_s is not None else None,
        opt_reference=adam_for(theta_f.params, config),
    )
    return state, config
