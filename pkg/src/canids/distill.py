"""Knowledge distillation: compact students learn from frozen teachers.

The classifier student matches the teacher's temperature-softened output
distribution; the autoencoder student matches the teacher's per-node
latent Gaussians through a learned linear projection from the student's
latent space into the teacher's. The whole two-stage pipeline is then
re-executed with the students, including a fresh undersampling pass
driven by the student VGAE's own scores.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .gat import GatClassifier, GatConfig, train_supervised
from .gat import count_params as gat_count_params
from .losses import cross_entropy, kl_categorical
from .optim import Param, derive_seed, glorot_uniform
from .tensor import Tensor, no_grad
from .vgae import LatentState, VgaeConfig, VgaeModel, train_vgae
from .vgae import count_params as vgae_count_params


@dataclass(frozen=True)
class KdConfig:
    temperature: float = 4.0
    hard_weight: float = 0.5  # alpha: balance of ground truth vs teacher signal
    tau_squared: bool = True  # rescale the soft term by tau^2 (off for fidelity runs)
    reuse_teacher_ranking: bool = False  # ablation: undersample with teacher scores

    def __post_init__(self):
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")
        if not 0.0 <= self.hard_weight <= 1.0:
            raise ConfigError(f"hard_weight must be in [0, 1], got {self.hard_weight}")


def soften(logits, temperature: float) -> Tensor:
    """Temperature-scaled softmax; tau=1 is the ordinary distribution."""
    if temperature <= 0:
        raise ConfigError(f"temperature must be > 0, got {temperature}")
    logits = T.as_tensor(logits)
    return T.softmax(logits / float(temperature), axis=-1)


def kd_classifier_loss(student_logits, teacher_logits, hard_label: int, cfg: KdConfig) -> Tensor:
    """alpha * CE(student, label) + (1-alpha) * tau^2 * KL(soft student || soft teacher)."""
    student_logits = T.as_tensor(student_logits)
    teacher_logits = T.as_tensor(teacher_logits)
    if student_logits.shape != teacher_logits.shape:
        raise DimensionError(
            f"kd_classifier_loss: logit arity mismatch {student_logits.shape} vs {teacher_logits.shape}"
        )
    a, tau = cfg.hard_weight, cfg.temperature
    hard = cross_entropy(student_logits, int(hard_label))
    soft = kl_categorical(soften(student_logits, tau), soften(teacher_logits.detach(), tau))
    if cfg.tau_squared:
        soft = (tau * tau) * soft
    return a * hard + (1.0 - a) * soft


class LatentProjection:
    """Learned linear maps from student latent space to the teacher's."""

    def __init__(self, student_dim: int, teacher_dim: int, seed: int = 0):
        rng = derive_seed(seed, 41)
        self.mu_weight = Param(
            "proj.mu_weight",
            Tensor(glorot_uniform(rng, (student_dim, teacher_dim), student_dim, teacher_dim), requires_grad=True),
        )
        self.mu_bias = Param("proj.mu_bias", Tensor(np.zeros(teacher_dim), requires_grad=True))
        self.ls_weight = Param(
            "proj.ls_weight",
            Tensor(glorot_uniform(rng, (student_dim, teacher_dim), student_dim, teacher_dim), requires_grad=True),
        )
        self.ls_bias = Param("proj.ls_bias", Tensor(np.zeros(teacher_dim), requires_grad=True))

    def params(self) -> list[Param]:
        return [self.mu_weight, self.mu_bias, self.ls_weight, self.ls_bias]

    def apply(self, latent: LatentState) -> tuple[Tensor, Tensor]:
        mu = latent.mu @ self.mu_weight.tensor + self.mu_bias.tensor
        log_sigma = latent.log_sigma @ self.ls_weight.tensor + self.ls_bias.tensor
        return mu, log_sigma


def kd_latent_loss(student_latent: LatentState, teacher_latent: LatentState, projection: LatentProjection) -> Tensor:
    """Mean per-node KL(projected student Gaussian || teacher Gaussian)."""
    if student_latent.mu.shape[0] != teacher_latent.mu.shape[0]:
        raise DimensionError(
            f"kd_latent_loss: node counts differ "
            f"({student_latent.mu.shape[0]} vs {teacher_latent.mu.shape[0]})"
        )
    mu_s, ls_s = projection.apply(student_latent)
    mu_t = teacher_latent.mu.detach()
    ls_t = teacher_latent.log_sigma.detach()
    # KL(N(mu_s, s^2) || N(mu_t, t^2)) per dimension, summed, then node-averaged
    var_ratio = T.exp(2.0 * (ls_s - ls_t))
    delta = (mu_s - mu_t) ** 2 * T.exp(-2.0 * ls_t)
    per_node = (ls_t - ls_s + 0.5 * (var_ratio + delta) - 0.5).sum(axis=1)
    return per_node.mean()


def _param_checksum(values: dict[str, np.ndarray]) -> str:
    digest = hashlib.sha256()
    for name in sorted(values):
        digest.update(name.encode())
        digest.update(np.ascontiguousarray(values[name]).tobytes())
    return digest.hexdigest()


@dataclass
class DistillResult:
    student_vgae: VgaeModel
    student_gat: GatClassifier
    projection: LatentProjection
    report: dict
    scored_student: list | None = None


def distill_pipeline(
    train_graphs,
    teacher_vgae: VgaeModel,
    teacher_gat: GatClassifier,
    student_vgae_config: VgaeConfig,
    student_gat_config: GatConfig,
    kd: KdConfig,
    seed: int,
    options=None,
    test_graphs=None,
) -> DistillResult:
    """Re-run both stages with students guided by the frozen teachers.

    Stage 1 trains the student VGAE with its ELBO plus (1 - alpha) times
    the latent KL to the teacher; undersampling is then recomputed from
    the student's scores (or the teacher's, with reuse_teacher_ranking).
    Stage 2 trains the student GAT under the combined soft/hard loss.
    With ``test_graphs``, the report carries paired teacher/student test
    metrics for the comparison table.
    """
    from .pipeline import (
        Metrics,
        PipelineOptions,
        calibrate_vgae,
        chronological_split,
        evaluate,
        score_windows,
        undersample,
    )

    opts = options or PipelineOptions()
    t_start = time.perf_counter()
    teacher_vgae_sum = _param_checksum(teacher_vgae.param_values())
    teacher_gat_sum = _param_checksum(teacher_gat.param_values())

    train_part, val_part = chronological_split(train_graphs, opts.val_frac)
    train_normals = [g for g in train_part if g.label == 0]
    train_attacks = [g for g in train_part if g.label == 1]

    projection = LatentProjection(student_vgae_config.latent_dim, teacher_vgae.config.latent_dim, seed=seed)
    teacher_latents: dict[int, LatentState] = {}

    def latent_hint(prep, student_latent):
        key = prep.graph.window_start_index
        if key not in teacher_latents:
            with no_grad():
                teacher_latents[key] = teacher_vgae.encode(teacher_vgae.prepare(prep.graph))
        hint = kd_latent_loss(student_latent, teacher_latents[key], projection)
        return (1.0 - kd.hard_weight) * hint

    t0 = time.perf_counter()
    student_vgae, vgae_losses = train_vgae(
        train_normals,
        student_vgae_config,
        seed=seed,
        epochs=opts.vgae_epochs,
        lr=opts.vgae_lr,
        batch_size=opts.vgae_batch,
        extra_loss_fn=latent_hint,
        extra_params=projection.params(),
    )
    vgae_seconds = time.perf_counter() - t0

    ranker = teacher_vgae if kd.reuse_teacher_ranking else student_vgae
    ranked = ranker.reconstruction_rank(
        train_normals, opts.composite_weights, seed=seed, score_mode=opts.score_mode
    )
    selection = undersample(ranked, train_attacks, opts.ratio)

    teacher_logit_cache: dict[int, np.ndarray] = {}

    def kd_loss(model, prep, label):
        key = prep.graph.window_start_index
        logits_t = teacher_logit_cache.get(key)
        if logits_t is None:
            with no_grad():
                _, t_logits, _ = teacher_gat.forward(prep)
            logits_t = t_logits.values
            teacher_logit_cache[key] = logits_t
        _, s_logits, _ = model.forward(prep)
        return kd_classifier_loss(s_logits, logits_t, int(label), kd)

    stage2_graphs = selection.selected_normals + selection.attacks
    stage2_labels = [g.label for g in stage2_graphs]
    t0 = time.perf_counter()
    student_gat, gat_log = train_supervised(
        stage2_graphs,
        stage2_labels,
        student_gat_config,
        seed=seed,
        epochs=opts.gat_epochs,
        batch_size=opts.gat_batch,
        lr=opts.gat_lr,
        val_graphs=val_part,
        val_labels=[g.label for g in val_part],
        patience=opts.patience,
        loss_fn=kd_loss,
    )
    gat_seconds = time.perf_counter() - t0

    if _param_checksum(teacher_vgae.param_values()) != teacher_vgae_sum:
        raise ConfigError("teacher VGAE parameters changed during distillation")
    if _param_checksum(teacher_gat.param_values()) != teacher_gat_sum:
        raise ConfigError("teacher GAT parameters changed during distillation")

    comparison = None
    scored_student = None
    if test_graphs is not None:
        val_normals = [g for g in val_part if g.label == 0]

        def cal_for(model):
            return calibrate_vgae(
                [model.score(g, opts.composite_weights, seed, opts.score_mode) for g in val_normals],
                *opts.calibration_quantiles,
            )

        def metric_pair(scored):
            gat_only = Metrics.from_pairs(
                [s.truth for s in scored],
                [1 if s.gat_prob >= opts.threshold else 0 for s in scored],
            )
            return {"gat_only": gat_only.to_dict(), "fused": evaluate(scored, opts.threshold).to_dict()}

        scored_teacher = score_windows(teacher_vgae, teacher_gat, cal_for(teacher_vgae), test_graphs, seed, opts)
        scored_student = score_windows(student_vgae, student_gat, cal_for(student_vgae), test_graphs, seed, opts)
        comparison = {"teacher": metric_pair(scored_teacher), "student": metric_pair(scored_student)}

    gat_teacher_n = gat_count_params(teacher_gat.config)
    gat_student_n = gat_count_params(student_gat_config)
    report = {
        "seed": seed,
        "kd": {
            "temperature": kd.temperature,
            "hard_weight": kd.hard_weight,
            "tau_squared": kd.tau_squared,
            "reuse_teacher_ranking": kd.reuse_teacher_ranking,
        },
        "params": {
            "gat_teacher": gat_teacher_n,
            "gat_student": gat_student_n,
            "gat_ratio": gat_student_n / gat_teacher_n,
            "vgae_teacher": vgae_count_params(teacher_vgae.config),
            "vgae_student": vgae_count_params(student_vgae_config),
        },
        "undersampling": {
            "requested_ratio": opts.ratio,
            "achieved_ratio": selection.achieved_ratio,
            "normals_kept": len(selection.selected_normals),
            "attacks": len(selection.attacks),
        },
        "teacher_checksums_unchanged": True,
        "metrics": comparison,
        "training": {
            "vgae_epoch_losses": vgae_losses,
            "gat_epoch_losses": gat_log.epoch_losses,
            "gat_val_f1": gat_log.val_f1,
        },
        "timings": {
            "vgae_seconds": vgae_seconds,
            "gat_seconds": gat_seconds,
            "total_seconds": time.perf_counter() - t_start,
        },
    }
    return DistillResult(student_vgae, student_gat, projection, report, scored_student)
