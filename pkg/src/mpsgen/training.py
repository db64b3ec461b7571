"""Training: cross-entropy fitting and adversarial refinement.

The classifier phase minimizes cross-entropy of the squared-output
posteriors with Adam (or plain SGD), halving the learning rate when
validation loss plateaus and early-stopping on validation accuracy.
Only the offsets ``delta`` from the identity base are trained.

The adversarial phase pairs each class chain with a small MLP critic.
Generator updates push samples drawn through the differentiable sampler
toward higher critic scores (non-saturating loss); critic updates see
real rows against freshly drawn fakes.  After every epoch the ensemble's
validation accuracy is checked against a floor, and a bounded number of
cross-entropy recovery epochs win it back when the adversarial updates
have eroded it.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .datasets import stratified_split
from .embeddings import DTYPE, Embedding, embed, gram_matrix
from .errors import ArgumentError, TrainingFailedError
from .mps import (
    LOG_PROB_FLOOR,
    MpsEnsemble,
    _forward_embedded,
    _log_scores,
    init_ensemble,
)
from .rng import RngStream
from .sampling import sample

_EPS = 1e-12


@dataclass
class TrainConfig:
    """Hyperparameters of the cross-entropy phase."""

    learning_rate: float = 0.01
    lr_decay: float = 0.5
    lr_patience: int = 10
    weight_decay: float = 0.0
    epochs: int = 100
    batch_size: int = 128
    sigma_init: float = 0.1
    early_stop_patience: int = 30
    val_fraction: float = 0.2
    optimizer: str = "adam"
    embed_noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0 or self.weight_decay < 0 or self.sigma_init < 0:
            raise ArgumentError("rates and scales must be >= 0")
        if not 0 < self.lr_decay <= 1:
            raise ArgumentError(f"lr_decay must be in (0, 1], got {self.lr_decay}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ArgumentError("epochs must be >= 0 and batch_size >= 1")
        if self.lr_patience < 1 or self.early_stop_patience < 1:
            raise ArgumentError("patience values must be >= 1")
        if not 0 < self.val_fraction < 1:
            raise ArgumentError(f"val_fraction must be in (0, 1), got {self.val_fraction}")
        if self.optimizer not in ("adam", "sgd"):
            raise ArgumentError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if self.embed_noise_sigma < 0:
            raise ArgumentError("embed_noise_sigma must be >= 0")


@dataclass
class GanConfig:
    """Hyperparameters of the adversarial phase."""

    adversarial_epochs: int = 20
    steps_per_epoch: int = 25
    batch_size: int = 64
    gen_lr: float = 1e-3
    disc_lr: float = 1e-3
    disc_hidden: tuple[int, ...] = (64, 64)
    disc_pretrain_epochs: int = 3
    mps_pretrain_epochs: int = 0
    accuracy_floor: float | None = None
    retrain_budget: int = 50
    bins: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.adversarial_epochs < 0 or self.steps_per_epoch < 1:
            raise ArgumentError("epoch and step counts must be positive")
        if self.batch_size < 1 or self.bins < 2:
            raise ArgumentError("batch_size must be >= 1 and bins >= 2")
        if self.gen_lr < 0 or self.disc_lr < 0:
            raise ArgumentError("learning rates must be >= 0")
        if self.disc_pretrain_epochs < 0 or self.mps_pretrain_epochs < 0:
            raise ArgumentError("pretrain epoch counts must be >= 0")
        if self.accuracy_floor is not None and not 0 <= self.accuracy_floor <= 1:
            raise ArgumentError("accuracy_floor must be in [0, 1]")
        if self.retrain_budget < 1:
            raise ArgumentError("retrain_budget must be >= 1")


def _batch_log_probs(tensors: torch.Tensor, phi: torch.Tensor, labels: torch.Tensor):
    """Per-sample log posterior of the true class and the score matrix."""
    man, logs = _forward_embedded(tensors, phi)
    scores = _log_scores(man, logs)
    logp = scores.gather(1, labels.unsqueeze(1)).squeeze(1) - torch.logsumexp(
        scores, dim=1
    )
    return logp.clamp_min(LOG_PROB_FLOOR), scores


def cross_entropy_loss(m: MpsEnsemble, features, labels) -> float:
    """Mean negative log posterior of the true classes.

    ``features`` are rows in the embedding support.  Per-sample log
    probabilities are floored at ``LOG_PROB_FLOOR`` so a collapsed class
    yields a large finite loss instead of infinity.
    """
    phi = embed(m.embedding, np.asarray(features, dtype=np.float64))
    labs = torch.as_tensor(np.asarray(labels, dtype=np.int64))
    if labs.max() >= m.n_classes or labs.min() < 0:
        raise ArgumentError("label outside the model's class range")
    with torch.no_grad():
        logp, _ = _batch_log_probs(m.tensors(), phi, labs)
    return float(-logp.mean())


def grad_loss(m: MpsEnsemble, features, labels, weight_decay: float = 0.0) -> np.ndarray:
    """Gradient of :func:`cross_entropy_loss` with respect to ``delta``.

    L2 regularization enters as an exact ``weight_decay * delta`` term,
    so the base tensors are never pulled toward zero.
    """
    phi = embed(m.embedding, np.asarray(features, dtype=np.float64))
    labs = torch.as_tensor(np.asarray(labels, dtype=np.int64))
    delta = m.delta.detach().clone().requires_grad_(True)
    view = dataclasses.replace(m, delta=delta)
    logp, _ = _batch_log_probs(view.tensors(), phi, labs)
    loss = -logp.mean()
    (grad,) = torch.autograd.grad(loss, delta)
    if weight_decay:
        grad = grad + weight_decay * delta.detach()
    return grad.numpy()


def _eval_split(tensors: torch.Tensor, phi: torch.Tensor, labels: torch.Tensor, chunk: int = 4096):
    """Loss and accuracy over a split, chunked, without gradients."""
    losses, hits, count = 0.0, 0, labels.shape[0]
    with torch.no_grad():
        for s in range(0, count, chunk):
            logp, scores = _batch_log_probs(
                tensors, phi[s : s + chunk], labels[s : s + chunk]
            )
            losses += float(-logp.sum())
            hits += int((scores.argmax(dim=1) == labels[s : s + chunk]).sum())
    return losses / count, hits / count


def train_classifier(
    features,
    labels,
    embedding: Embedding,
    bond_dim: int,
    cfg: TrainConfig | None = None,
    initial: MpsEnsemble | None = None,
) -> tuple[MpsEnsemble, list[dict]]:
    """Fit an ensemble to labelled rows (already in the embedding support).

    Splits off a stratified validation fraction, minimizes cross-entropy
    over ``delta``, decays the learning rate on validation-loss plateaus,
    and early-stops on validation accuracy.  Returns the checkpoint with
    the best validation accuracy and the per-epoch history.  ``initial``
    warm-starts from an existing ensemble instead of a fresh one.

    Raises :class:`TrainingFailedError` if the loss turns non-finite.
    """
    cfg = cfg or TrainConfig()
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if features.ndim != 2 or features.shape[0] != labels.shape[0]:
        raise ArgumentError(
            f"features {features.shape} and labels {labels.shape} disagree"
        )
    n_classes = int(labels.max()) + 1
    if n_classes < 2:
        raise ArgumentError("need at least 2 classes in the labels")

    rng = RngStream(cfg.seed)
    train_idx, val_idx = stratified_split(labels, cfg.val_fraction, rng.derive(0))
    if initial is not None:
        if initial.n_sites != features.shape[1] or initial.n_classes < n_classes:
            raise ArgumentError("warm-start model does not fit the data")
        model = initial.clone()
    else:
        model = init_ensemble(
            n_classes, features.shape[1], bond_dim, embedding, cfg.sigma_init, rng.derive(1)
        )
    phi_train = embed(embedding, features[train_idx])
    phi_val = embed(embedding, features[val_idx])
    y_train = torch.as_tensor(labels[train_idx])
    y_val = torch.as_tensor(labels[val_idx])

    delta = model.delta.clone().requires_grad_(True)
    view = dataclasses.replace(model, delta=delta)
    if cfg.optimizer == "adam":
        opt = torch.optim.Adam([delta], lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    else:
        opt = torch.optim.SGD([delta], lr=cfg.learning_rate, weight_decay=cfg.weight_decay)

    noise = rng.derive(2)
    history: list[dict] = []
    best_acc, best_delta, since_acc = -1.0, delta.detach().clone(), 0
    best_val_loss, since_loss = math.inf, 0
    lr_now = cfg.learning_rate
    n_train = len(train_idx)

    for epoch in range(cfg.epochs):
        perm = rng.permutation(n_train)
        run_loss, run_hits = 0.0, 0
        for s in range(0, n_train, cfg.batch_size):
            idx = torch.as_tensor(perm[s : s + cfg.batch_size])
            phi_b = phi_train[idx]
            if cfg.embed_noise_sigma > 0:
                phi_b = phi_b + torch.from_numpy(
                    noise.normal(cfg.embed_noise_sigma, size=tuple(phi_b.shape))
                )
            logp, scores = _batch_log_probs(view.tensors(), phi_b, y_train[idx])
            loss = -logp.mean()
            if not torch.isfinite(loss):
                raise TrainingFailedError(
                    "loss became non-finite",
                    diagnostics={"epoch": epoch, "batch_start": s, "lr": lr_now},
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            run_loss += float(loss.detach()) * len(idx)
            run_hits += int((scores.argmax(dim=1) == y_train[idx]).sum())
        val_loss, val_acc = _eval_split(view.tensors(), phi_val, y_val)
        history.append(
            {
                "epoch": epoch,
                "train_loss": run_loss / n_train,
                "train_accuracy": run_hits / n_train,
                "val_loss": val_loss,
                "val_accuracy": val_acc,
                "learning_rate": lr_now,
            }
        )
        if val_acc > best_acc:
            best_acc, best_delta, since_acc = val_acc, delta.detach().clone(), 0
        else:
            since_acc += 1
        if val_loss < best_val_loss - 1e-12:
            best_val_loss, since_loss = val_loss, 0
        else:
            since_loss += 1
            if since_loss >= cfg.lr_patience:
                lr_now *= cfg.lr_decay
                for group in opt.param_groups:
                    group["lr"] = lr_now
                since_loss = 0
        if since_acc >= cfg.early_stop_patience:
            break

    return dataclasses.replace(model, delta=best_delta), history


class Discriminator:
    """Per-class MLP critics mapping a sample row to a realness score.

    Each class gets its own fully connected net (LeakyReLU 0.01 hidden
    activations, sigmoid output).  Weights are drawn from the given
    stream with the usual uniform fan-in scaling, so construction is
    deterministic in the seed.
    """

    def __init__(
        self,
        n_classes: int,
        n_features: int,
        hidden: tuple[int, ...] = (64, 64),
        rng: RngStream | None = None,
    ):
        if n_classes < 1 or n_features < 1:
            raise ArgumentError("n_classes and n_features must be >= 1")
        rng = rng or RngStream(0)
        self.n_classes = n_classes
        self.n_features = n_features
        self.nets = []
        for _ in range(n_classes):
            layers: list[nn.Module] = []
            widths = (n_features, *hidden)
            for fan_in, fan_out in zip(widths[:-1], widths[1:]):
                layers += [nn.Linear(fan_in, fan_out, dtype=DTYPE), nn.LeakyReLU(0.01)]
            layers += [nn.Linear(widths[-1], 1, dtype=DTYPE), nn.Sigmoid()]
            net = nn.Sequential(*layers)
            for mod in net:
                if isinstance(mod, nn.Linear):
                    bound = 1.0 / math.sqrt(mod.in_features)
                    with torch.no_grad():
                        mod.weight.copy_(
                            torch.from_numpy(
                                rng.uniform(size=tuple(mod.weight.shape)) * 2 * bound
                                - bound
                            )
                        )
                        mod.bias.copy_(
                            torch.from_numpy(
                                rng.uniform(size=tuple(mod.bias.shape)) * 2 * bound - bound
                            )
                        )
            self.nets.append(net)

    def prob(self, c: int, x: torch.Tensor) -> torch.Tensor:
        """Realness scores in (0, 1) for rows ``x`` under class ``c``."""
        if not 0 <= c < self.n_classes:
            raise ArgumentError(f"class {c} out of range")
        return self.nets[c](x).squeeze(-1)

    def parameters(self):
        for net in self.nets:
            yield from net.parameters()


def _disc_step(disc, opt_d, c, real, fake):
    d_real = disc.prob(c, real)
    d_fake = disc.prob(c, fake)
    loss = -(
        torch.log(d_real.clamp_min(_EPS)).mean()
        + torch.log((1.0 - d_fake).clamp_min(_EPS)).mean()
    )
    opt_d.zero_grad()
    loss.backward()
    opt_d.step()
    return float(loss.detach())


def train_gan(
    model: MpsEnsemble,
    features,
    labels,
    cfg: GanConfig | None = None,
    train_cfg: TrainConfig | None = None,
) -> tuple[MpsEnsemble, list[dict]]:
    """Adversarially refine a pretrained ensemble's generative side.

    ``features`` are rows in the embedding support.  Phases: optional
    extra cross-entropy pretraining, critic pretraining against the
    frozen generator, then alternating critic/generator updates (one
    each per step and class).  After every adversarial epoch the
    validation accuracy is compared against the floor (measured from the
    incoming model when the config leaves it unset); dips trigger up to
    ``retrain_budget`` cross-entropy recovery epochs with a fresh
    optimizer.  Exhausting the budget raises
    :class:`TrainingFailedError` carrying the last checkpoint that still
    met the floor.

    With ``adversarial_epochs = 0`` the model is returned unchanged with
    an empty history.
    """
    cfg = cfg or GanConfig()
    train_cfg = train_cfg or TrainConfig(seed=cfg.seed)
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    gram = gram_matrix(model.embedding)
    if not gram.generation_capable:
        raise ArgumentError(
            f"embedding {model.embedding.kind!r} cannot back an exact sampler"
        )
    if int(labels.max()) + 1 > model.n_classes:
        raise ArgumentError("labels exceed the model's class range")

    if cfg.mps_pretrain_epochs > 0:
        model, _ = train_classifier(
            features,
            labels,
            model.embedding,
            model.bond_dim,
            dataclasses.replace(train_cfg, epochs=cfg.mps_pretrain_epochs),
            initial=model,
        )

    if cfg.adversarial_epochs == 0:
        return model.clone(), []

    rng = RngStream(cfg.seed)
    train_idx, val_idx = stratified_split(labels, train_cfg.val_fraction, rng.derive(0))
    phi_val = embed(model.embedding, features[val_idx])
    y_val = torch.as_tensor(labels[val_idx])
    phi_train = embed(model.embedding, features[train_idx])
    y_train = torch.as_tensor(labels[train_idx])
    n = model.n_sites

    delta = model.delta.detach().clone().requires_grad_(True)
    view = dataclasses.replace(model, delta=delta)
    _, floor_acc = _eval_split(view.tensors(), phi_val, y_val)
    floor = cfg.accuracy_floor if cfg.accuracy_floor is not None else floor_acc
    last_good = delta.detach().clone() if floor_acc >= floor else None

    disc = Discriminator(
        model.n_classes, n, hidden=tuple(cfg.disc_hidden), rng=rng.derive(1)
    )
    opt_g = torch.optim.Adam([delta], lr=cfg.gen_lr)
    opt_d = torch.optim.Adam(list(disc.parameters()), lr=cfg.disc_lr)

    class_rows = {
        c: torch.as_tensor(features[train_idx][labels[train_idx] == c])
        for c in range(model.n_classes)
    }
    draw = rng.derive(2)

    def real_batch(c):
        rows = class_rows[c]
        pick = torch.as_tensor(draw.integers(0, rows.shape[0], cfg.batch_size))
        return rows[pick]

    def fake_batch(c, grad: bool):
        nu = torch.from_numpy(draw.uniform(size=(cfg.batch_size, n)))
        if grad:
            return sample(view, c, nu, bins=cfg.bins, gram=gram)
        with torch.no_grad():
            return sample(view, c, nu, bins=cfg.bins, gram=gram)

    for _ in range(cfg.disc_pretrain_epochs):
        for _ in range(cfg.steps_per_epoch):
            for c in range(model.n_classes):
                _disc_step(disc, opt_d, c, real_batch(c), fake_batch(c, grad=False))

    history: list[dict] = []
    for epoch in range(cfg.adversarial_epochs):
        d_losses, g_losses = [], []
        for _ in range(cfg.steps_per_epoch):
            for c in range(model.n_classes):
                d_losses.append(
                    _disc_step(disc, opt_d, c, real_batch(c), fake_batch(c, grad=False))
                )
                g_loss = -torch.log(
                    disc.prob(c, fake_batch(c, grad=True)).clamp_min(_EPS)
                ).mean()
                opt_g.zero_grad()
                opt_d.zero_grad()
                g_loss.backward()
                opt_g.step()
                g_losses.append(float(g_loss.detach()))
        _, val_acc = _eval_split(view.tensors(), phi_val, y_val)
        recovery = 0
        if val_acc < floor:
            opt_r = torch.optim.Adam([delta], lr=train_cfg.learning_rate)
            while val_acc < floor:
                if recovery >= cfg.retrain_budget:
                    raise TrainingFailedError(
                        f"accuracy {val_acc:.4f} stayed below the floor {floor:.4f} "
                        f"after {recovery} recovery epochs",
                        checkpoint=(
                            dataclasses.replace(model, delta=last_good)
                            if last_good is not None
                            else None
                        ),
                        diagnostics={"epoch": epoch, "val_accuracy": val_acc, "floor": floor},
                    )
                perm = rng.permutation(len(train_idx))
                for s in range(0, len(train_idx), train_cfg.batch_size):
                    idx = torch.as_tensor(perm[s : s + train_cfg.batch_size])
                    logp, _ = _batch_log_probs(view.tensors(), phi_train[idx], y_train[idx])
                    loss = -logp.mean()
                    opt_r.zero_grad()
                    loss.backward()
                    opt_r.step()
                recovery += 1
                _, val_acc = _eval_split(view.tensors(), phi_val, y_val)
        if val_acc >= floor:
            last_good = delta.detach().clone()
        history.append(
            {
                "epoch": epoch,
                "disc_loss": float(np.mean(d_losses)),
                "gen_loss": float(np.mean(g_losses)),
                "val_accuracy": val_acc,
                "recovery_epochs": recovery,
            }
        )
    return dataclasses.replace(model, delta=delta.detach().clone()), history
