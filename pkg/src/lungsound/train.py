"""Training loop, patient-wise cross-validation splits, evaluation,
and age-stratified training.

Training uses weighted categorical cross-entropy (inverse class-count
weights), Adam with coupled L2 weight decay, a per-epoch cosine
learning-rate schedule, and SpecAugment on training batches only.
Runs are deterministic for a fixed seed in single-threaded mode.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .audio import Spectrogram, _augment_values
from .errors import ConfigError, DataError, DivergenceError
from .masks import FrequencyMask, apply_mask
from .metrics import MetricReport, collapse_to_binary
from .model import CnnTsa, ModelConfig
from .optim import AdamState, adam_step, cosine_lr
from .seeding import rng_for
from .tensor import Tensor, softmax

__all__ = [
    "TrainConfig",
    "EpochStats",
    "TrainResult",
    "AgeSpecificResult",
    "wcce_loss",
    "patient_kfold",
    "train",
    "evaluate",
    "train_age_specific",
    "evaluate_age_specific",
    "combine_reports",
]

LOG_CLAMP = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 128
    age_batch_size: int = 64  # used by the age-stratified trainer
    lr0: float = 1e-3
    weight_decay: float = 1e-4
    seed: int = 0
    task: str = "multiclass"  # or "binary"
    age_split: float = 18.0  # years; child < threshold <= adult
    specaugment: bool = True
    sa_time_masks: int = 2
    sa_freq_masks: int = 2
    sa_max_t: int = 20
    sa_max_f: int = 8

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.task not in ("binary", "multiclass"):
            raise ConfigError(f"unknown task {self.task!r}")


@dataclass
class EpochStats:
    epoch: int
    lr: float
    loss: float
    train_as: float  # from predictions accumulated over (augmented) batches


@dataclass
class TrainResult:
    model: CnnTsa
    history: list[EpochStats]
    class_counts: np.ndarray


# -- loss -------------------------------------------------------------------------


def wcce_loss(logits: Tensor, labels: np.ndarray, class_counts: np.ndarray) -> Tensor:
    """Weighted categorical cross-entropy with w_c = 1 / count(c).

    ``class_counts`` are dataset-level counts; every class present in
    ``labels`` must have a positive count. Probabilities come from a
    softmax over the logits, with the log argument clamped at 1e-12.
    """
    labels = np.asarray(labels, dtype=np.int64)
    counts = np.asarray(class_counts, dtype=np.float64)
    n, n_classes = logits.shape
    if labels.shape != (n,):
        raise ConfigError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    present = np.unique(labels)
    if (counts[present] <= 0).any():
        bad = [int(c) for c in present if counts[c] <= 0]
        raise DataError(f"zero class count for present classes {bad}")
    weights = np.zeros(n_classes, dtype=np.float32)
    nz = counts > 0
    weights[nz] = (1.0 / counts[nz]).astype(np.float32)
    onehot = np.zeros((n, n_classes), dtype=np.float32)
    onehot[np.arange(n), labels] = 1.0
    sample_w = weights[labels][:, None] * onehot  # (N, C)
    logp = softmax(logits, axis=1).clamp_min(LOG_CLAMP).log()
    return (logp * Tensor(sample_w)).sum() * (-1.0 / n)


# -- splits -----------------------------------------------------------------------


def patient_kfold(records, k: int = 5, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Patient-wise K-fold split over items exposing ``patient_id``.

    Every patient's records land in exactly one validation fold; folds
    are balanced greedily by record count. Returns (train_idx, val_idx)
    pairs of sorted index arrays.
    """
    by_patient: dict[str, list[int]] = {}
    for i, rec in enumerate(records):
        pid = getattr(rec, "patient_id", None)
        if pid is None:
            raise DataError(f"record {i} has no patient id; patient-wise split impossible")
        by_patient.setdefault(str(pid), []).append(i)
    if len(by_patient) < k:
        raise DataError(f"only {len(by_patient)} patients for {k}-fold split")
    pids = sorted(by_patient)
    order = rng_for(seed, "patient-kfold").permutation(len(pids))
    shuffled = [pids[i] for i in order]
    shuffled.sort(key=lambda p: -len(by_patient[p]))  # stable: seed breaks ties
    fold_members: list[list[str]] = [[] for _ in range(k)]
    fold_sizes = [0] * k
    for pid in shuffled:
        tgt = min(range(k), key=lambda f: (fold_sizes[f], f))
        fold_members[tgt].append(pid)
        fold_sizes[tgt] += len(by_patient[pid])
    splits = []
    all_idx = set(range(len(records)))
    for members in fold_members:
        val = sorted(i for p in members for i in by_patient[p])
        train = sorted(all_idx.difference(val))
        splits.append((np.asarray(train, dtype=np.int64), np.asarray(val, dtype=np.int64)))
    return splits


# -- label handling -----------------------------------------------------------------


def task_labels(dataset: list[Spectrogram], task: str) -> np.ndarray:
    labels = []
    for i, s in enumerate(dataset):
        if s.label is None:
            raise DataError(f"spectrogram {i} ({s.clip_id!r}) has no label")
        labels.append(int(s.label))
    labels = np.asarray(labels, dtype=np.int64)
    if task == "binary":
        return collapse_to_binary(labels)
    return labels


def _stack_inputs(dataset: list[Spectrogram]) -> np.ndarray:
    shapes = {s.values.shape for s in dataset}
    if len(shapes) != 1:
        raise DataError(f"spectrograms have mixed shapes {sorted(shapes)}; cannot batch")
    return np.stack([s.values for s in dataset])[:, None, :, :]


# -- training -----------------------------------------------------------------------


def train(
    dataset: list[Spectrogram],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    mask: FrequencyMask | None = None,
) -> TrainResult:
    """Train a model on labeled spectrograms.

    The mask (if any) is applied first and the model is built for the
    compacted band count. Raises DivergenceError with the offending
    epoch if the loss goes non-finite.
    """
    if not dataset:
        raise DataError("empty training dataset")
    if mask is not None:
        dataset = [apply_mask(s, mask) for s in dataset]
        model_cfg = replace(model_cfg, n_mel_rows_in=mask.n_kept)
    labels = task_labels(dataset, train_cfg.task)
    n_classes = model_cfg.n_classes
    if labels.max() >= n_classes:
        raise ConfigError(
            f"label {labels.max()} out of range for a {n_classes}-class model "
            f"(task={train_cfg.task})"
        )
    x_all = _stack_inputs(dataset)
    n, _, t_dim, f_dim = x_all.shape
    counts = np.bincount(labels, minlength=n_classes)
    model = CnnTsa(model_cfg, seed=train_cfg.seed)
    state = AdamState()
    max_t = min(train_cfg.sa_max_t, t_dim)
    max_f = min(train_cfg.sa_max_f, f_dim)
    history: list[EpochStats] = []
    last_epoch = train_cfg.epochs - 1
    for epoch in range(train_cfg.epochs):
        lr = cosine_lr(epoch, last_epoch, train_cfg.lr0)
        perm = rng_for(train_cfg.seed, "shuffle", epoch).permutation(n)
        sa_rng = rng_for(train_cfg.seed, "specaugment", epoch)
        loss_sum = 0.0
        conf = np.zeros((n_classes, n_classes), dtype=np.int64)
        for start in range(0, n, train_cfg.batch_size):
            idx = perm[start : start + train_cfg.batch_size]
            xb = x_all[idx].copy()
            yb = labels[idx]
            if train_cfg.specaugment:
                for row in xb:
                    _augment_values(
                        row[0],
                        train_cfg.sa_time_masks,
                        train_cfg.sa_freq_masks,
                        max_t,
                        max_f,
                        sa_rng,
                    )
            logits = model.forward(Tensor(xb), training=True)
            loss = wcce_loss(logits, yb, counts)
            if not np.isfinite(loss.data):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}", epoch=epoch
                )
            model.zero_grad()
            loss.backward()
            adam_step(
                model.params,
                model.grads(),
                state,
                lr,
                weight_decay=train_cfg.weight_decay,
            )
            loss_sum += loss.item() * len(idx)
            preds = logits.data.argmax(axis=1)
            np.add.at(conf, (yb, preds), 1)
        train_as = MetricReport.from_confusion(conf).as_score if conf.sum() else 0.0
        history.append(EpochStats(epoch, lr, loss_sum / n, train_as))
    return TrainResult(model=model, history=history, class_counts=counts)


# -- evaluation ----------------------------------------------------------------------


def evaluate(
    model: CnnTsa,
    dataset: list[Spectrogram],
    task: str,
    batch_size: int = 128,
) -> MetricReport:
    """Score a frozen model; labels and predictions follow ``task``.

    A multiclass model evaluated on the binary task has its argmax
    predictions collapsed (anything non-normal counts as adventitious).
    """
    if not dataset:
        raise DataError("empty evaluation set")
    labels = task_labels(dataset, task)
    x_all = _stack_inputs(dataset)
    preds = np.empty(len(dataset), dtype=np.int64)
    for start in range(0, len(dataset), batch_size):
        logits = model.forward(Tensor(x_all[start : start + batch_size]), training=False)
        preds[start : start + logits.shape[0]] = logits.data.argmax(axis=1)
    if task == "binary" and model.cfg.n_classes > 2:
        preds = collapse_to_binary(preds)
    n_classes = 2 if task == "binary" else model.cfg.n_classes
    if labels.max() >= n_classes:
        raise ConfigError(
            f"label {labels.max()} out of range for {n_classes}-class evaluation"
        )
    conf = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(conf, (labels, preds), 1)
    return MetricReport.from_confusion(conf)


# -- age-specific models ---------------------------------------------------------------


@dataclass
class AgeSpecificResult:
    child: TrainResult
    adult: TrainResult
    child_report: MetricReport
    adult_report: MetricReport
    combined: MetricReport
    threshold: float


def split_by_age(dataset: list[Spectrogram], threshold: float):
    """(child, adult) strata; records without a known age are dropped."""
    child, adult = [], []
    for s in dataset:
        age = s.age_years
        if age is None or (isinstance(age, float) and np.isnan(age)):
            continue
        (child if age < threshold else adult).append(s)
    return child, adult


def combine_reports(child: MetricReport, adult: MetricReport) -> MetricReport:
    """Unweighted average of the two strata's Se/Sp.

    AS of the combined report equals the mean of the strata's AS; HS
    and TS are recomputed from the averaged rates so the metric
    identities keep holding.
    """
    se = (child.se + adult.se) / 2.0
    sp = (child.sp + adult.sp) / 2.0
    conf = child.confusion + adult.confusion
    return MetricReport.from_rates(se, sp, confusion=conf, n_eval=child.n_eval + adult.n_eval)


def train_age_specific(
    dataset: list[Spectrogram],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    mask: FrequencyMask | None = None,
) -> AgeSpecificResult:
    """Train one model per age stratum and report the averaged metrics.

    Uses ``train_cfg.age_batch_size`` (half the pooled default, since
    each stratum sees fewer records). Reported metrics here are on each
    stratum's own training data; use evaluate_age_specific for a
    held-out split.
    """
    threshold = train_cfg.age_split
    child_data, adult_data = split_by_age(dataset, threshold)
    if not child_data or not adult_data:
        raise DataError(
            f"empty {'child' if not child_data else 'adult'} stratum at "
            f"threshold {threshold}; choose a different age_split"
        )
    results = []
    reports = []
    for tag, data in (("child", child_data), ("adult", adult_data)):
        cfg = replace(
            train_cfg,
            batch_size=train_cfg.age_batch_size,
            seed=int(rng_for(train_cfg.seed, "age", tag).integers(2**31)),
        )
        res = train(data, model_cfg, cfg, mask=mask)
        results.append(res)
        eval_data = [apply_mask(s, mask) for s in data] if mask is not None else data
        reports.append(evaluate(res.model, eval_data, train_cfg.task))
    combined = combine_reports(reports[0], reports[1])
    return AgeSpecificResult(
        child=results[0],
        adult=results[1],
        child_report=reports[0],
        adult_report=reports[1],
        combined=combined,
        threshold=threshold,
    )


def evaluate_age_specific(
    result: AgeSpecificResult,
    dataset: list[Spectrogram],
    task: str,
    mask: FrequencyMask | None = None,
) -> tuple[MetricReport, MetricReport, MetricReport]:
    """Evaluate both stratum models on a (held-out) dataset."""
    child_data, adult_data = split_by_age(dataset, result.threshold)
    if not child_data or not adult_data:
        raise DataError(
            f"evaluation stratum empty at threshold {result.threshold}"
        )
    if mask is not None:
        child_data = [apply_mask(s, mask) for s in child_data]
        adult_data = [apply_mask(s, mask) for s in adult_data]
    child_rep = evaluate(result.child.model, child_data, task)
    adult_rep = evaluate(result.adult.model, adult_data, task)
    return child_rep, adult_rep, combine_reports(child_rep, adult_rep)
