"""Episodic first-order meta-training plus the joint baseline.

Both trainers share the learning-rate schedule, the evaluation hook, and the
early-stopping controller, and both treat parameters as an opaque object with
``.flat`` (1-D float64) and ``.with_flat(new_flat)``. The loss is injected as
a callable ``loss_and_grad(params, batch) -> (float, flat gradient)`` so the
same update arithmetic runs against the real seq2seq model and against tiny
analytic objectives in tests.

The meta step follows the classic two-level recipe: per language, copy the
current parameters, adapt them with P SGD steps on the support set, take the
query-set gradient at the adapted point, and apply the SUM of those query
gradients (first-order: no back-propagation through the inner updates). The
sum over languages is deliberate; halving languages_per_step halves the
effective step size.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from . import model as _model


class InsufficientData(Exception):
    pass


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters shared by both trainers.

    alpha is the inner (adaptation) rate, beta the peak outer rate. K is the
    per-set episode size, P the number of inner steps (0 collapses the meta
    step onto summed query gradients), I the number of training languages.
    languages_per_step caps how many languages each step samples.
    """

    alpha: float = 1e-5
    beta: float = 3e-5
    K: int = 8
    P: int = 1
    I: int = 14
    languages_per_step: int | None = None
    total_steps: int = 30000
    warmup_steps: int = 1500
    eval_interval: int = 500
    patience_steps: int = 7500
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("learning rates must be positive")
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if self.P < 0:
            raise ValueError("P must be non-negative")
        if self.I < 1:
            raise ValueError("I must be at least 1")
        if self.languages_per_step is not None and not (
                1 <= self.languages_per_step <= self.I):
            raise ValueError("languages_per_step must lie in [1, I]")
        if self.total_steps < 1:
            raise ValueError("total_steps must be at least 1")
        if not 0 <= self.warmup_steps <= self.total_steps:
            raise ValueError("warmup_steps must lie in [0, total_steps]")
        if self.eval_interval < 1:
            raise ValueError("eval_interval must be at least 1")
        if self.patience_steps < 0:
            raise ValueError("patience_steps must be non-negative")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")

    @property
    def batch_size(self) -> int:
        """Examples consumed per step: N = 2 K min(I, languages_per_step)."""
        cap = self.I if self.languages_per_step is None \
            else self.languages_per_step
        return 2 * self.K * min(self.I, cap)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        data = json.loads(text)
        if not isinstance(data, dict):
            raise ValueError("config must be a JSON object")
        known = {f for f in cls.__dataclass_fields__}
        extra = set(data) - known
        if extra:
            raise ValueError("unknown config fields: %s"
                             % ", ".join(sorted(extra)))
        return cls(**data)


@dataclass(frozen=True)
class LanguageDataset:
    language: str
    examples: tuple

    def __post_init__(self):
        object.__setattr__(self, "examples", tuple(self.examples))
        if not self.examples:
            raise ValueError("dataset for %r is empty" % self.language)
        for ex in self.examples:
            lang = getattr(ex, "language", self.language)
            if lang != self.language:
                raise ValueError("example language %r inside dataset %r"
                                 % (lang, self.language))


@dataclass(frozen=True)
class Episode:
    language: str
    support: tuple
    query: tuple


def _rng(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(key))
    return np.random.default_rng(ss)


def sample_episode(dataset: LanguageDataset, K: int,
                   rng: np.random.Generator) -> Episode:
    """Draw 2K distinct examples; the first K form the support set."""
    n = len(dataset.examples)
    if n < 2 * K:
        raise InsufficientData("%s has %d examples, need %d"
                               % (dataset.language, n, 2 * K))
    idx = rng.choice(n, size=2 * K, replace=False)
    picked = [dataset.examples[i] for i in idx]
    return Episode(dataset.language, tuple(picked[:K]), tuple(picked[K:]))


def inner_adapt(theta, support, alpha: float, P: int,
                loss_and_grad=_model.loss_and_grad):
    """P full-support-batch SGD steps at rate alpha, on a copy of theta."""
    phi = theta.with_flat(theta.flat.copy())
    for _ in range(P):
        _, grad = loss_and_grad(phi, list(support))
        phi = phi.with_flat(phi.flat - alpha * grad)
    return phi


def _outer_step_detailed(theta, episodes, config: TrainConfig, rate: float,
                         loss_and_grad=_model.loss_and_grad):
    """One meta update. Returns (new theta, per-episode query losses)."""
    if not episodes:
        raise ValueError("outer step needs at least one episode")

    def one(episode):
        phi = inner_adapt(theta, episode.support, config.alpha, config.P,
                          loss_and_grad)
        return loss_and_grad(phi, list(episode.query))

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(one, episodes))
    else:
        results = [one(ep) for ep in episodes]

    total = results[0][1].copy()
    for _, grad in results[1:]:
        total += grad
    losses = [(ep.language, float(loss))
              for ep, (loss, _) in zip(episodes, results)]
    return theta.with_flat(theta.flat - rate * total), losses


def outer_step(theta, episodes, config: TrainConfig, rate: float,
               loss_and_grad=_model.loss_and_grad):
    """Adapt per episode, sum query gradients at the adapted points, and
    apply one SGD update at the given rate."""
    new_theta, _ = _outer_step_detailed(theta, episodes, config, rate,
                                        loss_and_grad)
    return new_theta


def scheduled_rate(step: int, peak: float, warmup: int, total: int) -> float:
    """Linear 0 -> peak over [0, warmup], then peak -> 0 over
    [warmup, total]."""
    if not 0 <= step <= total:
        raise ValueError("step %d outside [0, %d]" % (step, total))
    if step <= warmup:
        return peak * (step / warmup) if warmup > 0 else peak
    return peak * ((total - step) / (total - warmup))


def _run_steps(theta0, config: TrainConfig, dev_eval, step_fn):
    """Shared schedule / evaluation / early-stopping driver.

    step_fn(theta, step, rate) -> (theta, record fields). Records one log
    entry per step; keeps the best parameters by dev score; stops once the
    best score is older than patience_steps at an evaluation point.
    """
    theta = theta0.with_flat(theta0.flat.copy())
    log = []
    best_theta, best_score, best_step = None, float("-inf"), 0
    for step in range(1, config.total_steps + 1):
        rate = scheduled_rate(step, config.beta, config.warmup_steps,
                              config.total_steps)
        theta, fields = step_fn(theta, step, rate)
        record = {"step": step, "rate": rate}
        record.update(fields)
        stop = False
        if dev_eval is not None and step % config.eval_interval == 0:
            score = float(dev_eval(theta))
            record["dev_score"] = score
            if score > best_score:
                best_theta = theta.with_flat(theta.flat.copy())
                best_score, best_step = score, step
            elif step - best_step > config.patience_steps:
                stop = True
        log.append(record)
        if stop:
            break
    return (best_theta if best_theta is not None else theta), log


def _sorted_datasets(datasets):
    datasets = sorted(datasets, key=lambda d: d.language)
    if len({d.language for d in datasets}) != len(datasets):
        raise ValueError("duplicate language codes across datasets")
    return datasets


def maml_train(theta0, datasets, config: TrainConfig, dev_eval=None,
               loss_and_grad=_model.loss_and_grad):
    """Meta-train over per-language episodes.

    Returns (best params, log). Episode draws are keyed by (seed, step,
    language index), so the result is bit-reproducible regardless of worker
    count or scheduling. Gradient summation runs in language order.
    """
    datasets = _sorted_datasets(datasets)
    if len(datasets) != config.I:
        raise ValueError("config says I=%d but %d datasets were given"
                         % (config.I, len(datasets)))
    for d in datasets:
        if len(d.examples) < 2 * config.K:
            raise InsufficientData("%s has %d examples, need %d"
                                   % (d.language, len(d.examples),
                                      2 * config.K))
    cap = config.I if config.languages_per_step is None \
        else config.languages_per_step

    def step_fn(theta, step, rate):
        if cap < config.I:
            chosen = sorted(_rng(config.seed, step).choice(
                config.I, size=cap, replace=False).tolist())
        else:
            chosen = range(config.I)
        episodes = [sample_episode(datasets[i], config.K,
                                   _rng(config.seed, step, i))
                    for i in chosen]
        theta, losses = _outer_step_detailed(theta, episodes, config, rate,
                                             loss_and_grad)
        return theta, {"losses": dict(losses)}

    return _run_steps(theta0, config, dev_eval, step_fn)


def joint_train(theta0, datasets, config: TrainConfig, dev_eval=None,
                loss_and_grad=_model.loss_and_grad):
    """Plain SGD over uniform batches from the concatenated datasets.

    The batch size matches the meta trainer's per-step example consumption
    (N = 2 K min(I, languages_per_step)), drawn without replacement and
    without language stratification.
    """
    datasets = _sorted_datasets(datasets)
    pool = [ex for d in datasets for ex in d.examples]
    n = config.batch_size
    if len(pool) < n:
        raise InsufficientData("concatenation has %d examples, need %d"
                               % (len(pool), n))

    def step_fn(theta, step, rate):
        idx = _rng(config.seed, step).choice(len(pool), size=n,
                                             replace=False)
        loss, grad = loss_and_grad(theta, [pool[i] for i in idx])
        return theta.with_flat(theta.flat - rate * grad), \
            {"loss": float(loss)}

    return _run_steps(theta0, config, dev_eval, step_fn)
