"""Meta-trainer and joint baseline: update arithmetic, sampling, stopping."""
import numpy as np
import pytest

from metamr import model as M
from metamr.training import (
    Episode,
    InsufficientData,
    LanguageDataset,
    TrainConfig,
    inner_adapt,
    joint_train,
    maml_train,
    outer_step,
    sample_episode,
    scheduled_rate,
)


class FlatParams:
    """Minimal parameter object satisfying the trainer protocol."""

    def __init__(self, flat):
        self.flat = np.asarray(flat, dtype=np.float64)

    def with_flat(self, flat):
        return FlatParams(flat)


def quadratic(params, batch):
    """Mean over the batch of 0.5 ||theta - x||^2; gradient theta - mean x."""
    xs = np.stack([np.asarray(b, dtype=np.float64) for b in batch])
    diffs = params.flat[None, :] - xs
    loss = 0.5 * float((diffs * diffs).sum(axis=1).mean())
    return loss, params.flat - xs.mean(axis=0)


def _vec_dataset(language, rng, count=8, dim=3):
    return LanguageDataset(language, tuple(
        tuple(float(v) for v in rng.normal(size=dim)) for _ in range(count)))


# -- config --------------------------------------------------------------

def test_default_batch_size():
    assert TrainConfig().batch_size == 2 * 8 * 14 == 224


def test_batch_size_respects_language_cap():
    config = TrainConfig(K=4, I=10, languages_per_step=3)
    assert config.batch_size == 2 * 4 * 3


@pytest.mark.parametrize("kwargs", [
    {"alpha": 0.0},
    {"beta": -1.0},
    {"K": 0},
    {"P": -1},
    {"I": 0},
    {"languages_per_step": 0},
    {"I": 4, "languages_per_step": 5},
    {"total_steps": 0},
    {"warmup_steps": -1},
    {"total_steps": 10, "warmup_steps": 11},
    {"eval_interval": 0},
    {"patience_steps": -1},
    {"workers": 0},
])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        TrainConfig(**kwargs)


def test_config_json_roundtrip():
    config = TrainConfig(alpha=0.3, beta=0.1, K=2, P=2, I=3,
                         languages_per_step=2, total_steps=40,
                         warmup_steps=4, eval_interval=10,
                         patience_steps=20, seed=7, workers=2)
    assert TrainConfig.from_json(config.to_json()) == config


def test_config_json_rejects_unknown_fields():
    with pytest.raises(ValueError):
        TrainConfig.from_json('{"K": 2, "momentum": 0.9}')
    with pytest.raises(ValueError):
        TrainConfig.from_json('[1, 2]')


# -- datasets and episodes -----------------------------------------------

def test_language_dataset_validation():
    with pytest.raises(ValueError):
        LanguageDataset("de", ())
    stray = M.Example("fr", (1, 2), (1, 2))
    with pytest.raises(ValueError):
        LanguageDataset("de", (stray,))
    # Examples without a language attribute are accepted as-is.
    assert len(LanguageDataset("de", ((1.0, 2.0),)).examples) == 1


def test_sample_episode_split_and_distinctness():
    dataset = LanguageDataset("de", tuple((float(i),) for i in range(12)))
    episode = sample_episode(dataset, K=4, rng=np.random.default_rng(0))
    assert episode.language == "de"
    assert len(episode.support) == 4
    assert len(episode.query) == 4
    drawn = episode.support + episode.query
    assert len(set(drawn)) == 8  # without replacement


def test_sample_episode_exhausts_exact_pool():
    dataset = LanguageDataset("de", tuple((float(i),) for i in range(8)))
    episode = sample_episode(dataset, K=4, rng=np.random.default_rng(1))
    assert sorted(episode.support + episode.query) == sorted(dataset.examples)


def test_sample_episode_needs_two_k():
    dataset = LanguageDataset("de", tuple((float(i),) for i in range(7)))
    with pytest.raises(InsufficientData):
        sample_episode(dataset, K=4, rng=np.random.default_rng(0))


# -- schedule ------------------------------------------------------------

def test_scheduled_rate_shape():
    peak, warmup, total = 3e-5, 1500, 30000
    assert scheduled_rate(0, peak, warmup, total) == 0.0
    assert scheduled_rate(warmup, peak, warmup, total) == peak
    assert scheduled_rate(total, peak, warmup, total) == 0.0
    # Linear on both segments.
    for step in (1, 377, 750, 1499):
        expect = peak * step / warmup
        assert abs(scheduled_rate(step, peak, warmup, total) - expect) < 1e-12
    for step in (1501, 10000, 15750, 29999):
        expect = peak * (total - step) / (total - warmup)
        assert abs(scheduled_rate(step, peak, warmup, total) - expect) < 1e-12


def test_scheduled_rate_zero_warmup_and_bounds():
    assert scheduled_rate(0, 0.5, 0, 10) == 0.5
    with pytest.raises(ValueError):
        scheduled_rate(-1, 0.5, 0, 10)
    with pytest.raises(ValueError):
        scheduled_rate(11, 0.5, 0, 10)


# -- inner loop ----------------------------------------------------------

def test_inner_adapt_zero_steps_copies():
    theta = FlatParams([1.0, -2.0])
    phi = inner_adapt(theta, [(0.0, 0.0)], alpha=0.5, P=0,
                      loss_and_grad=quadratic)
    assert np.array_equal(phi.flat, theta.flat)
    assert phi.flat is not theta.flat


def test_inner_adapt_follows_closed_form():
    rng = np.random.default_rng(2)
    theta = FlatParams(rng.normal(size=4))
    support = [tuple(rng.normal(size=4)) for _ in range(3)]
    s_mean = np.mean(np.array(support), axis=0)
    alpha, P = 0.3, 3
    phi = inner_adapt(theta, support, alpha, P, loss_and_grad=quadratic)
    shrink = (1 - alpha) ** P
    expect = shrink * theta.flat + (1 - shrink) * s_mean
    assert np.max(np.abs(phi.flat - expect)) < 1e-12
    # theta itself is untouched
    assert np.array_equal(theta.flat, FlatParams(theta.flat).flat)


# -- outer loop against the analytic solution ----------------------------

def test_outer_step_matches_first_order_closed_form():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(100):
        dim = int(rng.integers(1, 4))
        alpha = float(rng.uniform(0.05, 0.9))
        beta = float(rng.uniform(0.01, 0.5))
        P = int(rng.integers(0, 4))
        I = int(rng.integers(1, 5))
        K = int(rng.integers(1, 4))
        theta = FlatParams(rng.normal(size=dim))
        config = TrainConfig(alpha=alpha, beta=beta, K=K, P=P, I=I,
                             total_steps=10, warmup_steps=2)
        episodes = []
        expect = theta.flat.copy()
        for i in range(I):
            support = [tuple(rng.normal(size=dim)) for _ in range(K)]
            query = [tuple(rng.normal(size=dim)) for _ in range(K)]
            episodes.append(Episode("l%d" % i, tuple(support), tuple(query)))
            shrink = (1 - alpha) ** P
            phi = (shrink * theta.flat
                   + (1 - shrink) * np.mean(np.array(support), axis=0))
            expect -= beta * (phi - np.mean(np.array(query), axis=0))
        out = outer_step(theta, episodes, config, rate=beta,
                         loss_and_grad=quadratic)
        worst = max(worst, float(np.max(np.abs(out.flat - expect))))
    assert worst < 1e-10


def test_outer_step_sums_over_languages():
    # Two episodes with identical content move theta exactly twice as far
    # as one: the outer update sums query gradients, it does not average.
    rng = np.random.default_rng(4)
    theta = FlatParams(rng.normal(size=3))
    support = tuple(tuple(rng.normal(size=3)) for _ in range(2))
    query = tuple(tuple(rng.normal(size=3)) for _ in range(2))
    config = TrainConfig(alpha=0.2, beta=0.1, K=2, P=1, I=2,
                         total_steps=10, warmup_steps=2)
    two = outer_step(theta, [Episode("aa", support, query),
                             Episode("bb", support, query)],
                     config, rate=0.1, loss_and_grad=quadratic)
    phi = inner_adapt(theta, list(support), 0.2, 1, loss_and_grad=quadratic)
    _, grad = quadratic(phi, list(query))
    assert np.array_equal(two.flat, theta.flat - 0.1 * (grad + grad))


def test_outer_step_rejects_empty():
    config = TrainConfig(K=1, I=1, total_steps=2, warmup_steps=1)
    with pytest.raises(ValueError):
        outer_step(FlatParams([0.0]), [], config, rate=0.1,
                   loss_and_grad=quadratic)


def test_outer_step_worker_count_is_bitwise_irrelevant():
    rng = np.random.default_rng(5)
    theta = FlatParams(rng.normal(size=4))
    episodes = [
        Episode("l%d" % i,
                tuple(tuple(rng.normal(size=4)) for _ in range(2)),
                tuple(tuple(rng.normal(size=4)) for _ in range(2)))
        for i in range(3)
    ]
    serial = TrainConfig(alpha=0.3, beta=0.2, K=2, P=2, I=3,
                         total_steps=10, warmup_steps=2, workers=1)
    threaded = TrainConfig(alpha=0.3, beta=0.2, K=2, P=2, I=3,
                           total_steps=10, warmup_steps=2, workers=3)
    a = outer_step(theta, episodes, serial, rate=0.2,
                   loss_and_grad=quadratic)
    b = outer_step(theta, episodes, threaded, rate=0.2,
                   loss_and_grad=quadratic)
    assert np.array_equal(a.flat, b.flat)


# -- maml_train ----------------------------------------------------------

def test_maml_train_requires_matching_language_count():
    rng = np.random.default_rng(6)
    datasets = [_vec_dataset("aa", rng), _vec_dataset("bb", rng)]
    config = TrainConfig(K=2, I=3, total_steps=2, warmup_steps=1)
    with pytest.raises(ValueError):
        maml_train(FlatParams([0.0, 0.0, 0.0]), datasets, config,
                   loss_and_grad=quadratic)


def test_maml_train_rejects_duplicate_languages():
    rng = np.random.default_rng(7)
    datasets = [_vec_dataset("aa", rng), _vec_dataset("aa", rng)]
    config = TrainConfig(K=2, I=2, total_steps=2, warmup_steps=1)
    with pytest.raises(ValueError):
        maml_train(FlatParams([0.0, 0.0, 0.0]), datasets, config,
                   loss_and_grad=quadratic)


def test_maml_train_requires_two_k_examples_everywhere():
    rng = np.random.default_rng(8)
    datasets = [_vec_dataset("aa", rng, count=8),
                _vec_dataset("bb", rng, count=3)]
    config = TrainConfig(K=2, I=2, total_steps=2, warmup_steps=1)
    with pytest.raises(InsufficientData):
        maml_train(FlatParams([0.0, 0.0, 0.0]), datasets, config,
                   loss_and_grad=quadratic)


def test_maml_train_episode_draws_are_reconstructible():
    # One step: the trainer's update must equal the update rebuilt from the
    # documented sampling contract (seed, step, sorted-language index).
    rng = np.random.default_rng(9)
    datasets = sorted([_vec_dataset(code, rng, count=10, dim=3)
                       for code in ("cc", "aa", "bb")],
                      key=lambda d: d.language)
    K, beta = 2, 0.25
    config = TrainConfig(alpha=0.4, beta=beta, K=K, P=1, I=3,
                         total_steps=1, warmup_steps=1, seed=21)
    theta0 = FlatParams(rng.normal(size=3))
    trained, log = maml_train(theta0, datasets, config,
                              loss_and_grad=quadratic)

    expect = theta0.flat.copy()
    total = np.zeros(3)
    for i, dataset in enumerate(datasets):
        draw = np.random.default_rng(
            np.random.SeedSequence(entropy=21, spawn_key=(1, i)))
        idx = draw.choice(len(dataset.examples), size=2 * K, replace=False)
        picked = [dataset.examples[j] for j in idx]
        phi = inner_adapt(FlatParams(expect), picked[:K], 0.4, 1,
                          loss_and_grad=quadratic)
        _, grad = quadratic(phi, picked[K:])
        total = total + grad if i else grad.copy()
    assert np.array_equal(trained.flat, theta0.flat - beta * total)
    assert len(log) == 1
    assert set(log[0]["losses"]) == {"aa", "bb", "cc"}
    assert log[0]["rate"] == beta


def test_maml_train_language_subsample_is_seeded():
    rng = np.random.default_rng(10)
    datasets = [_vec_dataset(code, rng, count=10)
                for code in ("aa", "bb", "cc")]
    config = TrainConfig(alpha=0.3, beta=0.1, K=2, P=0, I=3,
                         languages_per_step=2, total_steps=4,
                         warmup_steps=1, seed=13)
    calls = []

    def spy(params, batch):
        calls.append(len(batch))
        return quadratic(params, batch)

    first, log = maml_train(FlatParams(np.zeros(3)), datasets, config,
                            loss_and_grad=spy)
    again, _ = maml_train(FlatParams(np.zeros(3)), datasets, config,
                          loss_and_grad=quadratic)
    assert np.array_equal(first.flat, again.flat)
    # P=0: only the query batches are evaluated, two languages per step.
    assert calls == [2] * (2 * 4)
    assert all(len(r["losses"]) == 2 for r in log)


def test_maml_step_consumes_batch_size_examples():
    rng = np.random.default_rng(11)
    datasets = [_vec_dataset("l%02d" % i, rng, count=20, dim=2)
                for i in range(14)]
    config = TrainConfig(alpha=0.1, beta=0.1, K=8, P=1, I=14,
                         total_steps=1, warmup_steps=1)
    seen_rows = []

    def spy(params, batch):
        seen_rows.append(len(batch))
        return quadratic(params, batch)

    maml_train(FlatParams(np.zeros(2)), datasets, config, loss_and_grad=spy)
    # P=1: each language contributes one support batch and one query batch.
    assert sum(seen_rows) == config.batch_size == 224


# -- joint_train ---------------------------------------------------------

def test_joint_train_batches_match_config():
    rng = np.random.default_rng(12)
    datasets = [_vec_dataset(code, rng, count=12) for code in ("aa", "bb")]
    config = TrainConfig(alpha=0.1, beta=0.2, K=3, I=2, total_steps=3,
                         warmup_steps=1, seed=5)
    batches = []

    def spy(params, batch):
        batches.append(list(batch))
        return quadratic(params, batch)

    trained, log = joint_train(FlatParams(np.zeros(3)), datasets, config,
                               loss_and_grad=spy)
    assert all(len(b) == config.batch_size == 12 for b in batches)
    for batch in batches:
        assert len(set(batch)) == len(batch)  # without replacement
    assert [r["step"] for r in log] == [1, 2, 3]
    assert all("loss" in r for r in log)
    again, _ = joint_train(FlatParams(np.zeros(3)), datasets, config,
                           loss_and_grad=quadratic)
    assert np.array_equal(trained.flat, again.flat)


def test_joint_train_requires_enough_pooled_examples():
    rng = np.random.default_rng(13)
    datasets = [_vec_dataset("aa", rng, count=4)]
    config = TrainConfig(K=4, I=1, total_steps=2, warmup_steps=1)
    with pytest.raises(InsufficientData):
        joint_train(FlatParams(np.zeros(3)), datasets, config,
                    loss_and_grad=quadratic)


# -- the P=0 collapse ----------------------------------------------------

def test_p0_maml_step_equals_joint_step_on_identical_rows():
    # With P=0 the meta step reduces to the summed query gradient at theta.
    # On a dataset whose rows are all identical, every sampled batch is the
    # same matrix, so a joint step sized to the query set must produce
    # bitwise-identical parameters at the same learning rate.
    row = (0.7, -1.3, 2.1)
    datasets = [LanguageDataset("xx", tuple([row] * 16))]
    maml_config = TrainConfig(alpha=0.5, beta=0.3, K=8, P=0, I=1,
                              total_steps=1, warmup_steps=1, seed=3)
    joint_config = TrainConfig(alpha=0.5, beta=0.3, K=4, P=0, I=1,
                               total_steps=1, warmup_steps=1, seed=3)
    theta0 = FlatParams(np.array([1.0, 2.0, 3.0]))
    via_maml, maml_log = maml_train(theta0, datasets, maml_config,
                                    loss_and_grad=quadratic)
    via_joint, joint_log = joint_train(theta0, datasets, joint_config,
                                       loss_and_grad=quadratic)
    assert maml_log[0]["rate"] == joint_log[0]["rate"] == 0.3
    assert np.array_equal(via_maml.flat, via_joint.flat)
    assert not np.array_equal(via_maml.flat, theta0.flat)


def test_p0_collapse_holds_for_the_real_model():
    src_vocab = M.Vocab.build(("a", "b"), language_codes=("xx",))
    tgt_vocab = M.Vocab.build(("A", "B"))
    src = (src_vocab.encode("<xx>"), src_vocab.encode("a"),
           src_vocab.encode("b"), M.EOS)
    tgt = (M.BOS, tgt_vocab.encode("A"), tgt_vocab.encode("B"), M.EOS)
    row = M.Example("xx", src, tgt)
    datasets = [LanguageDataset("xx", tuple([row] * 16))]
    maml_config = TrainConfig(alpha=0.5, beta=0.2, K=8, P=0, I=1,
                              total_steps=1, warmup_steps=1, seed=3)
    joint_config = TrainConfig(alpha=0.5, beta=0.2, K=4, P=0, I=1,
                               total_steps=1, warmup_steps=1, seed=3)
    theta0 = M.init_params(
        M.ModelConfig(len(src_vocab), len(tgt_vocab), 8, 10), seed=0)
    via_maml, _ = maml_train(theta0, datasets, maml_config)
    via_joint, _ = joint_train(theta0, datasets, joint_config)
    assert np.array_equal(via_maml.flat, via_joint.flat)
    assert not np.array_equal(via_maml.flat, theta0.flat)


# -- early stopping ------------------------------------------------------

def test_early_stopping_halts_after_patience():
    rng = np.random.default_rng(14)
    datasets = [_vec_dataset("aa", rng, count=12)]
    config = TrainConfig(alpha=0.1, beta=0.01, K=2, I=1, total_steps=1000,
                         warmup_steps=10, eval_interval=10,
                         patience_steps=25, seed=1)
    _, log = joint_train(FlatParams(np.zeros(3)), datasets, config,
                         dev_eval=lambda params: 0.5,
                         loss_and_grad=quadratic)
    # Best lands on the first evaluation (step 10); the first evaluation
    # point strictly beyond 10 + 25 is step 40.
    assert log[-1]["step"] == 40
    assert log[-1]["dev_score"] == 0.5


def test_early_stopping_tracks_improvement():
    rng = np.random.default_rng(15)
    datasets = [_vec_dataset("aa", rng, count=12)]
    config = TrainConfig(alpha=0.1, beta=0.01, K=2, I=1, total_steps=60,
                         warmup_steps=10, eval_interval=10,
                         patience_steps=25, seed=1)
    scores = iter([0.1, 0.2, 0.3, 0.4, 0.5, 0.6])
    best, log = joint_train(FlatParams(np.zeros(3)), datasets, config,
                            dev_eval=lambda params: next(scores),
                            loss_and_grad=quadratic)
    assert log[-1]["step"] == 60  # never stopped early
    assert [r["dev_score"] for r in log if "dev_score" in r] == [
        0.1, 0.2, 0.3, 0.4, 0.5, 0.6]


def test_best_parameters_win_over_final():
    # The returned parameters correspond to the best evaluation, not the
    # last step.
    rng = np.random.default_rng(16)
    datasets = [_vec_dataset("aa", rng, count=12)]
    config = TrainConfig(alpha=0.1, beta=0.5, K=2, I=1, total_steps=30,
                         warmup_steps=2, eval_interval=10,
                         patience_steps=100, seed=1)
    snapshots = {}

    def dev_eval(params):
        step = len(snapshots)
        snapshots[step] = params.flat.copy()
        return {0: 0.9, 1: 0.2, 2: 0.1}[step]

    best, _ = joint_train(FlatParams(np.ones(3)), datasets, config,
                          dev_eval=dev_eval, loss_and_grad=quadratic)
    assert np.array_equal(best.flat, snapshots[0])


def test_without_dev_eval_final_parameters_return():
    rng = np.random.default_rng(17)
    datasets = [_vec_dataset("aa", rng, count=12)]
    config = TrainConfig(alpha=0.1, beta=0.2, K=2, I=1, total_steps=5,
                         warmup_steps=1, seed=1)
    best, log = joint_train(FlatParams(np.zeros(3)), datasets, config,
                            loss_and_grad=quadratic)
    assert len(log) == 5
    assert not any("dev_score" in r for r in log)
