"""Optimizer, schedule, re-indexing, training steps, the synthetic task and distillation."""

import logging
from dataclasses import replace

import numpy as np
import pytest

from vod.errors import InvalidArgument
from vod.gradients import finite_difference
from vod.mcqa import McqaInstance, exact_mcqa_rvb
from vod.retrieval import softmax_on_support
from vod.scoring import LINEAR, Corpus, FeatureSpace, ScoreModel, beta_correction, tokenize
from vod.training import (
    AdamHyper,
    AdamState,
    SyntheticConfig,
    TrainConfig,
    alpha_schedule,
    generate_task,
    init_models,
    optimizer_step,
    reindex,
    run_training,
    train_step,
)
from vod.training.distill import (
    build_targets,
    distillation_loss_and_grad,
    recall_at_1,
    run_distillation,
)

SMALL = SyntheticConfig(n_docs=40, n_train=24, n_eval=12, n_attributes=10, n_answers=12, n_filler=8, seed=3)


@pytest.fixture(scope="module")
def task():
    return generate_task(SMALL)


@pytest.fixture(scope="module")
def space(task):
    return FeatureSpace(task.corpus, n_indicators=8)


def small_config(**kw):
    base = dict(rounds=2, steps_per_round=4, K=3, M=4, P=6, C_eval=2, batch_size=2, n_indicators=8, lr=0.1, seed=1)
    base.update(kw)
    return TrainConfig(**base)


class TestOptimizer:
    def test_zero_gradient(self):
        p = np.array([1.0, -2.0])
        new, state = optimizer_step(p, np.zeros(2), AdamState.zeros(2))
        np.testing.assert_array_equal(new, p)
        assert state.step == 1

    def test_two_step_hand_trace(self):
        hyper = AdamHyper(lr=0.01)
        p0 = np.array([1.0, -2.0])
        g1, g2 = np.array([0.5, -0.1]), np.array([0.2, 0.3])
        p1, s1 = optimizer_step(p0, g1, AdamState.zeros(2), hyper)
        p2, _ = optimizer_step(p1, g2, s1, hyper)
        # step 1: bias-corrected moments are g and g^2
        exp1 = [1.0 - 0.01 * 0.5 / (0.5 + 1e-8), -2.0 + 0.01 * 0.1 / (0.1 + 1e-8)]
        np.testing.assert_allclose(p1, exp1, rtol=0, atol=1e-15)
        m = [0.9 * 0.05 + 0.1 * 0.2, 0.9 * -0.01 + 0.1 * 0.3]
        v = [0.999 * 0.00025 + 0.001 * 0.04, 0.999 * 0.00001 + 0.001 * 0.09]
        exp2 = [p1[i] - 0.01 * (m[i] / 0.19) / ((v[i] / (1 - 0.999**2)) ** 0.5 + 1e-8) for i in range(2)]
        np.testing.assert_allclose(p2, exp2, rtol=0, atol=1e-14)

    def test_weight_decay_is_decoupled(self):
        new, _ = optimizer_step(np.array([2.0]), np.zeros(1), AdamState.zeros(1), AdamHyper(lr=0.1, weight_decay=0.5))
        assert new[0] == pytest.approx(2.0 - 0.1 * 0.5 * 2.0)

    def test_non_finite_gradient(self):
        state = AdamState.zeros(1)
        with pytest.raises(InvalidArgument):
            optimizer_step(np.zeros(1), np.array([np.inf]), state)
        assert state.step == 0


class TestSchedule:
    def test_linear(self):
        assert alpha_schedule(0, 10) == 1.0
        assert alpha_schedule(5, 10) == 0.5
        assert alpha_schedule(10, 10) == 0.0
        assert alpha_schedule(37, 10) == 0.0

    def test_constant(self):
        assert alpha_schedule(3, 10, "constant", 0.25) == 0.25

    def test_invalid(self):
        with pytest.raises(InvalidArgument):
            alpha_schedule(0, 10, "cosine")
        with pytest.raises(InvalidArgument):
            alpha_schedule(-1, 10)


class TestSyntheticTask:
    def test_sizes(self, task):
        assert len(task.corpus) == SMALL.n_docs
        assert len(task.train) == SMALL.n_train and len(task.eval) == SMALL.n_eval

    def test_evidence_is_unique(self, task):
        for inst in task.train + task.eval:
            attrs = {t for t in inst.question if t.startswith("attr")}
            answer = inst.options[inst.correct_index][0]
            hits = [d for d in range(len(task.corpus))
                    if attrs <= set(task.corpus.tokens(d)) and answer in task.corpus.tokens(d)]
            assert hits == [inst.evidence_doc]

    def test_options_distinct(self, task):
        for inst in task.train:
            assert len(set(inst.options)) == inst.n_options == SMALL.n_options

    def test_deterministic(self):
        a, b = generate_task(SMALL), generate_task(SMALL)
        assert a.corpus == b.corpus and a.train == b.train


class TestReindex:
    def test_first_round_scores(self, task, space):
        cfg = small_config(P=len(task.corpus))
        inst = task.train[0]
        cache = reindex(space, [inst], None, cfg)
        for opt, q in zip(inst.options, inst.option_queries):
            prop = cache.get(q).proposal
            beta = beta_correction(len(inst.question), len(opt))
            expected = (space.bm25_all(inst.question) + beta * space.bm25_all(opt)) / cfg.tau
            np.testing.assert_array_equal(prop.scores, expected[prop.support])
            assert sorted(prop.support.tolist()) == list(range(len(task.corpus)))

    def test_zero_checkpoint_matches_first_round(self, task, space):
        cfg = small_config()
        a = reindex(space, task.train[:3], None, cfg)
        b = reindex(space, task.train[:3], ScoreModel.zeros(space, LINEAR), cfg)
        for q, entry in a.entries.items():
            np.testing.assert_array_equal(entry.proposal.support, b.get(q).proposal.support)
            np.testing.assert_array_equal(entry.proposal.scores, b.get(q).proposal.scores)

    def test_p_clamped(self, task, space, caplog):
        cfg = small_config(P=10_000)
        with caplog.at_level(logging.INFO, logger="vod"):
            cache = reindex(space, task.train[:1], None, cfg)
        assert any("exceeds the corpus size" in r.message for r in caplog.records)
        assert len(next(iter(cache.entries.values())).proposal) == len(task.corpus)

    def test_cache_is_read_only(self, task, space):
        cache = reindex(space, task.train[:1], None, small_config())
        entry = next(iter(cache.entries.values()))
        with pytest.raises(ValueError):
            entry.proposal.scores[0] = 1.0
        with pytest.raises(ValueError):
            entry.features[0, 0] = 1.0

    def test_uncached_query(self, task, space):
        cache = reindex(space, task.train[:1], None, small_config())
        with pytest.raises(InvalidArgument):
            cache.get(("nothing",))


class TestTrainStep:
    def test_zero_gradient_keeps_parameters(self):
        corpus = Corpus.from_tokens([["a", "b"], ["c"], ["d", "e"]])
        sp = FeatureSpace(corpus, n_indicators=2)
        inst = McqaInstance(("x",), (("y",), ("z",)), 0)
        cfg = TrainConfig(K=2, M=2, P=3, n_indicators=2)
        models = init_models(sp, cfg)
        cache = reindex(sp, [inst], None, cfg)
        new, rec = train_step([inst], cache, models, 1.0, cfg, sp, 0)
        np.testing.assert_array_equal(new.reader.params, models.reader.params)
        np.testing.assert_array_equal(new.retriever.params, models.retriever.params)
        assert rec.objective == pytest.approx(np.log(0.5))

    def test_duplicate_batch_equals_single(self, task, space):
        cfg = small_config()
        cache = reindex(space, task.train[:1], None, cfg)
        models = init_models(space, cfg)
        models.reader.params = np.random.default_rng(0).normal(0, 0.3, models.reader.params.size)
        inst = task.train[0]
        # the same seed stream for both copies: duplicate the instance's sub-seed
        one, _ = train_step([inst], cache, models, 0.5, replace(cfg, K=cfg.P), space, 7)
        two, _ = train_step([inst, inst], cache, models, 0.5, replace(cfg, K=cfg.P), space, 7)
        np.testing.assert_allclose(one.reader.params, two.reader.params, atol=1e-14)
        np.testing.assert_allclose(one.retriever.params, two.retriever.params, atol=1e-14)

    def test_exhaustive_step_follows_exact_gradient(self, task, space):
        cfg = small_config(K=3, P=3, M=4, lr=1e-3)
        inst = task.train[1]
        cache = reindex(space, [inst], None, cfg)
        models = init_models(space, cfg)
        rng = np.random.default_rng(1)
        models.reader.params = rng.normal(0, 0.3, models.reader.params.size)
        models.retriever.params = rng.normal(0, 0.3, models.retriever.params.size)
        new, _ = train_step([inst], cache, models, 0.5, cfg, space, 0)
        proposals = [cache.get(q).proposal for q in inst.option_queries]

        def objective(which):
            def f(t):
                rd, rt = models.reader.copy(), models.retriever.copy()
                (rd if which == "reader" else rt).params = t
                return exact_mcqa_rvb(0.5, proposals, rd, rt, inst, space)
            return f

        for which, old, got in (("reader", models.reader.params, new.reader.params),
                                ("retriever", models.retriever.params, new.retriever.params)):
            g = finite_difference(objective(which), old)
            # the first adaptive step moves each coordinate by lr * g / (|g| + eps), uphill
            np.testing.assert_allclose(got - old, cfg.lr * g / (np.abs(g) + cfg.eps), atol=1e-7)

    def test_proposals_untouched_by_steps(self, task, space):
        cfg = small_config()
        cache = reindex(space, task.train[:4], None, cfg)
        before = {q: e.proposal.scores.copy() for q, e in cache.entries.items()}
        train_step(task.train[:4], cache, init_models(space, cfg), 0.5, cfg, space, 0)
        for q, e in cache.entries.items():
            np.testing.assert_array_equal(e.proposal.scores, before[q])


class TestRunTraining:
    def test_no_steps(self, task, space):
        cfg = small_config(rounds=1, steps_per_round=0)
        res = run_training(cfg, task.train, task.eval, space)
        assert res.trace.steps == [] and len(res.trace.evals) == 1
        init = init_models(space, cfg)
        np.testing.assert_array_equal(res.models.reader.params, init.reader.params)

    def test_deterministic(self, task, space):
        cfg = small_config()
        a = run_training(cfg, task.train, task.eval, space)
        b = run_training(cfg, task.train, task.eval, space)
        assert a.trace.to_csv() == b.trace.to_csv()
        np.testing.assert_array_equal(a.models.retriever.params, b.models.retriever.params)

    def test_trace_layout(self, task, space):
        cfg = small_config()
        res = run_training(cfg, task.train, task.eval, space)
        assert len(res.trace.steps) == cfg.rounds * cfg.steps_per_round
        assert res.trace.round_starts == [0, cfg.steps_per_round]
        assert [r for r, _ in res.trace.evals] == [0, 1, 2]
        alphas = res.trace.column("alpha")
        assert alphas[0] == 1.0 and np.all(alphas[cfg.steps_per_round:] == 0.0)
        assert res.trace.to_csv().startswith("step,alpha,objective,ess,kl,train_acc\n")

    def test_frozen_baseline_has_no_retriever(self, task, space):
        res = run_training(small_config(retriever_mode="frozen-proposal"), task.train, task.eval, space)
        assert res.models.retriever is None
        assert np.all(res.trace.column("kl") == 0.0)

    def test_option_count_checked(self, task, space):
        with pytest.raises(InvalidArgument):
            run_training(small_config(M=3), task.train, task.eval, space)

    def test_config_validation(self):
        with pytest.raises(InvalidArgument):
            TrainConfig(K=10, P=5)
        with pytest.raises(InvalidArgument):
            TrainConfig(retriever_mode="other")


class TestDistillation:
    def _teacher(self, space, query, seed=0):
        ids = np.arange(space.n_docs)
        scores = np.random.default_rng(seed).normal(size=ids.size)
        return softmax_on_support(scores, ids)

    def test_student_equals_teacher(self, space):
        q = ("attr001", "attr002")
        student = ScoreModel.random(space, LINEAR, 0, std=0.5)
        ids = np.arange(space.n_docs)
        from vod.scoring import score_docs

        teacher = softmax_on_support(score_docs(student, q, space, ids), ids)
        loss, grad = distillation_loss_and_grad(teacher, student, q, space)
        assert loss == pytest.approx(0.0, abs=1e-12)
        np.testing.assert_allclose(grad, 0.0, atol=1e-10)

    def test_gradient_matches_finite_difference(self, space):
        q = tuple(tokenize("attr003 attr005 ans002"))
        teacher = self._teacher(space, q)
        student = ScoreModel.random(space, LINEAR, 1, std=0.5)

        def loss(t):
            s = student.copy()
            s.params = t
            return distillation_loss_and_grad(teacher, s, q, space)[0]

        _, grad = distillation_loss_and_grad(teacher, student, q, space)
        fd = finite_difference(loss, student.params)
        assert np.max(np.abs(grad - fd) / np.maximum(np.abs(fd), 1e-4)) <= 1e-5
        assert loss(student.params) >= 0.0

    def test_support_mismatch(self, space):
        teacher = self._teacher(space, ("attr001",))
        with pytest.raises(InvalidArgument):
            distillation_loss_and_grad(teacher, ScoreModel.zeros(space), ("attr001",), space, support=[0, 1])

    def test_distillation_reduces_kl(self, task, space):
        cfg = small_config(P=10)
        targets = build_targets(task.train, None, cfg, space)
        student = ScoreModel.random(space, LINEAR, 2, std=0.1)
        res = run_distillation(targets, student, space, 20, AdamHyper(lr=0.05))
        assert len(res.kl_trace) == 21
        assert res.kl_trace[-1] < res.kl_trace[0]
        assert 0.0 <= recall_at_1(res.student, task.eval, space) <= 1.0
