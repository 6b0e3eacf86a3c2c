"""Multiple-choice objective over products of per-option samples."""

import math
from dataclasses import replace

import numpy as np
import pytest

from vod._backend import kernels
from vod.bounds import BoundInput, vod_objective
from vod.errors import InvalidArgument, ResourceLimitError
from vod.gradients import finite_difference, vod_gradient
from vod.mcqa import (
    EvalCounter,
    McqaInstance,
    OptionRetrievalState,
    answer_values,
    exact_mcqa_marginal_log_likelihood,
    exact_mcqa_rvb,
    mc_eval,
    mcqa_vod_objective,
    mcqa_vod_step,
    option_logits,
    predict,
    write_predictions,
)
from vod.oracle import exhaustive_state, random_mcqa
from vod.retrieval import kl_divergence, softmax_on_support
from vod.scoring import DUAL, LINEAR, ScoreModel, score_docs


def rel(a, b, floor=1e-4):
    return np.max(np.abs(a - b) / np.maximum(np.abs(b), floor))


class TestInstance:
    def test_option_queries_concatenate(self):
        inst = McqaInstance(("what", "valve"), (("aortic",), ("mitral", "valve")), 1)
        assert inst.option_queries == (("what", "valve", "aortic"), ("what", "valve", "mitral", "valve"))

    def test_correct_index_range(self):
        with pytest.raises(InvalidArgument):
            McqaInstance(("q",), (("a",), ("b",)), 2)

    def test_empty_question(self):
        with pytest.raises(InvalidArgument):
            McqaInstance((), (("a",),), 0)


class TestReaderLogits:
    def test_zero_reader_is_uniform(self):
        case = random_mcqa(0, max_options=3)
        reader = ScoreModel.zeros(case.space, LINEAR)
        docs = [int(p.support[0]) for p in case.proposals]
        logits = option_logits(reader, docs, case.instance, case.space)
        np.testing.assert_array_equal(logits, 0.0)

    def test_two_option_softmax(self):
        log_s = np.zeros((2, 1))
        values = kernels.product_values(log_s, np.zeros((2, 1)), np.array([[math.log(3)], [0.0]]), np.array([1, 1]), 0.0)
        np.testing.assert_allclose(np.exp(values), [0.75, 0.25], rtol=1e-14)

    def test_wrong_document_count(self):
        case = random_mcqa(1)
        with pytest.raises(InvalidArgument):
            option_logits(case.reader, [0] * (case.instance.n_options + 1), case.instance, case.space)


class TestObjective:
    @pytest.mark.parametrize("seed", range(6))
    @pytest.mark.parametrize("alpha", [0.0, 0.5, 1.0])
    def test_exhaustive_matches_brute_force(self, seed, alpha):
        case = random_mcqa(seed, kind=(LINEAR, DUAL)[seed % 2])
        got = mcqa_vod_objective(alpha, exhaustive_state(case), case.reader, case.retriever, case.instance, case.space)
        ref = exact_mcqa_rvb(alpha, case.proposals, case.reader, case.retriever, case.instance, case.space)
        assert got.value == pytest.approx(ref, abs=1e-9)

    def test_alpha_zero_is_marginal(self):
        case = random_mcqa(7)
        got = mcqa_vod_objective(0.0, exhaustive_state(case), case.reader, case.retriever, case.instance, case.space)
        ref = exact_mcqa_marginal_log_likelihood(case.proposals, case.reader, case.retriever, case.instance, case.space)
        assert got.value == pytest.approx(ref, abs=1e-9)

    def test_single_option_reduces_to_single_latent(self):
        case = random_mcqa(8)
        inst = McqaInstance(case.instance.question, case.instance.options[:1], 0)
        prop = case.proposals[0]
        state = OptionRetrievalState.draw([prop], 2, 5)
        s = state.samples[0]
        f = score_docs(case.retriever, inst.option_queries[0], case.space, s.indices)
        lz = f - state.proposal_scores(0, s.indices)
        for a in (0.0, 0.5, 1.0):
            got = mcqa_vod_step(a, state, case.reader, case.retriever, inst, case.space)
            # a single option has reader probability one
            ref = vod_objective(BoundInput(a, s, np.zeros(len(s)), lz))
            assert got.report.value == pytest.approx(ref.value, abs=1e-12)
            _, df = _score_grads(case.retriever, inst.option_queries[0], s.indices, case.space)
            gref = vod_gradient(a, BoundInput(a, s, np.zeros(len(s)), lz), np.zeros((len(s), 1)), df)
            np.testing.assert_allclose(got.gradient.retriever_grad, gref.retriever_grad, atol=1e-12)
            np.testing.assert_allclose(got.gradient.reader_grad, 0.0, atol=1e-12)

    def test_combination_count(self):
        m, k = 4, 8
        log_s = np.full((m, k), -math.log(k))
        out = kernels.product_enumerate(log_s, np.zeros((m, k)), np.zeros((m, k)), np.full(m, k), 0, 0.5)
        assert np.asarray(out[2]).size == 4096

    def test_enumeration_cap(self):
        case = random_mcqa(14, max_docs=6, max_options=3)
        state = exhaustive_state(case)
        total = int(np.prod([len(s) for s in state.samples]))
        assert total > 1
        mcqa_vod_objective(0.0, state, case.reader, case.retriever, case.instance, case.space, cap=total)
        with pytest.raises(ResourceLimitError):
            mcqa_vod_objective(0.0, state, case.reader, case.retriever, case.instance, case.space, cap=total - 1)

    def test_counter_counts_sampled_pairs(self):
        case = random_mcqa(10)
        state = exhaustive_state(case)
        counter = EvalCounter()
        mcqa_vod_objective(0.3, state, case.reader, case.retriever, case.instance, case.space, counter=counter)
        total = sum(len(s) for s in state.samples)
        assert counter.reader == total and counter.retriever == total

    def test_frozen_retriever_has_empty_gradient(self):
        case = random_mcqa(11)
        step = mcqa_vod_step(0.5, exhaustive_state(case), case.reader, None, case.instance, case.space)
        assert step.gradient.retriever_grad.size == 0

    def test_option_mismatch(self):
        case = random_mcqa(12, max_options=3)
        inst = McqaInstance(case.instance.question, case.instance.options + (("zz",),), 0)
        with pytest.raises(InvalidArgument):
            mcqa_vod_objective(0.0, exhaustive_state(case), case.reader, case.retriever, inst, case.space)


def _score_grads(model, query, ids, space):
    from vod.scoring import score_and_grad_batch

    return score_and_grad_batch(model, query, ids, space)


class TestGradient:
    @pytest.mark.parametrize("seed", range(4))
    @pytest.mark.parametrize("alpha", [0.0, 0.5])
    def test_matches_finite_difference(self, seed, alpha):
        case = random_mcqa(seed + 20, kind=(LINEAR, DUAL)[seed % 2])
        got = mcqa_vod_step(alpha, exhaustive_state(case), case.reader, case.retriever, case.instance, case.space).gradient

        def obj(which):
            def f(t):
                rd, rt = case.reader.copy(), case.retriever.copy()
                (rd if which == "reader" else rt).params = t
                return exact_mcqa_rvb(alpha, case.proposals, rd, rt, case.instance, case.space)
            return f

        assert rel(got.reader_grad, finite_difference(obj("reader"), case.reader.params)) <= 1e-5
        assert rel(got.retriever_grad, finite_difference(obj("retriever"), case.retriever.params)) <= 1e-5

    def test_alpha_one_retriever_is_sum_of_kl_gradients(self):
        case = random_mcqa(30)
        got = mcqa_vod_step(1.0, exhaustive_state(case), case.reader, case.retriever, case.instance, case.space).gradient

        def neg_kl(t):
            rt = case.retriever.copy()
            rt.params = t
            total = 0.0
            for q, prop in zip(case.instance.option_queries, case.proposals):
                p = softmax_on_support(score_docs(rt, q, case.space, prop.support), prop.support)
                total -= kl_divergence(prop, p)
            return total

        np.testing.assert_allclose(got.retriever_grad, finite_difference(neg_kl, case.retriever.params), atol=1e-8)


class TestMcEval:
    def test_probabilities(self):
        case = random_mcqa(40)
        probs = mc_eval(case.instance, case.reader, case.retriever, case.space,
                        lambda s: OptionRetrievalState.draw(case.proposals, 2, s), 5, 0.0, 1)
        assert probs.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all((probs >= 0) & (probs <= 1))

    def test_exhaustive_is_deterministic_and_exact(self):
        case = random_mcqa(41, max_options=3)
        p_max = max(len(p) for p in case.proposals)
        factory = lambda s: OptionRetrievalState.draw(case.proposals, p_max, s)  # noqa: E731
        one = mc_eval(case.instance, case.reader, case.retriever, case.space, factory, 1, 0.0, 0)
        many = mc_eval(case.instance, case.reader, case.retriever, case.space, factory, 7, 0.0, 3)
        np.testing.assert_allclose(one, many, atol=1e-14)
        mll = [exact_mcqa_marginal_log_likelihood(case.proposals, case.reader, case.retriever,
                                                  replace(case.instance, correct_index=j), case.space)
               for j in range(case.instance.n_options)]
        e = np.exp(np.array(mll) - max(mll))
        np.testing.assert_allclose(one, e / e.sum(), atol=1e-9)

    def test_answer_values_match_brute_force(self):
        case = random_mcqa(42)
        vals = answer_values(0.5, exhaustive_state(case), case.reader, case.retriever, case.instance, case.space)
        for j in range(case.instance.n_options):
            ref = exact_mcqa_rvb(0.5, case.proposals, case.reader, case.retriever,
                                 replace(case.instance, correct_index=j), case.space)
            assert vals[j] == pytest.approx(ref, abs=1e-9)

    def test_bad_c(self):
        case = random_mcqa(43)
        with pytest.raises(InvalidArgument):
            mc_eval(case.instance, case.reader, case.retriever, case.space, lambda s: exhaustive_state(case), 0)


class TestPredict:
    def test_argmax(self):
        assert predict([0.1, 0.7, 0.2]) == 1

    def test_tie(self):
        assert predict([0.25] * 4) == 0

    def test_write(self, tmp_path):
        write_predictions([("q1", np.array([0.2, 0.8]))], tmp_path / "p.tsv")
        assert (tmp_path / "p.tsv").read_text() == "q1\t1\t0.2,0.8\n"
