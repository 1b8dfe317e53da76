import numpy as np
import pytest

from mcn.errors import DataError, InvalidSpanError
from mcn.features import Modality
from mcn.language import Query
from mcn.model import (
    InterNegativeSampler,
    MomentContextNetwork,
    TrainingExample,
    combined_loss,
    hinge,
    inter_loss,
    intra_loss,
    language_free_variant,
    modality_weights,
    ranking_losses,
)
from mcn.moments import Span, enumerate_candidates


def example(video, tokens, span):
    query = Query(raw_text="", tokens=tokens, video_id=video.video_id, annotations=[span] * 4)
    return TrainingExample(query=query, positive=span, video=video)


@pytest.fixture
def model(tiny_config, vocabulary):
    return MomentContextNetwork.initialize(tiny_config, vocabulary, rgb_dim=3, flow_dim=3)


class TestHinge:

    def test_values(self):
        assert hinge(1.0, 2.0, 0.1) == 0.0
        assert hinge(2.0, 1.0, 0.1) == pytest.approx(1.1)
        assert ranking_losses(1.0, [1.0, 0.5, 3.0], 0.1) == pytest.approx(0.1 + 0.6)


class TestWeights:

    def test_variants(self, tiny_config):
        assert modality_weights(tiny_config) == {Modality.RGB: 1.0, Modality.FLOW: 2.33}
        assert modality_weights(tiny_config.updated(modalities="rgb")) == {Modality.RGB: 1.0}
        assert modality_weights(tiny_config.updated(modalities="flow")) == {Modality.FLOW: 1.0}

    def test_single_modality_has_no_other_branch(self, tiny_config, vocabulary):
        model = MomentContextNetwork.initialize(tiny_config.updated(modalities="rgb"), vocabulary, 3, 0)
        assert not any(name.startswith("flow.") for name in model.params)


class TestLocalize:

    def test_ranks_all_candidates(self, model, make_video):
        video = make_video("v", num_segments=6)
        ranked = model.localize([0, 1], video)
        assert len(ranked) == 21
        distances = [m.distance for m in ranked]
        assert distances == sorted(distances)
        assert {m.span for m in ranked} == set(enumerate_candidates(6))

    def test_one_segment(self, model, make_video):
        ranked = model.localize([0], make_video("v", num_segments=1))
        assert [m.span for m in ranked] == [Span(0, 0)]

    def test_top1_is_exhaustive_argmin(self, model, make_video, rng):
        for n in range(1, 9):
            video = make_video(f"v{n}", num_segments=n)
            tokens = [int(t) for t in rng.integers(model.vocabulary.size, size=3)]
            sentence = model.embed_tokens(tokens)
            exhaustive = {span: model.distance(sentence, video, span) for span in enumerate_candidates(n)}
            best = min(exhaustive.values())
            top = model.localize(tokens, video)[0]
            assert top.distance == pytest.approx(best, rel=1e-9, abs=1e-12)
            assert exhaustive[top.span] == pytest.approx(best, rel=1e-9, abs=1e-12)

    def test_distance_matches_fusion_formula(self, model, make_video):
        video = make_video("v")
        sentence = model.embed_tokens([1, 2])
        span = Span(1, 3)
        rgb = model.embed_visual(video, span, Modality.RGB)
        flow = model.embed_visual(video, span, Modality.FLOW)
        expected = np.sum((rgb - sentence) ** 2) + 2.33 * np.sum((flow - sentence) ** 2)
        assert model.distance(sentence, video, span) == pytest.approx(expected)

    def test_language_free_ignores_query(self, tiny_config, vocabulary, make_video):
        model = MomentContextNetwork.initialize(language_free_variant(tiny_config), vocabulary, 3, 3)
        video = make_video("v")
        first = [m.span for m in model.localize([0], video)]
        second = [m.span for m in model.localize([3, 4, 1], video)]
        assert first == second

    def test_fine_grained_trace_length(self, model, make_video):
        video = make_video("v", num_segments=5, frames_per_segment=3)
        trace = model.fine_grained_trace([0], video, window_frames=4, stride_frames=2)
        assert len(trace) == (15 - 4) // 2 + 1
        assert [p.start_frame for p in trace[:3]] == [0, 2, 4]


class TestLosses:

    def test_intra_hand_computed(self, model, make_video):
        video = make_video("v", num_segments=3)
        ex = example(video, [0, 1], Span(0, 1))
        sentence = model.embed_tokens([0, 1])
        d = {s: model.distance(sentence, video, s) for s in enumerate_candidates(3)}
        expected = sum(hinge(d[Span(0, 1)], d[s], 0.1) for s in d if s != Span(0, 1))
        assert intra_loss(model, ex) == pytest.approx(expected)

    def test_inter_hand_computed(self, model, make_video):
        video, other = make_video("a", num_segments=4), make_video("b", num_segments=6)
        ex = example(video, [2], Span(1, 2))
        sentence = model.embed_tokens([2])
        expected = hinge(model.distance(sentence, video, Span(1, 2)), model.distance(sentence, other, Span(1, 2)), 0.1)
        assert inter_loss(model, ex, [other]) == pytest.approx(expected)

    def test_combined_weights(self, model, make_video):
        a, b = make_video("a"), make_video("b")
        batch = [example(a, [0], Span(0, 2)), example(b, [1], Span(3, 5))]
        negatives = [[b], [a]]
        intra = sum(intra_loss(model, ex) for ex in batch)
        inter = sum(inter_loss(model, ex, negs) for ex, negs in zip(batch, negatives))
        lam = model.config.lambda_
        assert combined_loss(model, batch, negatives) == pytest.approx(lam * intra + (1 - lam) * inter)

    def test_lambda_one_ignores_inter(self, tiny_config, vocabulary, make_video):
        model = MomentContextNetwork.initialize(tiny_config.updated(lambda_=1.0), vocabulary, 3, 3)
        a, b = make_video("a"), make_video("b")
        batch = [example(a, [0], Span(0, 2))]
        assert combined_loss(model, batch, [[b]]) == pytest.approx(intra_loss(model, batch[0]))

    def test_same_video_negative_rejected(self, model, make_video):
        a = make_video("a")
        with pytest.raises(DataError, match="том же видео"):
            model.objective([example(a, [0], Span(0, 0))], [[a]])

    def test_positive_must_fit(self, make_video):
        with pytest.raises(InvalidSpanError):
            example(make_video("a", num_segments=3), [0], Span(0, 4))


class TestSampler:

    def test_only_other_videos_that_fit(self, make_video, rng):
        a, b, c = make_video("a", 6), make_video("b", 6), make_video("c", 3)
        sampler = InterNegativeSampler(rng, num_negatives=1, max_resample=50)
        ex = example(a, [0], Span(4, 5))
        for _ in range(20):
            (chosen,) = sampler.sample(ex, [a, b, c])
            assert chosen.video_id == "b"

    def test_skips_when_nothing_fits(self, make_video, rng):
        a, c = make_video("a", 6), make_video("c", 3)
        sampler = InterNegativeSampler(rng, num_negatives=1, max_resample=5)
        assert sampler.sample(example(a, [0], Span(4, 5)), [a, c]) == []
        assert sampler.skipped == 1
