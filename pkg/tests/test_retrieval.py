import pytest

from mcn.model import MomentContextNetwork
from mcn.moments import enumerate_candidates
from mcn.retrieval import MomentIndex, retrieve_corpus


@pytest.fixture
def model(tiny_config, vocabulary):
    return MomentContextNetwork.initialize(tiny_config, vocabulary, rgb_dim=3, flow_dim=3)


@pytest.fixture
def videos(make_video):
    return [make_video(f"v{i}", num_segments=n) for i, n in enumerate([6, 5, 6, 3])]


def brute_force(model, tokens, videos, k):
    sentence = model.embed_tokens(tokens)
    hits = []
    for video in videos:
        spans = enumerate_candidates(video.num_segments)
        for span, d in zip(spans, model.score_spans(sentence, video, spans)):
            hits.append((float(d), video.video_id, span))
    return sorted(hits)[:k]


class TestMomentIndex:

    def test_build_counts_all_candidates(self, model, videos):
        assert MomentIndex(model).build(videos) == 21 + 15 + 21 + 6

    @pytest.mark.parametrize("k", [1, 5, 20])
    def test_matches_brute_force(self, model, videos, k):
        index = MomentIndex(model)
        index.build(videos)
        hits = index.search_tokens([1, 2], k)
        expected = brute_force(model, [1, 2], videos, k)
        assert [(h.video_id, h.span) for h in hits] == [(v, s) for _, v, s in expected]
        assert [h.distance for h in hits] == pytest.approx([d for d, _, _ in expected])

    def test_k_larger_than_corpus(self, model, videos):
        index = MomentIndex(model)
        index.build(videos[3:])
        assert len(index.search_tokens([0], 100)) == 6

    def test_empty_index(self, model):
        index = MomentIndex(model)
        index.build([])
        assert index.search_tokens([0], 5) == []

    def test_text_search(self, model, videos, vocabulary):
        by_text = retrieve_corpus(model, "Cat walks", videos, k=3)
        by_ids = brute_force(model, [vocabulary.lookup("cat"), vocabulary.lookup("walks")], videos, 3)
        assert [(h.video_id, h.span) for h in by_text] == [(v, s) for _, v, s in by_ids]
