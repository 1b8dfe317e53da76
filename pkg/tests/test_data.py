import json
import logging

import numpy as np
import pytest

from mcn.data import (
    Corpus,
    ingest_annotations,
    load_features,
    load_index,
    load_splits,
    parse_annotations,
    write_features,
)
from mcn.errors import DataError, FormatError, LengthError, MissingFeaturesError
from mcn.features import Modality, VideoFeatures
from mcn.moments import Span
from mcn.schemas import AnnotationRecord


def raw(annotation_id, times, **extra):
    return {"annotation_id": annotation_id, "video": "v1", "description": "a cat", "times": times, **extra}


class TestAnnotations:

    def test_pads_to_four_with_modal_span(self):
        records, report = parse_annotations([raw(1, [[2, 3], [0, 1], [2, 3]], num_segments=6)])
        (record,) = records
        assert record.annotation_id == "1"
        assert record.spans == [Span(2, 3), Span(0, 1), Span(2, 3), Span(2, 3)]
        assert record.padded and record.num_annotators == 3
        assert report.padded == 1

    def test_invalid_span_rejected(self, caplog):
        with caplog.at_level(logging.WARNING):
            records, report = parse_annotations([
                raw("a", [[0, 0]] * 4, num_segments=6),
                raw("b", [[4, 6]] * 4, num_segments=6),
            ])
        assert [r.annotation_id for r in records] == ["a"]
        assert report.rejected == 1
        assert "отклонена" in caplog.text

    def test_counts_disagreeing_records(self):
        records, report = parse_annotations([
            raw("a", [[3, 3], [3, 3], [3, 3], [3, 4]], num_segments=6),
            raw("b", [[0, 0], [2, 2], [4, 4], [5, 5]], num_segments=6),
        ])
        assert len(records) == 2 and report.disagreeing == 1

    def test_truncates_extra_annotators(self):
        records, report = parse_annotations([raw("a", [[0, 0]] * 5, num_segments=6)])
        assert len(records[0].times) == 4 and report.truncated == 1

    def test_segments_from_duration(self):
        records, _ = parse_annotations([raw("a", [[0, 3]] * 4, duration=18.2)])
        assert records[0].num_segments == 4

    def test_missing_field(self):
        bad = {"annotation_id": "x", "video": "v1", "times": [[0, 0]]}
        with pytest.raises(FormatError, match="запись 0: нет поля 'description'"):
            parse_annotations([bad])

    def test_malformed_times(self):
        with pytest.raises(FormatError, match="times"):
            parse_annotations([raw("a", [[0, "1"]])])

    def test_natural_order(self):
        records, _ = parse_annotations([raw(f"q{i}", [[0, 0]] * 4) for i in (10, 2, 1)])
        assert [r.annotation_id for r in records] == ["q1", "q2", "q10"]

    def test_empty_file_warns(self, tmp_path, caplog):
        path = tmp_path / "empty.json"
        path.write_text("[]", encoding="utf-8")
        with caplog.at_level(logging.WARNING):
            records, _ = ingest_annotations(path)
        assert records == [] and "пуст" in caplog.text

    def test_not_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{oops", encoding="utf-8")
        with pytest.raises(FormatError, match="JSON"):
            ingest_annotations(path)


class TestFeatureFiles:

    def test_round_trip(self, tmp_path, rng):
        vf = VideoFeatures("v1", Modality.FLOW, rng.normal(size=(12, 5)).astype(np.float32), 2)
        path = tmp_path / "v1_flow.mcnf"
        write_features(path, vf)
        loaded = load_features(path)
        assert loaded.video_id == "v1_flow" and loaded.modality is Modality.FLOW
        assert loaded.num_segments == 6
        np.testing.assert_array_equal(loaded.frames, vf.frames)

    def test_truncated_payload(self, tmp_path, rng):
        path = tmp_path / "v.mcnf"
        write_features(path, VideoFeatures("v", Modality.RGB, rng.normal(size=(4, 3)), 1))
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(LengthError):
            load_features(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "v.mcnf"
        path.write_bytes(b"XXXX" + bytes(40))
        with pytest.raises(FormatError, match="сигнатура"):
            load_features(path)

    def test_nan_reports_coordinates(self, tmp_path):
        frames = np.zeros((3, 2), dtype=np.float32)
        path = tmp_path / "v.mcnf"
        write_features(path, VideoFeatures("v", Modality.RGB, frames, 1))
        blob = bytearray(path.read_bytes())
        blob[-4:] = np.array([np.nan], dtype="<f4").tobytes()
        path.write_bytes(bytes(blob))
        with pytest.raises(DataError, match="кадре 2, признак 1"):
            load_features(path)


class TestIndexAndSplits:

    def test_index_relative_and_missing(self, tmp_path):
        path = tmp_path / "index.tsv"
        path.write_text("v1\tf/v1_rgb.mcnf\t-\n", encoding="utf-8")
        index = load_index(path)
        assert index["v1"] == {Modality.RGB: (tmp_path / "f/v1_rgb.mcnf").resolve()}

    def test_split_conflict(self, tmp_path):
        path = tmp_path / "splits.tsv"
        path.write_text("v1\ttrain\nv1\tval\n", encoding="utf-8")
        with pytest.raises(DataError, match="v1"):
            load_splits(path)

    def test_split_format(self, tmp_path):
        path = tmp_path / "splits.tsv"
        path.write_text("v1\tdev\n", encoding="utf-8")
        with pytest.raises(FormatError, match=":1:"):
            load_splits(path)


class TestCorpus:

    def test_partition(self, corpus, small_spec):
        train, val = set(corpus.video_ids("train")), set(corpus.video_ids("val"))
        assert not train & val
        assert len(train) + len(val) == small_spec.num_videos
        assert len(corpus.all_records()) == small_spec.num_videos * small_spec.queries_per_video

    def test_overlapping_splits_rejected(self):
        record = AnnotationRecord(annotation_id="1", video_id="v", description="x", times=[(0, 0)], num_segments=6)
        with pytest.raises(DataError, match="train и val"):
            Corpus({"train": [record], "val": [record.model_copy(update={"annotation_id": "2"})]})

    def test_video_loads_both_modalities(self, corpus):
        record = corpus.records("train")[0]
        video = corpus.video(record.video_id, record.num_segments)
        assert video.num_segments == record.num_segments
        assert video.rgb.dim == video.flow.dim == 4

    def test_resegmented_features_cached(self, corpus):
        record = corpus.records("train")[0]
        first = corpus.video(record.video_id, record.num_segments + 1)
        second = corpus.video(record.video_id, record.num_segments + 1)
        assert first.rgb is second.rgb and first.flow is second.flow
        assert first.num_segments == record.num_segments + 1
        other = corpus.video(record.video_id, record.num_segments)
        assert other.rgb is not first.rgb and other.num_segments == record.num_segments

    def test_missing_features(self, corpus):
        record = corpus.records("train")[0]
        corpus.feature_index[record.video_id][Modality.FLOW].unlink()
        corpus._cache.clear()
        with pytest.raises(MissingFeaturesError) as info:
            corpus.require_features([record], list(Modality))
        assert info.value.video_ids == [record.video_id]

    def test_records_without_split_dropped(self, tmp_path, caplog):
        annotations = tmp_path / "a.json"
        annotations.write_text(json.dumps([raw("a", [[0, 0]] * 4), {**raw("b", [[0, 0]] * 4), "video": "v2"}]))
        splits = tmp_path / "s.tsv"
        splits.write_text("v1\ttrain\n", encoding="utf-8")
        with caplog.at_level(logging.WARNING):
            corpus = Corpus.from_files(annotations, splits)
        assert [r.annotation_id for r in corpus.records("train")] == ["a"]
        assert "пропущены" in caplog.text
