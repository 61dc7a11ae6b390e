import json

import pytest

from medleysep.corpus import (ManifestError, MedleyVoxSegment, SourceIndex,
                              category_counts, load_manifest,
                              load_medleyvox_metadata)


def _write_lines(path, lines):
    path.write_text("\n".join(json.dumps(x) for x in lines) + "\n")


def _record(i, singer="s0", song="song0", domain="singing"):
    return {"utterance_id": f"u{i}", "audio_path": f"/tmp/u{i}.wav",
            "singer_id": singer, "song_id": song, "domain": domain,
            "duration": 3.0}


def test_empty_manifest(tmp_path):
    p = tmp_path / "m.jsonl"
    p.write_text("")
    assert load_manifest(p) == []


def test_three_records_and_singer_index(tmp_path):
    p = tmp_path / "m.jsonl"
    _write_lines(p, [_record(0, "a"), _record(1, "a"), _record(2, "b")])
    recs = load_manifest(p, check_audio=False)
    assert len(recs) == 3
    index = SourceIndex.build(recs)
    assert {r.utterance_id for r in index.by_singer["a"]} == {"u0", "u1"}
    assert len(index.by_singer["b"]) == 1


def test_duplicate_utterance_id_rejected_with_line(tmp_path):
    p = tmp_path / "m.jsonl"
    _write_lines(p, [_record(0), _record(0)])
    with pytest.raises(ManifestError, match=":2"):
        load_manifest(p, check_audio=False)


def test_malformed_line_reports_number(tmp_path):
    p = tmp_path / "m.jsonl"
    p.write_text(json.dumps(_record(0)) + "\n{not json\n")
    with pytest.raises(ManifestError, match=":2"):
        load_manifest(p, check_audio=False)


def test_missing_audio_skipped_with_warning(tmp_path, caplog):
    p = tmp_path / "m.jsonl"
    _write_lines(p, [_record(0)])
    recs = load_manifest(p, check_audio=True)
    assert recs == []
    assert any("missing audio" in r.message for r in caplog.records)


def test_grouped_indices_partition(tmp_path):
    p = tmp_path / "m.jsonl"
    lines = [_record(i, singer=f"s{i % 3}", song=f"song{i % 2}") for i in range(6)]
    lines += [_record(10, singer="sp", song="", domain="speech")]
    _write_lines(p, lines)
    recs = load_manifest(p, check_audio=False)
    index = SourceIndex.build(recs)
    singer_total = sum(len(v) for v in index.by_singer.values())
    assert singer_total == len(recs)
    song_total = sum(len(v) for v in index.by_song.values())
    assert song_total == len([r for r in recs if r.song_id])
    assert len(index.speech) == 1 and len(index.singing) == 6


def test_load_is_order_stable(tmp_path):
    p = tmp_path / "m.jsonl"
    _write_lines(p, [_record(i) for i in range(5)])
    a = load_manifest(p, check_audio=False)
    b = load_manifest(p, check_audio=False)
    assert a == b


def _segment(i, category="duet", n_singings=2, n_stems=None, **kw):
    n_stems = n_singings if n_stems is None else n_stems
    base = {"segment_id": f"seg{i}", "song_id": "songA", "category": category,
            "n_singings": n_singings, "n_singers": 1, "start": 0.0, "end": 3.0,
            "mixture_path": "/tmp/mix.wav",
            "stem_paths": [f"/tmp/s{j}.wav" for j in range(n_stems)]}
    base.update(kw)
    return base


def test_metadata_two_segments(tmp_path):
    p = tmp_path / "meta.jsonl"
    _write_lines(p, [_segment(0, "unison"), _segment(1, "duet")])
    segs = load_medleyvox_metadata(p)
    assert len(segs) == 2
    assert category_counts(segs) == {"unison": 1, "duet": 1}


def test_unison_with_three_stems_rejected(tmp_path):
    p = tmp_path / "meta.jsonl"
    _write_lines(p, [_segment(0, "unison", n_singings=2, n_stems=3)])
    with pytest.raises(ManifestError):
        load_medleyvox_metadata(p)


def test_unison_needs_two_singings():
    with pytest.raises(ManifestError):
        MedleyVoxSegment("s", "song", "unison", 3, 1, 0.0, 1.0, "m.wav",
                         ("a", "b", "c"))


def test_main_vs_rest_stem_rules(tmp_path):
    p = tmp_path / "meta.jsonl"
    # 2 stems (main, rest-sum): ok without main_index
    _write_lines(p, [_segment(0, "main_vs_rest", n_singings=3, n_stems=2)])
    assert len(load_medleyvox_metadata(p)) == 1
    # full stems need main_index
    _write_lines(p, [_segment(1, "main_vs_rest", n_singings=3, n_stems=3)])
    with pytest.raises(ManifestError):
        load_medleyvox_metadata(p)
    _write_lines(p, [_segment(2, "main_vs_rest", n_singings=3, n_stems=3,
                              main_index=1)])
    assert load_medleyvox_metadata(p)[0].main_index == 1


def test_table_style_totals(tmp_path):
    # a conforming synthetic metadata file reproduces its own category totals
    p = tmp_path / "meta.jsonl"
    lines = ([_segment(i, "unison") for i in range(5)]
             + [_segment(100 + i, "duet") for i in range(3)]
             + [_segment(200 + i, "main_vs_rest", n_singings=3, n_stems=2)
                for i in range(2)])
    _write_lines(p, lines)
    segs = load_medleyvox_metadata(p)
    assert category_counts(segs) == {"unison": 5, "duet": 3, "main_vs_rest": 2}
