import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from motifbox.dataset import (DEFAULT_CLASSES, ClipIndexEntry, MotifInstance, SplitConfig, build_targets,
                              load_annotations, split_dataset, window_clips, write_annotations)
from motifbox.errors import ConfigError, InvalidIntervalError, SchemaError
from motifbox.geometry import AnchorSet, GridSpec, Interval, encode_instance, iou

GRID = GridSpec()
ANCHORS = AnchorSet((1.0, 2.5, 6.0))


def inst(s, e, c=0, rec="v1", act="A1", origin=None):
    return MotifInstance(rec, act, c, Interval(s, e), origin)


def brute_attach(interval, origin, clip_len=15.0):
    overlap = max(0.0, min(interval.end, origin + clip_len) - max(interval.start, origin))
    return origin < interval.center < origin + clip_len and overlap >= 0.5 * interval.width


# --- annotations -------------------------------------------------------------

def test_load_annotations_row(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("recording_id,act_id,motif,start_sec,end_sec\nv1,A1,Wa,12.0,14.5\n")
    (i,) = load_annotations(p, DEFAULT_CLASSES)
    assert i.class_id == 4 and i.interval == Interval(12.0, 14.5)
    assert (i.recording_id, i.act_id) == ("v1", "A1")


def test_load_annotations_header_only(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("recording_id,act_id,motif,start_sec,end_sec\n")
    assert load_annotations(p) == []


def test_bad_row_reports_line(tmp_path):
    rows = ["recording_id,act_id,motif,start_sec,end_sec"]
    rows += [f"v1,A1,Ni,{i}.0,{i}.5" for i in range(100)]
    rows[57] = "v1,A1,Ni,9.0,3.0"  # header is line 1, so this is line 58
    p = tmp_path / "a.csv"
    p.write_text("\n".join(rows) + "\n")
    with pytest.raises(InvalidIntervalError, match=":58:"):
        load_annotations(p)
    rows[57] = "v1,A1,Nope,1.0,3.0"
    p.write_text("\n".join(rows) + "\n")
    with pytest.raises(SchemaError, match=":58:"):
        load_annotations(p)


def test_annotation_roundtrip(tmp_path):
    data = [inst(1.0, 2.5, 3), inst(7.25, 9.0, 12, act="A2")]
    write_annotations(tmp_path / "a.csv", data, DEFAULT_CLASSES)
    assert load_annotations(tmp_path / "a.csv") == data


# --- windowing ---------------------------------------------------------------

def test_window_count_and_overlap():
    clips = window_clips(30.0, [], "v1", "A1")
    assert [c.origin_sec for c in clips] == list(range(16))
    for a, b in zip(clips, clips[1:]):
        assert (a.origin_sec + 15.0) - b.origin_sec == 14.0


def test_short_act_skipped(caplog):
    assert window_clips(14.9, [], "v1", "A1") == []
    assert "skipped" in caplog.text


def test_instance_attachment_matches_brute_force():
    clips = window_clips(200.0, [inst(100.0, 102.0)])
    attached = [c.origin_sec for c in clips if c.instances]
    brute = [o for o in range(0, 186) if brute_attach(Interval(100.0, 102.0), o)]
    assert attached == brute == list(range(87, 101))


def test_inside_instance_not_clamped():
    (clip,) = window_clips(15.0, [inst(3.0, 5.5)])
    assert clip.instances[0].interval == Interval(3.0, 5.5)


@settings(max_examples=40, deadline=None)
@given(st.floats(15.0, 60.0), st.lists(st.tuples(st.floats(-2, 62), st.floats(0.2, 10)), max_size=8))
def test_windowing_properties(act_len, spans):
    insts = [inst(s, s + w) for s, w in spans]
    clips = window_clips(act_len, insts)
    assert len(clips) == int(np.floor(act_len - 15 + 1e-9)) + 1
    for c in clips:
        expected = [i for i in insts if brute_attach(i.interval, c.origin_sec)]
        assert len(c.instances) == len(expected)
        for rel in c.instances:
            assert 0.0 <= rel.interval.start < rel.interval.end <= 15.0
            assert 0.0 <= rel.interval.center < 15.0


# --- targets -----------------------------------------------------------------

def test_empty_targets():
    t = build_targets(ClipIndexEntry("v", "a", 0.0), GRID, ANCHORS, 13)
    assert t.values.shape == (3, 11, 16)
    assert not t.values.any() and not t.ignore_mask.any()


def test_single_instance_target():
    e = ClipIndexEntry("v", "a", 0.0, [inst(7.5 - 1.25, 7.5 + 1.25, c=4)])
    t = build_targets(e, GRID, ANCHORS, 13)
    assert np.argwhere(t.values[..., 0]).tolist() == [[1, 5]]
    cell = t.values[1, 5]
    assert cell[1] == pytest.approx(0.5) and cell[2] == pytest.approx(0.0, abs=1e-12)
    assert cell[3 + 4] == 1.0 and cell[3:].sum() == 1.0


def test_target_invariants_random():
    rng = np.random.default_rng(2)
    for _ in range(100):
        n = int(rng.integers(0, 6))
        insts = []
        for _ in range(n):
            c, w = rng.uniform(0, 15), rng.uniform(0.3, 6)
            insts.append(inst(max(c - w / 2, 0.0), min(c + w / 2, 15.0), int(rng.integers(4))))
        t = build_targets(ClipIndexEntry("v", "a", 0.0, insts), GRID, ANCHORS, 4)
        p = t.values[..., 0]
        assert set(np.unique(p)) <= {0.0, 1.0}
        assert not t.values[p == 0].any()
        assert np.all(t.values[p == 1][:, 3:].sum(axis=1) == 1)
        assert t.n_set + t.n_dropped == n
        assert not (t.ignore_mask & (p == 1)).any()


def test_conflict_resolution_matches_enumeration():
    # several instances centered in the same cell with similar widths
    rng = np.random.default_rng(8)
    for _ in range(50):
        insts = []
        for _ in range(int(rng.integers(2, 5))):
            c = rng.uniform(5 * GRID.cell_width, 6 * GRID.cell_width - 1e-6)
            w = rng.uniform(2.0, 3.2)
            insts.append(inst(c - w / 2, c + w / 2, int(rng.integers(3))))
        t = build_targets(ClipIndexEntry("v", "a", 0.0, insts), GRID, ANCHORS, 3)
        # oracle: for every cell, enumerate claimants and pick max (IoU, -start, -class)
        codes = [encode_instance(i.interval, GRID, ANCHORS, i.class_id) for i in insts]
        cells = {(c.anchor_idx, c.grid_idx) for c in codes}
        for cell in cells:
            claim = [(cd, i) for cd, i in zip(codes, insts) if (cd.anchor_idx, cd.grid_idx) == cell]
            win_code, win = max(claim, key=lambda ci: (ci[0].anchor_iou, -ci[1].interval.start, -ci[1].class_id))
            got = t.values[cell]
            assert got[0] == 1.0 and got[1] == win_code.x and got[3 + win.class_id] == 1.0
        assert t.n_set == len(cells)


def test_ignore_mask_rule():
    e = ClipIndexEntry("v", "a", 0.0, [inst(6.0, 8.5)])
    t = build_targets(e, GRID, ANCHORS, 2)
    for a, width in enumerate(ANCHORS.widths):
        for j in range(11):
            c = (j + 0.5) * GRID.cell_width
            expect = iou(Interval(c - width / 2, c + width / 2), e.instances[0].interval) > 0.5
            assert t.ignore_mask[a, j] == (expect and not t.values[a, j, 0])


# --- splits ------------------------------------------------------------------

def make_clips(versions, acts=("A1", "A2", "A3")):
    return [ClipIndexEntry(v, a, float(o)) for v in versions for a in acts for o in range(3)]


def test_version_split_13():
    versions = [f"v{i:02d}" for i in range(13)]
    cfg = SplitConfig("version", versions[:10], versions[10:12], versions[12:])
    train, val, test = split_dataset(make_clips(versions), cfg)
    assert len(train) + len(val) + len(test) == 13 * 9
    recs = [{c.recording_id for c in part} for part in (train, val, test)]
    assert not (recs[0] & recs[1]) and not (recs[0] & recs[2]) and not (recs[1] & recs[2])
    assert recs[2] == {"v12"}


def test_act_split():
    clips = make_clips(["v1"])
    train, val, test = split_dataset(clips, SplitConfig("act", ["A1"], ["A2"], ["v1/A3"]))
    assert {c.act_id for c in train} == {"A1"} and {c.act_id for c in test} == {"A3"}
    assert len(val) == 3


def test_split_errors(tmp_path):
    with pytest.raises(ConfigError):
        SplitConfig("version", ["v1", "v2"], ["v2"], ["v3"])
    with pytest.raises(ConfigError):
        SplitConfig("version", ["v1"], [], ["v3"])
    with pytest.raises(ConfigError):
        split_dataset(make_clips(["v1", "v9"]), SplitConfig("version", ["v1"], ["v2"], ["v3"]))
    cfg = SplitConfig("version", ["v1"], ["v2"], ["v3"])
    cfg.save(tmp_path / "s.json")
    assert SplitConfig.load(tmp_path / "s.json") == cfg
