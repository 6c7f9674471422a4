import io

import numpy as np
import pytest

from provnet.errors import DataError
from provnet.ingest import (
    Manifest,
    PatchListing,
    build_manifest,
    parse_frame_index,
    select_iframes,
    select_pframe_triplets,
)


def sidecar(rows):
    lines = ["video_id,frame_index,pict_type,width,height,frame_path"]
    lines += [",".join(str(v) for v in row) for row in rows]
    return io.StringIO("\n".join(lines))


def rec_rows(vid, picts, start=0):
    return [(vid, start + i, p, 640, 480, f"/frames/{vid}_{start + i}.png") for i, p in enumerate(picts)]


class TestParseFrameIndex:
    def test_b_frames_flagged_excluded(self):
        records = parse_frame_index(sidecar(rec_rows("v1", "IPPBP")))
        assert len(records) == 5
        assert [r.excluded for r in records] == [False, False, False, True, False]

    def test_empty_stream(self):
        assert parse_frame_index(sidecar([])) == []

    def test_out_of_order_sorted_with_warning(self, caplog):
        rows = [("v1", 2, "P", 640, 480, "a"), ("v1", 0, "I", 640, 480, "b"),
                ("v1", 1, "P", 640, 480, "c")]
        with caplog.at_level("WARNING"):
            records = parse_frame_index(sidecar(rows))
        assert [r.frame_index for r in records] == [0, 1, 2]
        assert any("out of order" in m for m in caplog.messages)

    def test_unknown_pict_type_rejected(self, caplog):
        rows = rec_rows("v1", "IP") + [("v1", 9, "X", 640, 480, "z")]
        with caplog.at_level("WARNING"):
            records = parse_frame_index(sidecar(rows))
        assert len(records) == 2

    def test_duplicate_is_error(self):
        rows = [("v1", 0, "I", 640, 480, "a"), ("v1", 0, "P", 640, 480, "b")]
        with pytest.raises(DataError):
            parse_frame_index(sidecar(rows))


class TestSelectIFrames:
    def test_basic(self):
        records = parse_frame_index(sidecar(rec_rows("v1", "IPPIP")))
        iframes = select_iframes(records)
        assert [r.frame_index for r in iframes] == [0, 3]

    def test_all_p(self):
        records = parse_frame_index(sidecar(rec_rows("v1", "PPPP")))
        assert select_iframes(records) == []

    def test_counts_match_counting_oracle(self, rng):
        rows = []
        expected = {}
        for v in range(12):
            picts = "".join(rng.choice(list("IPB"), size=rng.integers(3, 20)))
            rows += rec_rows(f"v{v:03d}", picts)
            expected[f"v{v:03d}"] = picts.count("I")
        iframes = select_iframes(parse_frame_index(sidecar(rows)))
        counts = {}
        for r in iframes:
            counts[r.video_id] = counts.get(r.video_id, 0) + 1
        assert counts == {k: v for k, v in expected.items() if v}


class TestTriplets:
    def test_three_ps_one_triplet(self):
        records = parse_frame_index(sidecar(rec_rows("v1", "IPPP")))
        triplets = select_pframe_triplets(records)
        assert len(triplets) == 1
        assert [r.frame_index for r in triplets[0]] == [1, 2, 3]

    def test_eight_ps_two_triplets(self):
        records = parse_frame_index(sidecar(rec_rows("v1", "I" + "P" * 8)))
        triplets = select_pframe_triplets(records)
        assert len(triplets) == 2
        assert [r.frame_index for r in triplets[0]] == [1, 2, 3]
        assert [r.frame_index for r in triplets[1]] == [4, 5, 6]

    def test_gop_boundary(self):
        # I P P | I P P P: first GOP has 2 P's (no triplet), second exactly one
        records = parse_frame_index(sidecar(rec_rows("v1", "IPPIPPP")))
        triplets = select_pframe_triplets(records)
        assert len(triplets) == 1
        assert [r.frame_index for r in triplets[0]] == [4, 5, 6]

    def test_b_frames_removed_first(self):
        records = parse_frame_index(sidecar(rec_rows("v1", "IPBPBP")))
        triplets = select_pframe_triplets(records)
        assert len(triplets) == 1
        assert all(r.pict_type == "P" for r in triplets[0])

    def test_stride_one_overlapping(self):
        records = parse_frame_index(sidecar(rec_rows("v1", "IPPPP")))
        assert len(select_pframe_triplets(records, stride=1)) == 2

    def test_no_fabricated_frames(self):
        records = parse_frame_index(sidecar(rec_rows("v1", "IPPPPPP")))
        all_ids = {(r.video_id, r.frame_index) for r in records}
        for trip in select_pframe_triplets(records):
            for r in trip:
                assert (r.video_id, r.frame_index) in all_ids


def make_listing(per_class_videos, patches_per_video, kinds=("I",)):
    """per_class_videos: {label: n_videos}."""
    listing = []
    for label, n_videos in per_class_videos.items():
        for v in range(n_videos):
            vid = f"c{label}_v{v:03d}"
            for f in range(patches_per_video):
                for kind in kinds:
                    listing.append(
                        PatchListing(
                            patch_path=f"/p/{vid}_f{f}_{kind}.ptch",
                            label=label, kind=kind, video_id=vid, frame_index=f,
                        )
                    )
    return listing


class TestBuildManifest:
    def test_balanced_and_proportioned(self):
        listing = make_listing({0: 10, 1: 10, 2: 10}, 10)
        manifest = build_manifest(listing, ["a", "b", "c"], seed=1)
        for split in ("train", "val", "test"):
            counts = {}
            for e in manifest.subset("I", split):
                counts[e.label] = counts.get(e.label, 0) + 1
            assert len(set(counts.values())) == 1  # balanced exactly
        n_train = len(manifest.subset("I", "train"))
        total = len(manifest.entries)
        assert abs(n_train / total - 0.70) < 0.15  # within a video's worth

    def test_deterministic(self, tmp_path):
        listing = make_listing({0: 8, 1: 8}, 6)
        a = build_manifest(listing, ["a", "b"], seed=9)
        b = build_manifest(listing, ["a", "b"], seed=9)
        pa, pb = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        a.save(pa)
        b.save(pb)
        assert pa.read_bytes() == pb.read_bytes()

    def test_downsampled_to_min(self):
        # unbalanced per-class patch volume balances to the smallest class
        listing = make_listing({0: 10, 1: 10, 2: 10}, 1)
        listing += make_listing({0: 10, 1: 5}, 1, kinds=("P",))  # skew another kind
        manifest = build_manifest(
            [l for l in listing if l.kind == "I"], ["a", "b", "c"], seed=4
        )
        for split in ("train", "val", "test"):
            counts = [0, 0, 0]
            for e in manifest.subset("I", split):
                counts[e.label] += 1
            assert counts[0] == counts[1] == counts[2]

    def test_no_video_leakage(self):
        listing = make_listing({0: 12, 1: 12}, 8, kinds=("I", "P"))
        manifest = build_manifest(listing, ["a", "b"], seed=2)
        videos = {s: set() for s in ("train", "val", "test")}
        for e in manifest.entries:
            videos[e.split].add(e.video_id)
        assert not (videos["train"] & videos["val"])
        assert not (videos["train"] & videos["test"])
        assert not (videos["val"] & videos["test"])

    def test_video_consistent_across_kinds(self):
        listing = make_listing({0: 10, 1: 10}, 4, kinds=("I", "P"))
        manifest = build_manifest(listing, ["a", "b"], seed=2)
        split_of = {}
        for e in manifest.entries:
            assert split_of.setdefault(e.video_id, e.split) == e.split

    def test_split_by_patch(self):
        listing = make_listing({0: 6, 1: 6}, 10)
        manifest = build_manifest(listing, ["a", "b"], seed=2, split_by="patch")
        n = len(manifest.entries)
        n_train = len(manifest.subset("I", "train"))
        assert abs(n_train / n - 0.70) < 0.05

    def test_too_few_videos_is_error(self):
        listing = make_listing({0: 2, 1: 10}, 5)
        with pytest.raises(DataError):
            build_manifest(listing, ["a", "b"], seed=0)

    def test_manifest_round_trip(self, tmp_path):
        listing = make_listing({0: 5, 1: 5}, 4)
        manifest = build_manifest(listing, ["a", "b"], seed=11)
        path = tmp_path / "m.jsonl"
        manifest.save(path)
        loaded = Manifest.load(path)
        assert loaded.class_names == ["a", "b"]
        assert loaded.seed == 11
        assert loaded.entries == manifest.entries
