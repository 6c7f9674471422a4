import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from provnet import ingest, preprocess, synth


@pytest.fixture
def rng():
    return np.random.default_rng(42)


# one line per acceptance criterion, echoed after the test summary so they
# survive output capture
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def build_synth_manifest(
    tmp_path,
    n_frames=20,
    frame_size=32,
    patch_size=32,
    p_frames=0,
    seed=5,
    manifest_seed=3,
    qualities=((90,), (90, 70)),
):
    """Generate a small labeled dataset and ingest it into a manifest."""
    chains = [
        synth.CompressionChain(
            "single" if len(q) == 1 else "double",
            [synth.ChainStage(v) for v in q],
        )
        for q in qualities
    ]
    sidecar = synth.generate_dataset(
        chains, n_frames=n_frames, frame_size=frame_size, seed=seed,
        out_dir=tmp_path / "data", p_frames=p_frames,
    )
    with open(sidecar) as fh:
        records = ingest.parse_frame_index(fh)
    class_names = sorted({c.label for c in chains})
    label_of = {name: i for i, name in enumerate(class_names)}

    patch_dir = tmp_path / "patches"
    patch_dir.mkdir(exist_ok=True)
    listing = []

    def emit(patch):
        path = patch_dir / (
            f"{patch.video_id}_f{patch.frame_index:04d}_{patch.kind}"
            f"_r{patch.row}_c{patch.col}.ptch"
        )
        preprocess.save_patch(path, patch)
        listing.append(
            ingest.PatchListing(
                patch_path=str(path), label=patch.label, kind=patch.kind,
                video_id=patch.video_id, frame_index=patch.frame_index,
                row=patch.row, col=patch.col,
            )
        )

    for rec in ingest.select_iframes(records):
        frame = synth.load_frame(rec.frame_path)
        label = label_of[rec.video_id.rsplit("_", 1)[0]]
        for patch in preprocess.make_iframe_input(
            frame, rec.video_id, rec.frame_index, label, size=patch_size
        ):
            emit(patch)
    for prev, center, nxt in ingest.select_pframe_triplets(records):
        stack = preprocess.PFrameStack(
            frames=tuple(synth.load_frame(r.frame_path) for r in (prev, center, nxt)),
            video_id=center.video_id, center_index=center.frame_index,
        )
        label = label_of[center.video_id.rsplit("_", 1)[0]]
        for patch in preprocess.make_pframe_input(stack, label, size=patch_size):
            emit(patch)

    return ingest.build_manifest(listing, class_names, seed=manifest_seed)
