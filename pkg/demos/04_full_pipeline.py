"""Demo: the whole pipeline on a small synthetic run.

Generates a two-class dataset (single vs double compression), ingests it
into a balanced patch manifest, trains the reduced I-stream for a few
epochs, and evaluates on the held-out test videos. Takes a minute or two
on CPU. The same flow is available from the command line:

    provnet gen    --config gen.json
    provnet ingest --config ingest.json --seed 7
    provnet train  --config train.json --stream ind
    provnet eval   --config eval.json  --stream ind

Run:  python3 demos/04_full_pipeline.py
"""

import tempfile
from pathlib import Path

from provnet.ingest import Manifest, parse_frame_index, select_iframes, build_manifest, PatchListing
from provnet.models import build_indnet, indnet_reduced_config
from provnet.preprocess import make_iframe_input, save_patch
from provnet.synth import ChainStage, CompressionChain, generate_dataset, load_frame
from provnet.training import StreamData, TrainConfig, evaluate, train

work = Path(tempfile.mkdtemp(prefix="provnet_demo_"))
print(f"working in {work}")

chains = [
    CompressionChain("single", [ChainStage(90)]),
    CompressionChain("double", [ChainStage(90), ChainStage(70)]),
]
sidecar = generate_dataset(chains, n_frames=250, frame_size=64, seed=0, out_dir=work)
print("generated 500 labeled frames")

with open(sidecar) as fh:
    records = parse_frame_index(fh)
class_names = ["double", "single"]
patch_dir = work / "patches"
patch_dir.mkdir()
listing = []
for rec in select_iframes(records):
    label = class_names.index(rec.video_id.rsplit("_", 1)[0])
    for patch in make_iframe_input(load_frame(rec.frame_path), rec.video_id,
                                   rec.frame_index, label, size=64):
        path = patch_dir / f"{rec.video_id}.ptch"
        save_patch(path, patch)
        listing.append(PatchListing(str(path), label, "I", rec.video_id,
                                    rec.frame_index, patch.row, patch.col))

manifest = build_manifest(listing, class_names, split=(0.7, 0.15, 0.15), seed=3)
counts = {s: sum(e.split == s for e in manifest.entries) for s in ("train", "val", "test")}
print(f"manifest splits: {counts} (balanced, no video crosses splits)")

data = StreamData.from_manifest(manifest, "I")
model = build_indnet(indnet_reduced_config(num_classes=2, input_size=64), seed=0)
cfg = TrainConfig(lr=1e-3, weight_decay=5e-5, batch_size=32,
                  max_epochs=10, early_stop_patience=10, seed=0)
result = train(model, data, cfg)
print(f"best val accuracy {result.best_val_acc:.3f} at epoch {result.best_epoch}")

report = evaluate(model, data, split="test")
print()
print(report.render_table())
