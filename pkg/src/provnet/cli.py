"""Command-line entry point: gen, ingest, train, eval, infer, report.

Every command reads a JSON config file; flags override config values.
Exit codes: 0 success, 1 usage error, 2 data/config error, 3 training
aborted.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from provnet import ingest as ingest_mod
from provnet import models, preprocess, synth, training
from provnet.errors import ConfigError, DataError, TrainingAborted, UsageError
from provnet.metrics import EvalReport

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_ABORTED = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _build_parser() -> _Parser:
    parser = _Parser(prog="provnet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON config file")
    common.add_argument("--seed", type=int, metavar="INT", help="override RNG seed")
    common.add_argument("--out", metavar="DIR", help="output directory")

    sub.add_parser("gen", parents=[common], help="generate a synthetic labeled dataset")

    p_ingest = sub.add_parser("ingest", parents=[common], help="build patch store and manifest")
    p_ingest.add_argument("--split-by", choices=["video", "patch"], default=None)
    p_ingest.add_argument("--triplet-stride", type=int, metavar="INT", default=None)
    p_ingest.add_argument("--devices", metavar="LIST", default=None,
                          help="comma-separated video-id prefixes to keep")

    for name, helptext in (
        ("train", "train a stream or the fused model"),
        ("eval", "evaluate a checkpoint on a manifest split"),
        ("infer", "classify one video's patch set"),
    ):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--stream", choices=["ind", "pred", "multi"], default=None)

    sub.add_parser("report", parents=[common], help="render a saved evaluation report")
    return parser


def _load_config(args) -> dict:
    cfg = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise DataError(f"config file not found: {path}")
        cfg = json.loads(path.read_text())
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.out is not None:
        cfg["out"] = args.out
    for key in ("split_by", "triplet_stride", "devices", "stream"):
        if getattr(args, key, None) is not None:
            cfg[key] = getattr(args, key)
    return cfg


def _require(cfg, key):
    if key not in cfg:
        raise UsageError(f"missing config key {key!r} (set it in --config or via a flag)")
    return cfg[key]


def _out_dir(cfg) -> Path:
    out = Path(_require(cfg, "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen(cfg) -> int:
    chains = [synth.CompressionChain.from_dict(c) for c in _require(cfg, "chains")]
    out = _out_dir(cfg)
    sidecar = synth.generate_dataset(
        chains,
        n_frames=int(cfg.get("n_frames", 100)),
        frame_size=int(cfg.get("frame_size", 256)),
        seed=int(cfg.get("seed", 0)),
        out_dir=out,
        p_frames=int(cfg.get("p_frames", 0)),
    )
    print(f"wrote sidecar {sidecar}")
    return EXIT_OK


def _video_label(video_id: str, class_names: list) -> int:
    for i, name in enumerate(class_names):
        if video_id.startswith(name + "_"):
            return i
    raise DataError(f"video {video_id!r} matches no class in {class_names}")


def cmd_ingest(cfg) -> int:
    sidecar = Path(_require(cfg, "sidecar"))
    if not sidecar.exists():
        raise DataError(f"sidecar not found: {sidecar}")
    out = _out_dir(cfg)
    patch_dir = out / "patches"
    patch_dir.mkdir(exist_ok=True)
    patch_size = int(cfg.get("patch_size", 256))
    seed = int(cfg.get("seed", 0))
    stride = int(cfg.get("triplet_stride", 3))
    split_by = cfg.get("split_by", "video")
    split = tuple(cfg.get("split", (0.70, 0.15, 0.15)))

    with open(sidecar) as fh:
        records = ingest_mod.parse_frame_index(fh)
    devices = cfg.get("devices")
    if devices:
        prefixes = tuple(devices.split(",") if isinstance(devices, str) else devices)
        records = [r for r in records if r.video_id.startswith(prefixes)]
    if not records:
        raise DataError("no frame records after parsing/filtering")

    class_names = cfg.get("classes")
    if not class_names:
        class_names = sorted({r.video_id.rsplit("_", 1)[0] for r in records})

    listing = []

    def _emit(patch):
        name = (
            f"{patch.video_id}_f{patch.frame_index:05d}_{patch.kind}"
            f"_r{patch.row}_c{patch.col}.ptch"
        )
        path = patch_dir / name
        preprocess.save_patch(path, patch)
        listing.append(
            ingest_mod.PatchListing(
                patch_path=str(path),
                label=patch.label,
                kind=patch.kind,
                video_id=patch.video_id,
                frame_index=patch.frame_index,
                row=patch.row,
                col=patch.col,
            )
        )

    for rec in ingest_mod.select_iframes(records):
        frame = _load_frame_checked(rec)
        label = _video_label(rec.video_id, class_names)
        for patch in preprocess.make_iframe_input(
            frame, rec.video_id, rec.frame_index, label, size=patch_size
        ):
            _emit(patch)

    for prev, center, nxt in ingest_mod.select_pframe_triplets(records, stride=stride):
        frames = tuple(_load_frame_checked(r) for r in (prev, center, nxt))
        stack = preprocess.PFrameStack(
            frames=frames, video_id=center.video_id, center_index=center.frame_index
        )
        label = _video_label(center.video_id, class_names)
        for patch in preprocess.make_pframe_input(stack, label, size=patch_size):
            _emit(patch)

    manifest = ingest_mod.build_manifest(
        listing, class_names, split=split, seed=seed, split_by=split_by
    )
    manifest_path = out / "manifest.jsonl"
    manifest.save(manifest_path)

    counts: dict[tuple, int] = {}
    for e in manifest.entries:
        counts[(e.kind, e.split, e.label)] = counts.get((e.kind, e.split, e.label), 0) + 1
    print(f"wrote manifest {manifest_path} ({len(manifest.entries)} patches)")
    for key in sorted(counts):
        kind, split_name, label = key
        print(f"  kind={kind} split={split_name} class={class_names[label]}: {counts[key]}")
    return EXIT_OK


def _load_frame_checked(rec) -> np.ndarray:
    path = Path(rec.frame_path)
    if not path.exists():
        raise DataError(
            f"frame file missing for video {rec.video_id} frame {rec.frame_index}: {path}"
        )
    return synth.load_frame(path)


def _train_config(cfg) -> training.TrainConfig:
    t = cfg.get("train", {})
    return training.TrainConfig(
        lr=float(t.get("lr", 1e-4)),
        weight_decay=float(t.get("weight_decay", 5e-5)),
        batch_size=int(t.get("batch_size", 32)),
        max_epochs=int(t.get("max_epochs", 80)),
        early_stop_patience=int(t.get("early_stop_patience", 10)),
        seed=int(cfg.get("seed", 0)),
    )


def _stream_model(cfg, stream: str, manifest, input_size: int):
    num_classes = len(manifest.class_names)
    seed = int(cfg.get("seed", 0))
    arch = cfg.get("arch")
    if arch:
        stream_cfg = training.stream_config_from_dict(arch)
    elif cfg.get("preset") == "reduced":
        maker = models.indnet_reduced_config if stream == "ind" else models.prednet_reduced_config
        stream_cfg = maker(num_classes=num_classes, input_size=input_size)
    else:
        maker = models.indnet_config if stream == "ind" else models.prednet_config
        stream_cfg = maker(num_classes=num_classes, input_size=input_size)
    builder = models.build_indnet if stream == "ind" else models.build_prednet
    return builder(stream_cfg, seed=seed)


def cmd_train(cfg) -> int:
    manifest = ingest_mod.Manifest.load(_require(cfg, "manifest"))
    stream = cfg.get("stream", "ind")
    out = _out_dir(cfg)
    tcfg = _train_config(cfg)
    meta = {"class_names": manifest.class_names, "seed": tcfg.seed}

    try:
        if stream == "multi":
            model, result = training.train_multiframe_protocol(
                _require(cfg, "ind_checkpoint"),
                _require(cfg, "pred_checkpoint"),
                manifest,
                tcfg,
                head_hidden=tuple(cfg.get("head_hidden", (512,))),
            )
            result.meta.update(meta)
            training.save_multiframe_checkpoint(out / "multi.ckpt", model, result)
            ckpt_path = out / "multi.ckpt"
        else:
            kind = "I" if stream == "ind" else "P"
            data = training.StreamData.from_manifest(manifest, kind)
            X, _, _, _ = data.require("train")
            model = _stream_model(cfg, stream, manifest, input_size=X.shape[-1])
            result = training.train(model, data, tcfg, meta=meta)
            ckpt_path = out / f"{stream}.ckpt"
            training.save_stream_checkpoint(ckpt_path, model, result)
    except TrainingAborted as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        if exc.checkpoint:
            from provnet.engine.checkpoint import save_checkpoint

            save_checkpoint(
                out / f"{stream}.aborted.ckpt",
                exc.checkpoint["params"],
                exc.checkpoint["meta"],
            )
        return EXIT_ABORTED

    result.save_history(out / f"{stream}.history.jsonl")
    print(
        f"wrote {ckpt_path} (best epoch {result.best_epoch}, "
        f"val_acc {result.best_val_acc:.4f})"
    )
    return EXIT_OK


def _load_model_for(cfg, stream: str):
    ckpt = _require(cfg, "checkpoint")
    if stream == "multi":
        return training.load_multiframe_checkpoint(ckpt)
    return training.load_stream_checkpoint(ckpt)


def _checkpoint_class_names(path) -> list | None:
    from provnet.engine.checkpoint import load_checkpoint

    _, meta, _ = load_checkpoint(path)
    return meta.get("class_names")


def cmd_eval(cfg) -> int:
    manifest = ingest_mod.Manifest.load(_require(cfg, "manifest"))
    stream = cfg.get("stream", "ind")
    ckpt_classes = _checkpoint_class_names(_require(cfg, "checkpoint"))
    if ckpt_classes is not None and list(ckpt_classes) != list(manifest.class_names):
        raise ConfigError(
            f"class mismatch: checkpoint {ckpt_classes} vs manifest {manifest.class_names}"
        )
    model = _load_model_for(cfg, stream)
    split = cfg.get("split", "test")
    if stream == "multi":
        data = training.PairedData.from_manifest(manifest)
    else:
        data = training.StreamData.from_manifest(manifest, "I" if stream == "ind" else "P")
    report = training.evaluate(model, data, split=split, seed=int(cfg.get("seed", 0)))
    out = _out_dir(cfg)
    report.save(out / f"{stream}.report.json")
    print(report.render_table())
    return EXIT_OK


def cmd_infer(cfg) -> int:
    manifest = ingest_mod.Manifest.load(_require(cfg, "manifest"))
    stream = cfg.get("stream", "ind")
    video_id = _require(cfg, "video")
    model = _load_model_for(cfg, stream)
    kind = "P" if stream == "pred" else "I"
    entries = [e for e in manifest.entries if e.video_id == video_id and e.kind == kind]
    if not entries:
        raise DataError(f"no {kind}-kind patches for video {video_id!r} in manifest")
    patches = np.stack([preprocess.load_patch(e.patch_path).tensor for e in entries])
    if stream == "multi":
        p_entries = [e for e in manifest.entries if e.video_id == video_id and e.kind == "P"]
        if not p_entries:
            raise DataError(f"no P-kind patches for video {video_id!r} in manifest")
        rng = np.random.default_rng(int(cfg.get("seed", 0)))
        p_patches = np.stack([preprocess.load_patch(e.patch_path).tensor for e in p_entries])
        idx = rng.integers(len(p_patches), size=len(patches))
        verdict = training.infer_video(
            _PairedModelView(model, p_patches[idx]), patches, manifest.class_names
        )
    else:
        verdict = training.infer_video(model, patches, manifest.class_names)
    print(json.dumps(verdict, indent=2, sort_keys=True))
    return EXIT_OK


class _PairedModelView:
    """Adapts the fused model to the single-array infer interface."""

    def __init__(self, model, p_patches):
        self.model = model
        self.p_patches = p_patches
        self._pos = 0

    def predict_proba(self, x):
        xp = self.p_patches[self._pos : self._pos + len(x)]
        self._pos += len(x)
        return self.model.predict_proba((x, xp))


def cmd_report(cfg) -> int:
    report = EvalReport.load(_require(cfg, "report"))
    print(report.render_table())
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen,
    "ingest": cmd_ingest,
    "train": cmd_train,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "report": cmd_report,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args)
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
