"""Command-line entry point: ``talkface <command> [options]``.

Every command writes a ``manifest.json`` next to its outputs holding the
command line, the effective configuration and SHA-256 hashes of the inputs.
Failures print a single ``error code=<tag> message=<text>`` line to stderr
and exit with status 1; argument errors exit with status 2.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import PipelineConfig, load_config
from .errors import FormatError, TalkfaceError
from .landmarks import LandmarkFrame, load_landmark_stream, write_landmarks

log = logging.getLogger("talkface")

COMMANDS = ("gen-synth", "normalize", "train", "infer", "blend", "eval", "export-mesh")


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _hash_inputs(paths) -> dict:
    out = {}
    for p in paths:
        p = Path(p)
        if p.is_dir():
            for f in sorted(q for q in p.rglob("*") if q.is_file() and q.name != "manifest.json"):
                out[str(f)] = _sha256(f)
        elif p.is_file():
            out[str(p)] = _sha256(p)
    return out


def write_manifest(out_dir: Path, command: str, args: argparse.Namespace, cfg: PipelineConfig, inputs) -> None:
    argd = {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items()) if k != "func"}
    manifest = {
        "tool": "talkface",
        "version": __version__,
        "command": command,
        "arguments": argd,
        "config": cfg.to_dict(),
        "inputs": _hash_inputs(inputs),
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _write_csv(path, rows, header):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(x)) for x in r])


def _read_csv(path) -> np.ndarray:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    return np.array([[float(x) for x in r] for r in rows[1:]], dtype=np.float64)


def _load_topology(path):
    from .topology import default_topology, load_topology

    return load_topology(path) if path else default_topology()


def _load_cylinder(path):
    from .geom import CylinderRef

    return CylinderRef.from_dict(json.loads(Path(path).read_text()))


def _read_frames(directory, prefix=None):
    from . import imageio

    files = imageio.list_frames(directory, prefix)
    if not files:
        raise FormatError(f"{directory}: no numbered frames")
    return [imageio.read_image(f) for f in files]


# --- commands -----------------------------------------------------------------------------------

def cmd_gen_synth(args, cfg: PipelineConfig) -> list:
    from . import imageio, synthkit
    from .audio import write_wav
    from .topology import save_topology

    out = Path(args.out)
    overrides = {"specular": not args.no_specular, "static": args.static}
    corpus = synthkit.gen_audio_visual_corpus(args.seed, args.frames, render=True, silent=args.silent,
                                              scene_overrides=overrides)
    seq = corpus.sequence
    imageio.write_frames(out / "frames", [f.image for f in seq.frames], "frame")
    write_landmarks(seq.landmark_stream(), out / "landmarks.lmk")
    write_wav(out / "audio.wav", corpus.audio, corpus.sample_rate)
    save_topology(seq.topo, out / "topology.txt")
    (out / "cylinder.json").write_text(json.dumps(seq.cylinder.to_dict(), indent=2, sort_keys=True) + "\n")
    truth = out / "truth"
    for f in seq.frames:
        imageio.write_image(truth / imageio.frame_name("atlas", f.index),
                            np.where(f.atlas_mask[..., None], f.albedo_atlas, 0.0), bits=16)
        imageio.write_mask(truth / imageio.frame_name("mask", f.index, "pgm"), f.atlas_mask)
    write_landmarks([LandmarkFrame(f.normalized_vertices, f.landmarks.timestamp) for f in seq.frames],
                    truth / "landmarks.lmk")
    _write_csv(truth / "blendshapes.csv", corpus.blendshapes, [f"b{k}" for k in range(corpus.blendshapes.shape[1])])
    imageio.write_image(truth / "reference.ppm", synthkit.mouth_atlas(seq.albedo, 0.0), bits=16)
    (truth / "reference.json").write_text(json.dumps(
        {"reference_vertices": seq.reference_vertices.tolist()}) + "\n")
    save_topology(seq.topo, truth / "topology.txt")
    return []


def cmd_normalize(args, cfg: PipelineConfig) -> list:
    from . import geom, imageio
    from .light import normalize_sequence
    from .topology import save_topology

    topo = _load_topology(args.topology)
    images = _read_frames(args.frames)
    lms = load_landmark_stream(args.landmarks)
    if len(images) != len(lms):
        raise FormatError(f"{len(images)} frames but {len(lms)} landmark records")
    ref = args.reference if args.reference is not None else cfg.reference_frame
    if ref < 0:
        ref = geom.select_reference_frame(lms, topo)
    cyl = geom.fit_reference_cylinder(lms[ref], topo)
    res = normalize_sequence(list(zip(images, lms)), ref, topo, cyl, cfg.light_params(), threads=args.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    norm_frames = []
    for r in res.frames:
        if r.error is not None:
            print(f"warning frame={r.index} {r.error}", file=sys.stderr)
            continue
        imageio.write_image(out / imageio.frame_name("atlas", r.index), r.atlas.pixels, bits=16)
        imageio.write_mask(out / imageio.frame_name("mask", r.index, "pgm"), r.atlas.valid_mask)
        norm_frames.append(LandmarkFrame(r.normalized_vertices, lms[r.index].timestamp))
        if args.diagnostics:
            d = out / "diagnostics"
            imageio.write_image(d / imageio.frame_name("gain", r.index, "pgm"), r.gain.values / 2.0, bits=16)
            imageio.write_image(d / imageio.frame_name("weight", r.index, "pgm"), r.weights.values, bits=16)
            imageio.write_image(d / imageio.frame_name("alpha", r.index, "pgm"), r.alpha.values, bits=16)
    write_landmarks(norm_frames, out / "landmarks.lmk")
    imageio.write_image(out / "reference.ppm", res.reference.pixels, bits=16)
    ref_vertices = res.frames[ref].normalized_vertices
    (out / "reference.json").write_text(json.dumps(
        {"reference_index": ref, "reference_vertices": ref_vertices.tolist(),
         "failures": [list(f) for f in res.failures]}) + "\n")
    (out / "cylinder.json").write_text(json.dumps(cyl.to_dict(), indent=2, sort_keys=True) + "\n")
    save_topology(topo, out / "topology.txt")
    if res.failures:
        print(f"warning failed_frames={len(res.failures)}", file=sys.stderr)
    return [args.frames, args.landmarks] + ([args.topology] if args.topology else [])


def _training_arrays(atlas_dir: Path, audio_path: Path, cfg: PipelineConfig, bs_path: Path | None = None):
    from . import imageio
    from .audio import build_spectrogram_sequence, read_wav, spectrogram_batch

    verts = read_landmarks_dir(atlas_dir)
    atlases = np.stack(_read_frames(atlas_dir, "atlas"))
    if len(atlases) != len(verts):
        raise FormatError(f"{atlas_dir}: {len(atlases)} atlases but {len(verts)} landmark records")
    x, rate = read_wav(audio_path)
    specs = spectrogram_batch(build_spectrogram_sequence(x, [f.timestamp for f in verts], rate))
    ref_atlas = imageio.read_image(atlas_dir / "reference.ppm")
    ref_vertices = np.array(json.loads((atlas_dir / "reference.json").read_text())["reference_vertices"])
    bs = None
    if bs_path is None and (atlas_dir / "blendshapes.csv").exists():
        bs_path = atlas_dir / "blendshapes.csv"
    if bs_path is not None:
        bs = _read_csv(bs_path)
        if len(bs) != len(verts):
            raise FormatError(f"{bs_path}: {len(bs)} rows but {len(verts)} frames")
    return specs, np.stack([f.vertices for f in verts]), atlases, ref_vertices, ref_atlas, bs


def read_landmarks_dir(d: Path):
    p = Path(d) / "landmarks.lmk"
    if not p.exists():
        raise FormatError(f"{d}: missing landmarks.lmk")
    return load_landmark_stream(p)


def cmd_train(args, cfg: PipelineConfig) -> list:
    from .model.checkpoint import save_checkpoint, write_loss_history
    from .model.train import build_training_set, config_dict, train
    from .topology import default_topology

    atlas_dir = Path(args.atlases)
    specs, verts, atlases, ref_v, ref_a, bs = _training_arrays(atlas_dir, Path(args.audio), cfg, args.blendshapes)
    if args.epochs is not None:
        cfg.epochs = args.epochs
    mcfg = cfg.model_config()
    if bs is None:
        mcfg.n_blendshapes = 0
    elif mcfg.n_blendshapes:
        mcfg.n_blendshapes = bs.shape[1]
    tcfg = cfg.train_config(args.seed)
    topo = default_topology()
    data = build_training_set(specs, verts, atlases, topo.lip_crop, ref_v, ref_a, bs)
    res = train(data, mcfg, tcfg)
    out = Path(args.out)
    save_checkpoint(res.model, out / "model.tfm", meta={"train": config_dict(tcfg), "steps": res.steps,
                                                        "stopped_early": res.stopped_early})
    write_loss_history(res.history, out / "loss_history.csv")
    return [atlas_dir, args.audio] + ([args.blendshapes] if args.blendshapes else [])


def cmd_infer(args, cfg: PipelineConfig) -> list:
    from . import imageio
    from .audio import build_spectrogram_sequence, read_wav
    from .model.checkpoint import load_checkpoint
    from .model.infer import infer_sequence
    from .synth import compose_atlas
    from .topology import default_topology

    model, _ = load_checkpoint(args.model)
    x, rate = read_wav(args.audio)
    n = args.frames if args.frames is not None else int(round(len(x) / rate * cfg.fps))
    ts = np.arange(n) / cfg.fps
    res = infer_sequence(build_spectrogram_sequence(x, ts, rate), model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    topo = default_topology()
    ref_atlas = imageio.read_image(Path(args.reference) / "reference.ppm") if args.reference else None
    for t in range(n):
        imageio.write_image(out / "crops" / imageio.frame_name("crop", t), res.crops[t], bits=16)
        if ref_atlas is not None:
            atlas = compose_atlas(ref_atlas, res.crops[t], topo.lip_crop, cfg.crop_feather_px)
            imageio.write_image(out / imageio.frame_name("atlas", t), atlas, bits=16)
    write_landmarks([LandmarkFrame(v, float(t)) for v, t in zip(res.vertices, ts)], out / "landmarks.lmk")
    if res.blendshapes is not None:
        _write_csv(out / "blendshapes.csv", res.blendshapes, [f"b{k}" for k in range(res.blendshapes.shape[1])])
    return [args.model, args.audio] + ([args.reference] if args.reference else [])


def _pred_meshes(pred_dir: Path, cyl, topo):
    from . import imageio
    from .geom import TextureAtlas
    from .synth import build_textured_mesh

    verts = read_landmarks_dir(pred_dir)
    files = imageio.list_frames(pred_dir, "atlas")
    if len(files) != len(verts):
        raise FormatError(f"{pred_dir}: {len(files)} atlases but {len(verts)} landmark records")
    for f, v in zip(files, verts):
        yield lambda f=f, v=v: build_textured_mesh(v.vertices, TextureAtlas.full(imageio.read_image(f)), cyl, topo)


def cmd_blend(args, cfg: PipelineConfig) -> list:
    from . import imageio
    from .synth import blend_into_frame

    topo = _load_topology(args.topology)
    cyl = _load_cylinder(args.cylinder)
    frame_files = imageio.list_frames(args.frames)
    lms = load_landmark_stream(args.landmarks)
    meshes = list(_pred_meshes(Path(args.pred), cyl, topo))
    n = min(len(frame_files), len(lms), len(meshes))
    out = Path(args.out)
    for i in range(n):
        res = blend_into_frame(imageio.read_image(frame_files[i]), lms[i], meshes[i](), cyl, topo,
                               cfg.light_params())
        imageio.write_image(out / imageio.frame_name("frame", i, args.format), res.image)
    return [args.pred, args.frames, args.landmarks, args.cylinder]


def cmd_eval(args, cfg: PipelineConfig) -> list:
    from .metrics import evaluate_sequence

    topo = _load_topology(args.topology) if args.topology else None
    rep = evaluate_sequence(args.pred, args.gt, topo, config=cfg.to_dict())
    text = rep.to_json()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(text + "\n")
    print(json.dumps({"ssim_mean": rep.ssim_mean, "lmd_mean": rep.lmd_mean}))
    return [args.pred, args.gt]


def cmd_export_mesh(args, cfg: PipelineConfig) -> list:
    from .synth import export_obj

    topo = _load_topology(args.topology)
    cyl = _load_cylinder(args.cylinder)
    meshes = list(_pred_meshes(Path(args.pred), cyl, topo))
    if not 0 <= args.index < len(meshes):
        raise FormatError(f"frame index {args.index} out of range (0..{len(meshes) - 1})")
    out = Path(args.out)
    export_obj(meshes[args.index](), out / f"mesh_{args.index:05d}.obj")
    return [args.pred, args.cylinder]


# --- parser -------------------------------------------------------------------------------------

def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--seed", type=int, default=d(0), help="random seed (default 0)")
    p.add_argument("--config", type=Path, default=d(None), help="key = value configuration file")
    p.add_argument("--diagnostics", action="store_true", default=d(False),
                   help="also write gain / weight / alpha maps")
    p.add_argument("--threads", type=int, default=d(1), help="worker threads for per-frame stages")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="talkface", description="Audio-driven 3D talking-face pipeline.")
    parser.add_argument("--version", action="version", version=f"talkface {__version__}")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        _global_flags(p, suppress=True)
        p.set_defaults(func=fn)
        return p

    p = add("gen-synth", cmd_gen_synth, "generate a synthetic audio-visual corpus with ground truth")
    p.add_argument("--frames", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--no-specular", action="store_true")
    p.add_argument("--static", action="store_true", help="no pose or lighting variation")
    p.add_argument("--silent", action="store_true", help="silent audio (mouth at rest)")

    p = add("normalize", cmd_normalize, "pose- and lighting-normalize a video into texture atlases")
    p.add_argument("--frames", type=Path, required=True, help="directory of numbered frame images")
    p.add_argument("--landmarks", type=Path, required=True, help="landmark stream (.lmk or .csv)")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--reference", type=int, default=None, help="reference frame index (default: most frontal)")
    p.add_argument("--topology", type=Path, default=None)

    p = add("train", cmd_train, "train the audio-to-face model")
    p.add_argument("--atlases", type=Path, required=True,
                   help="directory with atlas_*.ppm, landmarks.lmk, reference.ppm, reference.json")
    p.add_argument("--audio", type=Path, required=True, help="16-bit PCM WAV")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--blendshapes", type=Path, default=None,
                   help="per-frame blendshape coefficients CSV (default: <atlases>/blendshapes.csv if present)")

    p = add("infer", cmd_infer, "predict geometry and texture from audio")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--audio", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--frames", type=int, default=None, help="number of video frames (default: audio length)")
    p.add_argument("--reference", type=Path, default=None,
                   help="normalized directory whose reference.ppm receives the predicted lip crops")

    p = add("blend", cmd_blend, "composite predicted faces into target frames")
    p.add_argument("--pred", type=Path, required=True, help="directory with atlas_*.ppm and landmarks.lmk")
    p.add_argument("--frames", type=Path, required=True)
    p.add_argument("--landmarks", type=Path, required=True)
    p.add_argument("--cylinder", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--topology", type=Path, default=None)
    p.add_argument("--format", choices=("ppm", "png"), default="ppm")

    p = add("eval", cmd_eval, "SSIM / LMD report of predictions against ground truth")
    p.add_argument("--pred", type=Path, required=True)
    p.add_argument("--gt", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--topology", type=Path, default=None)

    p = add("export-mesh", cmd_export_mesh, "write one predicted frame as OBJ + MTL + texture")
    p.add_argument("--pred", type=Path, required=True)
    p.add_argument("--cylinder", type=Path, required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--topology", type=Path, default=None)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else PipelineConfig()
        if args.threads < 1:
            raise TalkfaceError("--threads must be at least 1")
        inputs = args.func(args, cfg)
        if args.config:
            inputs = list(inputs) + [args.config]
        write_manifest(Path(args.out), args.command, args, cfg, inputs)
    except TalkfaceError as exc:
        msg = " ".join(str(exc).split())
        print(f"error code={exc.code} message={json.dumps(msg)}", file=sys.stderr)
        return 1
    except OSError as exc:
        msg = " ".join(str(exc).split())
        print(f"error code=io message={json.dumps(msg)}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
