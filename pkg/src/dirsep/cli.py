"""Command-line interface: ``dirsep {mix,doa,separate,eval,experiment}``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.  Settings are
resolved as explicit flag > ``--config`` JSON > built-in default.  The log
level comes from the ``DIRSEP_LOG`` environment variable.
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import harness
from .doa import design_doa_solver, direction_field, load_geometry, save_direction_field, save_geometry
from .metrics import bss_eval
from .separation import save_mask, write_sources
from .spectral import AudioClip, StftConfig, read_wav, stft, write_wav

log = logging.getLogger("dirsep")

DEFAULTS = {
    "frame_size": 1024,
    "hop": 256,
    "S": 2,
    "Z": 20,
    "D": 24,
    "iters": 200,
    "seed": 0,
    "mask_mode": "conditioned",
    "filter_length": 512,
    "threads": 1,
    "format": "float",
}


class UsageError(Exception):
    pass


def _add_common(p, names):
    S = argparse.SUPPRESS
    if "stft" in names:
        p.add_argument("--frame-size", dest="frame_size", type=int, default=S)
        p.add_argument("--hop", type=int, default=S)
    if "model" in names:
        p.add_argument("--S", dest="S", type=int, default=S, help="number of sources")
        p.add_argument("--Z", dest="Z", type=int, default=S, help="dictionary size per source")
        p.add_argument("--iters", type=int, default=S)
        p.add_argument("--seed", type=int, default=S)
        p.add_argument("--mask-mode", dest="mask_mode", choices=("conditioned", "marginal"),
                       default=S)
    if "D" in names:
        p.add_argument("--D", dest="D", type=int, default=S, help="number of direction bins")
    if "eval" in names:
        p.add_argument("--filter-length", dest="filter_length", type=int, default=S)
    p.add_argument("--threads", type=int, default=S, help="BLAS threads; 1 = sequential mode")
    p.add_argument("--config", type=Path, help="JSON file of defaults for these flags")


def build_parser():
    parser = argparse.ArgumentParser(prog="dirsep", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mix", help="synthesize a 3-microphone scene from two mono WAVs")
    p.add_argument("inputs", nargs=2, type=Path)
    p.add_argument("-o", "--out", type=Path, required=True)
    p.add_argument("--format", choices=("float", "pcm16"), default=argparse.SUPPRESS)
    _add_common(p, ())

    p = sub.add_parser("doa", help="per-bin direction field of a multichannel WAV")
    p.add_argument("mixture", type=Path)
    p.add_argument("--geometry", type=Path, help="JSON array geometry (default: 3-mic scene)")
    p.add_argument("-o", "--out", type=Path, required=True, help=".json or .csv")
    _add_common(p, ("stft", "D"))

    p = sub.add_parser("separate", help="separate a multichannel mixture")
    p.add_argument("mixture", type=Path)
    p.add_argument("--algo", choices=("dntf", "dnmf", "supervised"), default="dntf")
    p.add_argument("--train", nargs="+", type=Path, help="one clean WAV per source (supervised)")
    p.add_argument("--geometry", type=Path)
    p.add_argument("-o", "--out", type=Path, required=True)
    _add_common(p, ("stft", "model", "D"))

    p = sub.add_parser("eval", help="BSS_EVAL scores of estimates against references")
    p.add_argument("--refs", nargs="+", type=Path, required=True)
    p.add_argument("--est", nargs="+", type=Path, required=True)
    p.add_argument("-o", "--out", type=Path, help="write scores JSON here (default: stdout)")
    _add_common(p, ("eval",))

    p = sub.add_parser("experiment", help="run the full comparison on one scene")
    p.add_argument("experiment_config", type=Path, nargs="?",
                   help="experiment JSON (omit for a synthetic scene)")
    p.add_argument("--algorithms", help="comma-separated subset of " + ",".join(harness.ALGORITHMS))
    p.add_argument("-o", "--out", type=Path, help="write report JSON here")
    _add_common(p, ("stft", "model", "D", "eval"))
    return parser


def resolve(args):
    """Merge defaults, ``--config`` values and explicit flags (highest wins)."""
    settings = dict(DEFAULTS)
    if getattr(args, "config", None):
        with open(args.config) as fh:
            from_file = json.load(fh)
        unknown = set(from_file) - set(DEFAULTS)
        if unknown:
            raise UsageError(f"unknown keys in {args.config}: {sorted(unknown)}")
        settings.update(from_file)
    settings.update({k: v for k, v in vars(args).items() if k in DEFAULTS})
    return settings


def _stft_config(s):
    return StftConfig(s["frame_size"], s["hop"])


def _geometry(args, clip):
    if args.geometry:
        geometry = load_geometry(args.geometry)
    elif clip.channels == 3:
        geometry = harness.scene_geometry(clip.sample_rate)
    else:
        raise UsageError("--geometry is required unless the mixture has 3 channels")
    if geometry.n_mics != clip.channels:
        raise UsageError(f"geometry has {geometry.n_mics} microphones, mixture {clip.channels} channels")
    return geometry


def cmd_mix(args, s):
    s1, s2 = (read_wav(p) for p in args.inputs)
    if s1.channels != 1 or s2.channels != 1:
        raise UsageError("mix expects mono inputs")
    scene = harness.synthesize_mixture(s1, s2)
    subtype = "FLOAT" if s["format"] == "float" else "PCM_16"
    args.out.mkdir(parents=True, exist_ok=True)
    write_wav(args.out / "mixture.wav", scene.channels, subtype)
    for i, ref in enumerate(scene.ground_truth):
        write_wav(args.out / f"ref_{i}.wav", ref, subtype)
    save_geometry(args.out / "geometry.json", scene.geometry)
    log.info("wrote scene to %s", args.out)


def cmd_doa(args, s):
    clip = read_wav(args.mixture)
    solver = design_doa_solver(_geometry(args, clip))
    field = direction_field(solver, stft(clip, _stft_config(s)), s["D"])
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_direction_field(args.out, field)


def _model_json(result, algorithm, s):
    model = result.model
    return {"algorithm": algorithm, "seed": s["seed"], "iterations": result.n_iter,
            "mask_mode": s["mask_mode"], "n_directions": s["D"], **model.to_dict()}


def cmd_separate(args, s):
    if args.algo == "supervised" and not args.train:
        raise UsageError("--algo supervised requires --train (one clean WAV per source)")
    clip = read_wav(args.mixture)
    geometry = None if args.algo == "supervised" else _geometry(args, clip)
    training = None
    if args.train:
        training = [read_wav(p) for p in args.train]
        if len(training) != s["S"]:
            raise UsageError(f"--train needs {s['S']} files, got {len(training)}")
        training = [AudioClip(t.samples.mean(axis=0), t.sample_rate) for t in training]
    result = harness.separate(clip, args.algo, geometry, _stft_config(s), s["S"], s["Z"], s["D"],
                              s["iters"], s["seed"], s["mask_mode"], training)
    out = args.out
    write_sources(out, result.sources, "FLOAT")
    with open(out / "model.json", "w") as fh:
        json.dump(_model_json(result, args.algo, s), fh)
    with open(out / "directions.json", "w") as fh:
        json.dump({"n_directions": s["D"], "sources": result.directions or []}, fh, indent=2)
    save_mask(out / "mask.bin", result.mask)
    log.info("separated %d sources into %s", len(result.sources), out)


def _mono_matrix(paths):
    clips = [read_wav(p) for p in paths]
    lengths = {len(c) for c in clips}
    if len(lengths) != 1:
        n = min(lengths)
        log.warning("trimming signals to a common length of %d samples", n)
    n = min(lengths)
    return np.vstack([c.samples.mean(axis=0)[:n] for c in clips])


def cmd_eval(args, s):
    if len(args.refs) != len(args.est):
        raise UsageError("--refs and --est need the same number of files")
    scores = bss_eval(_mono_matrix(args.refs), _mono_matrix(args.est), s["filter_length"])
    text = json.dumps(scores.to_dict(), indent=2)
    if args.out:
        args.out.write_text(text)
    else:
        print(text)


def cmd_experiment(args, s):
    overrides = {"seed": s["seed"], "n_sources": s["S"], "n_components": s["Z"],
                 "n_directions": s["D"], "n_iter": s["iters"], "frame_size": s["frame_size"],
                 "hop": s["hop"], "mask_mode": s["mask_mode"], "filter_length": s["filter_length"],
                 "threads": s["threads"]}
    # only explicit flags override values from the experiment file
    explicit = {k for k in vars(args) if k in DEFAULTS}
    key_map = {"seed": "seed", "S": "n_sources", "Z": "n_components", "D": "n_directions",
               "iters": "n_iter", "frame_size": "frame_size", "hop": "hop",
               "mask_mode": "mask_mode", "filter_length": "filter_length", "threads": "threads"}
    chosen = {key_map[k]: overrides[key_map[k]] for k in explicit if k in key_map}
    if args.algorithms:
        chosen["algorithms"] = [a.strip() for a in args.algorithms.split(",") if a.strip()]
    try:
        if args.experiment_config:
            config = harness.ExperimentConfig.from_json(args.experiment_config, **chosen)
        else:
            base = {key_map[k]: overrides[key_map[k]] for k in key_map}
            base.update(chosen)
            config = harness.ExperimentConfig(**base)
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from exc
    report = harness.run_experiment(config)
    print(harness.format_table(report))
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(json.dumps(report, indent=2))


COMMANDS = {"mix": cmd_mix, "doa": cmd_doa, "separate": cmd_separate, "eval": cmd_eval,
            "experiment": cmd_experiment}


def main(argv=None):
    logging.basicConfig(level=os.environ.get("DIRSEP_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        settings = resolve(args)
        with threadpool_limits(settings["threads"]):
            COMMANDS[args.command](args, settings)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"dirsep {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure -> exit 1 with a message
        log.debug("failure", exc_info=True)
        print(f"dirsep {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
