"""Command-line interface: ``latdyn <command> [--config run.json] [flags]``.

Commands
--------
gen-synthetic       synthetic motions, descriptors, latents and a manifest
extract-features    pose descriptors (.featmat) from a motion (.quatseq)
fit-latent-space    PCA + standardizer from feature matrices
train               curriculum training, writes a checkpoint and a loss CSV
rollout             autoregressive latent trajectory for a motion
eval                teacher-forced / free-rollout / rest-return metrics

Exit codes: 0 success, 2 configuration error, 3 dimension or format error,
4 numerical divergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import io
from .dynamics import ForceGains, LatentState, VARIANTS, init_dynamics_model, rollout
from .exceptions import ConfigError, DimensionError, DivergenceError, FitError
from .features import JointGroupMap, descriptor_sequence
from .latent_space import fit_latent_space
from .metrics import free_rollout_mse, rest_return, rollout_throughput, target_variance, teacher_forced_mse
from .oracle import make_dataset, make_system
from .training import CurriculumSchedule, TrainConfig, TrainState, TrainingClip, new_train_state, train

logger = logging.getLogger("latdyn")

EXIT_OK, EXIT_CONFIG, EXIT_DIMENSION, EXIT_DIVERGENCE = 0, 2, 3, 4
SEED_ENV = "LATDYN_SEED"
MANIFEST = "manifest.json"
EVAL_HORIZONS = (10, 50, 200)


@dataclass
class RunConfig:
    """Every tunable of a run. Unknown keys in a config file are rejected."""

    seed: int = 0
    d_z: int = 8
    group_map: str | None = None
    variant: str = "full"
    pose_gain: float = 1.0
    damp_gain: float = 1.0
    spring_gain: float = 1.0
    # training
    epochs: int = 1500
    batch_size: int = 256
    lr: float = 5e-5
    velocity_reset: bool = True
    sampling: str = "uniform"
    horizon_start: int = 4
    horizon_end: int = 50
    tf_start: float = 0.9
    tf_end: float = 0.02
    hidden_width: int = 256
    n_hidden: int = 4
    init_scale: float = 1e-2
    rest_frame: int = 0
    # pose descriptors
    reference_frame: int = 0
    # synthetic data
    n_clips: int = 20
    n_frames: int = 500
    quiescent_tail: int = 0
    noise_std: float = 0.0
    rho_min: float = 0.85
    rho_max: float = 0.97
    # latent space
    latent_eps: float = 1e-8

    def __post_init__(self):
        for f in fields(self):
            val = getattr(self, f.name)
            if f.type in ("int", int) and (isinstance(val, bool) or not isinstance(val, int)):
                raise ConfigError(f"config key {f.name!r} must be an integer, got {val!r}")
            if f.type in ("float", float):
                if isinstance(val, bool) or not isinstance(val, (int, float)):
                    raise ConfigError(f"config key {f.name!r} must be a number, got {val!r}")
                setattr(self, f.name, float(val))
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.d_z < 1 or self.hidden_width < 1 or self.n_hidden < 1:
            raise ConfigError("d_z, hidden_width and n_hidden must be positive")
        if not 0 < self.rho_min <= self.rho_max < 1:
            raise ConfigError("need 0 < rho_min <= rho_max < 1")

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path=None, env=None) -> "RunConfig":
        data = {}
        if path is not None:
            try:
                data = json.loads(Path(path).read_text())
            except OSError as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from exc
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        cfg = cls.from_dict(data)
        env = os.environ if env is None else env
        if env.get(SEED_ENV):
            try:
                cfg.seed = int(env[SEED_ENV])
            except ValueError as exc:
                raise ConfigError(f"{SEED_ENV} must be an integer, got {env[SEED_ENV]!r}") from exc
        return cfg

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def gains(self) -> ForceGains:
        return ForceGains(self.pose_gain, self.damp_gain, self.spring_gain)

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.epochs, self.batch_size, self.lr, self.seed, self.velocity_reset, self.sampling)

    def schedule(self) -> CurriculumSchedule:
        return CurriculumSchedule(max(self.epochs, 1), self.horizon_start, self.horizon_end, self.tf_start, self.tf_end)

    def load_group_map(self) -> JointGroupMap:
        if self.group_map is None:
            return JointGroupMap.default()
        try:
            return JointGroupMap.from_json(self.group_map)
        except OSError as exc:
            raise ConfigError(f"cannot read group map {self.group_map}: {exc}") from exc


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1, allow_nan=False) + "\n"


def _write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(_canonical(obj))


# --------------------------------------------------------------------------
# datasets


def load_dataset(directory):
    """``(clips, manifest)`` from a dataset directory written by gen-synthetic."""
    directory = Path(directory)
    try:
        manifest = json.loads((directory / MANIFEST).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read dataset manifest in {directory}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise io.FormatError(f"{directory / MANIFEST}: invalid JSON ({exc})") from exc
    clips = []
    for entry in manifest.get("clips", []):
        desc = io.load_featmat(directory / entry["descriptors"])
        lat = io.load_featmat(directory / entry["latents"])
        clips.append(TrainingClip(lat, desc))
    if not clips:
        raise ConfigError(f"dataset {directory} lists no clips")
    return clips, manifest


def cmd_gen_synthetic(cfg: RunConfig, out) -> dict:
    """Write motions, descriptors, latents and ``manifest.json`` under ``out``."""
    out = Path(out)
    group_map = cfg.load_group_map()
    system = make_system(cfg.d_z, cfg.seed, group_map, (cfg.rho_min, cfg.rho_max))
    data = make_dataset(system, cfg.n_clips, cfg.n_frames, cfg.quiescent_tail, [cfg.seed, 1], group_map, cfg.noise_std)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    entries = []
    for i, (clip, motion) in enumerate(zip(data.clips, data.motions)):
        name = f"clip_{i:03d}"
        entry = {
            "name": name,
            "motion": f"{name}.quatseq",
            "descriptors": f"{name}.desc.featmat",
            "latents": f"{name}.latent.featmat",
            "n_frames": len(clip),
            "quiescent_tail": cfg.quiescent_tail,
        }
        io.save_quatseq(out / entry["motion"], motion)
        io.save_featmat(out / entry["descriptors"], clip.descriptors, {"kind": "descriptors"})
        io.save_featmat(out / entry["latents"], clip.targets, {"kind": "latents"})
        entries.append(entry)
    manifest = {
        "format": "latdyn-dataset",
        "version": io.FORMAT_VERSION,
        "seed": cfg.seed,
        "generator": {k: v for k, v in data.meta.items() if k != "seed"},
        "system": system.to_dict(),
        "group_map": group_map.to_dict(),
        "clips": entries,
    }
    _write_json(out / MANIFEST, manifest)
    return manifest


def cmd_extract_features(cfg: RunConfig, motion_path, out):
    seq = io.load_quatseq(motion_path)
    if not -seq.n_frames <= cfg.reference_frame < seq.n_frames:
        raise ConfigError(f"reference frame {cfg.reference_frame} outside a motion of {seq.n_frames} frames")
    desc = descriptor_sequence(seq, cfg.load_group_map(), seq.data[cfg.reference_frame])
    io.save_featmat(out, desc, {"kind": "descriptors"})
    return desc


def cmd_fit_latent_space(cfg: RunConfig, feature_paths, out, latents_out=None) -> dict:
    """Fit on the row-stacked feature files; the rest frame indexes the first file."""
    feats = [io.load_featmat(p) for p in feature_paths]
    if len({f.shape[1] for f in feats}) != 1:
        raise DimensionError("feature files disagree on the number of columns")
    first = feats[0]
    if not -len(first) <= cfg.rest_frame < len(first):
        raise ConfigError(f"rest frame {cfg.rest_frame} outside the first feature file ({len(first)} rows)")
    stacked = np.concatenate(feats)
    model = fit_latent_space(stacked, cfg.d_z, cfg.latent_eps, 0)
    model.z_ref = model.encode(first[cfg.rest_frame])
    io.save_latent_space(out, model)
    if latents_out is not None:
        io.save_featmat(latents_out, model.encode(stacked), {"kind": "latents"})
    gram = model.W @ model.W.T
    return {
        "n_samples": int(stacked.shape[0]),
        "n_features": int(stacked.shape[1]),
        "d_z": model.d_z,
        "orthonormality_error": float(np.max(np.abs(gram - np.eye(model.d_z)))),
    }


def _config_echo(cfg: RunConfig) -> dict:
    return cfg.to_dict()


def cmd_train(cfg: RunConfig, dataset, out, loss_csv=None, resume=None, stop_epoch=None, latent_space=None):
    """Train on a dataset directory, optionally resuming from a checkpoint."""
    clips, manifest = load_dataset(dataset)
    d_z = clips[0].targets.shape[1]
    if d_z != cfg.d_z:
        raise DimensionError(f"dataset latents have d_z={d_z} but config says d_z={cfg.d_z}")
    d_p = clips[0].descriptors.shape[1]
    group_map = JointGroupMap.from_dict(manifest["group_map"]) if "group_map" in manifest else cfg.load_group_map()
    ls = io.load_latent_space(latent_space) if latent_space is not None else None
    tc = cfg.train_config()
    schedule = cfg.schedule()
    if resume is not None:
        ck = io.load_checkpoint(resume)
        if ck.config != _config_echo(cfg):
            raise ConfigError("resume checkpoint was trained with a different configuration")
        state = TrainState(ck.model, ck.optimizer, ck.epoch, list(ck.history))
        ls = ck.latent_space if ls is None else ls
    else:
        if ls is not None and ls.z_ref is not None:
            z_ref = ls.z_ref
        else:
            if not -len(clips[0]) <= cfg.rest_frame < len(clips[0]):
                raise ConfigError(f"rest frame {cfg.rest_frame} outside the first clip")
            z_ref = clips[0].targets[cfg.rest_frame]
        model = init_dynamics_model(d_z, z_ref, d_p, cfg.hidden_width, cfg.n_hidden, cfg.seed, cfg.variant,
                                    output_scale=cfg.init_scale)
        state = new_train_state(model, tc)
    state = train(state.model, clips, tc, schedule, state, stop_epoch)
    ck = io.Checkpoint(state.model, ls, state.optimizer, state.epoch, state.history, _config_echo(cfg), group_map)
    io.save_checkpoint(out, ck)
    if loss_csv is not None:
        io.write_loss_csv(loss_csv, state.history)
    return ck


def _parse_init_latent(text, d_z):
    if text is None:
        return None
    if Path(text).is_file():
        z = io.load_featmat(text).reshape(-1)
    else:
        try:
            z = np.array([float(x) for x in text.split(",")])
        except ValueError as exc:
            raise ConfigError(f"--init-latent must be a .featmat path or comma-separated numbers, got {text!r}") from exc
    if z.shape != (d_z,):
        raise DimensionError(f"initial latent has {z.size} values, model expects {d_z}")
    return z


def cmd_rollout(cfg: RunConfig, checkpoint, out, motion=None, descriptors=None, init_latent=None, variant=None):
    """Roll a checkpoint over a motion (or precomputed descriptors)."""
    ck = io.load_checkpoint(checkpoint)
    model = ck.model
    if variant is not None and variant != model.variant:
        model = dataclasses.replace(model, variant=variant)
    if (motion is None) == (descriptors is None):
        raise ConfigError("give exactly one of --motion or --descriptors")
    if motion is not None:
        seq = io.load_quatseq(motion)
        gm = ck.group_map or cfg.load_group_map()
        desc = descriptor_sequence(seq, gm, seq.data[cfg.reference_frame])
    else:
        desc = io.load_featmat(descriptors)
    if desc.shape[1] != model.d_p:
        raise DimensionError(f"descriptors have {desc.shape[1]} columns, model expects {model.d_p}")
    z0 = _parse_init_latent(init_latent, model.d_z)
    init = None if z0 is None else LatentState(z0, np.zeros(model.d_z))
    gains = cfg.gains()
    zs, _ = rollout(model, desc, init, gains)
    meta = {
        "kind": "trajectory",
        "variant": model.variant,
        "gains": dataclasses.asdict(gains),
        "init_latent": None if z0 is None else z0.tolist(),
    }
    io.save_featmat(out, zs, meta)
    return zs


def evaluate(model, clips, manifest=None, gains=None) -> dict:
    """Deterministic metrics for a model on a list of clips."""
    var = target_variance(clips)
    tf = teacher_forced_mse(model, clips, gains)
    free = {str(h): free_rollout_mse(model, clips, h, gains) for h in EVAL_HORIZONS}
    metrics = {
        "target_variance": var.tolist(),
        "teacher_forced_mse": tf.tolist(),
        "teacher_forced_mse_mean": float(tf.mean()),
        "free_rollout_mse": {h: (None if np.isnan(v).any() else v.tolist()) for h, v in free.items()},
        "free_rollout_mse_mean": {h: (None if np.isnan(v).any() else float(v.mean())) for h, v in free.items()},
        "rest_return": None,
    }
    tails = [e.get("quiescent_tail", 0) for e in manifest["clips"]] if manifest else [0] * len(clips)
    rr = []
    for clip, tail in zip(clips, tails):
        if 0 < tail < len(clip):
            at_stop, terminal = rest_return(model, clip, tail, gains)
            rr.append({"at_cessation": at_stop, "terminal": terminal,
                       "ratio": terminal / at_stop if at_stop > 0 else None})
    if rr:
        metrics["rest_return"] = rr
    return metrics


def _finite(obj):
    if isinstance(obj, dict):
        return all(_finite(v) for v in obj.values())
    if isinstance(obj, list):
        return all(_finite(v) for v in obj)
    if isinstance(obj, float):
        return np.isfinite(obj)
    return True


def cmd_eval(cfg: RunConfig, checkpoint, dataset, out=None) -> dict:
    ck = io.load_checkpoint(checkpoint)
    clips, manifest = load_dataset(dataset)
    if clips[0].targets.shape[1] != ck.model.d_z:
        raise DimensionError(f"dataset has d_z={clips[0].targets.shape[1]}, checkpoint has {ck.model.d_z}")
    metrics = evaluate(ck.model, clips, manifest, cfg.gains())
    if not _finite(metrics):
        raise DivergenceError("evaluation produced non-finite errors")
    digest = hashlib.sha256(_canonical(metrics).encode()).hexdigest()
    t0 = time.perf_counter()
    steps_per_s = rollout_throughput(ck.model, 100, repeats=1)
    report = {
        "metrics": metrics,
        "metrics_sha256": digest,
        # wall-clock numbers live here only and are excluded from the digest
        "timing": {"per_step_seconds": 1.0 / steps_per_s, "eval_seconds": time.perf_counter() - t0},
    }
    if out is not None:
        _write_json(out, report)
    return report


# --------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="latdyn", description="Spring-damper latent dynamics toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON run configuration")
        return p

    p = add("gen-synthetic", "generate an oracle dataset")
    p.add_argument("--out", required=True, help="output directory")

    p = add("extract-features", "pose descriptors from a motion file")
    p.add_argument("--motion", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--group-map", help="overrides the config group map")

    p = add("fit-latent-space", "fit PCA + standardizer")
    p.add_argument("--features", required=True, nargs="+")
    p.add_argument("--d-z", type=int, help="overrides the config d_z")
    p.add_argument("--out", required=True)
    p.add_argument("--latents-out")

    p = add("train", "train a dynamics model")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="checkpoint path (.ldck)")
    p.add_argument("--loss-csv")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--stop-epoch", type=int, help="stop early at this epoch (schedule unchanged)")
    p.add_argument("--latent-space", help="latent-space model to embed in the checkpoint")

    p = add("rollout", "roll out a trained model")
    p.add_argument("--checkpoint", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--motion")
    src.add_argument("--descriptors")
    p.add_argument("--out", required=True, help="trajectory path (.featmat)")
    p.add_argument("--pose-gain", type=float)
    p.add_argument("--damp-gain", type=float)
    p.add_argument("--spring-gain", type=float)
    p.add_argument("--init-latent", help="comma-separated values or a .featmat file")
    p.add_argument("--variant", choices=VARIANTS)

    p = add("eval", "evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", help="metrics JSON path (default: stdout)")
    for name in ("--pose-gain", "--damp-gain", "--spring-gain"):
        p.add_argument(name, type=float)
    return parser


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    updates = {}
    for key in ("pose_gain", "damp_gain", "spring_gain", "group_map", "d_z"):
        val = getattr(args, key, None)
        if val is not None:
            updates[key] = val
    return dataclasses.replace(cfg, **updates) if updates else cfg


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _apply_overrides(RunConfig.load(args.config), args)
        if args.command == "gen-synthetic":
            cmd_gen_synthetic(cfg, args.out)
        elif args.command == "extract-features":
            cmd_extract_features(cfg, args.motion, args.out)
        elif args.command == "fit-latent-space":
            print(_canonical(cmd_fit_latent_space(cfg, args.features, args.out, args.latents_out)), end="")
        elif args.command == "train":
            cmd_train(cfg, args.dataset, args.out, args.loss_csv, args.resume, args.stop_epoch, args.latent_space)
        elif args.command == "rollout":
            cmd_rollout(cfg, args.checkpoint, args.out, args.motion, args.descriptors, args.init_latent, args.variant)
        elif args.command == "eval":
            report = cmd_eval(cfg, args.checkpoint, args.dataset, args.out)
            if args.out is None:
                print(_canonical(report), end="")
    except DivergenceError as exc:
        logger.error("divergence: %s", exc)
        return EXIT_DIVERGENCE
    except (DimensionError, FitError) as exc:
        logger.error("%s", exc)
        return EXIT_DIMENSION
    except ConfigError as exc:
        logger.error("configuration: %s", exc)
        return EXIT_CONFIG
    except OSError as exc:
        logger.error("i/o: %s", exc)
        return EXIT_CONFIG
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
