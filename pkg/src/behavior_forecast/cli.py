"""Command-line front end: synth, train, eval, attention.

Exit codes: 0 success, 1 usage or configuration error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import pipeline as pl
from . import synthgen
from .baselines import BASELINES
from .metrics import NoDataError, write_csv
from .models import ARCHS, ModelConfig, build_model, make_batch
from .models.transformer import attention_profile

log = logging.getLogger("behavior_forecast")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
OBS_FRAMES = (100, 10, 5, 2)
FUSION_FLAGS = {"none": "none", "dyadic-early": "early", "dyadic-late": "late", "dyadic-interactive": "interactive",
                "early": "early", "late": "late", "interactive": "interactive"}


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


@dataclass
class RunConfig:
    """Every knob of a training run.  Defaults are the published settings unless noted."""

    # model
    arch: str = "seq2seq-gru"
    fusion: str = "none"
    embed_dim: int = 512
    hidden: int = 1024
    head_widths: Optional[tuple] = None
    tcn_dilations: tuple = (1, 3, 9, 27, 59)
    tcn_kernel: int = 2
    tcn_channels: int = 512
    depth: int = 4
    heads: int = 8
    drop_path: float = 0.2
    mlp_ratio: int = 2
    joint_dim: int = 32
    stgnn_blocks: int = 3
    stgnn_kernels: tuple = (2, 3, 9, 11)
    stgnn_mixhop: int = 2
    stgnn_node_dim: int = 40
    stgnn_channels: tuple = (32, 32, 32, 64)
    stgnn_end: int = 128
    stgnn_alpha: float = 0.05
    dropout: Optional[float] = None
    batch_size: Optional[int] = None
    masked_parts: tuple = ()
    target_parts: Optional[tuple] = None
    metadata: bool = False
    personality: bool = True
    # windows
    obs_len: int = 100
    horizon: int = 10
    pred_len: int = 50
    stride: int = 50
    filter_hands: bool = True
    # optimisation
    lr: float = 1e-4
    weight_decay: float = 1e-3
    max_epochs: int = 1000
    patience: int = 20
    max_batches_per_epoch: Optional[int] = None
    time_budget: Optional[float] = None
    seed: int = 0

    def model_config(self) -> ModelConfig:
        kw = {f.name: getattr(self, f.name) for f in dataclasses.fields(ModelConfig)
              if hasattr(self, f.name) and f.name not in ("train_horizon", "metadata_dim")}
        kw["train_horizon"] = self.horizon
        kw["metadata_dim"] = (34 if self.personality else 29) if self.metadata else 0
        return ModelConfig(**kw)

    def train_config(self) -> pl.TrainConfig:
        return pl.TrainConfig(max_epochs=self.max_epochs, patience=self.patience, lr=self.lr,
                              weight_decay=self.weight_decay, batch_size=self.batch_size,
                              max_batches_per_epoch=self.max_batches_per_epoch,
                              time_budget=self.time_budget, seed=self.seed)


KEY_DOCS = {
    "arch": f"architecture, one of {', '.join(ARCHS)}",
    "fusion": "none, early, late or interactive (dyadic models)",
    "embed_dim": "frame embedding width (published 512)",
    "hidden": "recurrent hidden width (published 1024)",
    "head_widths": "widths of the dense layers before the offset output (default per family)",
    "tcn_dilations": "dilations of the five TCN blocks (published 1,3,9,27,59)",
    "tcn_kernel": "TCN kernel size (published 2)",
    "tcn_channels": "TCN channels (artifact choice)",
    "depth": "transformer depth (published 4)",
    "heads": "attention heads (published 8)",
    "drop_path": "stochastic-depth rate (published 0.2)",
    "mlp_ratio": "transformer MLP expansion (artifact choice)",
    "joint_dim": "joint token width of the spatial transformer (artifact choice)",
    "stgnn_blocks": "graph blocks (published 3)",
    "stgnn_kernels": "inception kernel sizes (published 2,3,9,11)",
    "stgnn_mixhop": "mix-hop propagation order (published 2)",
    "stgnn_node_dim": "node embedding size of the learned adjacency (published 40)",
    "stgnn_channels": "conv, residual, graph, skip channels (published 32,32,32,64)",
    "stgnn_end": "head width (published 128)",
    "stgnn_alpha": "mix-hop retain ratio (artifact choice)",
    "dropout": "dropout rate (published per family: 0.5, 0.25, 0.25, 0.3)",
    "batch_size": "batch size (published per family: 512, 512, 32, 32)",
    "masked_parts": "body-part groups zeroed in the input (face, body, hands)",
    "target_parts": "groups the loss is restricted to (default: whole skeleton)",
    "metadata": "fuse participant metadata (true/false)",
    "personality": "include the five personality traits in the metadata (published 34 values)",
    "obs_len": "observed frames (published 100 = 4 s)",
    "horizon": "training horizon: 10 short-term (rolled out to 50) or 50 long-term",
    "pred_len": "predicted frames per segment (published 50)",
    "stride": "segment stride (published 50)",
    "filter_hands": "drop segments whose hand reappears after the observation",
    "lr": "AMSGrad learning rate (published 1e-4)",
    "weight_decay": "weight decay (published 1e-3)",
    "max_epochs": "epoch cap (artifact choice)",
    "patience": "early-stopping patience (published 20)",
    "max_batches_per_epoch": "cap on batches per epoch (artifact choice, unset = all)",
    "time_budget": "wall-clock training budget in seconds (artifact choice, unset = none)",
    "seed": "random seed",
}


def _coerce(name: str, raw, default):
    """Parse a key=value string into the type implied by the field default."""
    if not isinstance(raw, str):
        return tuple(raw) if isinstance(raw, list) else raw
    s = raw.strip()
    if s.lower() in ("none", "null", ""):
        return None
    if isinstance(default, bool) or name in ("metadata", "personality", "filter_hands"):
        if s.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise UsageError(f"{name}: expected a boolean, got {raw!r}")
        return s.lower() in ("true", "1", "yes")
    if isinstance(default, tuple) or name in ("head_widths", "target_parts"):
        items = [x.strip() for x in s.split(",") if x.strip()]
        try:
            return tuple(int(x) for x in items)
        except ValueError:
            return tuple(items)
    if isinstance(default, int) or name in ("batch_size", "max_batches_per_epoch"):
        return int(s)
    if isinstance(default, float) or name in ("dropout", "time_budget"):
        return float(s)
    return s


def parse_config_text(text: str) -> dict:
    """JSON object or flat ``key = value`` lines (``#`` starts a comment)."""
    s = text.strip()
    if s.startswith("{"):
        return json.loads(s)
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {n}: expected key = value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def make_run_config(values: dict) -> RunConfig:
    fields = {f.name: f.default for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(values) - set(fields))
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    kw = {k: _coerce(k, v, fields[k]) for k, v in values.items()}
    cfg = RunConfig(**kw)
    if cfg.fusion not in FUSION_FLAGS:
        raise UsageError(f"unknown fusion {cfg.fusion!r}")
    cfg.fusion = FUSION_FLAGS[cfg.fusion]
    try:
        cfg.model_config()
    except (ValueError, TypeError) as e:
        raise UsageError(str(e)) from e
    return cfg


# -- commands -----------------------------------------------------------------

def cmd_synth(args) -> int:
    kw = {}
    if args.noise_fraction is not None:
        kw["noise_fraction"] = args.noise_fraction
    if args.noise_radius is not None:
        kw["noise_radius"] = args.noise_radius
    if args.lag is not None:
        kw["lag"] = args.lag
    if args.preset not in synthgen.PRESETS:
        raise UsageError(f"unknown preset {args.preset!r}")
    try:
        path = synthgen.make_dataset(args.out, args.seed, args.preset, args.sessions, args.length, **kw)
    except ValueError as e:
        raise UsageError(str(e)) from e
    print(path)
    return EXIT_OK


def _load(directory, cfg: RunConfig, obs_len: int) -> list[pl.Segment]:
    d = Path(directory)
    if not (d / "sessions.jsonl").exists():
        raise DataError(f"no sessions.jsonl in {d}")
    try:
        segs = [s for sess in pl.load_split(d, cfg.personality)
                for s in pl.session_segments(sess, obs_len, cfg.pred_len, cfg.stride)]
    except (ValueError, KeyError, OSError) as e:
        raise DataError(f"{d}: {e}") from e
    if cfg.filter_hands:
        segs, rep = pl.filter_segments(segs)
        log.info("%s: kept %d segments, dropped %.1f%%", d, len(segs), 100 * rep.fraction)
    if not segs:
        raise DataError(f"{d}: no usable segments")
    return segs


def _run_config_from_args(args) -> RunConfig:
    values = {}
    if args.config:
        p = Path(args.config)
        if not p.exists():
            raise UsageError(f"config file {p} not found")
        try:
            values.update(parse_config_text(p.read_text()))
        except json.JSONDecodeError as e:
            raise UsageError(f"config file {p}: {e}") from e
    for kv in args.set or []:
        if "=" not in kv:
            raise UsageError(f"--set expects key=value, got {kv!r}")
        k, v = kv.split("=", 1)
        values[k.strip()] = v
    for key in ("arch", "horizon", "fusion", "seed", "lr", "max_epochs", "batch_size", "embed_dim", "hidden"):
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    if args.obs_frames is not None:
        values["obs_len"] = args.obs_frames
    return make_run_config(values)


def cmd_train(args) -> int:
    cfg = _run_config_from_args(args)
    mcfg = cfg.model_config()
    data = Path(args.data)
    train_segs = _load(data / "train", cfg, cfg.obs_len)
    val_segs = _load(data / "val", cfg, cfg.obs_len)
    if mcfg.metadata_dim and train_segs[0].metadata is None:
        raise DataError("metadata fusion requested but the dataset has no metadata")
    try:
        model = build_model(mcfg)
    except ValueError as e:
        raise UsageError(str(e)) from e
    log.info("%s: %d parameters", mcfg.arch, model.num_parameters())
    res = pl.train(model, train_segs, val_segs, cfg.train_config())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "model.ckpt"
    pl.save_model(ckpt, model, {"best_epoch": res.best_epoch, "best_val": res.best_val})
    res.write_history(out / "history.csv")
    hashes = {}
    for split in ("train", "val"):
        for f in sorted((data / split).glob("*.jsonl")):
            hashes[f"{split}/{f.name}"] = pl.file_sha256(f)
    pl.write_manifest(out / "manifest.json", command="train", run_config=dataclasses.asdict(cfg),
                      seed=cfg.seed, dataset_sha256=hashes, checkpoint_sha256=pl.file_sha256(ckpt),
                      best_epoch=res.best_epoch, best_val_loss=res.best_val, epochs=len(res.history),
                      parameters=model.num_parameters())
    print(ckpt)
    return EXIT_OK


def _predictors(args):
    preds = []
    for name in args.baseline or []:
        if name not in BASELINES:
            raise UsageError(f"unknown baseline {name!r}; choose from {', '.join(BASELINES)}")
        preds.append((name, pl.BaselinePredictor(name), None))
    for path in args.checkpoint or []:
        if not Path(path).exists():
            raise DataError(f"checkpoint {path} not found")
        try:
            model = pl.load_model(path)
        except (ValueError, KeyError) as e:
            raise DataError(f"{path}: {e}") from e
        preds.append((Path(path).stem if len(args.checkpoint) > 1 else "model", pl.ModelPredictor(model), model))
    if not preds:
        raise UsageError("give at least one --baseline or --checkpoint")
    return preds


def cmd_eval(args) -> int:
    preds = _predictors(args)
    cfg = make_run_config({} if args.obs_frames is None else {"obs_len": args.obs_frames})
    obs_len = max([cfg.obs_len] + [m.config.obs_len for _, _, m in preds if m is not None])
    segs = _load(args.data, cfg, obs_len)
    if args.sweep_freeze and args.freeze_after is not None:
        raise UsageError("--freeze-after and --sweep-freeze are exclusive")
    rows, per_segment = [], []
    for name, predictor, _ in preds:
        windows = [s.window(noisy=args.noisy) for s in segs]
        full = predictor(windows, args.horizon)
        ns = range(args.horizon + 1) if args.sweep_freeze else [args.freeze_after]
        for n in ns:
            label = name if n is None else f"{name}@{n}"
            ev = pl.evaluate(lambda w, H, _p=full: _p, segs, args.noisy, args.horizon, n)
            rows.append((label, ev.report))
            if not args.sweep_freeze:
                for seg, rep in zip(ev.segments, ev.per_segment):
                    per_segment.append({"predictor": label, "session_id": seg.session_id,
                                        "participant_id": seg.participant_id, "start": seg.start,
                                        "metrics": {k: (None if np.isnan(v) else v) for k, v in rep.as_row().items()}})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "metrics.csv", rows)
    (out / "segments.json").write_text(json.dumps(per_segment, indent=1) + "\n")
    print(out / "metrics.csv")
    return EXIT_OK


def cmd_attention(args) -> int:
    if not Path(args.checkpoint).exists():
        raise DataError(f"checkpoint {args.checkpoint} not found")
    model = pl.load_model(args.checkpoint)
    if not model.config.arch.startswith("transformer"):
        raise UsageError(f"{model.config.arch} has no attention to profile")
    cfg = make_run_config({"obs_len": model.config.obs_len})
    segs = _load(args.data, cfg, model.config.obs_len)
    profiles = []
    for i in range(0, len(segs), 64):
        batch = make_batch([s.window() for s in segs[i:i + 64]], model.config.obs_len, model.skel)
        profiles.append(attention_profile(model, batch))
    prof = np.concatenate(profiles)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample"] + [f"frame_{t}" for t in range(prof.shape[1])])
        w.writerow(["mean"] + [repr(float(v)) for v in prof.mean(axis=0)])
        for seg, row in zip(segs, prof):
            w.writerow([f"{seg.participant_id}@{seg.start}"] + [repr(float(v)) for v in row])
    print(out)
    return EXIT_OK


# -- parser -------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _keys_epilog() -> str:
    lines = ["configuration keys (--config FILE or --set key=value):"]
    defaults = {f.name: f.default for f in dataclasses.fields(RunConfig)}
    for k, doc in KEY_DOCS.items():
        lines.append(f"  {k} = {defaults[k]!r}: {doc}")
    lines.append("config files are JSON objects or flat 'key = value' lines")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="behavior-forecast", description="Forecast face, body and hand landmarks in dyadic conversations.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--preset", default="conversational", help=f"one of {', '.join(synthgen.PRESETS)}")
    s.add_argument("--sessions", type=int, default=10)
    s.add_argument("--length", type=int, default=400, help="frames per session")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default="data")
    s.add_argument("--noise-fraction", type=float, help="fraction of jittered frames (noisy preset)")
    s.add_argument("--noise-radius", type=float, help="hand jitter radius in pixels (noisy preset)")
    s.add_argument("--lag", type=int, help="frames between a gesture and the partner's nod")

    t = sub.add_parser("train", help="train a forecaster", epilog=_keys_epilog(),
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    t.add_argument("--data", required=True, help="dataset directory with train/ and val/")
    t.add_argument("--out", default="run")
    t.add_argument("--arch", choices=ARCHS)
    t.add_argument("--horizon", type=int, choices=(10, 50))
    t.add_argument("--fusion", choices=sorted(FUSION_FLAGS))
    t.add_argument("--obs-frames", type=int, choices=OBS_FRAMES)
    t.add_argument("--seed", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--max-epochs", dest="max_epochs", type=int)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--embed-dim", dest="embed_dim", type=int)
    t.add_argument("--hidden", type=int)
    t.add_argument("--config", help="JSON or key=value file")
    t.add_argument("--set", action="append", metavar="KEY=VALUE")

    e = sub.add_parser("eval", help="evaluate baselines and checkpoints")
    e.add_argument("--data", required=True, help="split directory (e.g. data/test)")
    e.add_argument("--out", default="eval")
    e.add_argument("--baseline", action="append", help=f"one of {', '.join(BASELINES)}")
    e.add_argument("--checkpoint", action="append")
    e.add_argument("--noisy", action="store_true", help="observe raw (noisy) frames, last frame kept clean")
    e.add_argument("--freeze-after", type=int, help="keep N predicted frames, then hold still")
    e.add_argument("--sweep-freeze", action="store_true", help="one row per N = 0..horizon")
    e.add_argument("--horizon", type=int, default=50)
    e.add_argument("--obs-frames", type=int, choices=OBS_FRAMES)

    a = sub.add_parser("attention", help="per-frame attention profile of a transformer checkpoint")
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--data", required=True)
    a.add_argument("--out", default="attention.csv")
    return p


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "attention": cmd_attention}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, NoDataError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except pl.NumericalError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
