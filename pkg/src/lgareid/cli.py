"""Command-line entry point: synth, train, eval, ablate, gradcheck, bench, report.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from lgareid import bench, gradcheck, plotting
from lgareid.datasets import ManifestError, PayloadStore, SyntheticSpec, load_manifest, write_synthetic
from lgareid.evalproto import ProtocolError, build_protocol_splits, cmc_curve, evaluate, make_protocol, rank_queries
from lgareid.losses import ClassFrequencyTable
from lgareid.pipeline import (ABLATIONS, CheckpointError, ConfigError, Model, ModelConfig, NumericalError,
                             TrainResult, TrainSchedule, apply_ablation, load_checkpoint, save_checkpoint,
                             state_checksum, train)
from lgareid.sampler import SamplerConfig
from lgareid.study import run_study, study_csv

log = logging.getLogger("lgareid")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
PROTOCOLS = ("veri", "vehicleid", "veriwild", "fixed")
CONFIG_NAME = "config.txt"


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    """Every knob of a run; the resolved copy is written to ``config.txt``."""

    seed: int = 0
    manifest: str = ""
    tag: str = "run"
    out: str = "runs"
    # model
    backbone: str = "precomputed"
    aggregation: str = "lga"
    lga_depth: int = 2
    radius: float = 1.5
    channels: int = 32
    bn_neck: bool = True
    adapter: bool = True
    adapter_relu: bool = False
    retrieval: str = "post-bn"
    input_size: int = 320
    stride: int = 16
    flip_p: float = 0.5
    erase_p: float = 0.5
    ablation: str = ""
    # loss and optimisation
    beta: float = 0.97
    margin: float = 0.0
    epochs: int = 120
    lr_multiplier: float = 1.0
    momentum: float = 0.9
    weight_decay: float = 0.0
    P: int = 8
    K: int = 6
    # evaluation
    protocol: str = "veri"
    trials: int = 0
    # filled in from the data at train time
    num_classes: int = 0
    in_channels: int = 0
    grid_h: int = 0
    grid_w: int = 0

    def model_config(self) -> ModelConfig:
        grid = (self.grid_h, self.grid_w) if self.grid_h else (20, 20)
        return ModelConfig(backbone=self.backbone, num_classes=self.num_classes, channels=self.channels,
                           in_channels=self.in_channels or self.channels, grid=grid, radius=self.radius,
                           aggregation=self.aggregation, lga_depth=self.lga_depth, bn_neck=self.bn_neck,
                           adapter=self.adapter, adapter_relu=self.adapter_relu, retrieval=self.retrieval,
                           input_size=self.input_size, stride=self.stride, flip_p=self.flip_p, erase_p=self.erase_p)

    def schedule(self) -> TrainSchedule:
        s = TrainSchedule(multiplier=self.lr_multiplier, momentum=self.momentum, weight_decay=self.weight_decay)
        return s if self.epochs == s.epochs else s.compressed(self.epochs)

    def dump(self) -> str:
        return "".join(f"{f.name} = {_fmt(getattr(self, f.name))}\n" for f in fields(self))


def _fmt(v) -> str:
    return ("true" if v else "false") if isinstance(v, bool) else str(v)


def _convert(name: str, raw: str, typ):
    typ = {"int": int, "float": float, "bool": bool, "str": str}.get(typ, typ)
    if typ is bool:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"{name}: expected a boolean, got {raw!r}")
    try:
        return typ(raw.strip())
    except ValueError:
        raise UsageError(f"{name}: cannot parse {raw!r} as {typ.__name__}") from None


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """``key = value`` lines; ``#`` starts a comment."""
    types = {f.name: f.type for f in fields(RunConfig)}
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise UsageError(f"{source}:{lineno}: unknown key {key!r}")
        out[key] = _convert(key, value, types[key])
    return out


def load_config_file(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file {p} not found")
    return parse_config_text(p.read_text(encoding="utf-8"), str(p))


def resolve(args: argparse.Namespace, base: dict | None = None) -> RunConfig:
    """Defaults, then the config file, then explicit flags; ablation last."""
    values = dict(base or {})
    if getattr(args, "config", None):
        values.update(load_config_file(args.config))
    names = {f.name for f in fields(RunConfig)}
    for key, val in vars(args).items():
        if key in names and val is not None:
            values[key] = val
    cfg = RunConfig(**values)
    if cfg.ablation:
        if cfg.ablation.lower() not in ABLATIONS:
            raise UsageError(f"unknown ablation {cfg.ablation!r}; expected one of {', '.join(ABLATIONS)}")
        mc, beta = apply_ablation(cfg.ablation, ModelConfig(num_classes=2), cfg.beta, cfg.erase_p)
        cfg = dataclasses.replace(cfg, aggregation=mc.aggregation, bn_neck=mc.bn_neck, erase_p=mc.erase_p, beta=beta)
    if cfg.protocol not in PROTOCOLS:
        raise UsageError(f"unknown protocol {cfg.protocol!r}")
    return cfg


def new_run_dir(cfg: RunConfig) -> Path:
    stamp = time.strftime("%Y%m%d-%H%M%S")
    path = Path(cfg.out) / f"{stamp}-{cfg.tag}"
    n = 1
    while path.exists():
        n += 1
        path = Path(cfg.out) / f"{stamp}-{cfg.tag}-{n}"
    path.mkdir(parents=True)
    return path


# -- data --------------------------------------------------------------------

def _load_data(manifest_path: str):
    if not manifest_path:
        raise UsageError("a manifest is required (--manifest PATH or 'manifest' in the config file)")
    if not Path(manifest_path).is_file():
        raise UsageError(f"manifest {manifest_path} not found")
    manifest = load_manifest(manifest_path)
    store = PayloadStore(manifest.root)
    try:
        data = store.load_all(manifest)
    finally:
        store.close()
    return manifest, data


def _train_labels(manifest) -> tuple[np.ndarray, np.ndarray]:
    """Indices of training records and their labels compacted onto ``0..T-1``."""
    tr = np.flatnonzero(manifest.splits == "train")
    if tr.size == 0:
        raise ManifestError("manifest has no records tagged 'train'")
    _, compact = np.unique(manifest.labels[tr], return_inverse=True)
    return tr, compact


# -- commands ----------------------------------------------------------------

def cmd_synth(args) -> int:
    spec = SyntheticSpec(num_ids=args.num_ids, counts=args.counts, train_samples=args.train_samples,
                         per_id=args.per_id, test_per_id=args.test_per_id, channels=args.channels,
                         height=args.size, width=args.size, sigma=args.sigma, seed=args.seed or 0)
    path = write_synthetic(spec, args.out)
    print(path)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = resolve(args)
    manifest, data = _load_data(cfg.manifest)
    tr, labels = _train_labels(manifest)
    cfg = dataclasses.replace(cfg, num_classes=int(labels.max()) + 1, in_channels=data.shape[1],
                              grid_h=data.shape[2], grid_w=data.shape[3])
    if cfg.backbone == "toy-conv":
        cfg = dataclasses.replace(cfg, in_channels=3, input_size=data.shape[2],
                                  grid_h=data.shape[2] // cfg.stride, grid_w=data.shape[3] // cfg.stride)
    model_cfg = cfg.model_config()
    run = new_run_dir(cfg)
    (run / CONFIG_NAME).write_text(cfg.dump(), encoding="utf-8")
    freq = ClassFrequencyTable(np.bincount(labels), cfg.beta)
    done = []

    def on_epoch(row):
        # keep the log on disk current while the run is in progress
        done.append(row)
        (run / "train_log.csv").write_text(TrainResult(None, done).log_csv(), encoding="utf-8")

    res = train(data[tr], labels, model_cfg, cfg.schedule(), SamplerConfig(cfg.P, cfg.K, cfg.seed), freq,
                seed=cfg.seed, epochs=cfg.epochs, margin=cfg.margin, on_epoch=on_epoch)
    (run / "train_log.csv").write_text(res.log_csv(), encoding="utf-8")
    save_checkpoint(run / "checkpoint.lgac", res.model.state())
    print(f"run_dir={run}")
    print(f"checksum={state_checksum(res.model.state())}")
    return EXIT_OK


def _model_from_checkpoint(ckpt: Path) -> tuple[RunConfig, Model]:
    if not ckpt.is_file():
        raise UsageError(f"checkpoint {ckpt} not found")
    state = load_checkpoint(ckpt)
    conf = ckpt.parent / CONFIG_NAME
    if not conf.is_file():
        raise CheckpointError(f"{conf} not found; the checkpoint's run configuration is required")
    cfg = RunConfig(**load_config_file(conf))
    model = Model.create(cfg.model_config(), cfg.seed)
    try:
        model.load_state(state)
    except ValueError as exc:
        raise CheckpointError(f"{ckpt}: {exc}") from None
    return cfg, model


def cmd_eval(args) -> int:
    ckpt = Path(args.checkpoint)
    run_cfg, model = _model_from_checkpoint(ckpt)
    cfg = resolve(args, {**dataclasses.asdict(run_cfg), "trials": 0})
    manifest, data = _load_data(cfg.manifest)
    proto = make_protocol(cfg.protocol, trials=cfg.trials or None, seed=cfg.seed)
    emb = model.embed(data)
    report = evaluate(emb, manifest.labels, manifest.cams, manifest.splits, proto)
    out = Path(args.out_dir) if args.out_dir else ckpt.parent
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(report.to_csv(), encoding="utf-8")
    split = build_protocol_splits(manifest.labels, manifest.splits, proto, 0)
    p, g = split.probe, split.gallery
    lists = rank_queries(emb[p], manifest.labels[p], manifest.cams[p], emb[g], manifest.labels[g],
                         manifest.cams[g], proto.same_camera_discard)
    curve = cmc_curve(lists, min(20, len(g)))
    (out / "cmc.csv").write_text("rank,cmc\n" + "".join(f"{r},{c:.6f}\n" for r, c in enumerate(curve, 1)),
                                 encoding="utf-8")
    sys.stdout.write(report.to_csv())
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = resolve(args)
    manifest, data = _load_data(cfg.manifest)
    tr, labels = _train_labels(manifest)
    if not np.array_equal(manifest.labels[tr], labels):
        raise ManifestError("ablation studies need the training identities to be labelled 0..T-1")
    cfg = dataclasses.replace(cfg, num_classes=int(labels.max()) + 1, in_channels=data.shape[1],
                              grid_h=data.shape[2], grid_w=data.shape[3])
    names = args.ablations.split(",")
    bad = [n for n in names if n.lower() not in ABLATIONS]
    if bad:
        raise UsageError(f"unknown ablation(s) {bad}; expected from {', '.join(ABLATIONS)}")
    run = new_run_dir(cfg)
    (run / CONFIG_NAME).write_text(cfg.dump(), encoding="utf-8")
    proto = make_protocol(cfg.protocol, trials=cfg.trials or None, seed=cfg.seed)
    schedule = TrainSchedule(multiplier=cfg.lr_multiplier, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    rows = run_study(data, manifest.labels, manifest.cams, manifest.splits, names, cfg.model_config(), cfg.beta,
                     cfg.epochs, proto, cfg.seed, SamplerConfig(cfg.P, cfg.K, cfg.seed), schedule)
    text = study_csv(rows)
    (run / "study.csv").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    print(f"run_dir={run}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = gradcheck.run_all(args.instances, args.seed or 0)
    text = gradcheck.results_csv(results)
    if args.out_dir:
        Path(args.out_dir).mkdir(parents=True, exist_ok=True)
        (Path(args.out_dir) / "gradcheck.csv").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERIC


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def cmd_bench(args) -> int:
    rows = bench.run_bench(args.grids, args.depths, args.channels, args.seed or 0, args.min_time)
    text = bench.bench_csv(rows)
    if args.out_dir:
        Path(args.out_dir).mkdir(parents=True, exist_ok=True)
        (Path(args.out_dir) / "bench.csv").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_report(args) -> int:
    run = Path(args.run_dir)
    if not run.is_dir():
        raise UsageError(f"{run} is not a directory")
    written = plotting.render_run(run)
    if not written:
        raise UsageError(f"no report CSVs found in {run}")
    for p in written:
        print(p)
    return EXIT_OK


# -- argument parsing --------------------------------------------------------

def _common(p: argparse.ArgumentParser, data: bool = True) -> None:
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--seed", type=int)
    if data:
        p.add_argument("--manifest")
        p.add_argument("--protocol", choices=PROTOCOLS)
        p.add_argument("--trials", type=int)
        p.add_argument("--ablation")
        p.add_argument("--lga-depth", dest="lga_depth", type=int)
        p.add_argument("--beta", type=float)
        p.add_argument("--epochs", type=int)
        p.add_argument("--tag")
        p.add_argument("--out", help="parent directory for run directories")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lgareid", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic manifest and feature blob")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--num-ids", type=int, default=50)
    p.add_argument("--counts", choices=("zipf", "uniform"), default="zipf")
    p.add_argument("--train-samples", type=int, default=400)
    p.add_argument("--per-id", type=int, default=6)
    p.add_argument("--test-per-id", type=int, default=4)
    p.add_argument("--channels", type=int, default=32)
    p.add_argument("--size", type=int, default=20)
    p.add_argument("--sigma", type=float, default=1.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model; writes a run directory")
    _common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint under a protocol")
    p.add_argument("checkpoint")
    _common(p)
    p.add_argument("--out-dir", help="where to write metrics.csv (default: the checkpoint's run directory)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and score several ablation rows from one seed")
    _common(p)
    p.add_argument("--ablations", default="baseline+re+bn,baseline+re+bn+lap,baseline+re+bn+lga,"
                                          "baseline+re+bn+lga+cb")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="analytic vs finite-difference gradients")
    _common(p, data=False)
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("bench", help="time sparse vs dense LGA cascades")
    _common(p, data=False)
    p.add_argument("--grids", type=_int_list, default=bench.GRIDS)
    p.add_argument("--depths", type=_int_list, default=bench.DEPTHS)
    p.add_argument("--channels", type=int, default=32)
    p.add_argument("--min-time", type=float, default=0.05)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("report", help="render figures from a run directory's CSVs")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"lgareid: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ManifestError, CheckpointError, ProtocolError, ConfigError, FileNotFoundError) as exc:
        print(f"lgareid: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"lgareid: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
