"""Command line front end: ``softspot {extract,train,spot,evaluate,sweep,synth}``.

Configuration comes from an optional YAML/JSON file (``--config``) with flag
overrides on top.  Everything is validated before any output is written; on
failure a single JSON line ``{"status": "error", ...}`` goes to stderr and the
exit code is 2 (validation) or 1 (runtime failure).
"""

import argparse
import csv
import hashlib
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .dataio import (DatasetError, SyntheticConfig, export_report, export_timeline, generate_synthetic,
                     load_dataset, load_frames, read_cache_header, read_feature_array, write_feature_cache)
from .dataio.cache import CacheFormatError
from .evaluation import CLASSES, P_GRID, ProtocolConfig, VideoData, run_protocol, spot_video, sweep_p
from .flow import TvL1Params
from .preprocess import extract_video_features
from .pseudolabel import LabelFunction, generate_labels
from .softnet import (ModelFormatError, TrainConfig, build_training_set, load_model, predict_scores,
                      save_model, train)
from .spotting import ScoreSeries, compute_threshold, smooth_scores

log = logging.getLogger("softspot")

PROFILES = {
    "casme2": {"k": {"macro": 18, "micro": 6}, "p": 0.55},
    "samm": {"k": {"macro": 174, "micro": 37}, "p": 0.5},
}
COMMANDS = ("extract", "train", "spot", "evaluate", "sweep", "synth")
NEEDS_DATASET = ("extract", "train", "spot", "evaluate", "sweep")


class ConfigError(ValueError):
    def __init__(self, errors):
        super().__init__("; ".join(errors))
        self.errors = list(errors)


@dataclass
class RunConfig:
    dataset_root: str | None = None
    out: str = "out"
    expression: str | None = None
    profile: str = "casme2"
    k: dict = field(default_factory=dict)
    p: float | None = None
    label_fn: str = "unit_step"
    learning_rate: float = 5e-4
    epochs: int = 10
    negative_sample_rate: int = 2
    augment: dict = field(default_factory=lambda: {"macro": False, "micro": True})
    iou_threshold: float = 0.5
    seed: int = 0
    jobs: int = 1
    model: str | None = None
    tvl1: dict = field(default_factory=dict)
    synthetic: dict = field(default_factory=dict)

    @property
    def classes(self):
        return (self.expression,) if self.expression else CLASSES

    def to_dict(self):
        return asdict(self)

    def protocol(self):
        return ProtocolConfig(k=dict(self.k), p=self.p, iou_threshold=self.iou_threshold,
                              label_function=self.label_fn, learning_rate=self.learning_rate,
                              epochs=self.epochs, seed=self.seed,
                              negative_sample_rate=self.negative_sample_rate,
                              augment=dict(self.augment), classes=self.classes)

    def tvl1_params(self):
        return TvL1Params(**self.tvl1)


def _read_config_file(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError([f"cannot read config file {path}: {exc.strerror}"]) from None
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError([f"config file {path} is not valid YAML/JSON: {exc}"]) from None
    if not isinstance(data, dict):
        raise ConfigError([f"config file {path} must hold a mapping at the top level"])
    return data


def build_config(command, args):
    """Merge profile defaults, config file and flags into a validated :class:`RunConfig`."""
    errors = []
    data = _read_config_file(args.config) if args.config else {}
    known = {f.name for f in fields(RunConfig)}
    errors += [f"unknown config key {key!r}" for key in sorted(set(data) - known)]
    data = {key: v for key, v in data.items() if key in known}
    overrides = {"dataset_root": args.dataset_root, "out": args.out, "expression": args.expression,
                 "p": args.p, "label_fn": args.label_fn, "seed": args.seed, "jobs": args.jobs,
                 "model": getattr(args, "model", None)}
    data.update({key: v for key, v in overrides.items() if v is not None})

    profile = data.get("profile", "casme2")
    if profile not in PROFILES:
        errors.append(f"profile must be one of {sorted(PROFILES)}, got {profile!r}")
        profile = "casme2"
    k = dict(PROFILES[profile]["k"])
    if not isinstance(data.get("k", {}), dict):
        errors.append("k in the config file must map expression class to an integer")
    else:
        k.update(data.get("k", {}))
    if args.k is not None:
        if data.get("expression") is None:
            errors.append("--k needs --expression to say which class it applies to")
        else:
            k[data["expression"]] = args.k
    data["k"] = k
    if data.get("p") is None:
        data["p"] = PROFILES[profile]["p"]
    try:
        cfg = RunConfig(**data)
    except TypeError as exc:
        raise ConfigError(errors + [str(exc)]) from None
    errors += validate(command, cfg)
    if errors:
        raise ConfigError(errors)
    cfg.label_fn = LabelFunction.parse(cfg.label_fn).value
    return cfg


def validate(command, cfg):
    """Every problem with ``cfg`` for ``command``, as a list of messages."""
    errors = []
    if cfg.expression is not None and cfg.expression not in CLASSES:
        errors.append(f"expression must be macro or micro, got {cfg.expression!r}")
    for cls in CLASSES:
        v = cfg.k.get(cls)
        if not isinstance(v, int) or isinstance(v, bool) or v < 1:
            errors.append(f"k for {cls} must be an integer >= 1, got {v!r}")
    if not isinstance(cfg.p, (int, float)) or not 0.0 <= cfg.p <= 1.0:
        errors.append(f"p must lie in [0, 1], got {cfg.p!r}")
    try:
        LabelFunction.parse(cfg.label_fn)
    except ValueError:
        errors.append(f"label function must be linear, step or unit, got {cfg.label_fn!r}")
    if not isinstance(cfg.learning_rate, (int, float)) or not cfg.learning_rate > 0:
        errors.append("learning_rate must be > 0")
    for name in ("epochs", "negative_sample_rate", "jobs"):
        v = getattr(cfg, name)
        if not isinstance(v, int) or v < 1:
            errors.append(f"{name} must be an integer >= 1, got {v!r}")
    if not 0.0 < cfg.iou_threshold <= 1.0:
        errors.append("iou_threshold must lie in (0, 1]")
    if not isinstance(cfg.seed, int):
        errors.append("seed must be an integer")
    try:
        cfg.tvl1_params()
    except (TypeError, ValueError) as exc:
        errors.append(f"tvl1: {exc}")
    if command in NEEDS_DATASET:
        if not cfg.dataset_root:
            errors.append("a dataset root is required (--dataset-root)")
        elif not Path(cfg.dataset_root).is_dir():
            errors.append(f"dataset root {cfg.dataset_root} does not exist")
        elif not (Path(cfg.dataset_root) / "annotations.csv").is_file():
            errors.append(f"dataset root {cfg.dataset_root} has no annotations.csv")
    if command == "spot":
        for cls in cfg.classes:
            path = model_path(cfg, cls)
            if not path.is_file():
                errors.append(f"model file {path} does not exist")
        if cfg.model and cfg.expression is None:
            errors.append("--model needs --expression")
    if command == "synth":
        try:
            SyntheticConfig(**{"seed": cfg.seed, **cfg.synthetic})
        except (TypeError, ValueError) as exc:
            errors.append(f"synthetic: {exc}")
    out = Path(cfg.out)
    if out.exists() and not out.is_dir():
        errors.append(f"output path {out} exists and is not a directory")
    return errors


def model_path(cfg, cls):
    if cfg.model:
        return Path(cfg.model)
    return Path(cfg.out) / f"model.{cls}.sftn"


def _write_json(path, data):
    Path(path).write_text(json.dumps(data, indent=2, allow_nan=False) + "\n")


# --------------------------------------------------------------------------
# pipeline steps shared by the commands
# --------------------------------------------------------------------------


def _flow_tag(cfg):
    # caches computed with other TV-L1 settings must not be reused
    text = json.dumps(asdict(cfg.tvl1_params()), sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()[:8]


def feature_path(cfg, video_id, cls):
    return Path(cfg.out) / "features" / f"{video_id}.{cls}.k{cfg.k[cls]}.{_flow_tag(cfg)}.sfmc"


def _cache_valid(path, count, k):
    try:
        return read_cache_header(path) == (count, k) and path.stat().st_size == 16 + count * 42 * 42 * 3 * 4
    except (OSError, CacheFormatError):
        return False


def ensure_features(cfg, dataset):
    """Compute (or reuse) the feature cache of every video and class; returns path map."""
    params = cfg.tvl1_params()
    (Path(cfg.out) / "features").mkdir(parents=True, exist_ok=True)

    def work(video):
        paths, frames = {}, None
        for cls in cfg.classes:
            k = cfg.k[cls]
            path = feature_path(cfg, video.video_id, cls)
            paths[cls] = path
            if video.frame_count <= k:
                raise DatasetError(f"video {video.video_id} has {video.frame_count} frames; k = {k} is too large")
            if _cache_valid(path, video.frame_count - k, k):
                continue
            if frames is None:
                frames = load_frames(video)
            feats = extract_video_features(frames, dataset.landmarks[video.video_id], k, params)
            tmp = path.with_suffix(".tmp")
            write_feature_cache(tmp, feats, k)
            tmp.replace(path)
            log.info("features %s %s: %d pairs", video.video_id, cls, len(feats))
        return video.video_id, paths

    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            return dict(pool.map(work, dataset.videos))
    return dict(work(v) for v in dataset.videos)


def video_data(cfg, dataset, paths):
    out = []
    for v in dataset.videos:
        feats = {cls: read_feature_array(paths[v.video_id][cls])[0] for cls in cfg.classes}
        out.append(VideoData(v.video_id, v.subject_id, v.frame_count,
                             {cls: dataset.intervals(v.video_id, cls) for cls in CLASSES}, feats))
    return out


def _scores_doc(cfg, scores):
    return {"config": cfg.to_dict(),
            "scores": {cls: {vid: {"offset": s.offset, "scores": s.scores.tolist()}
                             for vid, s in sorted(per.items())} for cls, per in scores.items()}}


def _scores_from_doc(doc):
    return {cls: {vid: ScoreSeries(np.array(d["scores"]), d["offset"], vid, cls) for vid, d in per.items()}
            for cls, per in doc["scores"].items()}


def _protocol_key(cfg):
    """The part of the config that determines raw scores (p only affects spotting)."""
    d = cfg.to_dict()
    for key in ("p", "out", "jobs", "model", "synthetic"):
        d.pop(key)
    return d


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_extract(cfg):
    dataset = load_dataset(cfg.dataset_root)
    paths = ensure_features(cfg, dataset)
    manifest = {"config": cfg.to_dict(),
                "features": {vid: {cls: str(p) for cls, p in sorted(ps.items())} for vid, ps in sorted(paths.items())}}
    _write_json(Path(cfg.out) / "features" / "manifest.json", manifest)
    return manifest


def cmd_train(cfg):
    dataset = load_dataset(cfg.dataset_root)
    videos = video_data(cfg, dataset, ensure_features(cfg, dataset))
    written = {}
    for cls in cfg.classes:
        k = cfg.k[cls]
        tc = TrainConfig(cfg.learning_rate, cfg.epochs, cfg.seed, cfg.negative_sample_rate,
                         bool(cfg.augment.get(cls, False)), cfg.label_fn)
        feats = {v.video_id: v.features[cls] for v in videos}
        labels = {v.video_id: generate_labels(v.length, k, v.intervals[cls], tc.label_function, cls)
                  for v in videos}
        model = train(build_training_set(feats, labels, tc), tc, cls)
        path = Path(cfg.out) / f"model.{cls}.sftn"
        save_model(model, path)
        _write_json(path.with_suffix(".json"), {"config": cfg.to_dict(), "expression_class": cls,
                                                "loss_history": model.loss_history})
        written[cls] = str(path)
        log.info("trained %s model -> %s", cls, path)
    return written


def cmd_spot(cfg):
    dataset = load_dataset(cfg.dataset_root)
    models = {cls: load_model(model_path(cfg, cls)) for cls in cfg.classes}
    paths = ensure_features(cfg, dataset)
    videos = video_data(cfg, dataset, paths)
    timeline_dir = Path(cfg.out) / "timelines"
    timeline_dir.mkdir(parents=True, exist_ok=True)
    result = {"config": cfg.to_dict(), "videos": []}
    for v in videos:
        entry = {"video_id": v.video_id, "subject_id": v.subject_id, "spots": {}}
        for cls, model in models.items():
            k = cfg.k[cls]
            raw = predict_scores(model, v.features[cls], v.video_id)
            spots = spot_video(raw, k, cfg.p, v.length)
            smoothed = smooth_scores(raw, k) if len(raw) >= 2 * k + 1 else None
            thr = compute_threshold(smoothed, cfg.p) if smoothed is not None else None
            export_timeline(timeline_dir / f"{v.video_id}.{cls}", raw, smoothed, thr,
                            v.intervals[cls], spots, v.length)
            entry["spots"][cls] = [{"peak": s.peak_frame, "onset": s.interval.onset,
                                    "offset": s.interval.offset, "confidence": s.confidence,
                                    "threshold": s.threshold} for s in spots]
        result["videos"].append(entry)
    _write_json(Path(cfg.out) / "spots.json", result)
    return result


def _evaluate(cfg, dataset):
    videos = video_data(cfg, dataset, ensure_features(cfg, dataset))
    report = run_protocol(videos, cfg.protocol(), jobs=cfg.jobs)
    report.config = cfg.to_dict()
    return videos, report


def cmd_evaluate(cfg):
    dataset = load_dataset(cfg.dataset_root)
    _, report = _evaluate(cfg, dataset)
    export_report(report, Path(cfg.out) / "report.json")
    _write_json(Path(cfg.out) / "scores.json", _scores_doc(cfg, report.scores))
    return report


def cmd_sweep(cfg, p_values=P_GRID):
    """Re-spot the raw LOSO scores over the ``p`` grid (scores are reused when cached)."""
    dataset = load_dataset(cfg.dataset_root)
    scores_path = Path(cfg.out) / "scores.json"
    scores = None
    if scores_path.is_file():
        doc = json.loads(scores_path.read_text())
        cached = RunConfig(**doc["config"])
        if _protocol_key(cached) == _protocol_key(cfg):
            scores = _scores_from_doc(doc)
            log.info("reusing raw scores from %s", scores_path)
    if scores is None:
        _, report = _evaluate(cfg, dataset)
        scores = report.scores
        _write_json(scores_path, _scores_doc(cfg, scores))
    videos = [VideoData(v.video_id, v.subject_id, v.frame_count,
                        {cls: dataset.intervals(v.video_id, cls) for cls in CLASSES}) for v in dataset.videos]
    rows = sweep_p(videos, scores, cfg.protocol(), p_values)
    columns = ["p"] + [f"{c}_f1" for c in cfg.classes] + ["overall_f1"] + [f"{c}_spots" for c in cfg.classes]
    with open(Path(cfg.out) / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            totals = [sum(per[c] for per in r["spots"].values()) for c in cfg.classes]
            w.writerow([f"{r['p']:.2f}"] + [repr(r[f"{c}_f1"]) for c in cfg.classes]
                       + [repr(r["overall_f1"])] + totals)
    _write_json(Path(cfg.out) / "sweep.json", {"config": cfg.to_dict(), "rows": rows})
    return rows


def cmd_synth(cfg):
    syn = SyntheticConfig(**{"seed": cfg.seed, **cfg.synthetic})
    annotations = generate_synthetic(syn, cfg.out)
    _write_json(Path(cfg.out) / "synthetic.json", {"config": cfg.to_dict(), "synthetic": syn.to_dict()})
    return annotations


HANDLERS = {"extract": cmd_extract, "train": cmd_train, "spot": cmd_spot, "evaluate": cmd_evaluate,
            "sweep": cmd_sweep, "synth": cmd_synth}


def build_parser():
    parser = argparse.ArgumentParser(prog="softspot", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON file with RunConfig keys")
    common.add_argument("--dataset-root")
    common.add_argument("--expression", choices=CLASSES)
    common.add_argument("--k", type=int)
    common.add_argument("--p", type=float)
    common.add_argument("--label-fn", choices=("linear", "step", "unit", "step4", "unit_step"))
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int)
    common.add_argument("--out")
    common.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common], help=HANDLERS[name].__doc__)
        if name == "spot":
            p.add_argument("--model", help="model file (default: <out>/model.<class>.sftn)")
    return parser


def _fail(command, kind, errors, code):
    line = {"status": "error", "command": command, "kind": kind, "errors": errors}
    print(json.dumps(line), file=sys.stderr)
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = build_config(args.command, args)
    except ConfigError as exc:
        return _fail(args.command, "config", exc.errors, 2)
    try:
        if args.command == "synth":
            Path(cfg.out).mkdir(parents=True, exist_ok=True)
        HANDLERS[args.command](cfg)
    except (DatasetError, CacheFormatError, ModelFormatError) as exc:
        return _fail(args.command, "input", [str(exc)], 2)
    except (OSError, ValueError, FloatingPointError) as exc:
        return _fail(args.command, "runtime", [f"{type(exc).__name__}: {exc}"], 1)
    print(json.dumps({"status": "ok", "command": args.command, "out": cfg.out}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
