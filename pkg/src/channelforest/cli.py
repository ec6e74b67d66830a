"""Batch pipeline commands driven by a single JSON config.

Every command reads one config document, runs deterministically given the
recorded seed, writes its artifacts under the configured output directory,
and drops a manifest recording the package version, seed, and input
digests. Flags of the form --set key.path=value override config entries.
"""

from __future__ import annotations

import argparse
import glob
import hashlib
import json
import os
import sys


from . import __version__
from . import boost, channels, ensemble, evaluation, segfuse, tensorio
from .detect import DetectConfig, detect as run_detector, propose as run_proposer
from .imageio import read_ppm

COMMANDS = ("channels", "train", "bootstrap", "detect", "propose", "rescore",
            "segfuse", "eval", "heatmap", "report")


class ConfigError(ValueError):
    pass


class Run:
    """Tracks inputs/outputs of one command for the manifest."""

    def __init__(self, config_path, cfg, command):
        self.cfg = cfg
        self.command = command
        self.inputs = [config_path]
        self.outputs = []
        out = cfg.get("output_dir")
        if not out:
            raise ConfigError("config needs output_dir")
        os.makedirs(out, exist_ok=True)
        self.output_dir = out

    def read(self, path):
        self.inputs.append(path)
        return path

    def out_path(self, name):
        path = os.path.join(self.output_dir, name)
        self.outputs.append(path)
        return path

    def finish(self):
        digests = {}
        for path in sorted(set(self.inputs)):
            if os.path.isfile(path):
                with open(path, "rb") as fh:
                    digests[path] = hashlib.sha256(fh.read()).hexdigest()
        manifest = {
            "version": __version__,
            "command": self.command,
            "seed": self.cfg.get("seed"),
            "inputs": digests,
            "outputs": sorted(set(self.outputs)),
        }
        with open(os.path.join(self.output_dir, "manifest.json"), "w",
                  encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2)


def _require(cfg, key):
    cur = cfg
    for part in key.split("."):
        if not isinstance(cur, dict) or part not in cur:
            raise ConfigError(f"config needs {key}")
        cur = cur[part]
    return cur


def _load_images(run):
    spec = _require(run.cfg, "images")
    if isinstance(spec, str):
        paths = sorted(glob.glob(os.path.join(spec, "*.ppm")))
    else:
        paths = list(spec)
    if not paths:
        raise ConfigError("no images found")
    out = []
    for path in paths:
        image_id = os.path.splitext(os.path.basename(path))[0]
        out.append((image_id, read_ppm(run.read(path))))
    return out


def _channel_fn(run):
    ccfg = run.cfg.get("channels", {})
    ratio = int(ccfg.get("ratio", 4))
    kind = ccfg.get("kind", "acf")
    bank = None
    if kind == "checkerboards":
        bank_path = ccfg.get("filter_bank")
        bank = (channels.load_filter_bank(run.read(bank_path)) if bank_path
                else channels.default_checkerboard_bank())
    elif kind != "acf":
        raise ConfigError(f"unknown channel kind {kind!r}")

    def fn(img, r=ratio):
        stack = channels.compute_acf_channels(img, r)
        if bank is not None:
            stack = channels.apply_filter_bank(stack, bank)
        return stack

    return fn, ratio


def _read_stack(run, path):
    values, dims, ratio, name = tensorio.read_tensor(run.read(path))
    if len(dims) != 3:
        raise ConfigError(f"{path}: expected a 3D channel stack")
    return channels.ChannelStack(values, ratio=ratio, source=name)


def _stacks_for_ids(run, stacks_dir, image_ids):
    out = []
    for image_id in image_ids:
        path = os.path.join(stacks_dir, f"{image_id}.cft")
        if not os.path.isfile(path):
            raise ConfigError(f"missing stack tensor for {image_id}: {path}")
        out.append(_read_stack(run, path))
    return out


def _detect_config(cfg):
    dcfg = cfg.get("detect", {})
    return DetectConfig(
        stride=int(dcfg.get("stride", 4)),
        score_threshold=float(dcfg.get("score_threshold", 0.0)),
        nms_overlap=float(dcfg.get("nms_overlap", 0.5)),
        max_per_image=dcfg.get("max_per_image"),
    )


def _train_config(cfg):
    tcfg = cfg.get("train", {})
    if "seed" not in cfg:
        raise ConfigError("training commands require an explicit seed")
    return boost.TrainConfig(
        num_trees=int(tcfg.get("num_trees", 4096)),
        max_depth=int(tcfg.get("max_depth", 5)),
        shrinkage=float(tcfg.get("shrinkage", 0.5)),
        window=tuple(tcfg.get("window", (128, 64))),
        feature_bins=int(tcfg.get("feature_bins", 256)),
        bootstrap_rounds=int(tcfg.get("bootstrap_rounds", 1)),
        pos_cap=int(tcfg.get("pos_cap", 30000)),
        neg_cap=int(tcfg.get("neg_cap", 90000)),
        seed=int(cfg["seed"]),
    )


def _criteria(cfg):
    ecfg = cfg.get("eval", {})
    kw = {}
    for key in ("iou_min", "min_height", "max_occlusion", "ignore_cover_min"):
        if key in ecfg:
            kw[key] = float(ecfg[key])
    if "fppi_refs" in ecfg:
        kw["fppi_refs"] = tuple(float(v) for v in ecfg["fppi_refs"])
    if "recall_points" in ecfg:
        kw["recall_points"] = int(ecfg["recall_points"])
    return evaluation.EvalCriteria(**kw)


def _write_train_log(forest, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("round,features_used,weighted_loss\n")
        for rnd, used, loss in forest.train_log:
            fh.write(f"{rnd},{used},{loss!r}\n")


def _training_inputs(run):
    annotations = tensorio.read_annotations(run.read(_require(run.cfg, "annotations")))
    if "stacks" in run.cfg:
        image_ids = sorted(annotations.keys())
        stacks = _stacks_for_ids(run, run.cfg["stacks"], image_ids)
    else:
        fn, _ = _channel_fn(run)
        pairs = _load_images(run)
        image_ids = [i for i, _ in pairs]
        stacks = [fn(img) for _, img in pairs]
    return image_ids, annotations, stacks


def cmd_channels(run):
    fn, _ = _channel_fn(run)
    for image_id, img in _load_images(run):
        stack = fn(img)
        tensorio.write_tensor(stack.values, stack.values.shape, stack.ratio,
                              stack.source, run.out_path(f"{image_id}.cft"))


def cmd_train(run):
    cfg = _train_config(run.cfg)
    image_ids, annotations, stacks = _training_inputs(run)
    samples = boost.collect_samples(image_ids, annotations, stacks, cfg)
    forest = boost.train_forest(samples, cfg)
    tensorio.write_forest(forest, run.out_path("forest.json"))
    _write_train_log(forest, run.out_path("train_log.csv"))


def cmd_bootstrap(run):
    cfg = _train_config(run.cfg)
    prior_path = run.cfg.get("bootstrap", {}).get(
        "input_forest", os.path.join(run.output_dir, "forest.json"))
    detector = tensorio.read_forest(run.read(prior_path))
    image_ids, annotations, stacks = _training_inputs(run)
    if detector.ratio != stacks[0].ratio:
        raise ConfigError("forest/tensor ratio mismatch")
    samples = boost.collect_samples(image_ids, annotations, stacks, cfg)
    forest = detector
    for _ in range(max(1, cfg.bootstrap_rounds)):
        samples = boost.collect_samples(image_ids, annotations, stacks, cfg,
                                        detector=forest, prior=samples)
        forest = boost.train_forest(samples, cfg)
    tensorio.write_forest(forest, run.out_path("forest_boot.json"))
    _write_train_log(forest, run.out_path("train_log_boot.csv"))


def _detection_pyramids(run, forest):
    """Per-image pyramids: from stacks (single scale) or images + pyramid cfg."""
    if "stacks" in run.cfg:
        stack_dir = run.cfg["stacks"]
        paths = sorted(glob.glob(os.path.join(stack_dir, "*.cft")))
        if not paths:
            raise ConfigError(f"no stack tensors in {stack_dir}")
        first = _read_stack(run, paths[0])
        if first.ratio != forest.ratio:
            raise ConfigError("forest/tensor ratio mismatch")
        items = []
        for path in paths:
            image_id = os.path.splitext(os.path.basename(path))[0]
            stack = _read_stack(run, path)
            items.append((image_id, [channels.PyramidLevel(stack, 1.0)]))
        return items
    fn, ratio = _channel_fn(run)
    if ratio != forest.ratio:
        raise ConfigError("forest/tensor ratio mismatch")
    pcfg = run.cfg.get("pyramid", {})
    pyr = channels.PyramidConfig(
        scales_per_octave=int(pcfg.get("scales_per_octave", 8)),
        min_scale=float(pcfg.get("min_scale", 1.0)),
        max_scale=float(pcfg.get("max_scale", 1.0)),
        ratio=ratio,
    )
    return [(image_id, channels.build_pyramid(img, pyr, fn, forest.window))
            for image_id, img in _load_images(run)]


def cmd_detect(run):
    forest = tensorio.read_forest(run.read(_require(run.cfg, "forest")))
    dcfg = _detect_config(run.cfg)
    dets = []
    for image_id, pyramid in _detection_pyramids(run, forest):
        dets.extend(run_detector(forest, pyramid, dcfg, image_id=image_id))
    tensorio.write_detections(dets, run.out_path("detections.csv"))


def cmd_propose(run):
    forest = tensorio.read_forest(run.read(_require(run.cfg, "forest")))
    dcfg = _detect_config(run.cfg)
    target = run.cfg.get("propose", {}).get("target_per_image")
    items = _detection_pyramids(run, forest)
    ids = [i for i, _ in items]
    pyramids = [p for _, p in items]
    per_image, calib = run_proposer(
        forest, pyramids, dcfg, image_ids=ids,
        target_per_image=None if target is None else float(target))
    dets = [d for group in per_image for d in group]
    tensorio.write_detections(dets, run.out_path("proposals.csv"))
    if calib is not None:
        with open(run.out_path("calibration.json"), "w", encoding="utf-8") as fh:
            json.dump({"threshold": calib.threshold,
                       "mean_per_image": calib.mean_per_image,
                       "num_images": calib.num_images}, fh, indent=2)
        print(f"calibrated threshold {calib.threshold!r} "
              f"-> {calib.mean_per_image:.2f} proposals/image")


def cmd_rescore(run):
    proposals = tensorio.read_detections(run.read(_require(run.cfg, "proposals")))
    ecfg = _require(run.cfg, "ensemble")
    members_cfg = ecfg.get("members", [])
    if not members_cfg:
        raise ConfigError("ensemble needs at least one member")
    members = []
    for m in members_cfg:
        forest = tensorio.read_forest(run.read(_require(m, "forest")))
        members.append((forest, m["stacks"]))

    by_image = {}
    order = []
    for p in proposals:
        if p.image_id not in by_image:
            by_image[p.image_id] = []
            order.append(p.image_id)
        by_image[p.image_id].append(p)

    lists = [[] for _ in members]
    flat = []
    for image_id in order:
        group = by_image[image_id]
        image_members = []
        for (forest, stacks_dir) in members:
            stack = _stacks_for_ids(run, stacks_dir, [image_id])[0]
            if stack.ratio != forest.ratio:
                raise ConfigError("forest/tensor ratio mismatch")
            image_members.append((forest, stack))
        scores = ensemble.rescore_proposals(group, image_members)
        for k, member_scores in enumerate(scores):
            lists[k].extend(member_scores)
        flat.extend(group)

    external = None
    if ecfg.get("external_scores"):
        external = ensemble.fuse_external_scores(
            flat, run.read(ecfg["external_scores"]))
        if ecfg.get("normalize", "raw") == "znorm":
            external = ensemble.znorm(external)
    combined = ensemble.combine_scores(lists, external)
    out = [tensorio.Detection(p.image_id, p.x, p.y, p.w, p.h, s, p.source)
           for p, s in zip(flat, combined)]
    tensorio.write_detections(out, run.out_path("rescored.csv"))


def _score_maps(run, ids=None):
    maps_dir = _require(run.cfg, "segfuse.score_maps")
    paths = sorted(glob.glob(os.path.join(maps_dir, "*.cft")))
    out = {}
    for path in paths:
        image_id = os.path.splitext(os.path.basename(path))[0]
        if ids is not None and image_id not in ids:
            continue
        values, dims, ratio, _ = tensorio.read_tensor(run.read(path))
        if len(dims) != 2 or ratio != 1:
            raise ConfigError(f"{path}: score maps must be 2D with ratio 1")
        out[image_id] = segfuse.ScoreMap(values, image_id=image_id)
    return out


def cmd_segfuse(run):
    scfg = _require(run.cfg, "segfuse")
    if scfg.get("learn"):
        annotations = tensorio.read_annotations(
            run.read(_require(run.cfg, "annotations")))
        maps = _score_maps(run)
        mask = segfuse.learn_mask(maps, annotations)
        tensorio.write_tensor(mask.values, mask.values.shape, 1, "weight-mask",
                              run.out_path("mask.cft"))
        print(f"learned mask from {mask.sample_count} ground-truth crops")
        return
    dets = tensorio.read_detections(run.read(_require(run.cfg, "detections")))
    values, dims, ratio, _ = tensorio.read_tensor(run.read(_require(run.cfg,
                                                                    "segfuse.mask")))
    if tuple(dims) != (segfuse.MASK_HEIGHT, segfuse.MASK_WIDTH):
        raise ConfigError("mask tensor has wrong dims")
    mask = segfuse.WeightMask(values)
    maps = _score_maps(run, ids={d.image_id for d in dets})
    lam = float(scfg.get("lambda", 1.0))
    seg_scores = []
    for det in dets:
        smap = maps.get(det.image_id)
        if smap is None:
            raise ConfigError(f"missing score map for {det.image_id}")
        seg_scores.append(segfuse.seg_score(mask, smap, det.box))
    fused = segfuse.fuse_scores([d.score for d in dets], seg_scores, lam)
    out = [tensorio.Detection(d.image_id, d.x, d.y, d.w, d.h, s, d.source)
           for d, s in zip(dets, fused)]
    tensorio.write_detections(out, run.out_path("fused.csv"))


def cmd_eval(run):
    dets = tensorio.read_detections(run.read(_require(run.cfg, "detections")))
    annotations = tensorio.read_annotations(run.read(_require(run.cfg, "annotations")))
    criteria = _criteria(run.cfg)
    kind = run.cfg.get("eval", {}).get("kind", "mr")
    curve = evaluation.evaluate_detections(dets, annotations, criteria, kind=kind)
    evaluation.write_curve_csv(curve, run.out_path("curve.csv"))
    evaluation.write_curves_svg([("detections", curve)],
                                run.out_path("curve.svg"), curve.kind)
    label = "log-average miss rate" if kind == "mr" else "average precision"
    print(f"{label}: {curve.summary:.6f}")


def cmd_heatmap(run):
    forest = tensorio.read_forest(run.read(_require(run.cfg, "forest")))
    grid = boost.feature_usage_heatmap(forest)
    tensorio.write_tensor(grid, grid.shape, forest.ratio, "feature-usage",
                          run.out_path("heatmap.cft"))
    with open(run.out_path("heatmap.csv"), "w", encoding="utf-8") as fh:
        for row in grid:
            fh.write(",".join(str(int(v)) for v in row) + "\n")
    print(f"heatmap {grid.shape[0]}x{grid.shape[1]}, {int(grid.sum())} splits")


def cmd_report(run):
    annotations = tensorio.read_annotations(run.read(_require(run.cfg, "annotations")))
    criteria = _criteria(run.cfg)
    kind = run.cfg.get("eval", {}).get("kind", "mr")
    entries = _require(run.cfg, "report.entries")
    items = []
    lines = ["name,summary"]
    for entry in entries:
        dets = tensorio.read_detections(run.read(_require(entry, "detections")))
        curve = evaluation.evaluate_detections(dets, annotations, criteria, kind=kind)
        items.append((entry["name"], curve))
        lines.append(f"{entry['name']},{curve.summary!r}")
        print(f"{entry['name']}: {curve.summary:.6f}")
    with open(run.out_path("report.csv"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    evaluation.write_curves_svg(items, run.out_path("report.svg"),
                                "roc-mr" if kind == "mr" else "pr")


_HANDLERS = {
    "channels": cmd_channels,
    "train": cmd_train,
    "bootstrap": cmd_bootstrap,
    "detect": cmd_detect,
    "propose": cmd_propose,
    "rescore": cmd_rescore,
    "segfuse": cmd_segfuse,
    "eval": cmd_eval,
    "heatmap": cmd_heatmap,
    "report": cmd_report,
}


def _apply_overrides(cfg, overrides):
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"bad --set {item!r}, expected key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        cur = cfg
        parts = key.split(".")
        for part in parts[:-1]:
            cur = cur.setdefault(part, {})
        cur[parts[-1]] = value


def main(argv=None) -> int:
    threads = os.environ.get("CHANNELFOREST_THREADS")
    if threads:
        os.environ.setdefault("OMP_NUM_THREADS", threads)
        os.environ.setdefault("NUMBA_NUM_THREADS", threads)

    parser = argparse.ArgumentParser(
        prog="channelforest",
        description="Boosted decision forests over image feature channels.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--set", action="append", default=[], dest="overrides",
                       metavar="KEY=VALUE")
    args = parser.parse_args(argv)

    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
        _apply_overrides(cfg, args.overrides)
        run = Run(args.config, cfg, args.command)
        _HANDLERS[args.command](run)
        run.finish()
    except (ConfigError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
