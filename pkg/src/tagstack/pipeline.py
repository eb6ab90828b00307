"""Batch stages: synth, extract, stack, audit-oof, train-level2, grid, eval.

Stage outputs (under ``output_dir`` unless noted)::

    <cache_dir>/features/<clip>.{logmel,mfcc,stats}.tstk, index.json, stats_layout.txt
    stack/folds.csv, stack/models/<learner>/{fold<f>,full}.tsl1 (+ .clips.txt)
    stack/blocks/<learner>.{oof,holdout}.tstk, <learner>.provenance.csv
    stack/meta_{train,holdout}.tstk (+ .columns.txt), stack/provenance.json
    level2/r<r>_<arm>.{tsgb,txt}, level2/report_r<r>_<arm>.csv
    grid/grid.csv, grid/grid.txt

Each of these directories also receives the ``config.ini`` that produced it.
"""
from __future__ import annotations

import csv
import json
import logging
import zlib
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import cache, gbdt, level1, stacking
from .audio_io import (Manifest, UnsupportedFormatError, center_segment, decode_wav_bytes,
                       parse_manifest, sample_segment)
from .config import PipelineConfig
from .dsp import feature_tensors, mfcc, static_log_mel
from .evaluate import Level2Problem, fit_level2, grid_search_r, map_at_3
from .stats_features import clip_stat_vector, stat_layout
from .synth import generate

__all__ = [
    "StageError",
    "ExtractError",
    "cmd_synth",
    "cmd_extract",
    "cmd_stack",
    "cmd_audit_oof",
    "cmd_train_level2",
    "cmd_grid",
    "cmd_eval",
]

log = logging.getLogger(__name__)


class StageError(RuntimeError):
    """A stage cannot run because an earlier stage's output is missing."""


class ExtractError(ValueError):
    def __init__(self, failures):
        self.failures = failures
        names = ", ".join(f for f, _ in failures)
        super().__init__(f"{len(failures)} file(s) failed to decode: {names}")


def _echo(cfg: PipelineConfig, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    cfg.save(directory / "config.ini")


def _manifests(cfg: PipelineConfig):
    data = cfg.path("data_dir")
    train = parse_manifest(data / cfg.paths.train_manifest)
    test = parse_manifest(data / cfg.paths.test_manifest, class_list=train.class_list)
    return train, test


def _stem(fname: str) -> str:
    return Path(fname).stem


def cmd_synth(cfg: PipelineConfig) -> dict:
    out = cfg.path("data_dir")
    summary = generate(cfg.synth, out)
    _echo(cfg, out)
    return summary


# -- extract ---------------------------------------------------------------

def _clip_seed(seed: int, fname: str) -> np.random.Generator:
    return np.random.default_rng([int(seed), zlib.crc32(fname.encode("utf-8"))])


def _extract_clip(wav_bytes: bytes, fname: str, cfg: PipelineConfig):
    w = decode_wav_bytes(wav_bytes)
    if w.sample_rate != cfg.dsp.sample_rate:
        raise UnsupportedFormatError(f"sample rate {w.sample_rate} Hz, expected {cfg.dsp.sample_rate}")
    rng = _clip_seed(cfg.extract.seed, fname)
    logmels, mfccs = [], []
    for _ in range(cfg.extract.segments_per_clip):
        seg = sample_segment(w, cfg.dsp.segment_s, rng)
        lm, mf = feature_tensors(seg.samples, cfg.dsp)
        logmels.append(lm.to_array())
        mfccs.append(mf.to_array())
    center = center_segment(w, cfg.dsp.segment_s)
    coeffs = mfcc(static_log_mel(center.samples, cfg.dsp), cfg.dsp.n_mfcc)
    raw = w.samples if cfg.extract.stats_full_clip else center.samples
    stats = clip_stat_vector(raw, coeffs)
    return np.concatenate(logmels), np.concatenate(mfccs), stats.values


def cmd_extract(cfg: PipelineConfig) -> dict:
    """Compute feature tensors and statistics for every clip of both manifests.

    Entries whose WAV bytes and feature settings hash to the recorded value
    are skipped. Decode failures are collected and raised together at the end.
    """
    train, test = _manifests(cfg)
    audio = cfg.path("data_dir") / cfg.paths.audio_subdir
    root = cfg.path("cache_dir")
    feat_dir = root / "features"
    feat_dir.mkdir(parents=True, exist_ok=True)
    index_path = root / "index.json"
    index = json.loads(index_path.read_text()) if index_path.exists() else {}
    settings = json.dumps({"dsp": asdict(cfg.dsp), "extract": asdict(cfg.extract),
                           "format": cache.VERSION}, sort_keys=True).encode()
    computed, skipped, failures = 0, 0, []
    for fname in train.file_names + test.file_names:
        stem = _stem(fname)
        outputs = [feat_dir / f"{stem}.{k}.tstk" for k in ("logmel", "mfcc", "stats")]
        try:
            wav_bytes = (audio / fname).read_bytes()
        except OSError as exc:
            failures.append((fname, str(exc)))
            continue
        digest = cache.sha256_bytes(settings, fname.encode(), wav_bytes)
        if index.get(fname) == digest and all(p.exists() for p in outputs):
            skipped += 1
            continue
        try:
            lm, mf, st = _extract_clip(wav_bytes, fname, cfg)
        except ValueError as exc:
            failures.append((fname, str(exc)))
            index.pop(fname, None)
            continue
        cache.write_tensor(outputs[0], lm, "log_mel")
        cache.write_tensor(outputs[1], mf, "mfcc")
        cache.write_tensor(outputs[2], st, "stats")
        index[fname] = digest
        computed += 1
    index_path.write_text(json.dumps(index, indent=1, sort_keys=True) + "\n")
    cache.write_lines(root / "stats_layout.txt", stat_layout(cfg.dsp.n_mfcc))
    _echo(cfg, root)
    result = {"computed": computed, "skipped": skipped, "failed": len(failures)}
    if failures:
        for fname, why in failures:
            log.error("%s: %s", fname, why)
        raise ExtractError(failures)
    return result


# -- stack -----------------------------------------------------------------

def _load_view(cfg: PipelineConfig, manifest: Manifest, view: str) -> stacking.ClipFeatures:
    feat_dir = cfg.path("cache_dir") / "features"
    kind = {"flattened_logmel": ("logmel", "log_mel"), "flattened_mfcc": ("mfcc", "mfcc"),
            "stat_vector": ("stats", "stats")}[view]
    rows, owners = [], []
    S = cfg.extract.segments_per_clip
    for clip, fname in enumerate(manifest.file_names):
        path = feat_dir / f"{_stem(fname)}.{kind[0]}.tstk"
        if not path.exists():
            raise StageError(f"missing cached features {path}; run `tagstack extract` first")
        a = cache.read_tensor(path, kind[1])
        if view == "stat_vector":
            rows.append(a.reshape(1, -1))
        else:
            rows.append(a.reshape(S, -1))
        owners += [clip] * rows[-1].shape[0]
    return stacking.ClipFeatures(np.vstack(rows), np.array(owners), len(manifest))


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _read_csv(path: Path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def cmd_stack(cfg: PipelineConfig) -> dict:
    train, test = _manifests(cfg)
    out = cfg.path("output_dir") / "stack"
    (out / "models").mkdir(parents=True, exist_ok=True)
    (out / "blocks").mkdir(parents=True, exist_ok=True)
    C = len(train.class_list)
    folds = stacking.assign_folds(train, cfg.stacking.k_folds, cfg.stacking.seed)
    _write_csv(out / "folds.csv", ["fname", "fold"],
               [(f, int(k)) for f, k in zip(train.file_names, folds.fold_of)])

    blocks, models_written = [], []
    views = {}
    for lid, spec in cfg.learners.items():
        if spec.input_view not in views:
            views[spec.input_view] = (_load_view(cfg, train, spec.input_view),
                                      _load_view(cfg, test, spec.input_view))
        tr, ho = views[spec.input_view]
        log.info("stacking learner %s (%s)", lid, spec.name)
        block = stacking.oof_predictions(spec, tr, train.labels, folds, ho, n_classes=C,
                                         mixup_alpha=cfg.stacking.mixup_alpha,
                                         aggregation=cfg.stacking.aggregation, learner_id=lid)
        mdir = out / "models" / lid
        mdir.mkdir(exist_ok=True)
        model_names = [f"fold{f}" for f in range(folds.k)] + ["full"]
        for name, model, clips in zip(model_names, block.models, block.model_train_clips):
            (mdir / f"{name}.tsl1").write_bytes(level1.model_to_bytes(model))
            cache.write_lines(mdir / f"{name}.clips.txt", [train.file_names[i] for i in clips])
            models_written.append(f"models/{lid}/{name}.tsl1")
        cache.write_tensor(out / "blocks" / f"{lid}.oof.tstk", block.oof_probs, "probs")
        cache.write_tensor(out / "blocks" / f"{lid}.holdout.tstk", block.holdout_probs, "probs")
        _write_csv(out / "blocks" / f"{lid}.provenance.csv", ["fname", "fold", "model"],
                   [(f, int(p), f"fold{int(p)}") for f, p in zip(train.file_names, block.provenance)])
        blocks.append(block)

    tr_stats = _load_view(cfg, train, "stat_vector").inputs
    ho_stats = _load_view(cfg, test, "stat_vector").inputs
    layout = cache.read_lines(cfg.path("cache_dir") / "stats_layout.txt")
    meta_tr, meta_ho = stacking.build_meta_features(blocks, tr_stats, ho_stats, True,
                                                    train.class_list, layout)
    for name, m in (("meta_train", meta_tr), ("meta_holdout", meta_ho)):
        cache.write_tensor(out / f"{name}.tstk", m.values, "meta")
        cache.write_lines(out / f"{name}.columns.txt", m.columns)
    provenance = {
        "learners": {lid: asdict(spec) for lid, spec in cfg.learners.items()},
        "k_folds": folds.k,
        "fold_seed": folds.seed,
        "models": {m: cache.sha256_bytes((out / m).read_bytes()) for m in models_written},
        "meta_train": cache.sha256_bytes((out / "meta_train.tstk").read_bytes()),
        "meta_holdout": cache.sha256_bytes((out / "meta_holdout.tstk").read_bytes()),
    }
    (out / "provenance.json").write_text(json.dumps(provenance, indent=1, sort_keys=True) + "\n")
    _echo(cfg, out)
    return {"models": len(models_written), "columns": len(meta_tr.columns)}


def cmd_audit_oof(cfg: PipelineConfig) -> list:
    """Re-check OOF purity from the files on disk; returns the violations."""
    out = cfg.path("output_dir") / "stack"
    if not (out / "folds.csv").exists():
        raise StageError(f"no stacking output in {out}; run `tagstack stack` first")
    fold_rows = _read_csv(out / "folds.csv")
    names = [r["fname"] for r in fold_rows]
    pos = {f: i for i, f in enumerate(names)}
    fold_of = np.array([int(r["fold"]) for r in fold_rows])
    k = int(fold_of.max()) + 1
    folds = stacking.FoldAssignment(fold_of, k, -1)
    problems = []
    for lid in cfg.learners:
        prov = _read_csv(out / "blocks" / f"{lid}.provenance.csv")
        if [r["fname"] for r in prov] != names:
            problems.append(f"{lid}: provenance rows do not match the fold file")
            continue
        mdir = out / "models" / lid
        clip_sets = []
        for name in [f"fold{f}" for f in range(k)] + ["full"]:
            if not (mdir / f"{name}.tsl1").exists():
                problems.append(f"{lid}: model file {name}.tsl1 is missing")
            listing = mdir / f"{name}.clips.txt"
            clip_sets.append(np.array([pos[f] for f in cache.read_lines(listing)]) if listing.exists()
                             else np.zeros(0, dtype=np.int64))
        block = stacking.MetaBlock(lid, np.zeros((len(names), 0)), np.zeros((0, 0)),
                                   np.array([int(r["fold"]) for r in prov]), tuple(clip_sets))
        problems += stacking.audit_oof(block, folds)
    return problems


# -- level 2 ---------------------------------------------------------------

def _level2_problem(cfg: PipelineConfig) -> Level2Problem:
    out = cfg.path("output_dir") / "stack"
    path_tr, path_ho = out / "meta_train.tstk", out / "meta_holdout.tstk"
    if not (path_tr.exists() and path_ho.exists()):
        raise StageError(f"no MetaMatrix under {out}; run `tagstack stack` first")
    train, test = _manifests(cfg)
    cols = cache.read_lines(out / "meta_train.columns.txt")
    if cache.read_lines(out / "meta_holdout.columns.txt") != cols:
        raise ValueError("train and holdout meta-feature layouts differ")
    meta_tr = stacking.MetaMatrix(cache.read_tensor(path_tr, "meta")[0], cols)
    meta_ho = stacking.MetaMatrix(cache.read_tensor(path_ho, "meta")[0], cols)
    if meta_tr.values.shape[0] != len(train) or meta_ho.values.shape[0] != len(test):
        raise ValueError("MetaMatrix row counts do not match the manifests; re-run `tagstack stack`")
    return Level2Problem(meta_tr, train.labels, train.verified, meta_ho, test.labels, test.verified,
                         len(train.class_list))


def _cell_name(r: float, with_stats: bool) -> str:
    return f"r{r:.2f}_{'tf' if with_stats else 'notf'}"


def _report_rows(r, with_stats, value):
    return [(repr(float(r)), int(with_stats), repr(float(value)))]


def cmd_train_level2(cfg: PipelineConfig, r: float = None) -> float:
    r = cfg.level2.r if r is None else float(r)
    problem = _level2_problem(cfg)
    model, report = fit_level2(problem, r, cfg.level2.with_stats, cfg.gbdt)
    out = cfg.path("output_dir") / "level2"
    out.mkdir(parents=True, exist_ok=True)
    name = _cell_name(r, cfg.level2.with_stats)
    columns = problem.arm(cfg.level2.with_stats)[0].columns
    (out / f"{name}.tsgb").write_bytes(gbdt.model_to_bytes(model))
    (out / f"{name}.txt").write_text(gbdt.dump_text(model, columns))
    _write_csv(out / f"report_{name}.csv", ["r", "with_stats", "map_at_3"],
               _report_rows(r, cfg.level2.with_stats, report.map_at_3))
    _echo(cfg, out)
    return report.map_at_3


def cmd_grid(cfg: PipelineConfig):
    problem = _level2_problem(cfg)
    result = grid_search_r(problem, cfg.grid.r_values, cfg.gbdt, cfg.grid.both_arms)
    out = cfg.path("output_dir") / "grid"
    out.mkdir(parents=True, exist_ok=True)
    (out / "grid.csv").write_text(result.to_csv())
    (out / "grid.txt").write_text(result.to_table())
    _echo(cfg, out)
    return result


def cmd_eval(cfg: PipelineConfig, model_path=None):
    """Score a saved level-2 model on the verified holdout clips."""
    problem = _level2_problem(cfg)
    out = cfg.path("output_dir") / "level2"
    if model_path is None:
        model_path = out / f"{_cell_name(cfg.level2.r, cfg.level2.with_stats)}.tsgb"
    model_path = Path(model_path)
    if not model_path.exists():
        raise StageError(f"no level-2 model at {model_path}; run `tagstack train-level2` first")
    model = gbdt.model_from_bytes(model_path.read_bytes())
    with_stats = model.n_features == problem.holdout.values.shape[1]
    holdout = problem.arm(with_stats)[1]
    keep = problem.holdout_verified
    report = map_at_3(gbdt.predict(model, holdout.values[keep]), problem.holdout_labels[keep],
                      problem.n_classes)
    train, _ = _manifests(cfg)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"eval_{model_path.stem}.csv").write_text(report.to_csv(train.class_list))
    return report
