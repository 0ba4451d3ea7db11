"""Command-line driver: one subcommand per pipeline stage.

Usage::

    python -m empathy_pipeline <command> [--config cfg.json] [--seed N] [--output DIR]

Commands, in pipeline order, and the artifacts they write into the output
directory:

    synth            corpus/ (transcripts, annotations, lexicons, audio, oracle)
    train-role-lms   role_lms.json
    annotate-roles   roles.json
    segment          segments.jsonl
    featurize        features.npz
    split            split.json
    train            model.json, grid.json
    predict          predictions.json
    evaluate         metrics.json, pr_curve.tsv

The config file is JSON. Relative paths resolve against the config file's
directory; unset corpus paths default to the files ``synth`` writes under
``<output>/corpus``. Exit status: 0 success, 2 bad config or missing input,
3 missing upstream artifact, 1 internal failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import pipeline as P
from .classifier import EmpathyClassifier, FeatureCombo, TrainConfig, train_pipeline
from .corpus_io import CorpusError, load_annotations, load_lexicon, load_sessions, split_sessions, wav_duration
from .evaluation import write_reports
from .lexical import HashingEmbedder, PrecomputedEmbeddings
from .role_lm import RoleLMs
from .segmentation import load_segments, save_segments
from .synth import CORPUS_FILES, SynthConfig, SynthError, generate_corpus, write_corpus

logger = logging.getLogger("empathy_pipeline")

COMMANDS = (
    "synth",
    "train-role-lms",
    "annotate-roles",
    "segment",
    "featurize",
    "split",
    "train",
    "predict",
    "evaluate",
)

ARTIFACTS = {
    "role_lms": "role_lms.json",
    "roles": "roles.json",
    "segments": "segments.jsonl",
    "features": "features.npz",
    "split": "split.json",
    "model": "model.json",
    "grid": "grid.json",
    "predictions": "predictions.json",
    "metrics": "metrics.json",
    "pr_curve": "pr_curve.tsv",
}

PATH_KEYS = ("transcripts", "annotations", "liwc", "empath", "embeddings", "audio_dir",
             "background_pat", "background_hcp", "transcribed", "predictions")


class ConfigError(Exception):
    """Bad configuration or missing input (exit 2)."""


class MissingArtifact(Exception):
    """A stage's upstream artifact is absent (exit 3)."""


@dataclass
class PipelineConfig:
    output_dir: Path = Path("out")
    paths: dict = field(default_factory=dict)
    seed: int = 0
    n_jobs: int = 1
    target_s: float = 25.0
    min_overlap_s: float = 1.0
    lambda1: float = 0.5
    lambda2: float = 0.01
    lm_order: int = 3
    min_tokens: int = 10
    combo: str = "embed+liwc+empath+prosody"
    split_ratio: float = 0.25
    exclude_transcribed: bool = True
    balance_split: bool = True
    train: dict = field(default_factory=dict)
    synth: dict = field(default_factory=dict)

    @classmethod
    def from_file(cls, path, output=None, seed=None) -> "PipelineConfig":
        doc, base = {}, Path.cwd()
        if path is not None:
            path = Path(path)
            if not path.is_file():
                raise ConfigError(f"config file not found: {path}")
            try:
                doc = json.loads(path.read_text(encoding="utf-8"))
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from None
            if not isinstance(doc, dict):
                raise ConfigError(f"{path}: config must be a JSON object")
            base = path.parent
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**{k: v for k, v in doc.items() if k != "output_dir"})
        out = output if output is not None else doc.get("output_dir", "out")
        cfg.output_dir = Path(out) if output is not None else _resolve(base, out)
        if seed is not None:
            cfg.seed = int(seed)
        bad = set(cfg.paths) - set(PATH_KEYS)
        if bad:
            raise ConfigError(f"unknown path keys: {sorted(bad)}")
        cfg.paths = {k: (None if v is None else _resolve(base, v)) for k, v in cfg.paths.items()}
        try:
            FeatureCombo.parse(cfg.combo)
            cfg.train_config()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        return cfg

    def path(self, key: str, required: bool = True):
        if key in self.paths:
            p = self.paths[key]
        elif key == "predictions":
            p = self.output_dir / ARTIFACTS["predictions"]
        elif key in CORPUS_FILES or key == "transcribed":
            p = self.output_dir / "corpus" / CORPUS_FILES["transcribed" if key == "transcribed" else key]
        else:
            p = None
        if required and (p is None or not Path(p).exists()):
            raise ConfigError(f"missing input {key}: {p}")
        return p

    def artifact(self, key: str, must_exist: bool = True) -> Path:
        p = self.output_dir / ARTIFACTS[key]
        if must_exist and not p.exists():
            raise MissingArtifact(f"upstream artifact missing: {p} (run the stage that writes {ARTIFACTS[key]})")
        return p

    def train_config(self) -> TrainConfig:
        opts = dict(self.train)
        unknown = set(opts) - {f.name for f in fields(TrainConfig)}
        if unknown:
            raise ValueError(f"unknown train settings: {sorted(unknown)}")
        opts.setdefault("seed", P.sub_seed(self.seed, "train"))
        return TrainConfig(**opts)


def _resolve(base: Path, p) -> Path:
    p = Path(p)
    return p if p.is_absolute() else base / p


# ---------------------------------------------------------------------------
# stages


def _sessions(cfg):
    audio_dir = cfg.path("audio_dir", required=False)
    try:
        return load_sessions(cfg.path("transcripts"), audio_dir if audio_dir and Path(audio_dir).is_dir() else None)
    except CorpusError as exc:
        raise ConfigError(str(exc)) from None


def _read_sentences(path):
    return [tuple(line.split()) for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]


def cmd_synth(cfg):
    try:
        synth_cfg = SynthConfig.from_dict({"seed": P.sub_seed(cfg.seed, "synth"), **cfg.synth})
        corpus = generate_corpus(synth_cfg)
    except (SynthError, TypeError) as exc:
        raise ConfigError(f"synth: {exc}") from None
    paths = write_corpus(corpus, cfg.output_dir / "corpus")
    n_pos = sum(sum(v) for v in corpus.segment_labels.values())
    logger.info("stage=synth sessions=%d intervals=%d positives=%d audio=%s", len(corpus.sessions),
                len(corpus.intervals), n_pos, "audio_dir" in paths)


def cmd_train_role_lms(cfg):
    sessions = _sessions(cfg)
    known = json.loads(Path(cfg.path("transcribed")).read_text(encoding="utf-8"))
    try:
        lms = P.train_role_models(
            _read_sentences(cfg.path("background_pat")),
            _read_sentences(cfg.path("background_hcp")),
            sessions, known, cfg.lambda1, cfg.lambda2, cfg.lm_order,
        )
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"train-role-lms: {exc}") from None
    lms.save(cfg.artifact("role_lms", must_exist=False))
    logger.info("stage=train-role-lms sessions=%d transcribed=%d vocab=%d", len(sessions), len(known), len(lms.universe))


def cmd_annotate_roles(cfg):
    sessions = _sessions(cfg)
    lms = RoleLMs.load(cfg.artifact("role_lms"))
    roles = P.annotate_sessions(sessions, lms, cfg.min_tokens, cfg.n_jobs)
    P.save_roles(roles, cfg.artifact("roles", must_exist=False))
    assigns = [a for m in roles.values() for a in m.values()]
    logger.info("stage=annotate-roles sessions=%d speakers=%d hcp=%d flagged=%d", len(roles), len(assigns),
                sum(a.role == "HCP" for a in assigns), sum(a.flagged for a in assigns))


def cmd_segment(cfg):
    sessions = _sessions(cfg)
    try:
        intervals = load_annotations(cfg.path("annotations"))
    except CorpusError as exc:
        raise ConfigError(str(exc)) from None
    segs = P.segment_sessions(sessions, intervals, cfg.target_s, cfg.min_overlap_s)
    save_segments(segs, cfg.artifact("segments", must_exist=False))
    logger.info("stage=segment sessions=%d segments=%d positives=%d", len(sessions), len(segs),
                sum(s.label for s in segs))


def cmd_featurize(cfg):
    sessions = _sessions(cfg)
    roles = P.load_roles(cfg.artifact("roles"))
    segs = load_segments(cfg.artifact("segments"), sessions)
    try:
        liwc, empath = load_lexicon(cfg.path("liwc")), load_lexicon(cfg.path("empath"))
    except CorpusError as exc:
        raise ConfigError(str(exc)) from None
    emb_path = cfg.path("embeddings", required=False)
    if emb_path is not None:
        if not Path(emb_path).is_file():
            raise ConfigError(f"missing input embeddings: {emb_path}")
        provider = PrecomputedEmbeddings.load(emb_path)
    else:
        provider = HashingEmbedder(P.sub_seed(cfg.seed, "embed"))
    audio_dir = cfg.path("audio_dir", required=False)
    loader = P.wav_loader(audio_dir) if audio_dir is not None and Path(audio_dir).is_dir() else None
    if loader is None:
        logger.warning("no audio directory; acoustic blocks are zeros")
    table = P.featurize(sessions, segs, roles, liwc, empath, provider, loader, cfg.n_jobs)
    table.save(cfg.artifact("features", must_exist=False))
    logger.info("stage=featurize sessions=%d segments=%d positives=%d", len(set(table.session_ids.tolist())),
                len(table), int(table.labels.sum()))


def cmd_split(cfg):
    sessions = _sessions(cfg)
    exclusions = ()
    if cfg.exclude_transcribed:
        tpath = cfg.path("transcribed", required=False)
        if tpath is not None and Path(tpath).is_file():
            exclusions = sorted(json.loads(Path(tpath).read_text(encoding="utf-8")))
    weights = None
    if cfg.balance_split:
        try:
            intervals = load_annotations(cfg.path("annotations"))
        except CorpusError as exc:
            raise ConfigError(str(exc)) from None
        weights = Counter(iv.session_id for iv in intervals)
    try:
        train, test = split_sessions(sessions, cfg.split_ratio, P.sub_seed(cfg.seed, "split"), exclusions, weights)
    except ValueError as exc:
        raise ConfigError(f"split: {exc}") from None
    P._write_json({"train": sorted(train), "test": sorted(test), "excluded": list(exclusions)},
                  cfg.artifact("split", must_exist=False))
    logger.info("stage=split sessions=%d train=%d test=%d", len(sessions), len(train), len(test))


def _load_split(cfg):
    return json.loads(cfg.artifact("split").read_text(encoding="utf-8"))


def cmd_train(cfg):
    table = P.FeatureTable.load(cfg.artifact("features"))
    split = _load_split(cfg)
    rows = table.rows_for(split["train"])
    X = table.matrix(cfg.combo, rows)
    y = np.where(table.labels[rows], 1.0, -1.0)
    try:
        model, result, keep = train_pipeline(X, y, table.session_ids[rows], cfg.combo, cfg.train_config(), cfg.n_jobs)
    except ValueError as exc:
        raise ConfigError(f"train: {exc}") from None
    model.save(cfg.artifact("model", must_exist=False))
    P._write_json({"C": result.C, "gamma": result.gamma, "W": result.W, "cv_ap": result.cv_score,
                   "n_train": int(rows.sum()), "n_kept": int(len(keep)), "table": result.table},
                  cfg.artifact("grid", must_exist=False))
    logger.info("stage=train segments=%d kept=%d positives=%d C=%g gamma=%g W=%g cv_ap=%.4f", int(rows.sum()),
                len(keep), int((y > 0).sum()), result.C, result.gamma, result.W, result.cv_score)


def _total_audio_s(sessions, test_ids):
    total = 0.0
    for s in sessions:
        if s.session_id in test_ids:
            total += wav_duration(s.audio_path) if s.audio_path is not None else s.end_s
    return total


def cmd_predict(cfg):
    table = P.FeatureTable.load(cfg.artifact("features"))
    model = EmpathyClassifier.load(cfg.artifact("model"))
    split = _load_split(cfg)
    sessions = _sessions(cfg)
    rows = table.rows_for(split["test"])
    scores = model.predict_proba(table.matrix(model.combo, rows)) if rows.any() else np.zeros(0)
    doc = P.predictions_record(table, rows, scores, _total_audio_s(sessions, set(split["test"])))
    P._write_json(doc, cfg.artifact("predictions", must_exist=False))
    logger.info("stage=predict segments=%d positives=%d", int(rows.sum()), int(table.labels[rows].sum()))


def cmd_evaluate(cfg):
    pred_path = cfg.path("predictions", required=False)
    if "predictions" in cfg.paths:
        if not Path(pred_path).is_file():
            raise ConfigError(f"missing input predictions: {pred_path}")
    elif not Path(pred_path).is_file():
        raise MissingArtifact(f"upstream artifact missing: {pred_path} (run predict)")
    ranked = P.ranked_from_record(json.loads(Path(pred_path).read_text(encoding="utf-8")))
    try:
        report = write_reports(ranked, cfg.output_dir)
    except ValueError as exc:
        raise ConfigError(f"evaluate: {exc}") from None
    logger.info("stage=evaluate segments=%d positives=%d ap=%.4f pos@0.5=%.2f%%", report["n_segments"],
                report["n_positive"], report["ap"], report["edr"]["0.5"]["pos"])


HANDLERS = {
    "synth": cmd_synth,
    "train-role-lms": cmd_train_role_lms,
    "annotate-roles": cmd_annotate_roles,
    "segment": cmd_segment,
    "featurize": cmd_featurize,
    "split": cmd_split,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="empathy-pipeline", description="Empathic-interaction detection pipeline")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--output", help="output directory (overrides config output_dir)")
    parser.add_argument("--log-level", default="INFO")
    return parser


def run_pipeline(command: str, cfg: PipelineConfig) -> int:
    try:
        cfg.output_dir.mkdir(parents=True, exist_ok=True)
        HANDLERS[command](cfg)
    except ConfigError as exc:
        logger.error("%s", exc)
        return 2
    except MissingArtifact as exc:
        logger.error("%s", exc)
        return 3
    except Exception:  # noqa: BLE001 - any other failure is an internal error
        logger.exception("internal failure in %s", command)
        return 1
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), stream=sys.stderr,
                        format="%(levelname)s %(name)s %(message)s")
    try:
        cfg = PipelineConfig.from_file(args.config, args.output, args.seed)
    except ConfigError as exc:
        logger.error("%s", exc)
        return 2
    return run_pipeline(args.command, cfg)


if __name__ == "__main__":
    sys.exit(main())
