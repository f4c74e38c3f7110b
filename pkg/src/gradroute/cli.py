"""Command line entry point: ``gradroute {probe,score,route,analyze,demo}``.

Exit codes: 0 success, 2 usage, 3 validation, 4 I/O.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .analysis import consensus, normalization_robustness, ratio_sweep, spearman
from .demo import demo_corpus_records
from .errors import ConfigurationError, GradrouteError
from .estimators import GradientProbe
from .ingest import (
    IngestSummary,
    PartitionManifest,
    read_gradient_dump,
    read_partition,
    read_scores,
    read_trajectory_corpus,
    write_gradient_dump,
    write_partition,
    write_report,
    write_scores,
    write_trajectory_corpus,
)
from .metrics import EPS, METRICS, score_corpus
from .probe import ProbeModelConfig
from .router import route

log = logging.getLogger("gradroute")

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_IO = 0, 2, 3, 4
METRIC_CHOICES = ("gini", "kurtosis", "cv", "l2")


class UsageError(GradrouteError):
    pass


@dataclass
class PipelineConfig:
    model: ProbeModelConfig = field(default_factory=ProbeModelConfig)
    context_length: int = 2048
    metric: str = "gini"
    epsilon: float = EPS
    normalized: bool = False
    rule: str = "median"
    rl_fraction: float = 0.5
    inverse: bool = False
    rng_seed: int = 0
    paths: dict = field(default_factory=dict)

    def validate(self) -> PipelineConfig:
        if self.context_length < 2:
            raise ConfigurationError("context_length", "must be at least 2")
        if not self.epsilon > 0:
            raise ConfigurationError("epsilon", "must be positive")
        if self.metric not in METRIC_CHOICES and self.metric not in METRICS:
            raise ConfigurationError("metric", f"unknown metric {self.metric!r}")
        if self.rule not in ("median", "quantile"):
            raise ConfigurationError("rule", f"unknown rule {self.rule!r}")
        if self.rule == "quantile" and not 0 < self.rl_fraction < 1:
            raise ConfigurationError("rl_fraction", "must lie in (0, 1)")
        self.model.validate()
        if self.model.max_context < self.context_length:
            raise ConfigurationError(
                "model.max_context", f"{self.model.max_context} is smaller than context_length={self.context_length}"
            )
        return self


def load_config(path: str | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, dict):
        raise ConfigurationError("config", "top level must be a JSON object")
    known = {f.name for f in dataclasses.fields(PipelineConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigurationError(sorted(unknown)[0], "unknown configuration key")
    model = raw.pop("model", {})
    model_fields = {f.name for f in dataclasses.fields(ProbeModelConfig)}
    bad = set(model) - model_fields
    if bad:
        raise ConfigurationError(f"model.{sorted(bad)[0]}", "unknown model key")
    cfg = PipelineConfig(model=ProbeModelConfig(**model), **raw)
    if "rng_seed" in raw and "rng_seed" not in model:
        cfg.model = dataclasses.replace(cfg.model, rng_seed=cfg.rng_seed)
    return cfg


def _apply_flags(cfg: PipelineConfig, args) -> PipelineConfig:
    if getattr(args, "seed", None) is not None:
        cfg.rng_seed = args.seed
        cfg.model = dataclasses.replace(cfg.model, rng_seed=args.seed)
    if getattr(args, "context_length", None) is not None:
        cfg.context_length = args.context_length
    if getattr(args, "metric", None) is not None:
        cfg.metric = args.metric
    if getattr(args, "epsilon", None) is not None:
        cfg.epsilon = args.epsilon
    if getattr(args, "normalized", False):
        cfg.normalized = True
    if getattr(args, "rule", None) is not None:
        cfg.rule = args.rule
    if getattr(args, "rl_fraction", None) is not None:
        cfg.rl_fraction = args.rl_fraction
    if getattr(args, "inverse", False):
        cfg.inverse = True
    return cfg.validate()


def _input(args, cfg: PipelineConfig, key: str) -> str:
    value = getattr(args, "input", None) or cfg.paths.get(key)
    if not value:
        raise UsageError(f"no input given (pass a path or set paths.{key} in the config)")
    return value


def _output(args, cfg: PipelineConfig, key: str) -> str:
    value = args.out or cfg.paths.get(key)
    if not value:
        raise UsageError(f"no output given (pass --out or set paths.{key} in the config)")
    return value


# --------------------------------------------------------------------------
# subcommands


def cmd_probe(args, cfg: PipelineConfig) -> int:
    start = time.perf_counter()
    summary = IngestSummary()
    trajectories = read_trajectory_corpus(
        _input(args, cfg, "corpus"), cfg.context_length, cfg.model.vocab_size, summary
    )
    m = cfg.model
    probe = GradientProbe(m.num_layers, m.model_dim, m.num_heads, m.ffn_hidden_dim, m.vocab_size,
                          m.max_context, cfg.context_length, m.rng_seed).fit()
    vectors = probe.probe(trajectories)
    write_gradient_dump(vectors, _output(args, cfg, "dump"))
    elapsed = time.perf_counter() - start
    print(f"probed {len(vectors)} trajectories ({probe.n_features_out_} groups each), "
          f"skipped {summary.skipped}, {elapsed:.2f}s")
    if summary.skipped_ids:
        print("skipped: " + ", ".join(summary.skipped_ids))
    return EXIT_OK


def cmd_score(args, cfg: PipelineConfig) -> int:
    vectors = read_gradient_dump(_input(args, cfg, "dump"))
    scores = score_corpus(vectors, cfg.metric, normalized=cfg.normalized, eps=cfg.epsilon)
    write_scores(scores, _output(args, cfg, "scores"))
    print(f"scored {len(scores)} trajectories with {scores.metric_name}"
          f"{' (size-normalized)' if scores.normalized else ''}; {len(scores.degenerate)} degenerate")
    return EXIT_OK


def cmd_route(args, cfg: PipelineConfig) -> int:
    scores = read_scores(_input(args, cfg, "scores"))
    partition = route(scores, cfg.rule, cfg.rl_fraction, cfg.inverse)
    write_partition(PartitionManifest.from_scores(partition, scores), _output(args, cfg, "manifest"))
    print(f"{partition.rule}: threshold={partition.threshold!r} "
          f"SFT={len(partition.sft_ids)} RL={len(partition.rl_ids)}")
    return EXIT_OK


def cmd_analyze(args, cfg: PipelineConfig) -> int:
    out = _output(args, cfg, "report")
    kind = args.analysis
    if kind == "consensus":
        parts = {}
        for path in args.inputs:
            p = read_partition(path).partition
            name = p.metric_name
            while name in parts:
                name += "'"
            parts[name] = p
        rep = consensus(parts)
        rows = [
            {"a": a, "b": b, "jaccard": rep.pairwise_rl_overlap[(a, b)],
             "intersection": rep.pairwise_rl_intersection[(a, b)]}
            for a, b in rep.pairwise_rl_overlap
        ]
        summary = {
            "names": rep.names,
            "corpus_size": rep.corpus_size,
            "rl_sizes": rep.rl_sizes,
            "rl_intersection_count": rep.rl_intersection_count,
            "triple_rl_intersection_fraction": rep.triple_rl_intersection_fraction,
            "corpus_intersection_fraction": rep.corpus_intersection_fraction,
            "random_baseline": rep.random_baseline,
            "random_corpus_baseline": rep.random_corpus_baseline,
        }
        write_report(out, "consensus", summary, rows)
        print(f"shared RL fraction {rep.triple_rl_intersection_fraction:.4f} "
              f"(random {rep.random_baseline:.4f})")
    elif kind == "spearman":
        if len(args.inputs) != 2:
            raise UsageError("spearman takes exactly two score files")
        a, b = (read_scores(p) for p in args.inputs)
        rho = spearman(a, b)
        write_report(out, "spearman", {"a": a.metric_name, "a_normalized": a.normalized,
                                       "b": b.metric_name, "b_normalized": b.normalized,
                                       "n": len(a), "rho": rho})
        print(f"rho = {rho!r}")
    elif kind == "sweep":
        if len(args.inputs) != 1:
            raise UsageError("sweep takes exactly one score file")
        fractions = [float(x) for x in args.fractions.split(",")]
        rep = ratio_sweep(read_scores(args.inputs[0]), fractions)
        rows = [dataclasses.asdict(r) for r in rep.rows]
        write_report(out, "sweep", {"metric_name": rep.metric_name, "nesting_verified": rep.nesting_verified}, rows)
        print(f"{len(rows)} rows, nesting_verified={rep.nesting_verified}")
    elif kind == "norm-robustness":
        if len(args.inputs) != 1:
            raise UsageError("norm-robustness takes exactly one gradient dump")
        rep = normalization_robustness(read_gradient_dump(args.inputs[0]), cfg.metric)
        write_report(out, "norm-robustness", dataclasses.asdict(rep))
        print("degenerate ranking, no rho" if rep.degenerate else f"rho = {rep.rho!r}")
    return EXIT_OK


def cmd_demo(args, cfg: PipelineConfig) -> int:
    records = demo_corpus_records(args.n, cfg.rng_seed, args.n_truncated, cfg.context_length)
    write_trajectory_corpus(records, _output(args, cfg, "corpus"))
    print(f"wrote {len(records)} demo trajectories")
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON pipeline configuration")
    common.add_argument("--seed", type=int, help="override the configured rng seed")
    common.add_argument("--out", help="output file")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="gradroute", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("probe", parents=[common], help="gradient-norm vectors for a trajectory corpus")
    p.add_argument("input", nargs="?", help="trajectory corpus")
    p.add_argument("--context-length", type=int)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("score", parents=[common], help="concentration scores from a gradient dump")
    p.add_argument("input", nargs="?", help="gradient dump")
    p.add_argument("--metric", choices=METRIC_CHOICES)
    p.add_argument("--normalized", action="store_true", help="divide norms by sqrt(parameter count)")
    p.add_argument("--epsilon", type=float)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("route", parents=[common], help="SFT/RL partition manifest from scores")
    p.add_argument("input", nargs="?", help="score file")
    p.add_argument("--rule", choices=("median", "quantile"))
    p.add_argument("--rl-fraction", type=float)
    p.add_argument("--inverse", action="store_true", help="swap the SFT and RL sets")
    p.set_defaults(func=cmd_route)

    p = sub.add_parser("analyze", parents=[common], help="consensus / spearman / sweep / norm-robustness reports")
    p.add_argument("analysis", choices=("consensus", "spearman", "sweep", "norm-robustness"))
    p.add_argument("inputs", nargs="+")
    p.add_argument("--metric", choices=METRIC_CHOICES)
    p.add_argument("--fractions", default="0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("demo", parents=[common], help="write a small byte-tokenized demo corpus")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--n-truncated", type=int, default=0)
    p.add_argument("--context-length", type=int)
    p.set_defaults(func=cmd_demo)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _apply_flags(load_config(args.config), args)
        return args.func(args, cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (GradrouteError, ValueError, TypeError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
