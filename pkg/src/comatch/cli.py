"""Command-line entry point: the full pipeline as subcommands.

Every subcommand that takes a --seed is byte-deterministic in its outputs.
Exit codes: 0 ok, 2 usage error, 3 data error, 4 environment error.
Errors go to stderr; data goes to files only.

A config file (INI-style key=value sections, see ``--config``) supplies
defaults; explicit flags win. COMATCH_SEED provides a global seed
fallback when no --seed is given.
"""

from __future__ import annotations

import configparser
import errno
import functools
import os
import sys
from pathlib import Path

import click

from . import corpus as corpus_mod
from . import embedding as embedding_mod
from .errors import (
    ConfigError,
    DataValidationError,
    FormatError,
    InsufficientDataError,
)
from .fusion import fuse
from .matcher import get_matcher
from .model import (
    CategorySet,
    ConfusionMatrix,
    FusedDecision,
    HumanDecision,
    MachineDecision,
    PrototypeModel,
)
from .protoem import ProtoEmConfig, run_naive_em, run_protoem
from .prototypes import assign_nearest, load_model, save_model
from .simulation import (
    ALL_VARIANTS,
    ExperimentGrid,
    HumanSimConfig,
    MachineSimConfig,
    run_experiment,
    simulate_human,
    simulate_machine,
)

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_ENV = 4


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def handle_errors(fn):
    """Map package exceptions onto the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except FileNotFoundError as exc:
            _fail(EXIT_USAGE, f"missing input: {exc.filename or exc}")
        except click.UsageError:
            raise
        except ConfigError as exc:
            _fail(EXIT_USAGE, str(exc))
        except (FormatError, DataValidationError, InsufficientDataError) as exc:
            _fail(EXIT_DATA, str(exc))
        except OSError as exc:
            if exc.errno in (errno.EADDRINUSE, errno.EACCES):
                _fail(EXIT_ENV, str(exc))
            raise

    return wrapper


def default_seed() -> int:
    env = os.environ.get("COMATCH_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"COMATCH_SEED must be an integer, got {env!r}") from None
    return 0


def _load_config(path: str | None) -> configparser.ConfigParser:
    parser = configparser.ConfigParser()
    if path:
        if not Path(path).exists():
            raise ConfigError(f"config file not found: {path}")
        parser.read(path)
    return parser


def _cfg_get(cfg: configparser.ConfigParser, section: str, key: str, fallback=None):
    if cfg.has_option(section, key):
        return cfg.get(section, key)
    return fallback


def _parse_floats(text: str) -> tuple[float, ...]:
    """Comma list, or an inclusive "lo..hi" range stepped by 0.1."""
    text = str(text).replace(" ", "")
    if ".." in text:
        lo_text, hi_text = text.split("..", 1)
        lo, hi = float(lo_text), float(hi_text)
        if hi < lo:
            raise ConfigError(f"bad range {text!r}: upper bound below lower")
        steps = int(round((hi - lo) / 0.1))
        return tuple(round(lo + 0.1 * i, 10) for i in range(steps + 1))
    return tuple(float(x) for x in text.split(",") if x != "")


def _parse_ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in str(text).replace(" ", "").split(",") if x != "")


class ComatchGroup(click.Group):
    def main(self, *args, **kwargs):
        kwargs.setdefault("standalone_mode", True)
        return super().main(*args, **kwargs)


@click.group(cls=ComatchGroup, context_settings={"help_option_names": ["-h", "--help"]})
def main():
    """Collaborative case matching: generate data, estimate human
    uncertainty, fuse decisions, run experiments, serve sessions."""


@main.command("gen")
@click.option("--preset", type=click.Choice(sorted(corpus_mod.PRESETS)), default="elam-like", show_default=True)
@click.option("--pairs", type=int, default=None, help="Number of evaluation case pairs.")
@click.option("--historical-docs", type=int, default=None, help="Documents backing the emitted decision log.")
@click.option("--sentences-per-doc", type=int, default=None)
@click.option("--prototypes", type=int, default=None)
@click.option("--dimension", type=int, default=None)
@click.option("--base-noise", type=float, default=None, help="Base human noise rate for the log population.")
@click.option("--noise-profile", type=click.Choice(["drop_to_notkey", "uniform_confusion"]), default=None)
@click.option("--machine-accuracy", type=float, default=None)
@click.option("--overconfidence", type=float, default=None, help="Machine logit overconfidence scale.")
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--config", "config_path", type=str, default=None)
@handle_errors
def cmd_gen(preset, pairs, historical_docs, sentences_per_doc, prototypes, dimension,
            base_noise, noise_profile, machine_accuracy, overconfidence, seed, out_dir, config_path):
    """Generate a synthetic corpus, decision log, embeddings and truth file."""
    cfg = _load_config(config_path)
    seed = seed if seed is not None else int(_cfg_get(cfg, "gen", "seed", default_seed()))
    overrides = {}
    for name, value in (
        ("pairs", pairs),
        ("historical_docs", historical_docs),
        ("sentences_per_doc", sentences_per_doc),
        ("prototypes", prototypes),
        ("dimension", dimension),
        ("base_noise", base_noise),
        ("noise_profile", noise_profile),
    ):
        file_value = _cfg_get(cfg, "gen", name)
        if value is not None:
            overrides[name] = value
        elif file_value is not None:
            overrides[name] = type(corpus_mod.GeneratorSpec.__dataclass_fields__[name].default)(file_value) \
                if name != "noise_profile" else file_value
    machine_kwargs = {}
    if machine_accuracy is not None:
        machine_kwargs["target_accuracy"] = machine_accuracy
    if overconfidence is not None:
        machine_kwargs["overconfidence_scale"] = overconfidence
    if machine_kwargs:
        overrides["machine"] = MachineSimConfig(
            target_accuracy=machine_kwargs.get("target_accuracy", 0.75),
            overconfidence_scale=machine_kwargs.get("overconfidence_scale", 1.0),
        )
    spec = corpus_mod.PRESETS[preset](**overrides)
    data = corpus_mod.gen_synthetic(spec, seed)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    corpus_mod.save_corpus(data.pairs, out / "pairs.jsonl")
    corpus_mod.save_decision_log(data.log, out / "log.jsonl")
    embedding_mod.export_embeddings(data.embeddings, out / "embeddings.jsonl")
    corpus_mod.save_truth(data, out / "truth.json")
    click.echo(
        f"wrote {len(data.pairs)} pairs, {len(data.log)} log records, "
        f"{len(data.embeddings)} embeddings to {out}",
        err=True,
    )


@main.command("protoem")
@click.option("--log", "log_path", type=str, required=True)
@click.option("--prototypes", type=int, default=4, show_default=True)
@click.option("--iters", type=int, default=40, show_default=True)
@click.option("--alpha", type=float, default=1.0, show_default=True)
@click.option("--epsilon", type=float, default=0.2, show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--naive", is_flag=True, help="Single global confusion matrix (same as --prototypes 1).")
@click.option("--trace", "trace_path", type=str, default=None, help="Per-iteration JSONL trace file.")
@click.option("--out", "out_path", type=str, required=True)
@handle_errors
def cmd_protoem(log_path, prototypes, iters, alpha, epsilon, seed, naive, trace_path, out_path):
    """Estimate per-prototype confusion matrices from a decision log."""
    seed = seed if seed is not None else default_seed()
    log = corpus_mod.load_decision_log(log_path)
    cfg = ProtoEmConfig(
        prototypes=1 if naive else prototypes,
        em_iterations=iters,
        alpha=alpha,
        init_epsilon=epsilon,
        seed=seed,
    )
    runner = run_naive_em if naive else run_protoem
    model = runner(log, cfg, trace_path=trace_path)
    save_model(model, out_path)
    click.echo(f"wrote prototype model ({model.prototype_count} prototypes) to {out_path}", err=True)


@main.command("fuse")
@click.option("--corpus", "corpus_path", type=str, required=True)
@click.option("--model", "model_path", type=str, required=True)
@click.option("--embeddings", "embeddings_path", type=str, required=True)
@click.option("--machine", "machine_path", type=str, default=None,
              help="Machine decisions JSONL; omit to simulate (labeled corpus required).")
@click.option("--human", "human_path", type=str, default=None,
              help="Human decisions JSONL; omit to simulate (labeled corpus required).")
@click.option("--machine-accuracy", type=float, default=0.75, show_default=True)
@click.option("--noise", type=float, default=0.1, show_default=True)
@click.option("--noise-model", type=click.Choice(["drop_to_notkey", "uniform_confusion"]),
              default="drop_to_notkey", show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--phi", "phi_mode", type=click.Choice(["model", "identity"]), default="model",
              show_default=True, help="Debug: force identity confusion matrices.")
@click.option("--match", "do_match", is_flag=True, help="Also emit pair relations.")
@click.option("--matcher", "matcher_name", type=str, default=None,
              help="Matcher name (default: config key matcher.name, else 'reference').")
@click.option("--config", "config_path", type=str, default=None)
@click.option("--out", "out_path", type=str, required=True)
@click.option("--relations-out", type=str, default=None)
@handle_errors
def cmd_fuse(corpus_path, model_path, embeddings_path, machine_path, human_path,
             machine_accuracy, noise, noise_model, seed, phi_mode, do_match,
             matcher_name, config_path, out_path, relations_out):
    """Fuse human and machine decisions for every sentence of a corpus."""
    cfg_file = _load_config(config_path)
    if matcher_name is None:
        matcher_name = _cfg_get(cfg_file, "matcher", "name", "reference")
    seed = seed if seed is not None else default_seed()
    pairs = corpus_mod.load_corpus(corpus_path)
    model = load_model(model_path)
    embeddings = embedding_mod.import_embeddings(embeddings_path, model.dimension)

    docs = [d for pair in pairs for d in (pair.source, pair.target)]
    refs = [s.ref for d in docs for s in d.sentences]

    category_count = model.confusions[0].size
    machine_by_ref = _resolve_machine(machine_path, docs, refs, machine_accuracy, seed, category_count)
    human_by_ref = _resolve_human(human_path, docs, refs, noise, noise_model, seed, category_count)

    if phi_mode == "identity":
        confusions = tuple(ConfusionMatrix.identity(category_count) for _ in range(model.prototype_count))
        model = PrototypeModel(model.centroids, confusions, model.config)

    fused_rows = []
    fused_by_doc: dict[str, list[FusedDecision]] = {}
    for doc in docs:
        for s in doc.sentences:
            ref = s.ref
            if ref not in machine_by_ref:
                _fail(EXIT_USAGE, f"missing machine decision for {ref}")
            if ref not in human_by_ref:
                _fail(EXIT_USAGE, f"missing human decision for {ref}")
            if ref not in embeddings:
                _fail(EXIT_USAGE, f"missing embedding for {ref}")
            j = assign_nearest(embeddings[ref], model.centroids)
            fused = fuse(machine_by_ref[ref], human_by_ref[ref], model.confusions[j])
            row = fused.to_dict()
            row["prototype"] = j
            fused_rows.append(row)
            fused_by_doc.setdefault(doc.doc_id, []).append(fused)

    import json

    with open(out_path, "w", encoding="utf-8") as fh:
        for row in fused_rows:
            fh.write(json.dumps(row) + "\n")
    click.echo(f"wrote {len(fused_rows)} fused decisions to {out_path}", err=True)

    if do_match:
        scorer = get_matcher(matcher_name)
        rel_path = relations_out or (str(out_path) + ".relations.jsonl")
        with open(rel_path, "w", encoding="utf-8") as fh:
            for pair in pairs:
                relation, score = scorer(
                    pair,
                    fused_by_doc[pair.source.doc_id],
                    fused_by_doc[pair.target.doc_id],
                    embeddings,
                )
                fh.write(json.dumps({
                    "source": pair.source.doc_id,
                    "target": pair.target.doc_id,
                    "relation": relation,
                    "score": score,
                    "true_relation": pair.true_relation,
                }) + "\n")
        click.echo(f"wrote {len(pairs)} pair relations to {rel_path}", err=True)


def _resolve_machine(machine_path, docs, refs, accuracy, seed, category_count):
    import json

    if machine_path:
        out = {}
        with open(machine_path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    d = MachineDecision.from_dict(json.loads(line))
                except (KeyError, TypeError, ValueError) as exc:
                    raise FormatError(f"{machine_path}: line {lineno}: {exc}") from exc
                out[d.sentence_ref] = d
        return out
    labels = _require_labels(docs, "simulating machine decisions")
    cfg = MachineSimConfig(target_accuracy=accuracy, seed=seed)
    _, decisions = simulate_machine(labels, cfg, category_count, refs=refs)
    return {d.sentence_ref: d for d in decisions}


def _resolve_human(human_path, docs, refs, noise, noise_model, seed, category_count):
    import json

    if human_path:
        out = {}
        with open(human_path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    d = HumanDecision.from_dict(json.loads(line))
                except (KeyError, TypeError) as exc:
                    raise FormatError(f"{human_path}: line {lineno}: {exc}") from exc
                out[d.sentence_ref] = d
        return out
    labels = _require_labels(docs, "simulating human decisions")
    cfg = HumanSimConfig(noise_rate=noise, model=noise_model, seed=seed)
    decisions = simulate_human(labels, cfg, category_count=category_count, refs=refs)
    return {d.sentence_ref: d for d in decisions}


def _require_labels(docs, what) -> list[int]:
    labels = []
    for doc in docs:
        for s in doc.sentences:
            if s.true_label is None:
                raise InsufficientDataError(f"corpus is unlabeled; cannot {what} (sentence {s.ref})")
            labels.append(s.true_label)
    return labels


@main.command("simulate")
@click.option("--corpus", "corpus_path", type=str, required=True)
@click.option("--embeddings", "embeddings_path", type=str, required=True)
@click.option("--truth", "truth_path", type=str, default=None,
              help="Generator truth file; enables per-prototype human noise and Frobenius scoring.")
@click.option("--noise", "noise_text", type=str, default="0.1,0.2,0.3,0.4,0.5", show_default=True)
@click.option("--k-grid", "k_grid_text", type=str, default="4", show_default=True)
@click.option("--em-grid", "em_grid_text", type=str, default="40", show_default=True)
@click.option("--variants", "variants_text", type=str, default="all", show_default=True)
@click.option("--noise-model", type=click.Choice(["drop_to_notkey", "uniform_confusion"]),
              default="drop_to_notkey", show_default=True)
@click.option("--historical-noise", type=float, default=0.1, show_default=True,
              help="Noise rate of the log's practitioner population (fixed across the grid).")
@click.option("--seeds", type=int, default=3, show_default=True, help="Number of seeds (0..N-1).")
@click.option("--seed-base", type=int, default=None, help="Offset added to every seed.")
@click.option("--machine-accuracy", type=float, default=None,
              help="Override the machine simulator accuracy (default: truth file or 0.75).")
@click.option("--em-tol", type=float, default=1e-7, show_default=True)
@click.option("--out", "out_prefix", type=str, required=True, help="Prefix for .json and .csv reports.")
@handle_errors
def cmd_simulate(corpus_path, embeddings_path, truth_path, noise_text, k_grid_text, em_grid_text,
                 variants_text, noise_model, historical_noise, seeds, seed_base,
                 machine_accuracy, em_tol, out_prefix):
    """Run the experiment grid and write JSON + CSV reports."""
    from dataclasses import replace as dc_replace

    pairs = corpus_mod.load_corpus(corpus_path)
    if not pairs:
        raise InsufficientDataError("corpus is empty")
    for pair in pairs:
        for doc in (pair.source, pair.target):
            for s in doc.sentences:
                if s.true_label is None:
                    raise InsufficientDataError(f"corpus is unlabeled at {s.ref}; simulate needs ground truth")

    if truth_path:
        truth = corpus_mod.load_truth(truth_path)
        embeddings = embedding_mod.import_embeddings(embeddings_path, _peek_dimension(embeddings_path))
        corpus = truth.experiment_corpus(pairs, embeddings)
    else:
        embeddings = embedding_mod.import_embeddings(embeddings_path, _peek_dimension(embeddings_path))
        category_count = max(s.true_label for p in pairs for d in (p.source, p.target) for s in d.sentences) + 1
        names = tuple(f"cat_{i}" if i else "not_key" for i in range(max(category_count, 2)))
        from .simulation import ExperimentCorpus

        corpus = ExperimentCorpus(
            pairs=tuple(pairs),
            embeddings=embeddings,
            categories=CategorySet(names),
            machine=MachineSimConfig(target_accuracy=0.75),
        )
    if machine_accuracy is not None:
        corpus = dc_replace(corpus, machine=dc_replace(corpus.machine, target_accuracy=machine_accuracy))

    variants = ALL_VARIANTS if variants_text.strip() == "all" else tuple(
        v.strip() for v in variants_text.split(",") if v.strip()
    )
    grid = ExperimentGrid(
        noise_rates=_parse_floats(noise_text),
        prototype_counts=_parse_ints(k_grid_text),
        em_iteration_counts=_parse_ints(em_grid_text),
    )
    base = seed_base if seed_base is not None else default_seed()
    report = run_experiment(
        corpus,
        variants=variants,
        grid=grid,
        seeds=tuple(base + i for i in range(seeds)),
        noise_model=noise_model,
        em_convergence_tol=em_tol,
        historical_noise_rate=historical_noise,
    )
    report.write_json(str(out_prefix) + ".json")
    report.write_csv(str(out_prefix) + ".csv")
    click.echo(f"wrote {len(report.results)} result rows to {out_prefix}.json/.csv", err=True)


def _peek_dimension(path) -> int:
    import json

    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                return len(json.loads(line)["vector"])
    raise FormatError(f"{path}: no embeddings found")


@main.command("serve")
@click.option("--model", "model_path", type=str, required=True)
@click.option("--corpus", "corpus_path", type=str, required=True)
@click.option("--embeddings", "embeddings_path", type=str, default=None)
@click.option("--addr", type=str, default="127.0.0.1:8787", show_default=True)
@click.option("--data-dir", type=str, default="comatch-sessions", show_default=True,
              help="Session append-log directory.")
@click.option("--machine-accuracy", type=float, default=0.75, show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--ui-dir", type=str, default=None, help="Static UI assets to serve under /ui.")
@click.option("--append-decisions-log", type=str, default=None,
              help="Append live human decisions to this decision-log file for a later refit (off by default).")
@click.option("--truth", "truth_path", type=str, default=None,
              help="Generator truth file supplying category names and relation thresholds.")
@handle_errors
def cmd_serve(model_path, corpus_path, embeddings_path, addr, data_dir, machine_accuracy, seed, ui_dir,
              append_decisions_log, truth_path):
    """Serve interactive collaborative-matching sessions over HTTP."""
    import uvicorn

    from .service.app import create_app

    seed = seed if seed is not None else default_seed()
    if not Path(model_path).exists():
        _fail(EXIT_USAGE, f"missing input: {model_path}")
    if not Path(corpus_path).exists():
        _fail(EXIT_USAGE, f"missing input: {corpus_path}")
    host, _, port_text = addr.partition(":")
    try:
        port = int(port_text or "8787")
    except ValueError:
        raise click.UsageError(f"bad --addr {addr!r}; expected host:port")

    app = create_app(
        model_path=model_path,
        corpus_path=corpus_path,
        embeddings_path=embeddings_path,
        truth_path=truth_path,
        data_dir=data_dir,
        machine_accuracy=machine_accuracy,
        seed=seed,
        ui_dir=ui_dir,
        decision_log_path=append_decisions_log,
    )
    try:
        uvicorn.run(app, host=host or "127.0.0.1", port=port, log_level="warning")
    except SystemExit as exc:
        # uvicorn exits 1 when the port is taken; remap to the documented code.
        if exc.code:
            _fail(EXIT_ENV, f"could not bind {addr}")


if __name__ == "__main__":
    main()
