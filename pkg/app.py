"""
Interleaved Reasoning Pipeline - Command-Line Application

Single entry point tying the pipeline together. Every subcommand reads a
YAML run config, applies flag overrides, writes the resolved config and
its hash into its output directory, and exits nonzero on any pipeline error.

    datagen   build the base, stage-1, single-turn and refinement corpora
    train     run stage 1, stage 2 or both and write a checkpoint
    infer     roll out one prompt (or edit one image) and render the grids
    eval      score a checkpoint on the held-out suites
    ablate    train base and two-stage models and emit the four-row table
    pipeline  build a refinement corpus with the agent pipeline
"""

import argparse
import copy
import json
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import pandas as pd
from loguru import logger

from corpus import build_all, build_refinement, read_corpus, write_jsonl
from corpus.samples import DatasetManifest, Sample
from evaluation.harness import (EvalReport, ReferenceEngine, correlation_study, eval_compositional, eval_edit, eval_t2i,
                                run_ablation, snapshot_steps)
from evaluation.reports import format_table, plot_correlation, plot_scores, write_correlation, write_reports
from evaluation.suites import EvalSuite, check_seed_disjointness, compositional_suite, edit_suite, knowledge_suite
from inference.interleave import InterleaveEngine
from models.codec import CodecParams, choose_latent_dim
from toyworld.entities import GridImage
from toyworld.rules import load_rule_table
from toyworld.scenes import fresh_grids
from toyworld.vocab import Vocabulary, build_vocabulary
from training.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from training.trainer import build_model, pretrain_base, train_stage1, train_stage2
from utils.config import RunConfig, Settings, load_run_config, write_resolved_config
from utils.errors import ConfigurationError, ReasonerError
from utils.logging_setup import configure_logging

CORPORA = ('base', 'stage1', 'single_turn', 'refine')


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(prog='app.py', description='Interleaved reasoning pipeline')
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument('--config', help='YAML run config')
    shared.add_argument('--seed', type=int, help='Run seed; also seeds every training stage')
    shared.add_argument('--out', help='Output directory (default: $REASONER_OUTPUT_ROOT/<command>)')
    shared.add_argument('--flow-steps', type=int, help='Euler steps per generated image')
    shared.add_argument('--log-level', help='Log level (default: $REASONER_LOG_LEVEL)')
    commands = parser.add_subparsers(dest='command', required=True)

    commands.add_parser('datagen', parents=[shared], help='Build every training corpus')

    train = commands.add_parser('train', parents=[shared], help='Two-stage training')
    train.add_argument('--dataset-dir', help='Directory written by datagen')
    train.add_argument('--stages', type=int, nargs='+', choices=[1, 2], help='Stages to run')
    train.add_argument('--checkpoint', help='Start from this checkpoint instead of a fresh model')
    train.add_argument('--latent-dim', type=int, help='First latent dimension the codec search tries')

    infer = commands.add_parser('infer', parents=[shared], help='One rollout')
    infer.add_argument('--checkpoint', help='Checkpoint directory')
    infer.add_argument('--prompt', help='Instruction text')
    infer.add_argument('--image', help='JSON file of grid codes; turns the rollout into an edit')
    infer.add_argument('--mode', choices=['direct', 'reason', 'reason_refine'])

    evaluate = commands.add_parser('eval', parents=[shared], help='Held-out evaluation')
    evaluate.add_argument('--checkpoint', help="Checkpoint directory, or 'reference' for the oracle answers")
    evaluate.add_argument('--dataset-dir', help='Training corpora, for the seed-disjointness check')
    evaluate.add_argument('--suite', action='append', choices=['knowledge', 'compositional', 'edit', 'correlation'])
    evaluate.add_argument('--mode', action='append', choices=['direct', 'reason', 'reason_refine'])
    evaluate.add_argument('--plot', action='store_true', default=None, help='Write HTML figures')

    ablate = commands.add_parser('ablate', parents=[shared], help='Four-row ablation')
    ablate.add_argument('--dataset-dir', help='Directory written by datagen; built fresh when omitted')

    pipeline = commands.add_parser('pipeline', parents=[shared], help='Agent refinement corpus')
    pipeline.add_argument('--backend', choices=['scripted', 'model', 'remote'])
    pipeline.add_argument('--count', type=int, help='Candidate samples')
    pipeline.add_argument('--checkpoint', help='Checkpoint for the model backend')
    return parser.parse_args(argv)


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    """Flags that were given, as a nested config dict"""
    overrides: Dict[str, Any] = {}
    if args.seed is not None:
        overrides['seed'] = args.seed
        for stage in ('base', 'stage1', 'stage2'):
            overrides[stage] = {'seed': args.seed}
    if args.out is not None:
        overrides['out'] = args.out
    if args.flow_steps is not None:
        overrides['sampler'] = {'steps': args.flow_steps}
    for flag in ('dataset_dir', 'stages', 'checkpoint', 'latent_dim', 'prompt', 'image', 'mode'):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[flag] = value
    if getattr(args, 'suite', None):
        overrides.setdefault('eval', {})['suites'] = args.suite
    if args.command == 'eval' and args.mode:
        overrides.pop('mode')
        overrides.setdefault('eval', {})['modes'] = args.mode
    if getattr(args, 'plot', None):
        overrides.setdefault('eval', {})['plot'] = True
    if getattr(args, 'backend', None):
        overrides['pipeline'] = {'backend': args.backend}
    if getattr(args, 'count', None) is not None:
        overrides['corpus'] = {'refinement_count': args.count}
    return overrides


def _output_dir(config: RunConfig, command: str) -> Path:
    return Path(config.out) if config.out else Settings().output_root / command


def _load_corpora(dataset_dir: Optional[str], names: Sequence[str]) -> Dict[str, Tuple[List[Sample], DatasetManifest]]:
    if not dataset_dir:
        raise ConfigurationError('This command needs --dataset-dir')
    return {name: read_corpus(Path(dataset_dir) / f"{name}.jsonl") for name in names}


def _fit_codec(config: RunConfig, corpora: Dict[str, Tuple[List[Sample], DatasetManifest]]) -> CodecParams:
    images: List[GridImage] = [img for samples, _ in corpora.values() for s in samples for img in s.images()]
    fresh = fresh_grids(config.codec_fresh_grids, config.seed, config.world)
    d, codec = choose_latent_dim(images, fresh, start=config.latent_dim or config.model.latent_dim)
    logger.info(f"Codec latent dimension {d} reproduces {len(images)} corpus and {len(fresh)} fresh grids")
    return codec


def _fresh(config: RunConfig, codec: CodecParams, vocab: Vocabulary):
    model_cfg = config.model.model_copy(update={'latent_dim': codec.latent_dim})
    return build_model(model_cfg, vocab, config.seed)


def _engine(checkpoint: Checkpoint, config: RunConfig) -> InterleaveEngine:
    return InterleaveEngine.from_checkpoint(checkpoint, config.sampler)


def cmd_datagen(config: RunConfig, out: Path, digest: str) -> None:
    """Build and write every corpus with its manifest"""
    rules = load_rule_table()
    vocab = build_vocabulary(config.world, rules, config.model.vocab_size)
    results = build_all(config.corpus, config.pipeline, config.seed, config.world, rules, vocab,
                        audit_dir=out / 'audit' if config.pipeline.audit_log else None, progress=True)
    for name, result in results.items():
        manifest = result.manifest.model_copy(update={'config_hash': digest})
        write_jsonl(result.samples, out / f"{name}.jsonl", manifest)
    vocab.save(out / 'vocab.json')


def cmd_train(config: RunConfig, out: Path, digest: str) -> None:
    """Stage 1 and/or stage 2 into `<out>/checkpoint`"""
    rules = load_rule_table()
    needed = (['stage1'] if 1 in config.stages else []) + (['single_turn', 'refine'] if 2 in config.stages else [])
    corpora = _load_corpora(config.dataset_dir, needed)
    if config.checkpoint:
        start = load_checkpoint(Path(config.checkpoint))
        model, codec, vocab, step = start.model, start.codec, start.vocab, start.manifest.get('step', 0)
    else:
        vocab = build_vocabulary(config.world, rules, config.model.vocab_size)
        codec = _fit_codec(config, corpora)
        model, step = _fresh(config, codec, vocab), 0
    frames = []
    if 1 in config.stages:
        result = train_stage1(model, corpora['stage1'][0], config.stage1, vocab, codec)
        frames.append(result.metrics.assign(stage=1))
        step += result.steps
    if 2 in config.stages:
        samples = corpora['single_turn'][0] + corpora['refine'][0]
        result = train_stage2(model, samples, config.stage2, vocab, codec)
        frames.append(result.metrics.assign(stage=2))
        step += result.steps
    metrics = pd.concat(frames, ignore_index=True) if frames else None
    save_checkpoint(out / 'checkpoint', model, codec, vocab, step, rules.version, config, metrics)


def _read_grid(path: str) -> GridImage:
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return GridImage.from_codes(json.load(f))
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigurationError(f"Cannot read grid codes from {path}: {e}") from e


def cmd_infer(config: RunConfig, out: Path, digest: str) -> None:
    """One rollout, written as JSON, ASCII and PNG"""
    if not config.checkpoint or not config.prompt:
        raise ConfigurationError('infer needs --checkpoint and --prompt')
    engine = _engine(load_checkpoint(Path(config.checkpoint)), config)
    if config.image:
        rollout = engine.edit(_read_grid(config.image), config.prompt, config.mode)
    else:
        rollout = engine.run(config.prompt, config.mode)
    rollout.metadata['config_hash'] = digest
    (out / 'rollout.json').write_text(json.dumps(rollout.to_dict(), indent=2, sort_keys=True), encoding='utf-8')
    (out / 'rollout.txt').write_text(rollout.to_ascii(), encoding='utf-8')
    rollout.save_png(out / 'rollout.png')
    logger.info(f"Rollout written to {out}")


def _suites(config: RunConfig, rules) -> Dict[str, EvalSuite]:
    cfg = config.eval
    builders = {
        'knowledge': lambda: knowledge_suite(cfg.suite_per_category, config.seed, config.world, rules),
        'compositional': lambda: compositional_suite(cfg.compositional_per_category, config.seed, config.world, rules),
        'edit': lambda: edit_suite(cfg.edit_suite_size, config.seed, config.world, rules)
    }
    return {name: builders[name]() for name in cfg.suites if name in builders}


def _correlation(config: RunConfig, out: Path, rules, manifests: List[DatasetManifest]) -> None:
    corpora = _load_corpora(config.dataset_dir, ('stage1', 'single_turn', 'refine'))
    vocab = build_vocabulary(config.world, rules, config.model.vocab_size)
    codec = _fit_codec(config, corpora)
    model = _fresh(config, codec, vocab)
    steps = snapshot_steps(config.stage1.total_iters, config.eval.correlation_checkpoints)
    stage1 = train_stage1(model, corpora['stage1'][0], config.stage1, vocab, codec, snapshot_at=steps)
    snapshots = []
    for step in steps:
        snapshot = copy.deepcopy(model)
        snapshot.load_state_dict(stage1.snapshots[step])
        snapshots.append((step, snapshot))
    knowledge = knowledge_suite(config.eval.suite_per_category, config.seed, config.world, rules)
    edits = edit_suite(config.eval.edit_suite_size, config.seed, config.world, rules)
    for suite in (knowledge, edits):
        check_seed_disjointness(suite, manifests + [m for _, m in corpora.values()])
    result = correlation_study(snapshots, corpora['single_turn'][0] + corpora['refine'][0], config.stage2,
                               vocab, codec, knowledge, edits, config.sampler, rules)
    write_correlation(result, out)
    if config.eval.plot:
        plot_correlation(result, out / 'correlation.html')
    logger.info(f"Spearman correlation of edit score and refinement gain: {result.spearman}")


def cmd_eval(config: RunConfig, out: Path, digest: str) -> None:
    """Held-out reports per suite and mode"""
    rules = load_rule_table()
    manifests = [m for _, m in _load_corpora(config.dataset_dir, CORPORA).values()] if config.dataset_dir else []
    suites = _suites(config, rules)
    for suite in suites.values():
        check_seed_disjointness(suite, manifests)
    if suites and not config.checkpoint:
        raise ConfigurationError('eval needs --checkpoint')
    reports: List[EvalReport] = []
    model_engine = None
    if suites and config.checkpoint != 'reference':
        model_engine = _engine(load_checkpoint(Path(config.checkpoint)), config)
    for name, suite in suites.items():
        engine = model_engine or ReferenceEngine(suite.specs, config.world, rules)
        extra = dict(checkpoint=config.checkpoint, config_hash=digest)
        for mode in config.eval.modes:
            if name == 'edit':
                reports.append(eval_edit(engine, suite, mode, config.sampler, rules, **extra))
            elif name == 'compositional':
                reports.append(eval_compositional(engine, suite, mode, config.sampler, rules, **extra))
            else:
                reports.append(eval_t2i(engine, suite, mode, config.sampler, rules, **extra))
    if reports:
        write_reports(reports, out, 'eval')
        logger.info('\n' + format_table(reports))
        if config.eval.plot:
            plot_scores(reports, out / 'eval.html')
    if 'correlation' in config.eval.suites:
        _correlation(config, out, rules, manifests)


def cmd_ablate(config: RunConfig, out: Path, digest: str) -> None:
    """Base model, then the two-stage model trained from it, on the knowledge suite"""
    rules = load_rule_table()
    if config.dataset_dir:
        corpora = _load_corpora(config.dataset_dir, CORPORA)
    else:
        data_dir = out / 'data'
        cmd_datagen(config, data_dir, digest)
        corpora = _load_corpora(str(data_dir), CORPORA)
    vocab = build_vocabulary(config.world, rules, config.model.vocab_size)
    codec = _fit_codec(config, corpora)
    base = _fresh(config, codec, vocab)
    base_result = pretrain_base(base, corpora['base'][0], config.base, vocab, codec)
    save_checkpoint(out / 'base', base, codec, vocab, base_result.steps, rules.version, config, base_result.metrics)
    trained = copy.deepcopy(base)
    stage1 = train_stage1(trained, corpora['stage1'][0], config.stage1, vocab, codec)
    stage2 = train_stage2(trained, corpora['single_turn'][0] + corpora['refine'][0], config.stage2, vocab, codec)
    metrics = pd.concat([stage1.metrics.assign(stage=1), stage2.metrics.assign(stage=2)], ignore_index=True)
    save_checkpoint(out / 'two_stage', trained, codec, vocab, base_result.steps + stage1.steps + stage2.steps,
                    rules.version, config, metrics)
    suite = knowledge_suite(config.eval.suite_per_category, config.seed, config.world, rules)
    check_seed_disjointness(suite, [m for _, m in corpora.values()])
    reports = run_ablation(InterleaveEngine(base, codec, vocab, config.sampler),
                           InterleaveEngine(trained, codec, vocab, config.sampler), suite, config.sampler, rules)
    reports = [r.model_copy(update={'config_hash': digest}) for r in reports]
    write_reports(reports, out, 'ablation')
    logger.info('\n' + format_table(reports))
    if config.eval.plot:
        plot_scores(reports, out / 'ablation.html')


def cmd_pipeline(config: RunConfig, out: Path, digest: str) -> None:
    """Refinement corpus from the agent pipeline"""
    rules = load_rule_table()
    engine = None
    if config.pipeline.backend == 'model':
        if not config.checkpoint:
            raise ConfigurationError('The model backend needs --checkpoint')
        engine = _engine(load_checkpoint(Path(config.checkpoint)), config)
    result = build_refinement(config.corpus.refinement_count, config.pipeline, config.seed, config.world, rules,
                              out / 'audit' if config.pipeline.audit_log else None, engine, progress=True)
    write_jsonl(result.samples, out / 'refine.jsonl', result.manifest.model_copy(update={'config_hash': digest}))


COMMANDS = {
    'datagen': cmd_datagen,
    'train': cmd_train,
    'infer': cmd_infer,
    'eval': cmd_eval,
    'ablate': cmd_ablate,
    'pipeline': cmd_pipeline
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one subcommand; 0 on success, 1 on any pipeline error"""
    args = parse_args(argv)
    configure_logging(args.log_level)
    try:
        config = load_run_config(args.config, _overrides(args))
        out = _output_dir(config, args.command)
        digest = write_resolved_config(config, out)
        logger.info(f"{args.command}: seed {config.seed}, config hash {digest}, output {out}")
        COMMANDS[args.command](config, out, digest)
    except ReasonerError as e:
        logger.error(f"{args.command} failed: {e}")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
