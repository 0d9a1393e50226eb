"""
Unit tests for the command-line application

These run every subcommand end to end on a tiny configuration.
"""

import unittest
import tempfile
import json
import sys
import os
from pathlib import Path

# Add parent directory to path for imports
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import pandas as pd
import yaml

import app
from toyworld.scenes import fresh_grids
from training.checkpoint import load_checkpoint
from utils.config import Settings, WorldConfig, load_run_config
from utils.errors import ConfigurationError

TINY_RUN = {
    'world': {'grid_h': 8, 'grid_w': 8},
    'model': {'d_model': 16, 'n_layers': 1, 'n_heads': 2, 'ffn_mult': 2, 'latent_dim': 8},
    'sampler': {'steps': 2},
    'corpus': {'base_count': 6, 'stage1_count': 5, 'single_turn_per_category': 1, 'refinement_count': 2},
    'pipeline': {'categories': ['cultural'], 'corruption_levels': [1]},
    'base': {'total_iters': 2, 'warmup_iters': 0, 'progress': False},
    'stage1': {'total_iters': 2, 'warmup_iters': 0, 'progress': False},
    'stage2': {'total_iters': 2, 'warmup_iters': 0, 'progress': False},
    'eval': {'suite_per_category': 1, 'edit_suite_size': 2, 'suites': ['knowledge', 'edit'], 'modes': ['direct']}
}

CORPORA = ('base', 'stage1', 'single_turn', 'refine')


class TestCli(unittest.TestCase):
    """Test subcommands and exit codes"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)
        self.config = self.root / 'run.yaml'
        self.config.write_text(yaml.safe_dump(TINY_RUN), encoding='utf-8')

    def tearDown(self):
        self.tmp.cleanup()

    def _run(self, *argv) -> int:
        return app.main([argv[0], '--config', str(self.config), '--log-level', 'ERROR', *argv[1:]])

    def _datagen(self, name: str = 'data', seed: int = 0) -> Path:
        out = self.root / name
        self.assertEqual(self._run('datagen', '--seed', str(seed), '--out', str(out)), 0)
        return out

    def test_datagen_writes_every_corpus(self):
        out = self._datagen()
        for name in CORPORA:
            self.assertTrue((out / f"{name}.jsonl").exists(), name)
            manifest = json.loads((out / f"{name}.manifest.json").read_text(encoding='utf-8'))
            self.assertEqual(manifest['config_hash'], (out / 'config_hash').read_text(encoding='utf-8').strip())
        self.assertTrue((out / 'vocab.json').exists())
        self.assertTrue((out / 'resolved_config.yaml').exists())

    def test_datagen_is_deterministic(self):
        first = self._datagen('a', seed=3)
        second = self._datagen('b', seed=3)
        for name in CORPORA:
            self.assertEqual((first / f"{name}.jsonl").read_bytes(), (second / f"{name}.jsonl").read_bytes(), name)

    def test_eval_with_reference_answers(self):
        data = self._datagen()
        out = self.root / 'eval'
        code = self._run('eval', '--checkpoint', 'reference', '--dataset-dir', str(data), '--out', str(out))
        self.assertEqual(code, 0)
        frame = pd.read_csv(out / 'eval.csv')
        self.assertEqual(list(frame['suite']), ['knowledge', 'edit'])
        self.assertTrue((frame['overall'] == 1.0).all())
        self.assertEqual(float(frame['preservation'].iloc[1]), 1.0)

    def test_train_then_infer(self):
        data = self._datagen()
        trained = self.root / 'train'
        self.assertEqual(self._run('train', '--dataset-dir', str(data), '--out', str(trained)), 0)
        checkpoint = trained / 'checkpoint'
        manifest = json.loads((checkpoint / 'manifest.json').read_text(encoding='utf-8'))
        self.assertEqual(manifest['step'], 4)
        codec = load_checkpoint(checkpoint).codec
        self.assertTrue(codec.round_trips(fresh_grids(200, 9, WorldConfig(grid_h=8, grid_w=8))))
        out = self.root / 'infer'
        code = self._run('infer', '--checkpoint', str(checkpoint), '--prompt', 'draw a red circle',
                         '--mode', 'reason_refine', '--out', str(out))
        self.assertEqual(code, 0)
        rollout = json.loads((out / 'rollout.json').read_text(encoding='utf-8'))
        self.assertEqual(rollout['mode'], 'reason_refine')
        self.assertIsNotNone(rollout['I2'])
        self.assertTrue((out / 'rollout.png').exists())
        self.assertIn('I1:', (out / 'rollout.txt').read_text(encoding='utf-8'))

    def test_pipeline_command(self):
        out = self.root / 'pipeline'
        self.assertEqual(self._run('pipeline', '--count', '2', '--out', str(out)), 0)
        manifest = json.loads((out / 'refine.manifest.json').read_text(encoding='utf-8'))
        self.assertEqual(manifest['corpus'], 'refine')
        self.assertTrue((out / 'audit' / 'audit_level1.jsonl').exists())

    def test_failures_exit_nonzero(self):
        self.assertEqual(self._run('eval', '--out', str(self.root / 'no-checkpoint')), 1)
        self.assertEqual(self._run('pipeline', '--backend', 'model', '--out', str(self.root / 'no-engine')), 1)
        self.assertEqual(self._run('train', '--out', str(self.root / 'no-data')), 1)
        bad = self.root / 'bad.yaml'
        bad.write_text(yaml.safe_dump({'model': {'d_model': 10, 'n_heads': 4}}), encoding='utf-8')
        self.assertEqual(app.main(['datagen', '--config', str(bad), '--log-level', 'ERROR',
                                   '--out', str(self.root / 'bad')]), 1)

    def test_flag_overrides(self):
        args = app.parse_args(['eval', '--seed', '4', '--flow-steps', '3', '--suite', 'edit', '--mode', 'reason'])
        config = load_run_config(str(self.config), app._overrides(args))
        self.assertEqual(config.seed, 4)
        self.assertEqual(config.stage1.seed, 4)
        self.assertEqual(config.sampler.steps, 3)
        self.assertEqual(config.eval.suites, ['edit'])
        self.assertEqual(config.eval.modes, ['reason'])
        # the file's partial stage section keeps the preset's other values
        self.assertEqual(config.stage1.lr_max, 1e-3)
        with self.assertRaises(ConfigurationError):
            load_run_config(str(self.root / 'missing.yaml'))


ACCEPTANCE = Path(__file__).resolve().parents[1] / 'configs' / 'acceptance.yaml'
SEEDS = (0, 1, 2)


@unittest.skipUnless(Settings().slow_tests, 'set REASONER_SLOW_TESTS=1 to run')
class TestAcceptanceRuns(unittest.TestCase):
    """Desk-scale training runs over three seeds; each seed takes minutes"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def _run(self, *argv) -> int:
        return app.main([argv[0], '--config', str(ACCEPTANCE), '--log-level', 'WARNING', *argv[1:]])

    def test_ablation_ladder_is_ordered(self):
        ordered = 0
        for seed in SEEDS:
            out = self.root / f"ablate-{seed}"
            self.assertEqual(self._run('ablate', '--seed', str(seed), '--out', str(out)), 0)
            frame = pd.read_csv(out / 'ablation.csv').set_index('label')
            scores = [float(frame.loc[label, 'overall']) for label in ('base', 'two_stage', '+reasoning',
                                                                        '+refinement')]
            steps = list(zip(scores, scores[1:]))
            if all(b >= a for a, b in steps) and sum(b > a for a, b in steps) >= 2:
                ordered += 1
        self.assertGreaterEqual(ordered, 2)

    def test_edit_score_tracks_refinement_gain(self):
        positive = 0
        for seed in SEEDS:
            data = self.root / f"data-{seed}"
            self.assertEqual(self._run('datagen', '--seed', str(seed), '--out', str(data)), 0)
            out = self.root / f"corr-{seed}"
            code = self._run('eval', '--seed', str(seed), '--suite', 'correlation', '--dataset-dir', str(data),
                             '--out', str(out))
            self.assertEqual(code, 0)
            self.assertEqual(len(pd.read_csv(out / 'correlation.csv')), 4)
            rho = (out / 'correlation.txt').read_text(encoding='utf-8').strip().splitlines()[-1].split(': ')[1]
            if rho != 'undefined' and float(rho) > 0:
                positive += 1
        self.assertGreaterEqual(positive, 2)


if __name__ == '__main__':
    unittest.main()
