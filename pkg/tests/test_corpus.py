"""
Unit tests for corpus builders and JSONL persistence
"""

import unittest
import tempfile
import json
import sys
import os
from pathlib import Path

# Add parent directory to path for imports
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from corpus.builders import build_base, build_refinement, build_single_turn, build_stage1
from corpus.jsonl import decode_sample, encode_sample, manifest_path, read_corpus, read_jsonl, write_jsonl
from corpus.samples import RefineSample, SingleTurnSample, Stage1Sample
from toyworld.instructions import compile_constraints
from toyworld.oracle import oracle_score
from toyworld.rules import load_rule_table
from toyworld.vocab import build_vocabulary
from utils.config import EVAL_SEED_OFFSET, PipelineConfig, WorldConfig
from utils.errors import ConfigurationError, MaskViolationError, RejectedInputError, SchemaVersionError


def _dumps(samples):
    return [json.dumps(s.to_dict(), sort_keys=True) for s in samples]


class TestBuilders(unittest.TestCase):
    """Test the stage-1, base and single-turn builders"""

    def setUp(self):
        self.world = WorldConfig()
        self.rules = load_rule_table()
        self.counts = {'cultural': 2, 'spatial': 2, 'logical': 1}

    def test_stage1_is_deterministic(self):
        first = build_stage1(self.counts, 7, self.world, self.rules)
        second = build_stage1(self.counts, 7, self.world, self.rules, workers=3)
        self.assertEqual(_dumps(first.samples), _dumps(second.samples))
        self.assertEqual(first.manifest.total, len(first.samples))
        self.assertTrue(all(isinstance(s, Stage1Sample) for s in first.samples))

    def test_different_seeds_differ(self):
        first = build_stage1(self.counts, 1, self.world, self.rules)
        second = build_stage1(self.counts, 2, self.world, self.rules)
        self.assertNotEqual(_dumps(first.samples), _dumps(second.samples))

    def test_every_sample_passes_the_filters(self):
        result = build_stage1(self.counts, 0, self.world, self.rules, vocab=build_vocabulary(self.world, self.rules))
        for sample in result.samples:
            cs = compile_constraints(sample.spec, self.rules)
            self.assertEqual(oracle_score(sample.target, cs, self.rules), 1.0)

    def test_edit_fraction_adds_edit_samples(self):
        result = build_stage1({'cultural': 2, 'temporal': 2}, 0, self.world, self.rules, edit_fraction=0.5)
        edits = [s for s in result.samples if s.category == 'edit']
        self.assertTrue(edits)
        self.assertLessEqual(len(edits), 4)
        for sample in edits:
            self.assertEqual(sample.segments()[0], ('SRC', 'image', 'context'))

    def test_training_seed_range(self):
        with self.assertRaises(ConfigurationError):
            build_stage1(self.counts, EVAL_SEED_OFFSET, self.world, self.rules)
        with self.assertRaises(ConfigurationError):
            build_single_turn(self.counts, -1, self.world, self.rules)

    def test_base_uses_compositional_categories(self):
        result = build_base({'counting': 2, 'position': 2}, 0, self.world, self.rules)
        self.assertEqual(result.manifest.corpus, 'base')
        self.assertTrue(all(s.corpus == 'base' for s in result.samples))
        with self.assertRaises(ConfigurationError):
            build_base({'cultural': 1}, 0, self.world, self.rules)

    def test_single_turn_reasoning_names_hidden_constraints(self):
        result = build_single_turn(self.counts, 0, self.world, self.rules)
        self.assertTrue(result.samples)
        for sample in result.samples:
            self.assertIsInstance(sample, SingleTurnSample)
            for constraint in sample.spec.hidden_constraints():
                self.assertIn(constraint.describe(self.rules), sample.reasoning)


class TestRefinementBuilder(unittest.TestCase):
    """Test the refinement corpus over the scripted pipeline"""

    def setUp(self):
        self.world = WorldConfig()
        self.rules = load_rule_table()
        self.config = PipelineConfig(categories=['cultural'], corruption_levels=[1])

    def test_retained_samples_improve(self):
        result = build_refinement(4, self.config, 0, self.world, self.rules)
        self.assertTrue(result.samples)
        self.assertAlmostEqual(result.manifest.retention_rate, len(result.samples) / 4)
        for sample in result.samples:
            self.assertIsInstance(sample, RefineSample)
            self.assertTrue(sample.verdict.retain)
            self.assertGreater(sample.verdict.refined_score, sample.verdict.initial_score)
            roles = [role for _, _, role in sample.segments()]
            self.assertEqual(roles[-4:], ['draft', 'draft', 'supervised', 'supervised'])

    def test_levels_required(self):
        with self.assertRaises(ConfigurationError):
            build_refinement(2, PipelineConfig(corruption_levels=[]), 0, self.world, self.rules)

    def test_audit_logs_written(self):
        with tempfile.TemporaryDirectory() as tmp:
            first = build_refinement(2, self.config, 0, self.world, self.rules, audit_dir=Path(tmp))
            self.assertTrue((Path(tmp) / 'audit_level1.jsonl').exists())
            second = build_refinement(2, self.config, 0, self.world, self.rules, audit_dir=Path(tmp))
        self.assertEqual(_dumps(first.samples), _dumps(second.samples))


class TestJsonl(unittest.TestCase):
    """Test writing and reading corpora"""

    def setUp(self):
        rules = load_rule_table()
        self.stage1 = build_stage1({'cultural': 2, 'natural_science': 1}, 0, WorldConfig(), rules)
        self.refine = build_refinement(3, PipelineConfig(categories=['cultural'], corruption_levels=[1]), 0,
                                       WorldConfig(), rules)
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_write_and_read(self):
        for name, result in (('stage1', self.stage1), ('refine', self.refine)):
            path = write_jsonl(result.samples, self.dir / f"{name}.jsonl", result.manifest)
            self.assertTrue(manifest_path(path).exists())
            samples, manifest = read_corpus(path)
            self.assertEqual(_dumps(samples), _dumps(result.samples))
            self.assertEqual(manifest, result.manifest)

    def test_lines_are_sorted_json(self):
        path = write_jsonl(self.stage1.samples, self.dir / 'stage1.jsonl')
        with open(path, 'r', encoding='utf-8') as f:
            first = f.readline().strip()
        data = json.loads(first)
        self.assertEqual(first, json.dumps(data, sort_keys=True, separators=(',', ':')))
        self.assertEqual(data['schema_version'], '1')

    def test_manifest_mismatch_rejected(self):
        with self.assertRaises(RejectedInputError):
            write_jsonl(self.stage1.samples[:-1], self.dir / 'short.jsonl', self.stage1.manifest)
        path = write_jsonl(self.stage1.samples, self.dir / 'stage1.jsonl', self.stage1.manifest)
        write_jsonl(self.stage1.samples[:-1], path)
        with self.assertRaises(RejectedInputError):
            read_corpus(path)

    def test_unknown_schema_version(self):
        data = encode_sample(self.stage1.samples[0])
        data['schema_version'] = '99'
        with self.assertRaises(SchemaVersionError):
            decode_sample(data)

    def test_mask_violation(self):
        data = encode_sample(self.stage1.samples[0])
        data['segments'] = [['C', 'text', 'context'], ['I', 'image', 'context']]
        with self.assertRaises(MaskViolationError):
            decode_sample(data)
        # a refinement draft may never be supervised
        data = encode_sample(self.refine.samples[0])
        data['segments'][-3][2] = 'supervised'
        with self.assertRaises(MaskViolationError):
            decode_sample(data)

    def test_invalid_json_rejected(self):
        path = self.dir / 'broken.jsonl'
        path.write_text('{"schema_version": \n', encoding='utf-8')
        with self.assertRaises(RejectedInputError):
            read_jsonl(path)


if __name__ == '__main__':
    unittest.main()
