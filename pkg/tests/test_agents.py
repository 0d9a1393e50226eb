"""
Unit tests for the agentic refinement pipeline

This module checks each pipeline role on its own, then the coordinator
and the remote adapter.
"""

import unittest
from unittest.mock import Mock, patch
import tempfile
import sys
import os
from pathlib import Path

# Add parent directory to path for imports
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from pydantic import ValidationError

from agents.coordinator import PipelineCoordinator
from agents.directives import Action, Dimension, EditDirective, apply_directive, directive_holds, reflection_text
from agents.generator import ScriptedBackend, corrupt
from agents.judge import JudgeVerdict, faithfulness, judge
from agents.refiner import refine_teacher
from agents.remote import LoopbackTransport, RemoteAgent, RemoteAgentRequest
from agents.verifier import VerifierAgent
from toyworld.constraints import ConstraintSet, entity_present
from toyworld.entities import Entity, KnowledgeCategory, Scene
from toyworld.instructions import compile_constraints, sample_instruction
from toyworld.oracle import oracle_score, proxy_results
from toyworld.rules import load_rule_table
from toyworld.scenes import ground_truth_scene, render
from utils.config import PipelineConfig, Settings, WorldConfig
from utils.errors import (ConfigurationError, DirectiveApplicationError, DirectiveConflictError, RemoteAgentError)
from utils.seeding import derive_rng


class TestDirectives(unittest.TestCase):
    """Test directive validation and application"""

    def setUp(self):
        self.scene = Scene((Entity(0, 0, 'circle', 'red'), Entity(2, 2, 'square', 'blue')), 4, 4)

    def test_payload_must_match_action(self):
        with self.assertRaises(ValidationError):
            EditDirective(dimension=Dimension.OBJECT_PRESENCE, target=((1, 1),), action=Action.ADD)
        with self.assertRaises(ValidationError):
            EditDirective(dimension=Dimension.OBJECT_PRESENCE, target=((1, 1), (1, 1)), action=Action.REMOVE)
        with self.assertRaises(ValidationError):
            EditDirective(dimension=Dimension.OBJECT_PRESENCE, target=((1, 1),), action=Action.ADD,
                          payload={'entities': [['hexagon', 'red']]})

    def test_apply_each_action(self):
        add = EditDirective(dimension=Dimension.OBJECT_PRESENCE, target=((3, 3),), action=Action.ADD,
                            payload={'entities': [['star', 'white']]})
        move = EditDirective(dimension=Dimension.ATTRIBUTE_ACCURACY, target=((0, 0),), action=Action.MOVE,
                             payload={'to': [[1, 0]]})
        remove = EditDirective(dimension=Dimension.OBJECT_PRESENCE, target=((2, 2),), action=Action.REMOVE)
        scene = apply_directive(apply_directive(apply_directive(self.scene, add), move), remove)
        self.assertEqual(sorted(scene.entities), [Entity(1, 0, 'circle', 'red'), Entity(3, 3, 'star', 'white')])

    def test_apply_rejects_bad_targets(self):
        add = EditDirective(dimension=Dimension.OBJECT_PRESENCE, target=((0, 0),), action=Action.ADD,
                            payload={'entities': [['star', 'white']]})
        with self.assertRaises(DirectiveApplicationError):
            apply_directive(self.scene, add)
        remove = EditDirective(dimension=Dimension.OBJECT_PRESENCE, target=((1, 1),), action=Action.REMOVE)
        with self.assertRaises(DirectiveApplicationError):
            apply_directive(self.scene, remove)
        outside = EditDirective(dimension=Dimension.OBJECT_PRESENCE, target=((9, 9),), action=Action.REMOVE)
        with self.assertRaises(DirectiveApplicationError):
            apply_directive(self.scene, outside)

    def test_reflection_text(self):
        self.assertEqual(reflection_text([]), 'check : no issues')
        remove = EditDirective(dimension=Dimension.OBJECT_PRESENCE, target=((2, 2),), action=Action.REMOVE)
        self.assertEqual(reflection_text([remove]), 'check : remove r2 c2 ; done')

    def test_redraw_sets_and_clears_cells(self):
        redraw = EditDirective(dimension=Dimension.OBJECT_PRESENCE, target=((0, 0), (1, 1), (3, 3)),
                               action=Action.CHANGE_ATTRIBUTE,
                               payload={'entities': [None, ['star', 'white'], None], 'redraw': True})
        self.assertTrue(redraw.redraw)
        scene = apply_directive(self.scene, redraw)
        self.assertEqual(sorted(scene.entities), [Entity(1, 1, 'star', 'white'), Entity(2, 2, 'square', 'blue')])
        self.assertTrue(directive_holds(scene, redraw, self.scene))
        self.assertEqual(redraw.describe(), 'remove r0 c0 ; change r1 c1 to white star ; remove r3 c3')

    def test_redraw_payload_validation(self):
        with self.assertRaises(ValidationError):
            EditDirective(dimension=Dimension.OBJECT_PRESENCE, target=((0, 0),), action=Action.CHANGE_ATTRIBUTE,
                          payload={'entities': [None]})
        with self.assertRaises(ValidationError):
            EditDirective(dimension=Dimension.OBJECT_PRESENCE, target=((0, 0),), action=Action.ADD,
                          payload={'entities': [['star', 'white']], 'redraw': True})
        with self.assertRaises(ValidationError):
            EditDirective(dimension=Dimension.OBJECT_PRESENCE, target=((0, 0),), action=Action.CHANGE_ATTRIBUTE,
                          payload={'entities': [['star']], 'redraw': True})
        outside = EditDirective(dimension=Dimension.OBJECT_PRESENCE, target=((9, 9),),
                                action=Action.CHANGE_ATTRIBUTE, payload={'entities': [None], 'redraw': True})
        with self.assertRaises(DirectiveApplicationError):
            apply_directive(self.scene, outside)

    def test_faithfulness_follows_replay_order(self):
        add = EditDirective(dimension=Dimension.OBJECT_PRESENCE, target=((3, 3),), action=Action.ADD,
                            payload={'entities': [['star', 'white']]})
        redraw = EditDirective(dimension=Dimension.OBJECT_PRESENCE, target=((3, 3),),
                               action=Action.CHANGE_ATTRIBUTE,
                               payload={'entities': [['circle', 'green']], 'redraw': True})
        refined = apply_directive(apply_directive(self.scene, add), redraw)
        self.assertEqual(faithfulness(render(self.scene), render(refined), [add, redraw]), 1.0)
        # an image the directives do not lead to is checked cell by cell
        self.assertEqual(faithfulness(render(self.scene), render(self.scene), [add, redraw]), 0.0)


class TestRoles(unittest.TestCase):
    """Test generator corruption, verifier, refiner and judge on one instruction"""

    def setUp(self):
        self.world = WorldConfig()
        self.rules = load_rule_table()
        self.spec = sample_instruction('cultural', derive_rng(0, 'roles'), self.world, self.rules)
        self.cs = compile_constraints(self.spec, self.rules)
        self.truth = ground_truth_scene(self.spec, derive_rng(1), self.world, self.rules)

    def test_corruption_breaks_one_constraint_per_step(self):
        scene, broken = corrupt(self.truth, self.cs, 2, derive_rng(2), self.rules)
        self.assertTrue(broken)
        self.assertEqual(len(set(broken)), len(broken))
        flags = self.cs.satisfied(scene, self.rules)
        self.assertEqual([i for i, ok in enumerate(flags) if not ok], sorted(broken))
        self.assertTrue(all(proxy_results(scene, self.cs, self.rules).values()))

    def test_perfect_draft_needs_no_directives(self):
        self.assertEqual(VerifierAgent(self.rules).verify(render(self.truth), self.spec), [])

    def test_verify_refine_judge_cycle(self):
        scene, broken = corrupt(self.truth, self.cs, 1, derive_rng(3), self.rules)
        draft = render(scene)
        directives = VerifierAgent(self.rules).verify(draft, self.spec)
        self.assertEqual(len(directives), len(broken))
        refined = refine_teacher(draft, directives, self.spec, self.rules)
        self.assertEqual(oracle_score(refined, self.cs, self.rules), 1.0)
        verdict = judge(draft, refined, self.spec, directives, self.rules)
        self.assertTrue(verdict.retain)
        self.assertEqual(verdict.faithfulness, 1.0)
        self.assertGreater(verdict.refined_score, verdict.initial_score)

    def test_tie_is_not_retained(self):
        draft = render(self.truth)
        verdict = judge(draft, draft, self.spec, [], self.rules)
        self.assertFalse(verdict.retain)

    def test_verdict_rejects_unearned_retention(self):
        with self.assertRaises(ValidationError):
            JudgeVerdict(initial_score=0.5, refined_score=0.5, faithfulness=1.0, recheck_initial=0.5,
                         recheck_refined=0.5, retain=True)

    def test_refiner_refuses_collateral_damage(self):
        scene = Scene((Entity(0, 0, 'circle', 'red'),), 4, 4)
        cs = ConstraintSet((entity_present('circle', 'red'),))
        remove = EditDirective(dimension=Dimension.OBJECT_PRESENCE, target=((0, 0),), action=Action.REMOVE)
        with self.assertRaises(DirectiveConflictError):
            refine_teacher(render(scene), [remove], cs, self.rules)
        # without constraints the directive is simply applied
        self.assertEqual(refine_teacher(render(scene), [remove]).to_scene().entities, ())


class TestClosure(unittest.TestCase):
    """Scripted drafts are always repaired in full, one directive per broken constraint"""

    def setUp(self):
        self.world = WorldConfig()
        self.rules = load_rule_table()
        self.verifier = VerifierAgent(self.rules)

    def _samples(self, per_cell: int):
        for category in KnowledgeCategory:
            for level in (1, 2, 3):
                for i in range(per_cell):
                    rng = derive_rng(21, category.value, level, i)
                    yield level, sample_instruction(category, rng, self.world, self.rules), rng

    def _check(self, level, spec, rng):
        cs = compile_constraints(spec, self.rules)
        draft = ScriptedBackend(level, self.world, self.rules).draft(spec, rng)
        self.assertTrue(draft.broken, spec.text)
        self.assertTrue(all(proxy_results(draft.image.to_scene(), cs, self.rules).values()))
        violated = [i for i, ok in enumerate(cs.satisfied(draft.image.to_scene(), self.rules)) if not ok]
        self.assertEqual(sorted(draft.broken), violated)

        directives = self.verifier.verify(draft.image, spec)
        self.assertTrue(directives, spec.text)
        repairs = [d for d in directives if d.addresses is not None]
        self.assertLessEqual(len(repairs), len(violated), spec.text)
        if len(violated) == 1:
            self.assertEqual(len(repairs), 1, spec.text)
        # each repair closes at least one constraint still open before it
        scene, open_ = draft.image.to_scene(), set(violated)
        for directive in directives:
            scene = apply_directive(scene, directive)
            if directive.addresses is None:
                continue
            closed = {i for i in open_ if cs.satisfied(scene, self.rules)[i]}
            self.assertTrue(closed, directive.describe())
            open_ -= closed
        self.assertFalse(open_, spec.text)

        refined = refine_teacher(draft.image, directives, spec, self.rules)
        verdict = judge(draft.image, refined, spec, directives, self.rules)
        self.assertTrue(verdict.retain, spec.text)
        self.assertEqual(verdict.refined_score, 1.0)
        self.assertEqual(verdict.faithfulness, 1.0)

    def test_every_category_and_level(self):
        for level, spec, rng in self._samples(2):
            with self.subTest(category=spec.category, level=level):
                self._check(level, spec, rng)

    def test_maze_repair_is_one_directive(self):
        spec = sample_instruction('logical', derive_rng(22), self.world, self.rules)
        cs = compile_constraints(spec, self.rules)
        truth = ground_truth_scene(spec, derive_rng(23), self.world, self.rules)
        scene, broken = corrupt(truth, cs, 1, derive_rng(24), self.rules)
        directives = self.verifier.verify(render(scene), spec)
        repairs = [d for d in directives if d.addresses is not None]
        self.assertEqual(len(repairs), len({d.addresses for d in repairs}))
        self.assertLessEqual(len(repairs), len(broken))
        for directive in repairs:
            scene = apply_directive(scene, directive)
        self.assertEqual(oracle_score(scene, cs, self.rules), 1.0)

    @unittest.skipUnless(Settings().slow_tests, 'set REASONER_SLOW_TESTS=1 to run')
    def test_closure_over_many_samples(self):
        samples = list(self._samples(14))[:200]
        self.assertEqual(len(samples), 200)
        for level, spec, rng in samples:
            with self.subTest(category=spec.category, level=level):
                self._check(level, spec, rng)


class TestCoordinator(unittest.TestCase):
    """Test the coordinator over a small batch"""

    def setUp(self):
        self.world = WorldConfig()
        self.rules = load_rule_table()
        self.items = [(f"refine-cultural-{i:05d}",
                       sample_instruction('cultural', derive_rng(5, i), self.world, self.rules)) for i in range(3)]

    def test_scripted_run(self):
        coordinator = PipelineCoordinator.from_config(PipelineConfig(), seed=0, level=1, world=self.world,
                                                      rules=self.rules)
        report = coordinator.run(self.items)
        self.assertEqual([r.sample_id for r in report.records], [sid for sid, _ in self.items])
        self.assertEqual(report.failures, [])
        self.assertTrue(report.retained)
        for record in report.retained:
            self.assertGreater(record.verdict.refined_score, record.verdict.initial_score)
            self.assertTrue(record.reflection.startswith('check : '))

    def test_resume_skips_finished_samples(self):
        with tempfile.TemporaryDirectory() as tmp:
            audit = Path(tmp) / 'audit.jsonl'
            first = PipelineCoordinator.from_config(PipelineConfig(), 0, 1, self.world, self.rules,
                                                    audit_path=audit).run(self.items)
            second = PipelineCoordinator.from_config(PipelineConfig(), 0, 1, self.world, self.rules,
                                                     audit_path=audit).run(self.items)
        self.assertEqual(second.resumed, 3)
        self.assertEqual([r.verdict for r in second.records], [r.verdict for r in first.records])
        self.assertEqual([r.refined for r in second.records], [r.refined for r in first.records])

    def test_duplicate_ids_rejected(self):
        coordinator = PipelineCoordinator.from_config(PipelineConfig(), rules=self.rules)
        with self.assertRaises(ConfigurationError):
            coordinator.run([self.items[0], self.items[0]])

    def test_every_scripted_sample_is_retained(self):
        report = PipelineCoordinator.from_config(PipelineConfig(), seed=0, level=2, world=self.world,
                                                 rules=self.rules).run(self.items)
        self.assertEqual(len(report.retained), len(self.items))
        self.assertTrue(all(r.verdict.refined_score == 1.0 for r in report.records))
        self.assertTrue(all(r.injected >= 1 for r in report.records))

    def test_zero_corruption_level_rejected(self):
        with self.assertRaises(ValidationError):
            PipelineConfig(corruption_levels=[0, 1])

    def test_model_backend_needs_engine(self):
        with self.assertRaises(ConfigurationError):
            PipelineCoordinator.from_config(PipelineConfig(backend='model'), rules=self.rules)

    @patch.object(VerifierAgent, 'verify')
    def test_stage_failure_is_reported(self, mock_verify):
        mock_verify.side_effect = ValueError('boom')
        coordinator = PipelineCoordinator.from_config(PipelineConfig(), rules=self.rules)
        report = coordinator.run(self.items[:1])
        self.assertEqual(report.records, [])
        self.assertEqual(len(report.failures), 1)
        self.assertEqual(report.failures[0].role, 'verifier')
        self.assertEqual(report.failures[0].sample_id, self.items[0][0])

    def test_custom_roles(self):
        generator = Mock()
        generator.generate_draft.side_effect = RuntimeError('offline')
        coordinator = PipelineCoordinator(generator, Mock(), Mock(), Mock())
        report = coordinator.run(self.items[:2])
        self.assertEqual([f.role for f in report.failures], ['generator', 'generator'])


class TestRemoteAgent(unittest.TestCase):
    """Test the remote adapter over the loopback transport"""

    def setUp(self):
        self.rules = load_rule_table()
        self.spec = sample_instruction('cultural', derive_rng(0, 'remote'), WorldConfig(), self.rules)
        truth = ground_truth_scene(self.spec, derive_rng(1), WorldConfig(), self.rules)
        self.request = RemoteAgentRequest(role='verifier', sample_id='abc', instruction=self.spec.to_dict(),
                                          images={'draft': render(truth).to_codes()})

    def test_round_trip(self):
        transport = LoopbackTransport(rules=self.rules)
        response = RemoteAgent('verifier', transport, backoff=0.0).call(self.request)
        self.assertEqual(response.sample_id, 'abc')
        self.assertEqual(response.directives, [])

    def test_transient_faults_are_retried(self):
        transport = LoopbackTransport(rules=self.rules, faults=2)
        response = RemoteAgent('verifier', transport, backoff=0.0).call(self.request)
        self.assertEqual(response.role, 'verifier')
        self.assertEqual(len(transport.requests), 3)

    def test_gives_up_after_max_attempts(self):
        transport = LoopbackTransport(rules=self.rules, faults=10)
        with self.assertRaises(RemoteAgentError):
            RemoteAgent('verifier', transport, backoff=0.0).call(self.request)
        self.assertEqual(len(transport.requests), 3)

    def test_mismatched_response_rejected(self):
        transport = LoopbackTransport(rules=self.rules, tamper=lambda r: {**r, 'sample_id': 'other'})
        with self.assertRaises(RemoteAgentError):
            RemoteAgent('verifier', transport, backoff=0.0).call(self.request)

    def test_missing_output_rejected(self):
        transport = LoopbackTransport(rules=self.rules, tamper=lambda r: {**r, 'image': None})
        request = RemoteAgentRequest(role='generator', sample_id='abc', instruction=self.spec.to_dict(), seed=3)
        with self.assertRaises(RemoteAgentError):
            RemoteAgent('generator', transport, backoff=0.0).call(request)

    def test_remote_pipeline(self):
        with patch('agents.remote.wait_exponential', return_value=lambda retry_state: 0):
            coordinator = PipelineCoordinator.from_config(PipelineConfig(backend='remote'), rules=self.rules)
            report = coordinator.run([('refine-cultural-00000', self.spec)])
        self.assertEqual(report.failures, [])
        self.assertEqual(len(report.records), 1)
        expected = 4 if report.records[0].directives else 3
        self.assertEqual(len(coordinator.generator.client.transport.requests), expected)


if __name__ == '__main__':
    unittest.main()
