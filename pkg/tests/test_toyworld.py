"""
Unit tests for the toy world

Rule tables, grids, instruction sampling, ground-truth construction,
edits and both oracle implementations.
"""

import unittest
import sys
import os

# Add parent directory to path for imports
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np

from toyworld.constraints import (ConstraintSet, Desc, attribute_equals, count_equals, entity_present, relation,
                                  state_after_steps)
from toyworld.edits import EDIT_FAMILIES, sample_edit
from toyworld.entities import Entity, GridImage, KnowledgeCategory, Scene
from toyworld.instructions import (COMPOSITIONAL_CATEGORIES, InstructionSpec, compile_constraints, reasoning_text,
                                   sample_compositional, sample_instruction)
from toyworld.maze import count_shortest_paths, generate_maze, shortest_path
from toyworld.oracle import agrees_with_primary, independent_score, oracle_score, proxy_results
from toyworld.rules import load_rule_table, parse_rule_table
from toyworld.scenes import ground_truth_scene, random_grid, render
from toyworld.vocab import build_vocabulary
from utils.config import WorldConfig
from utils.errors import ConfigurationError, RejectedInputError, UnsatisfiableConstraintsError
from utils.seeding import derive_rng


class TestRuleTable(unittest.TestCase):
    """Test rule-table parsing"""

    def setUp(self):
        self.rules = load_rule_table()

    def test_shipped_table_sections(self):
        """The shipped table resolves every accessor"""
        self.assertEqual(self.rules.version, '1')
        self.assertEqual(self.rules.lexicon()['harvest lantern'], ('diamond', 'red'))
        self.assertEqual(self.rules.shadow(), ('black', 1))
        self.assertEqual(self.rules.viewpoints()['mirror'].phrase, 'seen in a mirror')
        self.assertEqual(self.rules.maze_markers()['goal'], ('star', 'red'))

    def test_transition_clamps_at_floor(self):
        candle = self.rules.transitions()['candle']
        self.assertEqual(candle.apply(3, 2), 1)
        self.assertEqual(candle.apply(2, 5), 0)
        self.assertEqual(candle.companion, ('triangle', 'orange'))

    def test_viewpoint_mappings_name_relations(self):
        """Relation names keep their underscores; only phrases gain spaces"""
        turn = self.rules.viewpoints()['turn']
        self.assertEqual(turn.mapping['left_of'], 'above')
        self.assertEqual(turn.mapping['below'], 'left_of')
        self.assertEqual(self.rules.viewpoints()['mirror'].mapping['left_of'], 'right_of')

    def test_unknown_viewpoint_relation_rejected(self):
        with self.assertRaises(ConfigurationError):
            parse_rule_table('version = 2\n[viewpoints]\ntilt = left_of:behind phrase:tilted\n')
        with self.assertRaises(ConfigurationError):
            parse_rule_table('version = 2\n[viewpoints]\ntilt = left_of:right_of\n')

    def test_missing_version_rejected(self):
        with self.assertRaises(ConfigurationError):
            parse_rule_table('[lexicon]\nfoo = shape:circle color:red\n')

    def test_unknown_color_rejected(self):
        with self.assertRaises(ConfigurationError):
            parse_rule_table('version = 2\n[lexicon]\nfoo = shape:circle color:teal\n')

    def test_malformed_field_rejected(self):
        with self.assertRaises(ConfigurationError):
            parse_rule_table('version = 2\n[lexicon]\nfoo = circle\n')


class TestGrids(unittest.TestCase):
    """Test entities, scenes and rendered grids"""

    def setUp(self):
        self.scene = Scene((Entity(0, 0, 'circle', 'red'), Entity(2, 3, 'star', 'white')), 4, 5)

    def test_render_and_decode(self):
        img = render(self.scene)
        self.assertEqual((img.grid_h, img.grid_w), (4, 5))
        self.assertEqual(img.to_scene().canonical(), self.scene.canonical())
        self.assertEqual(GridImage.from_codes(img.to_codes()), img)

    def test_code_layout(self):
        codes = render(self.scene).to_codes()
        self.assertEqual(codes[0][0], 1)
        self.assertEqual(codes[1][1], 0)
        # star is shape index 4, white is color index 7
        self.assertEqual(codes[2][3], 1 + 4 * 8 + 7)

    def test_shared_cell_rejected(self):
        with self.assertRaises(RejectedInputError):
            Scene((Entity(1, 1, 'circle', 'red'), Entity(1, 1, 'square', 'blue')), 4, 4)

    def test_half_empty_cell_rejected(self):
        shapes = np.zeros((3, 3), dtype=np.int8)
        colors = np.zeros((3, 3), dtype=np.int8)
        shapes[1, 1] = 2
        with self.assertRaises(RejectedInputError):
            GridImage(shapes, colors)

    def test_cell_agreement(self):
        img = render(self.scene)
        other = render(self.scene.without(0, 0))
        self.assertEqual(img.cell_agreement(img), 1.0)
        self.assertEqual(img.cell_agreement(other, [(0, 0)]), 0.0)
        self.assertEqual(img.cell_agreement(other, []), 1.0)
        self.assertAlmostEqual(img.cell_agreement(other), 19 / 20)


class TestConstraints(unittest.TestCase):
    """Test constraint semantics on hand-built scenes"""

    def setUp(self):
        self.rules = load_rule_table()
        self.scene = Scene((Entity(1, 1, 'circle', 'red'), Entity(1, 4, 'square', 'blue'),
                            Entity(3, 4, 'square', 'blue')), 6, 6)

    def test_relation_over_groups(self):
        cs = ConstraintSet((relation('left_of', Desc('circle'), Desc('square')),
                            relation('above', Desc('circle'), Desc('square')),
                            relation('right_of', Desc('circle'), Desc('square'))))
        self.assertEqual(cs.satisfied(self.scene), [True, False, False])

    def test_relation_needs_both_sides(self):
        cs = ConstraintSet((relation('left_of', Desc('star'), Desc('square')),))
        self.assertEqual(oracle_score(self.scene, cs), 0.0)

    def test_count_and_attributes(self):
        cs = ConstraintSet((count_equals(Desc('square', 'blue'), 2),
                            attribute_equals(1, 1, 'color', 'red'),
                            attribute_equals(1, 1, 'shape', 'star'),
                            entity_present(row=5, col=5)))
        self.assertEqual(cs.satisfied(self.scene), [True, True, False, False])
        self.assertEqual(oracle_score(self.scene, cs), 0.5)

    def test_empty_set_scores_one(self):
        self.assertEqual(oracle_score(self.scene, ConstraintSet()), 1.0)

    def test_grid_shape_checked(self):
        with self.assertRaises(RejectedInputError):
            oracle_score(self.scene, ConstraintSet(), grid_shape=(12, 12))

    def test_duplicates_collapse(self):
        c = entity_present('circle')
        self.assertEqual(len(ConstraintSet((c, c))), 1)

    def test_state_after_steps_compiles_to_count(self):
        spec = InstructionSpec('a burning candle of 4 segments after 1 hours', 'temporal',
                               (state_after_steps('candle', 4, 1),), (True,))
        compiled = compile_constraints(spec, self.rules)
        self.assertEqual(compiled[0], count_equals(Desc('square', 'white'), 3))

    def test_proxies(self):
        cs = ConstraintSet((entity_present('circle', 'red'),))
        proxies = proxy_results(self.scene, cs)
        self.assertFalse(proxies['palette_consistency'])
        self.assertTrue(proxies['non_empty'])


class TestInstructions(unittest.TestCase):
    """Test instruction sampling and ground-truth construction"""

    def setUp(self):
        self.world = WorldConfig()
        self.rules = load_rule_table()
        self.vocab = build_vocabulary(self.world, self.rules)

    def _ground_truths(self, draw, seeds=range(8)):
        found = []
        for seed in seeds:
            rng = derive_rng(seed, 'test')
            spec = draw(rng)
            try:
                scene = ground_truth_scene(spec, rng, self.world, self.rules)
            except UnsatisfiableConstraintsError:
                continue
            found.append((spec, scene))
        return found

    def test_every_category_has_hidden_constraints(self):
        for category in KnowledgeCategory:
            spec = sample_instruction(category, derive_rng(1, category.value), self.world, self.rules)
            self.assertEqual(spec.category, category.value)
            self.assertTrue(spec.hidden_constraints(), category)

    def test_sampling_is_deterministic(self):
        first = sample_instruction('logical', derive_rng(7), self.world, self.rules)
        second = sample_instruction('logical', derive_rng(7), self.world, self.rules)
        self.assertEqual(first.to_dict(), second.to_dict())

    def test_spatial_sampling_covers_every_viewpoint(self):
        views, families = set(), set()
        for i in range(200):
            spec = sample_instruction('spatial', derive_rng(11, 1, i), self.world, self.rules)
            families.add(spec.family)
            for name, view in self.rules.viewpoints().items():
                if spec.text.endswith(view.phrase):
                    views.add(name)
            self.assertEqual(len(compile_constraints(spec, self.rules)), 3)
        self.assertEqual(families, {'viewpoint', 'chain'})
        self.assertEqual(views, set(self.rules.viewpoints()))

    def test_unknown_category_rejected(self):
        with self.assertRaises(RejectedInputError):
            sample_instruction('astrology', derive_rng(0))

    def test_compile_is_idempotent(self):
        spec = sample_instruction('temporal', derive_rng(3), self.world, self.rules)
        once = compile_constraints(spec, self.rules)
        self.assertEqual(compile_constraints(once, self.rules), once)

    def test_ground_truth_satisfies_knowledge_specs(self):
        for category in KnowledgeCategory:
            found = self._ground_truths(lambda rng: sample_instruction(category, rng, self.world, self.rules))
            self.assertTrue(found, category)
            for spec, scene in found:
                cs = compile_constraints(spec, self.rules)
                self.assertEqual(oracle_score(scene, cs, self.rules), 1.0)
                self.assertEqual(independent_score(render(scene), cs, self.rules), 1.0)

    def test_ground_truth_satisfies_compositional_specs(self):
        for category in COMPOSITIONAL_CATEGORIES:
            found = self._ground_truths(lambda rng: sample_compositional(category, rng, self.world))
            self.assertTrue(found, category)
            for spec, scene in found:
                self.assertEqual(oracle_score(scene, compile_constraints(spec, self.rules), self.rules), 1.0)

    def test_conflicting_pins_unsatisfiable(self):
        cs = ConstraintSet((attribute_equals(0, 0, 'color', 'red'), attribute_equals(0, 0, 'color', 'blue')))
        with self.assertRaises(UnsatisfiableConstraintsError):
            ground_truth_scene(cs, derive_rng(0), self.world, self.rules)

    def test_relation_cycle_unsatisfiable(self):
        a, b = Desc('circle', 'red'), Desc('square', 'blue')
        cs = ConstraintSet((relation('left_of', a, b), relation('left_of', b, a)))
        world = WorldConfig(max_scene_attempts=4)
        with self.assertRaises(UnsatisfiableConstraintsError):
            ground_truth_scene(cs, derive_rng(0), world, self.rules)

    def test_text_stays_in_vocabulary(self):
        for i in range(10):
            for category in KnowledgeCategory:
                spec = sample_instruction(category, derive_rng(i, category.value), self.world, self.rules)
                self.assertEqual(self.vocab.unknown_words(spec.text), [])
                self.assertEqual(self.vocab.unknown_words(reasoning_text(spec, self.rules)), [])

    def test_reasoning_names_category(self):
        spec = sample_instruction('cultural', derive_rng(2), self.world, self.rules)
        self.assertTrue(reasoning_text(spec, self.rules).startswith('cultural : '))

    def test_spec_dict_round_trip(self):
        spec = sample_instruction('logical', derive_rng(5), self.world, self.rules)
        self.assertEqual(InstructionSpec.from_dict(spec.to_dict()), spec)


class TestMaze(unittest.TestCase):
    """Test maze generation"""

    def test_generated_mazes_have_unique_route(self):
        for seed in range(5):
            maze = generate_maze(derive_rng(seed, 'maze'), 12, 12, 6, 0.3)
            self.assertEqual(count_shortest_paths(maze), 1)
            route = shortest_path(maze)
            self.assertEqual(route[0], maze.start)
            self.assertEqual(route[-1], maze.goal)
            self.assertGreaterEqual(len(route), 4)

    def test_box_must_fit(self):
        with self.assertRaises(UnsatisfiableConstraintsError):
            generate_maze(derive_rng(0), 4, 4, 6)


class TestEdits(unittest.TestCase):
    """Test editing instructions"""

    def setUp(self):
        self.world = WorldConfig()
        self.rules = load_rule_table()

    def test_every_family_reaches_its_goal(self):
        for family in EDIT_FAMILIES:
            spec = sample_edit(derive_rng(11, family), self.world, self.rules, family)
            self.assertEqual(spec.family, family)
            self.assertTrue(spec.is_edit)
            self.assertEqual(oracle_score(spec.target, compile_constraints(spec, self.rules), self.rules), 1.0)

    def test_edit_cells_cover_the_change(self):
        for family in EDIT_FAMILIES:
            spec = sample_edit(derive_rng(4, family), self.world, self.rules, family)
            outside = [(r, c) for r in range(self.world.grid_h) for c in range(self.world.grid_w)
                       if (r, c) not in spec.edit_cells]
            self.assertEqual(spec.source.cell_agreement(spec.target, outside), 1.0)

    def test_identity_changes_nothing(self):
        spec = sample_edit(derive_rng(0), self.world, self.rules, 'identity')
        self.assertEqual(spec.edit_cells, ())
        self.assertEqual(spec.source, spec.target)

    def test_move_touches_two_cells(self):
        spec = sample_edit(derive_rng(0), self.world, self.rules, 'move')
        self.assertEqual(len(spec.edit_cells), 2)

    def test_unknown_family_rejected(self):
        with self.assertRaises(RejectedInputError):
            sample_edit(derive_rng(0), self.world, self.rules, 'explode')


class TestOracleAgreement(unittest.TestCase):
    """Both oracle implementations give the same verdicts"""

    def setUp(self):
        self.world = WorldConfig()
        self.rules = load_rule_table()

    def test_agreement_on_random_grids(self):
        for seed in range(6):
            for category in KnowledgeCategory:
                spec = sample_instruction(category, derive_rng(seed, 'spec', category.value), self.world, self.rules)
                cs = compile_constraints(spec, self.rules)
                img = random_grid(derive_rng(seed, 'grid', category.value), self.world, density=0.3)
                self.assertTrue(agrees_with_primary(img, cs, self.rules), spec.text)


if __name__ == '__main__':
    unittest.main()
