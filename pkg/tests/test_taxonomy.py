import itertools

import pytest
from pydantic import ValidationError

from sqlsynth.core.exceptions import CombinatorialLimit, EmptyCorpus, PreconditionError, ScoreOutOfRange
from sqlsynth.schemas.taxonomy import (
    ComplexityConfig,
    ComplexityLevel,
    CoreIntent,
    KeyAction,
    LevelRange,
    StatementType,
    SyntaxStructure,
    TaxonomyConfig,
    TaxonomyLabels,
)
from sqlsynth.services.taxonomy_service import TaxonomyService, load_taxonomy_config, normalize_question
from tests.conftest import labeled


def _labels(intent, statement=StatementType.SELECT, structures=(), actions=()) -> TaxonomyLabels:
    return TaxonomyLabels(core_intent=intent, statement_type=statement,
                          syntax_structures=frozenset(structures), key_actions=frozenset(actions))


@pytest.fixture
def desk_taxonomy(analyzer) -> TaxonomyService:
    """The shipped configuration: six intents, three verbs, three structures, two actions"""
    return TaxonomyService(config=load_taxonomy_config(), analyzer=analyzer)


def _desk_valid(intent, statement, structures, actions) -> bool:
    if (intent == CoreIntent.DATA_CHANGE) != (statement != StatementType.SELECT):
        return False
    if intent == CoreIntent.SORTING_AND_PAGINATION and not structures & {SyntaxStructure.ORDER_BY,
                                                                         SyntaxStructure.LIMIT_OFFSET}:
        return False
    if intent == CoreIntent.TIME_OPERATION and KeyAction.SPECIFIC_TIME not in actions:
        return False
    return True


class TestComplexity:
    def test_simple(self, taxonomy, filtering_combo):
        """Test weights of a plain filter sum into the simple range"""
        assert taxonomy.complexity_of(filtering_combo.labels) == (3, ComplexityLevel.SIMPLE)

    def test_medium(self, taxonomy):
        """Test grouped aggregation scores medium"""
        labels = _labels(CoreIntent.BASIC_AGGREGATION, structures={SyntaxStructure.GROUP_BY},
                         actions={KeyAction.AGGREGATE_FUNCTION})
        assert taxonomy.complexity_of(labels) == (6, ComplexityLevel.MEDIUM)

    def test_hard(self, taxonomy):
        """Test a correlated business rule scores hard"""
        labels = _labels(CoreIntent.BUSINESS_RULE,
                         structures={SyntaxStructure.WHERE, SyntaxStructure.CORRELATED_SUBQUERY},
                         actions={KeyAction.AGGREGATE_FUNCTION})
        assert taxonomy.complexity_of(labels) == (11, ComplexityLevel.HARD)

    def test_custom_weights(self, taxonomy, filtering_combo):
        """Test an override replaces only the named weight"""
        config = ComplexityConfig(weights={"Where": 4})
        assert taxonomy.complexity_of(filtering_combo.labels, config) == (6, ComplexityLevel.MEDIUM)

    def test_score_outside_every_range(self, taxonomy, filtering_combo):
        """Test a score no range holds raises ScoreOutOfRange"""
        config = ComplexityConfig(levels={
            ComplexityLevel.SIMPLE: LevelRange(low=5, high=6),
            ComplexityLevel.MEDIUM: LevelRange(low=7, high=8),
            ComplexityLevel.HARD: LevelRange(low=9),
        })
        with pytest.raises(ScoreOutOfRange) as error:
            taxonomy.complexity_of(filtering_combo.labels, config)
        assert error.value.score == 3


class TestConfigValidation:
    def test_unknown_weight_category(self):
        """Test weights must name taxonomy categories"""
        with pytest.raises(ValidationError):
            ComplexityConfig(weights={"Pivot": 2})

    def test_weight_below_one(self):
        """Test weights must be positive"""
        with pytest.raises(ValidationError):
            ComplexityConfig(weights={"Where": 0})

    def test_overlapping_levels(self):
        """Test level ranges must be disjoint and ordered"""
        with pytest.raises(ValidationError):
            ComplexityConfig(levels={
                ComplexityLevel.SIMPLE: LevelRange(low=1, high=5),
                ComplexityLevel.MEDIUM: LevelRange(low=5, high=8),
                ComplexityLevel.HARD: LevelRange(low=9),
            })

    def test_empty_level_range(self):
        """Test a range whose high is below its low is rejected"""
        with pytest.raises(ValidationError):
            LevelRange(low=4, high=2)

    def test_unknown_rule(self):
        """Test only known validity rules can be toggled"""
        with pytest.raises(ValidationError):
            TaxonomyConfig(rules={"no_such_rule": False})

    def test_unknown_truncated_category(self):
        """Test truncation lists must name real categories"""
        with pytest.raises(ValidationError):
            TaxonomyConfig(truncate={"key_actions": ["Pivot"]})

    def test_shipped_config(self):
        """Test the packaged configuration file loads with its truncation"""
        config = load_taxonomy_config()

        assert config.max_structures == 2
        assert config.max_actions == 1
        assert [m.value for m in config.members("statement_type")] == ["Select", "Update", "Delete"]


class TestValidity:
    def test_valid_tuple(self, taxonomy, filtering_combo):
        """Test a realizable tuple has no violations"""
        assert taxonomy.validate_combination(filtering_combo.labels) == []

    @pytest.mark.parametrize("labels,rule", [
        (_labels(CoreIntent.DATA_CHANGE), "dml_intent"),
        (_labels(CoreIntent.CONDITION_FILTERING, StatementType.UPDATE), "dml_intent"),
        (_labels(CoreIntent.STRUCTURE_CHANGE), "alter_intent"),
        (_labels(CoreIntent.BASIC_QUERY, StatementType.ALTER), "alter_intent"),
        (_labels(CoreIntent.BASIC_QUERY, StatementType.INSERT), "select_only"),
        (_labels(CoreIntent.BASIC_AGGREGATION, structures={SyntaxStructure.HAVING}), "having_needs_group_by"),
        (_labels(CoreIntent.SET_OPERATION), "set_operation_structure"),
        (_labels(CoreIntent.SORTING_AND_PAGINATION, structures={SyntaxStructure.WHERE}), "sorting_needs_ordering"),
        (_labels(CoreIntent.TREND_ANALYSIS, actions={KeyAction.AGGREGATE_FUNCTION}), "time_needs_time_action"),
        (_labels(CoreIntent.STRUCTURE_CHANGE, StatementType.ALTER, structures={SyntaxStructure.WHERE}), "bare_alter"),
    ])
    def test_rules(self, taxonomy, labels, rule):
        """Test each validity rule fires on a tuple that breaks it"""
        violations = taxonomy.validate_combination(labels)
        assert any(v.startswith(rule + ":") for v in violations)

    def test_alter_with_cast_is_valid(self, taxonomy):
        """Test Cast is the one action Alter may carry"""
        labels = _labels(CoreIntent.STRUCTURE_CHANGE, StatementType.ALTER, actions={KeyAction.CAST})
        assert taxonomy.validate_combination(labels) == []

    def test_disabled_rule(self, analyzer):
        """Test a disabled rule no longer reports"""
        taxonomy = TaxonomyService(config=TaxonomyConfig(rules={"having_needs_group_by": False}), analyzer=analyzer)
        labels = _labels(CoreIntent.BASIC_AGGREGATION, structures={SyntaxStructure.HAVING})
        assert taxonomy.validate_combination(labels) == []


class TestEnumeration:
    def test_candidate_count(self, desk_taxonomy):
        """Test the capped product size of the shipped configuration"""
        assert desk_taxonomy.candidate_count() == 378

    def test_matches_brute_force(self, desk_taxonomy):
        """Test enumeration equals filtering the whole product by hand"""
        config = desk_taxonomy.config
        structures = config.members("syntax_structures")
        actions = config.members("key_actions")
        expected = set()
        for intent, statement in itertools.product(config.members("core_intent"), config.members("statement_type")):
            for s in range(3):
                for structure_set in itertools.combinations(structures, s):
                    for a in range(2):
                        for action_set in itertools.combinations(actions, a):
                            if _desk_valid(intent, statement, set(structure_set), set(action_set)):
                                expected.add((intent, statement, frozenset(structure_set), frozenset(action_set)))

        combos = desk_taxonomy.enumerate_combinations()

        assert len(combos) == 127
        assert {combo.labels.key() for combo in combos} == expected
        assert len({combo.id for combo in combos}) == len(combos)

    def test_canonical_order(self, desk_taxonomy):
        """Test the first combination is the emptiest basic query"""
        first = desk_taxonomy.enumerate_combinations()[0]

        assert first.labels.core_intent == CoreIntent.BASIC_QUERY
        assert first.labels.statement_type == StatementType.SELECT
        assert first.labels.syntax_structures == frozenset()
        assert first.labels.key_actions == frozenset()
        assert first.complexity_score == 2

    def test_levels_agree_with_scores(self, desk_taxonomy):
        """Test every emitted level is the one its score falls in"""
        for combo in desk_taxonomy.enumerate_combinations():
            assert desk_taxonomy.complexity_of(combo.labels) == (combo.complexity_score, combo.complexity_level)

    def test_deterministic(self, desk_taxonomy):
        """Test two runs list the same ids in the same order"""
        first = [combo.id for combo in desk_taxonomy.enumerate_combinations()]
        second = [combo.id for combo in desk_taxonomy.enumerate_combinations()]
        assert first == second

    def test_full_taxonomy_hits_ceiling(self, taxonomy):
        """Test the uncapped full product is refused before enumerating"""
        with pytest.raises(CombinatorialLimit):
            taxonomy.enumerate_combinations()

    def test_caps_must_be_positive(self, desk_taxonomy):
        """Test zero subset caps are a precondition failure"""
        with pytest.raises(PreconditionError):
            desk_taxonomy.enumerate_combinations(max_structures=0)


class TestCoverage:
    @pytest.fixture
    def corpus(self):
        intents = list(CoreIntent)[:11]
        structures = list(SyntaxStructure)[:10]
        actions = list(KeyAction)[:3]
        return [labeled(f"r{i}", _labels(intent, structures={structures[i % 10]}, actions={actions[i % 3]}))
                for i, intent in enumerate(intents)]

    def test_ratios(self, taxonomy, corpus):
        """Test covered categories over cardinality for each dimension"""
        report = taxonomy.coverage_report(corpus, name="sample")

        assert report.name == "sample"
        assert report.total == 11
        assert report.ratio("statement_type") == pytest.approx(0.20)
        assert report.ratio("syntax_structures") == pytest.approx(10 / 14)
        assert report.ratio("key_actions") == pytest.approx(3 / 9)
        assert report.ratio("core_intent") == pytest.approx(11 / 14)

    def test_histograms(self, taxonomy, corpus):
        """Test counts and percentages of one category"""
        report = taxonomy.coverage_report(corpus)
        dimension = report.dimensions["key_actions"]

        assert dimension.counts["Specific time"] == 4
        assert dimension.counts["Cast"] == 0
        assert dimension.percentages["Specific time"] == pytest.approx(400 / 11)

    def test_accepts_bare_labels(self, taxonomy, corpus):
        """Test label tuples work as well as labeled records"""
        assert taxonomy.coverage_report([record.labels for record in corpus]).total == 11

    def test_empty(self, taxonomy):
        """Test an empty corpus cannot be reported"""
        with pytest.raises(EmptyCorpus):
            taxonomy.coverage_report([])


class TestHeuristicIntent:
    @pytest.mark.parametrize("question,sql,intent", [
        ("How many orders were shipped?", "SELECT COUNT(*) FROM orders WHERE status = 'S'",
         CoreIntent.BASIC_AGGREGATION),
        ("Show only the customers whose credit limit is high", "SELECT name FROM customers WHERE credit_limit > 4000",
         CoreIntent.CONDITION_FILTERING),
        ("List the orders placed after March 2023", "SELECT order_id FROM orders WHERE order_date > '2023-03-01'",
         CoreIntent.TIME_OPERATION),
        ("List orders after the first one", "SELECT order_id FROM orders WHERE order_id > 100",
         CoreIntent.CONDITION_FILTERING),
        ("Cities of customers combined with product categories",
         "SELECT city FROM customers UNION SELECT category FROM products", CoreIntent.SET_OPERATION),
        ("Products sorted by price", "SELECT name FROM products ORDER BY price", CoreIntent.SORTING_AND_PAGINATION),
        ("Customer names", "SELECT name FROM customers", CoreIntent.BASIC_QUERY),
        ("Mark pending orders as shipped", "UPDATE orders SET status = 'S' WHERE status = 'P'",
         CoreIntent.DATA_CHANGE),
        ("Add a loyalty tier", "ALTER TABLE customers ADD COLUMN loyalty_tier TEXT", CoreIntent.STRUCTURE_CHANGE),
    ])
    def test_rule_table(self, taxonomy, question, sql, intent):
        """Test the keyword and shape rules on typical questions"""
        assert taxonomy.label_pair(question, sql).core_intent == intent

    def test_quoted_identifiers_are_ignored(self, taxonomy):
        """Test a keyword inside a quoted identifier does not fire"""
        assert normalize_question('Show the "count" column') == "show the column"
        assert taxonomy.label_pair('Show the "count" column', 'SELECT "count" FROM t').core_intent \
            == CoreIntent.BASIC_QUERY

    def test_empty_question(self, taxonomy):
        """Test an empty question is rejected"""
        with pytest.raises(PreconditionError):
            taxonomy.label_pair(" ", "SELECT 1")

    def test_violations_are_annotated(self, taxonomy):
        """Test labels of an unrealizable pair carry their violations"""
        labels = taxonomy.label_pair("How many orders are there?", "SELECT COUNT(*) FROM orders HAVING COUNT(*) > 1")
        assert any(v.startswith("having_needs_group_by:") for v in labels.violations)


class TestModelIntent:
    async def test_model_answer_is_used(self, analyzer, scripted_gateway):
        """Test llm mode takes the model's category"""
        taxonomy = TaxonomyService(config=TaxonomyConfig(), analyzer=analyzer,
                                   gateway=scripted_gateway([{"intent": "Sorting and Pagination"}]))
        labels = await taxonomy.classify_pair("Products by price", "SELECT name FROM products ORDER BY price",
                                              mode="llm")
        assert labels.core_intent == CoreIntent.SORTING_AND_PAGINATION

    async def test_unknown_category_falls_back(self, analyzer, scripted_gateway):
        """Test an answer outside the taxonomy falls back to the heuristic"""
        taxonomy = TaxonomyService(config=TaxonomyConfig(), analyzer=analyzer,
                                   gateway=scripted_gateway(['{"intent": "Nonsense"}']))
        labels = await taxonomy.classify_pair("How many orders are there?", "SELECT COUNT(*) FROM orders",
                                              mode="llm")
        assert labels.core_intent == CoreIntent.BASIC_AGGREGATION

    async def test_prose_answer_falls_back(self, analyzer, scripted_gateway):
        """Test an unparseable answer falls back to the heuristic"""
        taxonomy = TaxonomyService(config=TaxonomyConfig(), analyzer=analyzer,
                                   gateway=scripted_gateway(["I think it is about counting."]))
        labels = await taxonomy.classify_pair("How many orders are there?", "SELECT COUNT(*) FROM orders",
                                              mode="llm")
        assert labels.core_intent == CoreIntent.BASIC_AGGREGATION

    async def test_unknown_mode(self, analyzer, scripted_gateway):
        """Test only heuristic and llm modes exist"""
        taxonomy = TaxonomyService(config=TaxonomyConfig(), analyzer=analyzer, gateway=scripted_gateway([]))
        with pytest.raises(PreconditionError):
            await taxonomy.classify_pair("q", "SELECT 1", mode="oracle")
