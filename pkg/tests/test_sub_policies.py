"""Sub-policy execution: step parsing, collisions, alteration, questions."""

import json

import pytest

from planloop.domain import Goal, Observation, Plan, PlanStep, Provenance
from planloop.errors import (
    EmptyResultError,
    ExecutionFailureError,
    OutputParseError,
    UnknownStepError,
)
from planloop.gateway import ScriptedBackend, ScriptEntry
from planloop.meta_controller import build_context
from planloop.prompting import load_policy_configs
from planloop.sub_policies import (
    execute_add_steps,
    execute_alter_step,
    execute_ask_question,
    parse_plan_step,
)

CONFIGS = load_policy_configs()


def make_context(goal_text, text=None, turn=0):
    kind = "initial-goal" if turn == 0 else "free-form-feedback"
    return build_context(
        Goal(text=goal_text),
        [],
        [],
        Observation(kind=kind, text=text or goal_text, turn_index=0),
    )


def existing_step(step_id, name, **fields):
    defaults = dict(
        description="d",
        follow_up_question="Ok?",
        search_keywords=["kw"],
    )
    defaults.update(fields)
    return PlanStep(
        step_id=step_id,
        name=name,
        provenance=Provenance(created_turn=0, created_by="add-steps"),
        **defaults,
    )


def id_factory(prefix="step"):
    counter = iter(range(1, 100))
    return lambda: f"{prefix}-{next(counter)}"


class TestParsePlanStep:
    def test_complete_fragment(self):
        fields = parse_plan_step(
            {
                "name": "Learn the basics of crossfit",
                "description": "Foundational movements prevent injury.",
                "follow_up_question": "Have you done any group fitness before?",
                "search_keywords": ["crossfit basics", "WOD"],
            }
        )
        assert fields["name"] == "Learn the basics of crossfit"
        assert fields["search_keywords"] == ["crossfit basics", "WOD"]

    def test_missing_keywords_names_field(self):
        with pytest.raises(OutputParseError, match="missing: search_keywords"):
            parse_plan_step(
                {"name": "n", "description": "d", "follow_up_question": "q?"}
            )

    def test_comma_joined_keywords_split(self):
        fields = parse_plan_step(
            {
                "name": "n",
                "description": "d",
                "follow_up_question": "q?",
                "search_keywords": "crossfit basics, WOD",
            }
        )
        assert fields["search_keywords"] == ["crossfit basics", "WOD"]

    def test_json_string_fragment_accepted(self):
        fields = parse_plan_step(
            '{"name": "n", "description": "d", "follow_up_question": "q?", "search_keywords": ["k"]}'
        )
        assert fields["name"] == "n"

    def test_question_mark_appended(self):
        fields = parse_plan_step(
            {"name": "n", "description": "d", "follow_up_question": "tell me more",
             "search_keywords": ["k"]}
        )
        assert fields["follow_up_question"] == "tell me more?"

    def test_camel_case_aliases(self):
        fields = parse_plan_step(
            {"name": "n", "description": "d", "followUpQuestion": "q?", "keywords": ["k"]}
        )
        assert fields["follow_up_question"] == "q?"

    def test_excess_keywords_truncated_to_cap(self):
        fields = parse_plan_step(
            {"name": "n", "description": "d", "follow_up_question": "q?",
             "search_keywords": ["a", "b", "c", "d", "e", "f", "g"]}
        )
        assert len(fields["search_keywords"]) == 5

    def test_wrong_shape_carries_fragment(self):
        with pytest.raises(OutputParseError):
            parse_plan_step(42)


def scripted_add_steps(steps, summary="knows the user a bit"):
    return ScriptedBackend(
        [
            ScriptEntry(
                policy_id="add-steps",
                match="",
                response=json.dumps(
                    {"thought": "t", "user_model_summary": summary, "steps": steps}
                ),
            )
        ]
    )


def step_fragment(name, question="What's next?"):
    return {
        "name": name,
        "description": f"Why {name} helps.",
        "follow_up_question": question,
        "search_keywords": [name.lower()],
    }


class TestExecuteAddSteps:
    def test_inventors_initial_steps(self):
        gateway = scripted_add_steps(
            [
                step_fragment("Start with stories", "What's your kids favorite invention?"),
                step_fragment("Use everyday examples"),
                step_fragment("Visit museums or science centers"),
            ]
        )
        context = make_context("How do I explain to my kids about inventors?")
        result = execute_add_steps(
            context, ["Start with stories"], CONFIGS["add-steps"], gateway,
            Plan(), id_factory(),
        )
        assert [s.name for s in result.new_steps] == [
            "Start with stories",
            "Use everyday examples",
            "Visit museums or science centers",
        ]
        assert result.new_steps[0].follow_up_question == "What's your kids favorite invention?"
        assert all(s.search_keywords for s in result.new_steps)
        assert result.user_model_summary.text == "knows the user a bit"

    def test_collision_dropped_from_batch(self):
        gateway = scripted_add_steps(
            [
                step_fragment("Warm up properly"),
                step_fragment("Set Realistic goals"),
                step_fragment("Find a coach"),
            ]
        )
        plan = Plan(steps=[existing_step("step-1", "set realistic goals")], version=1)
        result = execute_add_steps(
            make_context("I want to do crossfit"), [], CONFIGS["add-steps"],
            gateway, plan, id_factory(),
        )
        assert [s.name for s in result.new_steps] == ["Warm up properly", "Find a coach"]

    def test_within_batch_collision_keeps_first(self):
        gateway = scripted_add_steps(
            [step_fragment("Stretch daily"), step_fragment("stretch daily!")]
        )
        result = execute_add_steps(
            make_context("flexibility"), [], CONFIGS["add-steps"], gateway,
            Plan(), id_factory(),
        )
        assert [s.name for s in result.new_steps] == ["Stretch daily"]

    def test_all_collisions_is_empty_result(self):
        gateway = scripted_add_steps([step_fragment("Set realistic goals")])
        plan = Plan(steps=[existing_step("step-1", "Set realistic goals")], version=1)
        with pytest.raises(EmptyResultError):
            execute_add_steps(
                make_context("crossfit"), [], CONFIGS["add-steps"], gateway,
                plan, id_factory(),
            )

    def test_batch_capped_at_five(self):
        gateway = scripted_add_steps([step_fragment(f"Step number {i}") for i in range(8)])
        result = execute_add_steps(
            make_context("big goal"), [], CONFIGS["add-steps"], gateway,
            Plan(), id_factory(),
        )
        assert len(result.new_steps) == 5

    def test_unparseable_after_retries_is_execution_failure(self):
        gateway = ScriptedBackend(
            [ScriptEntry(policy_id="add-steps", match="", response="nope")]
        )
        with pytest.raises(ExecutionFailureError) as err:
            execute_add_steps(
                make_context("goal"), [], CONFIGS["add-steps"], gateway,
                Plan(), id_factory(),
            )
        assert len(err.value.raw_outputs) == CONFIGS["add-steps"].max_retries + 1


class TestExecuteAlterStep:
    def crossfit_plan(self):
        return Plan(
            steps=[
                existing_step("step-1", "Learn the basics of crossfit"),
                existing_step("step-2", "Assess your current fitness level"),
                existing_step(
                    "step-3",
                    "Set realistic goals",
                    description="Goals keep training focused.",
                    follow_up_question="What are your fitness goals?",
                    search_keywords=["goal setting fitness"],
                ),
            ],
            version=1,
        )

    def alter_gateway(self, step):
        return ScriptedBackend(
            [
                ScriptEntry(
                    policy_id="alter-steps",
                    match="",
                    response=json.dumps({"thought": "cardio focus", "step": step}),
                )
            ]
        )

    def test_cardio_feedback_alters_goals_step(self):
        gateway = self.alter_gateway(
            {
                "name": "Set realistic goals",
                "description": "Anchor goals on cardiovascular health markers like resting heart rate.",
                "follow_up_question": "How often can you do cardio each week?",
                "search_keywords": ["cardio goals", "heart health training"],
            }
        )
        context = make_context(
            "I want to do crossfit", "I would like to improve my cardiovascular health."
        )
        result = execute_alter_step(
            context, self.crossfit_plan(), "Set Realistic goals",
            CONFIGS["alter-steps"], gateway,
        )
        assert result.target_step_id == "step-3"
        assert result.altered_step.step_id == "step-3"
        assert "cardiovascular" in result.altered_step.description
        assert result.altered_step.search_keywords == ["cardio goals", "heart health training"]
        assert result.altered_step.provenance.last_altered_turn == 0
        assert result.altered_step.provenance.created_by == "add-steps"

    def test_unknown_target_raises(self):
        gateway = self.alter_gateway({})
        with pytest.raises(UnknownStepError):
            execute_alter_step(
                make_context("crossfit"), self.crossfit_plan(), "Set impossible goals",
                CONFIGS["alter-steps"], gateway,
            )

    def test_identical_content_rejected(self):
        gateway = self.alter_gateway(
            {
                "name": "Set realistic goals",
                "description": "Goals keep training focused.",
                "follow_up_question": "What are your fitness goals?",
                "search_keywords": ["goal setting fitness"],
            }
        )
        with pytest.raises(ExecutionFailureError):
            execute_alter_step(
                make_context("crossfit"), self.crossfit_plan(), "Set realistic goals",
                CONFIGS["alter-steps"], gateway,
            )

    def test_name_collision_with_other_step_rejected(self):
        gateway = self.alter_gateway(
            {
                "name": "Learn the basics of crossfit",
                "description": "changed",
                "follow_up_question": "q?",
                "search_keywords": ["k"],
            }
        )
        with pytest.raises(ExecutionFailureError):
            execute_alter_step(
                make_context("crossfit"), self.crossfit_plan(), "Set realistic goals",
                CONFIGS["alter-steps"], gateway,
            )


class TestExecuteAskQuestion:
    def ask_gateway(self, response):
        return ScriptedBackend([ScriptEntry(policy_id="ask-question", match="", response=response)])

    def test_vague_goal_yields_question(self):
        gateway = self.ask_gateway(
            '{"thought": "too vague", "question": "Better at what: fitness, a skill, or something else?"}'
        )
        result = execute_ask_question(
            make_context("I want to get better"), ["clarify the target"],
            CONFIGS["ask-question"], gateway,
        )
        assert result.question.endswith("?")
        assert result.question

    def test_empty_output_is_execution_failure(self):
        gateway = self.ask_gateway("")
        with pytest.raises(ExecutionFailureError):
            execute_ask_question(
                make_context("goal"), [], CONFIGS["ask-question"], gateway,
            )

    def test_missing_terminator_appended(self):
        gateway = self.ask_gateway('{"question": "what is your budget"}')
        result = execute_ask_question(
            make_context("trip"), [], CONFIGS["ask-question"], gateway,
        )
        assert result.question == "what is your budget?"
