"""Shared helpers: scripted gateways and engines for deterministic episodes."""

import json

import pytest

from planloop.content import StubTool
from planloop.engine import EngineConfig, PlannerEngine
from planloop.gateway import ScriptedBackend, ScriptEntry
from planloop.prompting import load_policy_configs
from planloop.store import InMemoryStore

POLICIES = load_policy_configs()


def meta_entry(match, action, arguments, thought="scripted", consume_once=True):
    return ScriptEntry(
        policy_id="meta-controller",
        match=match,
        response=json.dumps({"thought": thought, "action": action, "arguments": arguments}),
        consume_once=consume_once,
    )


def step_fragment(name, question=None, keywords=None, description=None):
    return {
        "name": name,
        "description": description or f"Why {name} moves the goal forward.",
        "follow_up_question": question or f"How do you feel about {name.lower()}?",
        "search_keywords": keywords or [name.lower()],
    }


def add_entry(match, steps, summary="what we know so far", consume_once=True):
    return ScriptEntry(
        policy_id="add-steps",
        match=match,
        response=json.dumps(
            {"thought": "scripted", "user_model_summary": summary, "steps": steps}
        ),
        consume_once=consume_once,
    )


def alter_entry(match, step, consume_once=True):
    return ScriptEntry(
        policy_id="alter-steps",
        match=match,
        response=json.dumps({"thought": "scripted", "step": step}),
        consume_once=consume_once,
    )


def ask_entry(match, question, consume_once=True):
    return ScriptEntry(
        policy_id="ask-question",
        match=match,
        response=json.dumps({"thought": "scripted", "question": question}),
        consume_once=consume_once,
    )


def scripted_engine(entries, store=None, tools=None, trace_hook=None, **knobs):
    config = EngineConfig(
        gateway=ScriptedBackend(entries),
        store=store if store is not None else InMemoryStore(),
        tools=tools if tools is not None else {"search": StubTool("search"),
                                               "recommend-engine": StubTool("recommend-engine")},
        policies=POLICIES,
        trace_hook=trace_hook,
        **knobs,
    )
    return PlannerEngine(config)


@pytest.fixture
def collected_traces():
    return []
