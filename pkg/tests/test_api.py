"""HTTP facade: routes, error taxonomy, and the server-sent event stream."""

import json
import threading
import time
import urllib.error
import urllib.request

import pytest
from conftest import add_entry, alter_entry, ask_entry, meta_entry, scripted_engine, step_fragment

from planloop.api import ApiServer
from planloop.gateway import ScriptedBackend

CROSSFIT_GOAL = "I want to do crossfit"
CARDIO_ANSWER = "I would like to improve my cardiovascular health."


def crossfit_entries():
    return [
        meta_entry(CROSSFIT_GOAL, "add-steps",
                   ["Learn the basics of crossfit", "Assess your current fitness level",
                    "Set realistic goals"]),
        add_entry(CROSSFIT_GOAL, [
            step_fragment("Learn the basics of crossfit"),
            step_fragment("Assess your current fitness level"),
            step_fragment("Set realistic goals", question="What are your fitness goals?"),
        ]),
        meta_entry(CARDIO_ANSWER, "alter-steps", ["Set realistic goals"]),
        alter_entry(CARDIO_ANSWER, step_fragment(
            "Set realistic goals",
            question="How many cardio days per week?",
            description="Cardio-first goals.",
        )),
    ]


def post(url, body, timeout=10):
    request = urllib.request.Request(
        url,
        data=json.dumps(body).encode("utf-8"),
        headers={"Content-Type": "application/json"},
        method="POST",
    )
    with urllib.request.urlopen(request, timeout=timeout) as resp:
        return resp.status, json.loads(resp.read().decode("utf-8"))


def get(url, timeout=10):
    with urllib.request.urlopen(url, timeout=timeout) as resp:
        return resp.status, json.loads(resp.read().decode("utf-8"))


def post_error(url, body):
    try:
        post(url, body)
    except urllib.error.HTTPError as err:
        return err.code, json.loads(err.read().decode("utf-8"))
    raise AssertionError("expected an HTTP error")


def read_sse(url, expect, timeout=10.0):
    """Collect `expect` SSE frames as (id, event, data) tuples."""
    events = []
    deadline = time.monotonic() + timeout
    resp = urllib.request.urlopen(url, timeout=timeout)
    try:
        current = {}
        while len(events) < expect and time.monotonic() < deadline:
            line = resp.readline().decode("utf-8").rstrip("\n")
            if line.startswith("id: "):
                current["id"] = int(line[4:])
            elif line.startswith("event: "):
                current["event"] = line[7:]
            elif line.startswith("data: "):
                current["data"] = json.loads(line[6:])
            elif line == "" and current:
                events.append((current["id"], current["event"], current["data"]))
                current = {}
    finally:
        resp.close()
    return events


@pytest.fixture
def server():
    engine = scripted_engine(crossfit_entries())
    api = ApiServer(engine, port=0).start()
    yield api
    api.stop()


class TestRoutes:
    def test_healthz(self, server):
        status, body = get(f"{server.base_url}/healthz")
        assert (status, body) == (200, {"status": "ok"})

    def test_create_session_builds_crossfit_plan(self, server):
        status, body = post(f"{server.base_url}/sessions", {"goal_text": CROSSFIT_GOAL})
        assert status == 201
        assert body["session_id"]
        names = [s["name"] for s in body["plan"]["steps"]]
        assert names == ["Learn the basics of crossfit", "Assess your current fitness level",
                         "Set realistic goals"]
        assert body["turn_result"]["macro_action"]["action"] == "add-steps"
        assert len(body["turn_result"]["shown_questions"]) == 3

    def test_empty_goal_is_bad_request(self, server):
        code, body = post_error(f"{server.base_url}/sessions", {"goal_text": "  "})
        assert code == 400
        assert body["error"]["code"] == "bad-request"

    def test_concurrent_creates_get_distinct_sessions(self):
        entries = []
        for _ in range(2):
            entries += [
                meta_entry(CROSSFIT_GOAL, "add-steps", ["Learn the basics of crossfit"]),
                add_entry(CROSSFIT_GOAL, [step_fragment("Learn the basics of crossfit")]),
            ]
        api = ApiServer(scripted_engine(entries), port=0).start()
        try:
            results = []
            threads = [
                threading.Thread(
                    target=lambda: results.append(
                        post(f"{api.base_url}/sessions", {"goal_text": CROSSFIT_GOAL})
                    )
                )
                for _ in range(2)
            ]
            for t in threads:
                t.start()
            for t in threads:
                t.join(timeout=10)
            ids = {body["session_id"] for _, body in results}
            assert len(ids) == 2
        finally:
            api.stop()

    def test_question_answer_message_alters_step(self, server):
        _, created = post(f"{server.base_url}/sessions", {"goal_text": CROSSFIT_GOAL})
        sid = created["session_id"]
        goals = next(s for s in created["plan"]["steps"] if s["name"] == "Set realistic goals")
        status, body = post(
            f"{server.base_url}/sessions/{sid}/messages",
            {
                "text": CARDIO_ANSWER,
                "kind": "question-answer",
                "answered_question": {
                    "step_id": goals["step_id"],
                    "question": goals["follow_up_question"],
                },
            },
        )
        assert status == 200
        diff = body["turn_result"]["plan_diff"]
        assert len(diff["altered_steps"]) == 1
        assert diff["altered_steps"][0]["after"]["description"] == "Cardio-first goals."
        assert diff["added_steps"] == []

    def test_message_to_unknown_session_is_not_found(self, server):
        code, body = post_error(
            f"{server.base_url}/sessions/nope/messages",
            {"text": "hello", "kind": "free-form-feedback"},
        )
        assert code == 404
        assert body["error"]["code"] == "not-found"

    def test_policy_failure_rejects_turn(self, server):
        _, created = post(f"{server.base_url}/sessions", {"goal_text": CROSSFIT_GOAL})
        sid = created["session_id"]
        code, body = post_error(
            f"{server.base_url}/sessions/{sid}/messages",
            {"text": "nothing scripted for this", "kind": "free-form-feedback"},
        )
        assert code == 502
        assert body["error"]["code"] == "policy-failure"
        status, plan = get(f"{server.base_url}/sessions/{sid}/plan")
        assert plan["version"] == 1


class TestGetPlan:
    def test_versioned_and_current_plans(self, server):
        _, created = post(f"{server.base_url}/sessions", {"goal_text": CROSSFIT_GOAL})
        sid = created["session_id"]
        goals = next(s for s in created["plan"]["steps"] if s["name"] == "Set realistic goals")
        post(
            f"{server.base_url}/sessions/{sid}/messages",
            {"text": CARDIO_ANSWER, "kind": "question-answer",
             "answered_question": {"step_id": goals["step_id"],
                                   "question": goals["follow_up_question"]}},
        )
        _, v0 = get(f"{server.base_url}/sessions/{sid}/plan?version=0")
        assert v0 == {"steps": [], "version": 0}
        _, v2 = get(f"{server.base_url}/sessions/{sid}/plan?version=2")
        _, current = get(f"{server.base_url}/sessions/{sid}/plan")
        assert v2 == current
        assert current["version"] == 2
        altered = next(s for s in current["steps"] if s["name"] == "Set realistic goals")
        assert altered["description"] == "Cardio-first goals."

    def test_unknown_version_is_bad_request(self, server):
        _, created = post(f"{server.base_url}/sessions", {"goal_text": CROSSFIT_GOAL})
        sid = created["session_id"]
        try:
            get(f"{server.base_url}/sessions/{sid}/plan?version=99")
            raise AssertionError("expected error")
        except urllib.error.HTTPError as err:
            assert err.code == 400


class TestEventStream:
    def test_full_replay_in_order(self, server):
        _, created = post(f"{server.base_url}/sessions", {"goal_text": CROSSFIT_GOAL})
        sid = created["session_id"]
        total = len(server.engine.config.store.read_events(sid))
        frames = read_sse(f"{server.base_url}/sessions/{sid}/events?from=1", expect=total)
        assert [f[0] for f in frames] == list(range(1, total + 1))
        assert frames[0][1] == "SessionCreated"
        kinds = [f[1] for f in frames]
        assert "StepsAdded" in kinds and "ContentAttached" in kinds

    def test_reconnect_resumes_without_gaps_or_duplicates(self, server):
        _, created = post(f"{server.base_url}/sessions", {"goal_text": CROSSFIT_GOAL})
        sid = created["session_id"]
        total = len(server.engine.config.store.read_events(sid))
        first = read_sse(f"{server.base_url}/sessions/{sid}/events?from=1", expect=3)
        resume_from = first[-1][0] + 1
        rest = read_sse(
            f"{server.base_url}/sessions/{sid}/events?from={resume_from}",
            expect=total - len(first),
        )
        ids = [f[0] for f in first] + [f[0] for f in rest]
        assert ids == list(range(1, total + 1))

    def test_stream_unknown_session_is_not_found(self, server):
        try:
            urllib.request.urlopen(f"{server.base_url}/sessions/ghost/events", timeout=5)
            raise AssertionError("expected error")
        except urllib.error.HTTPError as err:
            assert err.code == 404

    def test_mid_turn_events_arrive_only_after_commit(self):
        release = threading.Event()
        reached_gateway = threading.Event()
        inner = ScriptedBackend(crossfit_entries() + [
            meta_entry("slow feedback", "ask-question", []),
            ask_entry("slow feedback", "Why slow?"),
        ])

        class PausingGateway:
            def complete(self, request):
                if "slow feedback" in request.rendered_prompt:
                    reached_gateway.set()
                    release.wait(timeout=10)
                return inner.complete(request)

        engine = scripted_engine([])
        engine.config.gateway = PausingGateway()
        api = ApiServer(engine, port=0).start()
        try:
            _, created = post(f"{api.base_url}/sessions", {"goal_text": CROSSFIT_GOAL})
            sid = created["session_id"]
            committed = len(engine.config.store.read_events(sid))

            collected = []
            reader_done = threading.Event()

            def reader():
                collected.extend(
                    read_sse(f"{api.base_url}/sessions/{sid}/events?from=1",
                             expect=committed + 3, timeout=15)
                )
                reader_done.set()

            threading.Thread(target=reader, daemon=True).start()

            def turn():
                post(f"{api.base_url}/sessions/{sid}/messages",
                     {"text": "slow feedback", "kind": "free-form-feedback"}, timeout=20)

            worker = threading.Thread(target=turn, daemon=True)
            worker.start()
            assert reached_gateway.wait(timeout=10)
            time.sleep(0.3)  # reader has caught up with the committed prefix by now
            assert len(collected) <= committed, "no mid-turn events may leak"

            release.set()
            worker.join(timeout=10)
            assert reader_done.wait(timeout=10)
            ids = [f[0] for f in collected]
            assert ids == sorted(ids)
            assert len(collected) == committed + 3
            assert collected[-1][1] == "QuestionAsked"
        finally:
            release.set()
            api.stop()


class TestAuthHook:
    def test_bearer_token_required_when_configured(self):
        api = ApiServer(scripted_engine(crossfit_entries()), port=0, auth_token="sesame").start()
        try:
            code, body = post_error(f"{api.base_url}/sessions", {"goal_text": CROSSFIT_GOAL})
            assert code == 400
            assert "bearer" in body["error"]["message"]

            request = urllib.request.Request(
                f"{api.base_url}/sessions",
                data=json.dumps({"goal_text": CROSSFIT_GOAL}).encode(),
                headers={"Content-Type": "application/json",
                         "Authorization": "Bearer sesame"},
                method="POST",
            )
            with urllib.request.urlopen(request, timeout=10) as resp:
                assert resp.status == 201

            status, _ = get(f"{api.base_url}/healthz")
            assert status == 200, "health stays open without a token"
        finally:
            api.stop()


class TestBusySignal:
    def test_second_message_while_turn_in_flight_is_busy(self):
        release = threading.Event()
        reached = threading.Event()
        inner = ScriptedBackend(crossfit_entries() + [
            meta_entry("slow feedback", "ask-question", []),
            ask_entry("slow feedback", "Why slow?"),
        ])

        class PausingGateway:
            def complete(self, request):
                if "slow feedback" in request.rendered_prompt:
                    reached.set()
                    release.wait(timeout=10)
                return inner.complete(request)

        engine = scripted_engine([])
        engine.config.gateway = PausingGateway()
        api = ApiServer(engine, port=0).start()
        try:
            _, created = post(f"{api.base_url}/sessions", {"goal_text": CROSSFIT_GOAL})
            sid = created["session_id"]
            worker = threading.Thread(
                target=lambda: post(
                    f"{api.base_url}/sessions/{sid}/messages",
                    {"text": "slow feedback", "kind": "free-form-feedback"}, timeout=20,
                ),
                daemon=True,
            )
            worker.start()
            assert reached.wait(timeout=10)
            code, body = post_error(
                f"{api.base_url}/sessions/{sid}/messages",
                {"text": "impatient second message", "kind": "free-form-feedback"},
            )
            assert code == 429
            assert body["error"]["code"] == "busy"
            release.set()
            worker.join(timeout=10)
        finally:
            release.set()
            api.stop()
