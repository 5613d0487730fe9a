"""Conversational hierarchical planning engine.

A meta-controller policy picks one macro-action per user turn (add-steps,
alter-steps, or ask-question), sub-policies execute it into a schema-validated
plan mutation or a question, and a retrieve-then-rank layer attaches content
to each plan step. Sessions are event-sourced and replayable.
"""

__version__ = "0.1.0"
