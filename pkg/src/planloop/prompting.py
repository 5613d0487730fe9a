"""Prompt template and exemplar loading.

Templates are plain UTF-8 files with {name} placeholders; exemplar files hold
few-shot examples separated by lines containing only "---". A configurable
directory overrides the packaged defaults file by file.
"""

from __future__ import annotations

import re
from pathlib import Path
from typing import Mapping, Optional, Union

from .domain import PolicyConfig
from .errors import ValidationError

TEMPLATE_FILES = {
    "meta-controller": "meta_controller.txt",
    "add-steps": "add_steps.txt",
    "alter-steps": "alter_steps.txt",
    "ask-question": "ask_question.txt",
    "ranker": "ranker.txt",
}

EXEMPLAR_FILES = {
    "meta-controller": "meta_controller.examples.txt",
    "add-steps": "add_steps.examples.txt",
    "alter-steps": "alter_steps.examples.txt",
    "ask-question": "ask_question.examples.txt",
    "ranker": "ranker.examples.txt",
}

_PLACEHOLDER_RE = re.compile(r"\{([a-z_]+)\}")


def default_prompt_dir() -> Path:
    return Path(__file__).parent / "prompts"


def render_template(template: str, values: Mapping[str, str]) -> str:
    """Substitute {name} placeholders for keys present in `values`, leaving
    all other braces (JSON examples in particular) untouched."""

    def sub(match: re.Match) -> str:
        key = match.group(1)
        return str(values[key]) if key in values else match.group(0)

    return _PLACEHOLDER_RE.sub(sub, template)


def split_exemplars(raw: str) -> list[str]:
    parts = re.split(r"^---\s*$", raw, flags=re.MULTILINE)
    return [p.strip() for p in parts if p.strip()]


def _read(directory: Optional[Path], filename: str) -> str:
    if directory is not None:
        candidate = Path(directory) / filename
        if candidate.exists():
            return candidate.read_text(encoding="utf-8")
    packaged = default_prompt_dir() / filename
    if not packaged.exists():
        raise ValidationError(f"missing prompt file: {filename}")
    return packaged.read_text(encoding="utf-8")


def load_policy_configs(
    prompts_dir: Union[str, Path, None] = None,
    model_id: str = "default",
    max_retries: int = 2,
    temperature: float = 0.2,
) -> dict[str, PolicyConfig]:
    """One PolicyConfig per policy id, templates and exemplars from disk."""
    directory = Path(prompts_dir) if prompts_dir is not None else None
    configs = {}
    for policy_id, template_file in TEMPLATE_FILES.items():
        configs[policy_id] = PolicyConfig(
            policy_id=policy_id,
            prompt_template=_read(directory, template_file),
            exemplars=split_exemplars(_read(directory, EXEMPLAR_FILES[policy_id])),
            model_id=model_id,
            max_retries=max_retries,
            temperature=temperature,
        )
    return configs


def assert_distinct_exemplars(policies: Mapping[str, PolicyConfig]) -> None:
    """The three plan sub-policies must be prompted with pairwise different
    example sets; checked once at engine startup."""
    sub_ids = ["add-steps", "alter-steps", "ask-question"]
    for i, a in enumerate(sub_ids):
        for b in sub_ids[i + 1 :]:
            if a in policies and b in policies:
                if set(policies[a].exemplars) == set(policies[b].exemplars):
                    raise ValidationError(
                        f"sub-policies {a!r} and {b!r} share an identical exemplar set"
                    )
