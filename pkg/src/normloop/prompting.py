"""Task-specific prompt construction for the generation and verification
roles, with zero/one/few-shot variants and a deterministic token estimator.

Templates are UTF-8 text files using ``{placeholder}`` syntax (``{schema}``,
``{feedback}``, ``{target_nf}``); the packaged defaults can be overridden
with a directory of same-named files. Zero-shot bodies state the explicit
requirements for 1NF..3NF and carry no worked examples — that is the whole
point of the cost profile.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .model import NormalForm, Schema

__all__ = [
    "FEEDBACK_HEADER",
    "PromptTemplate",
    "build_prompt",
    "estimate_tokens",
    "load_template",
]

ROLES = ("GENERATION", "VERIFICATION")
SHOT_MODES = ("ZERO", "ONE", "FEW")

FEEDBACK_HEADER = "PREVIOUS VERIFICATION FEEDBACK:"

# Example blocks in ONE/FEW templates are introduced by this marker so the
# zero-example invariant is mechanically checkable.
EXAMPLE_MARKER = "EXAMPLE"


@dataclass(frozen=True)
class PromptTemplate:
    role: str  # GENERATION | VERIFICATION
    shot_mode: str  # ZERO | ONE | FEW
    body: str

    def example_blocks(self) -> int:
        return len(re.findall(rf"^{EXAMPLE_MARKER}\b", self.body, re.MULTILINE))


def load_template(
    role: str, shot_mode: str = "ZERO", template_dir: str | Path | None = None
) -> PromptTemplate:
    """Load a packaged template, or a same-named override from template_dir."""
    role = role.upper()
    shot_mode = shot_mode.upper()
    if role not in ROLES:
        raise ValueError(f"unknown role {role!r}")
    if shot_mode not in SHOT_MODES:
        raise ValueError(f"unknown shot mode {shot_mode!r}")
    fname = f"{role.lower()}_{shot_mode.lower()}.txt"
    if template_dir is not None:
        body = Path(template_dir, fname).read_text(encoding="utf-8")
    else:
        body = (resources.files("normloop") / "templates" / fname).read_text("utf-8")
    return PromptTemplate(role=role, shot_mode=shot_mode, body=body)


class _StrictMap(dict):
    def __missing__(self, key: str) -> str:
        raise ValueError(f"unresolved placeholder {{{key}}} in prompt template")


def build_prompt(
    template: PromptTemplate,
    schema: Schema,
    feedback: str | None,
    target: NormalForm,
) -> str:
    """Render the prompt: emitted DDL, the requirement clauses from the
    template body, and a feedback section present iff feedback is given."""
    from .ddl import emit_ddl  # local import: ddl pulls in the model only

    if template.shot_mode == "ZERO" and template.example_blocks():
        raise ValueError("ZERO-shot template must not contain example blocks")
    feedback_block = ""
    if feedback:
        feedback_block = f"\n{FEEDBACK_HEADER}\n{feedback}\n"
    values = _StrictMap(
        schema=emit_ddl(schema),
        feedback=feedback_block,
        target_nf=str(target),
    )
    return template.body.format_map(values)


def estimate_tokens(text: str) -> int:
    """ceil(len/4) after collapsing whitespace runs to one space.

    A deterministic, dependency-free stand-in for a model tokenizer; used
    only for relative cost accounting, never billing.
    """
    collapsed = re.sub(r"\s+", " ", text)
    return math.ceil(len(collapsed) / 4)
