"""Prompt templates, one text file per stage.

A rendered prompt is the stage header, the template's instructions, and a JSON
context block.  Template wording is configuration: point ``prompt_dir`` at a
copy of this directory to edit it without touching code.
"""

from __future__ import annotations

import json
from functools import lru_cache
from pathlib import Path

TEMPLATE_DIR = Path(__file__).parent
CONTEXT_MARKER = "### CONTEXT"


@lru_cache(maxsize=None)
def _load(directory: str, name: str) -> str:
    return (Path(directory) / f"{name}.txt").read_text(encoding="utf-8").strip()


def template_name(stage: int | str) -> str:
    return f"stage_{stage:02d}" if isinstance(stage, int) else str(stage)


def render(stage: int | str, context: dict, prompt_dir: str | Path | None = None) -> str:
    name = template_name(stage)
    text = _load(str(prompt_dir or TEMPLATE_DIR), name)
    payload = json.dumps(context, sort_keys=True, ensure_ascii=False, indent=1)
    return f"### STAGE {name}\n{text}\n{CONTEXT_MARKER}\n{payload}\n"


def split_prompt(prompt: str) -> tuple[str, dict]:
    """Inverse of ``render``: (template name, context)."""
    header, _, rest = prompt.partition("\n")
    if not header.startswith("### STAGE "):
        raise ValueError("not a rendered prompt")
    _, _, payload = rest.partition(CONTEXT_MARKER + "\n")
    return header[len("### STAGE "):].strip(), json.loads(payload)
