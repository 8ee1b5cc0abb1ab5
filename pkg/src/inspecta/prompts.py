"""Prompt template loading and placeholder interpolation.

Templates ship as package data under assets/prompts. Placeholders are
literal ``{name}`` markers filled by plain string replacement, so template
text may freely contain braces that are not placeholders.
"""

from __future__ import annotations

from functools import lru_cache
from importlib import resources

_PACKAGE = "inspecta.assets.prompts"


class PromptError(ValueError):
    """Raised for unknown templates or unmatched placeholders."""


@lru_cache(maxsize=None)
def load_template(name: str) -> str:
    resource = resources.files(_PACKAGE).joinpath(f"{name}.txt")
    try:
        return resource.read_text()
    except FileNotFoundError as exc:
        raise PromptError(f"unknown prompt template {name!r}") from exc


def render(name: str, substitutions: dict | None = None) -> str:
    """Fill ``{key}`` markers in the named template.

    Every substitution key must appear in the template; a silent no-op
    replacement would hide prompt bugs.
    """
    text = load_template(name)
    for key, value in (substitutions or {}).items():
        marker = "{" + key + "}"
        if marker not in text:
            raise PromptError(f"template {name!r} has no placeholder {marker}")
        text = text.replace(marker, str(value))
    return text
