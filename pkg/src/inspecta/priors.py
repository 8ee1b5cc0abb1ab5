"""Textual normalcy-prior store.

Priors describe what a defect-free product view looks like (for example a
capacitor's smooth metallic sheen and symmetrical solder joints). The store is
a small JSON-backed lookup keyed by normalized category and view; the
orchestrator surfaces misses as failed tool observations.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

from .evaluation import normalize_category

log = logging.getLogger(__name__)

WILDCARD_VIEW = "*"


class PriorError(ValueError):
    """Raised on malformed prior files or records."""


class PriorNotFound(KeyError):
    """Raised when no prior exists for a (category, view) query."""


@dataclass(frozen=True)
class PriorRecord:
    category: str
    view: str
    text: str


class PriorStore:
    """In-memory prior lookup with JSON persistence.

    Lookup rules: categories are normalized (case, separators, trailing
    variant digits); an exact (category, view) match wins, then the
    category's wildcard view. Misses raise :class:`PriorNotFound`.
    """

    def __init__(self, records: list[PriorRecord] | None = None):
        self._records: dict[tuple[str, str], PriorRecord] = {}
        for record in records or []:
            self.add(record.category, record.view, record.text)

    def __len__(self) -> int:
        return len(self._records)

    def add(self, category: str, view: str, text: str) -> None:
        if not text.strip():
            raise PriorError(f"prior text must be non-empty for {category!r}")
        key = (normalize_category(category), view.strip() or WILDCARD_VIEW)
        if key in self._records:
            log.warning("overwriting prior for %s", key)
        # stored records carry the canonical key so round trips stay stable
        self._records[key] = PriorRecord(key[0], key[1], text)

    def lookup(self, category: str, view: str = WILDCARD_VIEW) -> PriorRecord:
        cat = normalize_category(category)
        view = view.strip() or WILDCARD_VIEW
        record = self._records.get((cat, view))
        if record is None and view != WILDCARD_VIEW:
            record = self._records.get((cat, WILDCARD_VIEW))
        if record is None:
            raise PriorNotFound(f"no prior for category={category!r} view={view!r}")
        return record

    def categories(self) -> list[str]:
        return sorted({cat for cat, _ in self._records})

    @classmethod
    def load(cls, path) -> "PriorStore":
        """Read a JSON file: a list of {category, view?, text} objects."""
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise PriorError(f"invalid prior file {path}: {exc}") from exc
        if not isinstance(raw, list):
            raise PriorError(f"prior file {path} must contain a JSON list")
        store = cls()
        for i, item in enumerate(raw):
            if not isinstance(item, dict) or "category" not in item or "text" not in item:
                raise PriorError(f"prior entry {i} must have category and text")
            category = item["category"]
            view = item.get("view", WILDCARD_VIEW)
            text = item["text"]
            if not all(isinstance(v, str) for v in (category, view, text)):
                raise PriorError(f"prior entry {i} fields must be strings")
            store.add(category, view, text)
        return store

    def save(self, path) -> None:
        records = [
            {"category": r.category, "view": r.view, "text": r.text}
            for _, r in sorted(self._records.items())
        ]
        Path(path).write_text(json.dumps(records, indent=2) + "\n")
