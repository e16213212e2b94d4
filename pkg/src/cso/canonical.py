"""Deterministic JSON encoding used for exchange documents and digests."""

from __future__ import annotations

import json
from typing import Any

ENVELOPE_ORDER = ("v", "kind", "entity", "ts", "body")


def dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def canonical_bytes(obj: Any) -> bytes:
    return dumps(obj).encode("utf-8")


def envelope_bytes(doc: dict[str, Any]) -> bytes:
    """Envelope keys in their fixed order, extension keys sorted after them."""
    keys = [k for k in ENVELOPE_ORDER if k in doc]
    keys += sorted(k for k in doc if k not in ENVELOPE_ORDER)
    text = "{" + ",".join(f"{dumps(k)}:{dumps(doc[k])}" for k in keys) + "}"
    return text.encode("utf-8")
