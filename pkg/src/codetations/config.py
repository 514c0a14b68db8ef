"""Repository-level configuration: ``.codetations/config.json``.

Recognized keys:

* ``reattach``: overrides for re-anchoring weights/threshold/slack, using the
  wire-style names ``weightAnchor``, ``weightPrefix``, ``weightSuffix``,
  ``threshold``, ``maxWindowSlack``;
* ``provider``: ``{"provider": "mock"|"http"|"none", "endpoint": ..., "key": ...}``
  (the CODETATIONS_PROVIDER_ENDPOINT / _KEY environment variables take over
  when set).
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

from .anchoring import ReattachConfig
from .store import STORE_DIR_NAME

CONFIG_FILE = "config.json"

_REATTACH_KEYS = {
    "weightAnchor": "weight_anchor",
    "weightPrefix": "weight_prefix",
    "weightSuffix": "weight_suffix",
    "threshold": "threshold",
    "maxWindowSlack": "max_window_slack",
}


def config_path(repo_root: str | Path) -> Path:
    return Path(repo_root) / STORE_DIR_NAME / CONFIG_FILE


def load_config(repo_root: str | Path) -> dict[str, Any]:
    path = config_path(repo_root)
    if not path.exists():
        return {}
    try:
        loaded = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(loaded, dict):
        raise ValueError(f"{path}: configuration must be a JSON object")
    return loaded


def reattach_config_from(
    settings: dict[str, Any], threshold: float | None = None
) -> ReattachConfig:
    """Build a ReattachConfig from the ``reattach`` section, with an optional
    explicit threshold override (e.g. from the command line)."""
    section = settings.get("reattach", {})
    if not isinstance(section, dict):
        raise ValueError("config 'reattach' section must be an object")
    kwargs: dict[str, Any] = {}
    for wire_name, field_name in _REATTACH_KEYS.items():
        if wire_name in section:
            kwargs[field_name] = section[wire_name]
    if threshold is not None:
        kwargs["threshold"] = threshold
    return ReattachConfig(**kwargs)


def provider_settings(settings: dict[str, Any]) -> dict[str, Any]:
    section = settings.get("provider", {})
    return section if isinstance(section, dict) else {}


def write_default_config(repo_root: str | Path) -> Path:
    """Materialize a config file with the defaults spelled out."""
    defaults = ReattachConfig()
    path = config_path(repo_root)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "reattach": {
            "weightAnchor": defaults.weight_anchor,
            "weightPrefix": defaults.weight_prefix,
            "weightSuffix": defaults.weight_suffix,
            "threshold": defaults.threshold,
            "maxWindowSlack": defaults.max_window_slack,
        },
        "provider": {"provider": "none"},
    }
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
