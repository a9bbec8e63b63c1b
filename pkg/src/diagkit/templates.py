"""Versioned prompt template assets.

Templates are plain text files shipped as package data so experiment runs can
pin a template version instead of a code revision.
"""

from __future__ import annotations

from importlib import resources

DEFAULT_TEMPLATE_VERSION = "v1"


def load_template(name: str, version: str = DEFAULT_TEMPLATE_VERSION) -> str:
    package = resources.files(__package__) / "templates" / version
    path = package / f"{name}.txt"
    try:
        return path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise FileNotFoundError(
            f"no template '{name}' for version '{version}'"
        ) from None


def available_versions() -> list[str]:
    root = resources.files(__package__) / "templates"
    return sorted(p.name for p in root.iterdir() if p.is_dir())
