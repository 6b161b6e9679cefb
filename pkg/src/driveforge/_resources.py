"""Access to packaged template files, overridable by a templates directory."""

from __future__ import annotations

from importlib import resources
from pathlib import Path


def read_template(name: str, templates_dir: str | Path | None = None) -> str:
    if templates_dir is not None:
        return (Path(templates_dir) / name).read_text(encoding="utf-8")
    return (resources.files("driveforge") / "templates" / name).read_text(encoding="utf-8")
