"""Versioned sectioned template files.

A file is a sequence of ``[name]`` headers, each followed by a body that runs
to the next header.  Lines starting with ``#`` before the first header are
comments.  Bodies are stripped of surrounding blank lines.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional, Union

_HEADER = re.compile(r"^\[([a-z_]+)\]\s*$")


@dataclass(frozen=True)
class TemplateFile:
    sections: dict
    checksum: str
    source: str

    def __getitem__(self, name: str) -> str:
        return self.sections[name]

    def get(self, name: str, default: str = "") -> str:
        return self.sections.get(name, default)


def parse_sections(text: str) -> dict:
    sections: dict = {}
    current: Optional[str] = None
    body: list = []
    for line in text.splitlines():
        m = _HEADER.match(line)
        if m:
            if current is not None:
                sections[current] = "\n".join(body).strip("\n")
            current, body = m.group(1), []
            if current in sections:
                raise ValueError(f"duplicate template section [{current}]")
        elif current is None:
            if line.strip() and not line.startswith("#"):
                raise ValueError(f"text before first section header: {line!r}")
        else:
            body.append(line)
    if current is not None:
        sections[current] = "\n".join(body).strip("\n")
    return sections


def load_template(path: Union[str, Path, None], packaged: str) -> TemplateFile:
    if path is None:
        raw = resources.files("cptsketch").joinpath(f"data/{packaged}").read_bytes()
        source = f"package:{packaged}"
    else:
        raw = Path(path).read_bytes()
        source = str(path)
    return TemplateFile(
        sections=parse_sections(raw.decode("utf-8")),
        checksum="sha256:" + hashlib.sha256(raw).hexdigest(),
        source=source,
    )
