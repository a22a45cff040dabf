"""Versioned identifier crosswalks (source id -> canonical id)."""

from __future__ import annotations

import re
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

from .._common import ConfigError, digest_obj, load_json


@dataclass(frozen=True)
class Crosswalk:
    name: str
    entries: dict[str, str] = field(hash=False)
    source_pattern: str | None = None
    target_pattern: str | None = None
    merged: frozenset[str] = frozenset()
    version: str = ""

    def lookup(self, key: str) -> str | None:
        # absent keys are misses; never guess
        return self.entries.get(key)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "source_pattern": self.source_pattern,
            "target_pattern": self.target_pattern,
            "merged": sorted(self.merged),
            "entries": dict(sorted(self.entries.items())),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Crosswalk":
        try:
            name = d["name"]
            entries = {str(k): str(v) for k, v in d["entries"].items()}
        except (KeyError, AttributeError) as exc:
            raise ConfigError(f"crosswalk is missing {exc}") from exc
        cw = cls(
            name=name,
            entries=entries,
            source_pattern=d.get("source_pattern"),
            target_pattern=d.get("target_pattern"),
            merged=frozenset(d.get("merged", ())),
        )
        cw._validate()
        return cls(**{**cw.__dict__, "version": digest_obj(cw.to_dict())})

    @classmethod
    def from_file(cls, path: Path | str) -> "Crosswalk":
        return cls.from_dict(load_json(Path(path)))

    def _validate(self) -> None:
        problems = []
        targets: dict[str, list[str]] = defaultdict(list)
        for src, dst in self.entries.items():
            if self.source_pattern and not re.fullmatch(self.source_pattern, src):
                problems.append(f"source key {src!r} does not match {self.source_pattern}")
            if self.target_pattern and not re.fullmatch(self.target_pattern, dst):
                problems.append(f"target {dst!r} does not match {self.target_pattern}")
            targets[dst].append(src)
        for dst, srcs in targets.items():
            if len(srcs) > 1 and dst not in self.merged:
                problems.append(f"{sorted(srcs)} all map to {dst!r} (not marked merged)")
        if problems:
            raise ConfigError(f"crosswalk {self.name!r} invalid: " + "; ".join(problems[:10]))


def load_crosswalks(directory: Path | str) -> dict[str, Crosswalk]:
    out: dict[str, Crosswalk] = {}
    directory = Path(directory)
    if not directory.is_dir():
        return out
    for path in sorted(directory.glob("*.json")):
        cw = Crosswalk.from_file(path)
        if cw.name in out:
            raise ConfigError(f"crosswalk {cw.name!r} defined twice")
        out[cw.name] = cw
    return out
