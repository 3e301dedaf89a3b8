"""Run configuration: a YAML document with a ``schema_version`` field.

Unknown keys are hard errors.  Every error carries the line and column of
the offending node (1-based) so a typo is reported where it was made.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None,
                 source: str = "<config>"):
        self.line = line
        self.column = column
        self.source = source
        where = f"{source}:{line}:{column}: " if line is not None else f"{source}: "
        super().__init__(where + message)


class Located(dict):
    """A mapping that remembers where it and each of its keys appeared."""

    def __init__(self, items, mark, key_marks, source):
        super().__init__(items)
        self.mark = mark
        self.key_marks = key_marks
        self.source = source

    def error(self, message: str, key: str | None = None) -> ConfigError:
        line, col = self.key_marks.get(key, self.mark) if key is not None else self.mark
        return ConfigError(message, line, col, self.source)

    def only(self, allowed, what: str) -> None:
        for key in self:
            if key not in allowed:
                raise self.error(f"unknown key {key!r} in {what}; allowed: {sorted(allowed)}", key)

    def require(self, key: str, what: str):
        if key not in self:
            raise self.error(f"missing required key {key!r} in {what}")
        return self[key]

    def section(self, key: str, what: str, required: bool = False):
        if key not in self:
            if required:
                raise self.error(f"missing required section {key!r}")
            return None
        value = self[key]
        if not isinstance(value, Located):
            raise self.error(f"{what} must be a mapping", key)
        return value


def _mark(node) -> tuple[int, int]:
    return node.start_mark.line + 1, node.start_mark.column + 1


def _construct(node, loader, source):
    if isinstance(node, yaml.MappingNode):
        items, marks = {}, {}
        for knode, vnode in node.value:
            key = loader.construct_object(knode, deep=True)
            if not isinstance(key, str):
                raise ConfigError(f"keys must be strings, got {key!r}", *_mark(knode), source)
            if key in items:
                raise ConfigError(f"duplicate key {key!r}", *_mark(knode), source)
            items[key] = _construct(vnode, loader, source)
            marks[key] = _mark(knode)
        return Located(items, _mark(node), marks, source)
    if isinstance(node, yaml.SequenceNode):
        return [_construct(v, loader, source) for v in node.value]
    return loader.construct_object(node, deep=True)


def parse_yaml(text: str, source: str = "<config>") -> Any:
    """Parse YAML into plain values with ``Located`` mappings."""
    loader = yaml.SafeLoader(text)
    try:
        node = loader.get_single_node()
        if node is None:
            raise ConfigError("empty document", 1, 1, source)
        return _construct(node, loader, source)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        line, col = (mark.line + 1, mark.column + 1) if mark else (None, None)
        raise ConfigError(f"YAML syntax error: {exc.problem or exc.context}", line, col, source) from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"YAML error: {exc}", source=source) from None
    finally:
        loader.dispose()


def plain(value):
    """Strip location wrappers recursively."""
    if isinstance(value, Located):
        return {k: plain(v) for k, v in value.items()}
    if isinstance(value, list):
        return [plain(v) for v in value]
    return value


_TOP_KEYS = {"schema_version", "model", "grid", "mc", "solver", "compare", "tails", "cdo",
             "project", "coefficients", "validation", "outputs"}
_SECTION_KEYS = {
    "grid": {"k_min", "k_max", "n_k", "maturities", "substeps", "grading", "auto"},
    "mc": {"n_paths", "n_steps", "master_seed", "antithetic", "block_size"},
    "solver": {"method", "stencil", "zero_offset", "scheme", "rannacher_steps"},
    "compare": {"strikes", "maturities", "z_limit"},
    "tails": {"z", "z_min", "z_max", "n", "measure"},
    "cdo": {"spec", "maturities", "attachments", "n_cells", "cells_per_default", "substeps",
            "method", "engine"},
    "project": {"n_bins", "min_count", "step"},
    "validation": {"tol", "martingale_tol"},
    "outputs": {"dir"},
}


@dataclass
class RunConfig:
    """Validated configuration sections (plain dicts) plus their source locations."""

    schema_version: int
    sections: dict = field(default_factory=dict)
    located: Located | None = None
    base_dir: Path = Path(".")

    def get(self, name: str, default=None):
        return self.sections.get(name, default)

    def error(self, message: str, *path: str) -> ConfigError:
        """Error located at ``path`` (as deep as the document goes)."""
        node = self.located
        target_key = None
        for key in path:
            if not isinstance(node, Located) or key not in node:
                break
            if isinstance(node[key], Located):
                node = node[key]
                target_key = None
            else:
                target_key = key
                break
        if node is None:
            return ConfigError(message)
        return node.error(message, target_key)

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p


def parse_config(text: str, source: str = "<config>", base_dir: Path | str = ".") -> RunConfig:
    doc = parse_yaml(text, source)
    if not isinstance(doc, Located):
        raise ConfigError("top level must be a mapping", 1, 1, source)
    doc.only(_TOP_KEYS, "the configuration")
    version = doc.require("schema_version", "the configuration")
    if version != SCHEMA_VERSION:
        raise doc.error(f"unsupported schema_version {version!r}; this build reads {SCHEMA_VERSION}",
                        "schema_version")
    sections = {}
    for name, allowed in _SECTION_KEYS.items():
        sec = doc.section(name, f"section {name!r}")
        if sec is not None:
            sec.only(allowed, f"section {name!r}")
            sections[name] = plain(sec)
    for name in ("model",):
        sec = doc.section(name, "section 'model'")
        if sec is not None:
            sections[name] = plain(sec)
    if "coefficients" in doc:
        if not isinstance(doc["coefficients"], str):
            raise doc.error("coefficients must be a file path", "coefficients")
        sections["coefficients"] = doc["coefficients"]
    return RunConfig(int(version), sections, doc, Path(base_dir))


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read configuration: {exc.strerror}", source=str(path)) from None
    return parse_config(text, str(path), path.parent)


def dump_config(sections: dict) -> str:
    doc = {"schema_version": SCHEMA_VERSION, **sections}
    return yaml.safe_dump(doc, sort_keys=False)
