"""Pipeline configuration: one YAML file, strict schema, CLI overrides."""

from __future__ import annotations

from importlib import resources
from pathlib import Path
from typing import Any, Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ProviderSettings(_Section):
    chat: Literal["stub", "openai"] = "stub"
    embedding: Literal["stub", "openai"] = "stub"
    chat_model: str = "gpt-4o-mini"
    embedding_model: str = "text-embedding-3-large"
    base_url: str = "https://api.openai.com/v1"
    api_key_env: str = "OPENAI_API_KEY"
    dimension: int = Field(64, ge=1, le=8192)
    seed: int = 0
    stub_script: Optional[Path] = None


class TokenSettings(_Section):
    scheme: Literal["bytes4", "whitespace"] = "bytes4"
    max_tokens: int = Field(8192, ge=16)
    chunk_reserve: int = Field(1024, ge=0)

    @model_validator(mode="after")
    def _reserve_fits(self) -> TokenSettings:
        if self.chunk_reserve >= self.max_tokens:
            raise ValueError("chunk_reserve must be smaller than max_tokens")
        return self

    @property
    def chunk_budget(self) -> int:
        return self.max_tokens - self.chunk_reserve


class ChunkingSettings(_Section):
    window: int = Field(5, ge=1, le=64)


class LinkingSettings(_Section):
    threshold: float = Field(0.5, gt=0.0, le=1.0)
    max_links: int = Field(1, ge=1)
    dense_pair_limit: int = Field(12, ge=2)
    sparse_pair_cosine: float = Field(0.3, ge=-1.0, le=1.0)
    record_separator: str = Field("|", min_length=1)
    vocab_default_type: str = "Conceptual Entity"


class HierarchySettings(_Section):
    threshold_floor: float = Field(0.5, ge=0.0, le=1.0)
    percentile: int = Field(80, ge=1, le=100)
    max_layers: int = Field(12, ge=1, le=64)


class RetrievalSettings(_Section):
    top_n: int = Field(60, ge=1)
    hops: int = Field(16, ge=0)
    refine_depth: int = Field(4, ge=0, le=64)


class TagCategorySettings(_Section):
    name: str = Field(min_length=1)
    description: str = ""


def _default_tags() -> list[TagCategorySettings]:
    from .taghier import DEFAULT_CATEGORIES

    return [TagCategorySettings(name=c.name, description=c.description) for c in DEFAULT_CATEGORIES]


class PathSettings(_Section):
    corpus: Optional[Path] = None
    literature: Optional[Path] = None
    vocab_concepts: Optional[Path] = None
    vocab_relations: Optional[Path] = None
    semantic_types: Optional[Path] = None
    snapshot: Path = Path("graph.snapshot")


class PipelineConfig(_Section):
    schema_version: Literal[1] = SCHEMA_VERSION
    providers: ProviderSettings = ProviderSettings()
    tokens: TokenSettings = TokenSettings()
    chunking: ChunkingSettings = ChunkingSettings()
    linking: LinkingSettings = LinkingSettings()
    hierarchy: HierarchySettings = HierarchySettings()
    retrieval: RetrievalSettings = RetrievalSettings()
    tag_schema: list[TagCategorySettings] = Field(default_factory=_default_tags, min_length=1)
    paths: PathSettings = PathSettings()
    workers: int = Field(1, ge=1, le=64)

    def schema_obj(self):
        from .taghier import TagSchema

        return TagSchema.from_pairs((c.name, c.description) for c in self.tag_schema)

    def defaults_view(self) -> dict[str, Any]:
        """The hyperparameters checked against the bundled defaults manifest."""
        return {
            "window": self.chunking.window,
            "link_threshold": self.linking.threshold,
            "merge_threshold_floor": self.hierarchy.threshold_floor,
            "top_n": self.retrieval.top_n,
            "hops": self.retrieval.hops,
            "refine_depth": self.retrieval.refine_depth,
            "max_layers": self.hierarchy.max_layers,
        }


def defaults_manifest() -> dict[str, Any]:
    text = resources.files("trigraph.data").joinpath("defaults_manifest.yaml").read_text(encoding="utf-8")
    return {k: v["value"] for k, v in yaml.safe_load(text).items()}


def _set_path(data: dict[str, Any], dotted: str, value: Any) -> None:
    keys = dotted.split(".")
    node = data
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot override {dotted!r}: {k!r} is not a section")
    node[keys[-1]] = value


def _resolve_paths(data: dict[str, Any], base: Path) -> None:
    for section, key in [("providers", "stub_script")] + [("paths", k) for k in PathSettings.model_fields]:
        value = (data.get(section) or {}).get(key)
        if value is not None and not Path(value).is_absolute():
            data[section][key] = str(base / value)


def load_config(path: str | Path | None = None, overrides: list[str] | None = None) -> PipelineConfig:
    """Load ``path`` (or defaults), then apply ``section.key=value`` overrides.

    Relative paths in the file resolve against the file's directory.
    """
    data: dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        try:
            loaded = yaml.safe_load(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
        if loaded is not None and not isinstance(loaded, dict):
            raise ConfigError(f"config {path} must be a mapping")
        data = loaded or {}
        _resolve_paths(data, path.parent)
    for item in overrides or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        _set_path(data, key.strip(), yaml.safe_load(raw))
    try:
        return PipelineConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from None


def dump_config(cfg: PipelineConfig) -> str:
    return yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=False)
