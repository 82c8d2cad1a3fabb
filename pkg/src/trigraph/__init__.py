"""Three-tier knowledge graph construction and tag-guided retrieval."""

__version__ = "0.1.0"
