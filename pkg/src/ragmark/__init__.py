"""Keyed knowledge watermarks for RAG knowledge bases.

Embed owner-keyed entity-relation facts into a retrieval corpus, detect them
later through black-box queries against a suspect system, and measure how
well they survive adversarial cleanup.
"""

__version__ = "0.1.0"

from .kb import KnowledgeBase, TextRecord, add_record, load, mutate_text, save
from .retrieval import HashEmbedder, Retriever, hash_embed, top_k
from .watermark import OwnerKey, WatermarkGraph, WatermarkTuple, build_graph, watermark_query
from .injection import InjectionConfig, inject_all
from .verification import (
    InProcessSuspect,
    RemoteSuspect,
    VerificationReport,
    binomial_upper_pvalue,
    cdpa,
    cira,
    run_verification,
)

__all__ = [
    "__version__",
    "KnowledgeBase",
    "TextRecord",
    "add_record",
    "mutate_text",
    "save",
    "load",
    "HashEmbedder",
    "Retriever",
    "hash_embed",
    "top_k",
    "OwnerKey",
    "WatermarkGraph",
    "WatermarkTuple",
    "build_graph",
    "watermark_query",
    "InjectionConfig",
    "inject_all",
    "InProcessSuspect",
    "RemoteSuspect",
    "VerificationReport",
    "binomial_upper_pvalue",
    "cdpa",
    "cira",
    "run_verification",
]
