"""LLM text enhancement: prompts, wire clients, budget, cache and the gate."""

from .augment import EnhancementPolicy, Enhancer, maybe_enhance, populate_cache
from .clients import (
    LLM_CALLS,
    ChatClient,
    EmbeddingClient,
    EmbeddingError,
    HashingEmbedder,
    LLMError,
    MockLLM,
    call_llm,
    embed_text,
    embed_texts,
)
from .prompts import PromptCatalog, PromptTemplate, render_prompt
from .store import BudgetLedger, EnhancementCache, EnhancementRecord, prompt_hash

__all__ = [
    "BudgetLedger",
    "ChatClient",
    "EmbeddingClient",
    "EmbeddingError",
    "EnhancementCache",
    "EnhancementPolicy",
    "EnhancementRecord",
    "Enhancer",
    "HashingEmbedder",
    "LLMError",
    "LLM_CALLS",
    "MockLLM",
    "PromptCatalog",
    "PromptTemplate",
    "call_llm",
    "embed_text",
    "embed_texts",
    "maybe_enhance",
    "populate_cache",
    "prompt_hash",
    "render_prompt",
]
