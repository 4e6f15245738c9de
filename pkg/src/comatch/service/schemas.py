"""Request/response models for the HTTP API."""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field


class SentenceSchema(BaseModel):
    text: str
    label: Optional[int] = None


class DocumentSchema(BaseModel):
    doc_id: str
    sentences: list[SentenceSchema]


class PairSchema(BaseModel):
    source: DocumentSchema
    target: DocumentSchema
    relation: Optional[int] = None


class CreateSessionRequest(BaseModel):
    """Either an inline pair or an index into the loaded corpus."""

    pair: Optional[PairSchema] = None
    pair_index: Optional[int] = None


class MachineDecisionSchema(BaseModel):
    doc_id: str
    index: int
    probs: list[float]


class DecisionIn(BaseModel):
    doc_id: str
    index: int
    label: int = Field(ge=0)


class DecisionsRequest(BaseModel):
    decisions: list[DecisionIn]


class FusedSchema(BaseModel):
    doc_id: str
    index: int
    posterior: list[float]
    argmax_label: int
    fallback_used: bool
    prototype: int
    confusion_row: list[float]


class DecisionsResponse(BaseModel):
    session_id: str
    fused: list[FusedSchema]


class MatchRequest(BaseModel):
    finalize_unmarked: Optional[str] = None


class CategorySimilarity(BaseModel):
    category: int
    mass_source: float
    mass_target: float
    similarity: Optional[float]


class MatchResponse(BaseModel):
    session_id: str
    relation: int
    score: float
    per_category: list[CategorySimilarity]
    machine_filled: list[dict]


class SentenceStateSchema(BaseModel):
    doc_id: str
    index: int
    text: str
    machine_probs: list[float]
    prototype: int
    human_label: Optional[int] = None
    fused: Optional[FusedSchema] = None


class SessionSchema(BaseModel):
    session_id: str
    source_doc: str
    target_doc: str
    sentences: list[SentenceStateSchema]
    relation: Optional[int] = None
    score: Optional[float] = None
    created_at: str
    updated_at: str


class SessionSummary(BaseModel):
    session_id: str
    source_doc: str
    target_doc: str
    marked: int
    total: int
    relation: Optional[int] = None


class ModelSummary(BaseModel):
    prototypes: int
    dimension: int
    confusions: list[list[list[float]]]
    config: dict
    categories: list[str]
    importance_rank: list[int]


class PairSummary(BaseModel):
    pair_index: int
    source_doc: str
    target_doc: str
    sentences: int


class HealthResponse(BaseModel):
    status: str
    model_loaded: bool
    sessions: int
