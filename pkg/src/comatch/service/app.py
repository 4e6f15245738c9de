"""HTTP API for interactive collaborative matching sessions.

Routes live under /api/v1. The loaded prototype model and corpus are
immutable and shared; per-session mutation is serialized by a session
lock. Confusion matrices are exposed so clients can show how much the
system trusts the human in each context.
"""

from __future__ import annotations

import threading
from pathlib import Path
from typing import Optional

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from fastapi.staticfiles import StaticFiles

from .. import corpus as corpus_mod
from ..embedding import EmbeddingConfig, embed_sentence, import_embeddings
from ..errors import ComatchError, ConfigError
from ..matcher import category_breakdown, match_pair
from ..model import (
    CasePair,
    CategorySet,
    Document,
    FusedDecision,
    HumanDecision,
    MachineDecision,
    PrototypeModel,
    Sentence,
    SentenceRef,
)
from ..prototypes import assign_nearest, load_model
from ..simulation import MachineSimConfig, derive_seed, simulate_machine
from .schemas import (
    CategorySimilarity,
    CreateSessionRequest,
    DecisionIn,
    DecisionsRequest,
    DecisionsResponse,
    FusedSchema,
    HealthResponse,
    MatchRequest,
    MatchResponse,
    ModelSummary,
    PairSummary,
    SentenceStateSchema,
    SessionSchema,
    SessionSummary,
)
from .sessions import Session, SessionStore


class ServiceState:
    def __init__(
        self,
        model: Optional[PrototypeModel],
        pairs: list[CasePair],
        embeddings: dict[SentenceRef, np.ndarray],
        categories: Optional[CategorySet],
        machine_accuracy: float,
        seed: int,
        data_dir: Optional[str],
        relation_count: int = 3,
        relation_thresholds: tuple[float, ...] = (0.45, 0.7),
        decision_log_path: Optional[str] = None,
    ):
        self.model = model
        self.pairs = pairs
        self.embeddings = dict(embeddings)
        self.machine_accuracy = machine_accuracy
        self.seed = seed
        self.relation_count = relation_count
        self.relation_thresholds = relation_thresholds
        self.store = SessionStore(data_dir)
        self.embed_lock = threading.Lock()
        # Off by default: live decisions can optionally be appended as
        # decision-log records for a later refit (no online EM here).
        self.decision_log_path = decision_log_path
        self.decision_log_lock = threading.Lock()
        if categories is not None:
            self.categories = categories
        elif model is not None:
            c = model.confusions[0].size
            names = ["not_key"] + [f"key_{i}" for i in range(1, c)]
            self.categories = CategorySet(tuple(names))
        else:
            self.categories = CategorySet(("not_key", "key"))

    def embedding_for(self, doc: Document, index: int) -> np.ndarray:
        ref = SentenceRef(doc.doc_id, index)
        if ref in self.embeddings:
            return self.embeddings[ref]
        if self.model is None:
            raise ConfigError("no embeddings available and no model to size an embedder")
        cfg = EmbeddingConfig(dimension=max(self.model.dimension, 8), seed=0)
        vec = embed_sentence(doc, index, cfg)
        if vec.size != self.model.dimension:
            raise ConfigError(
                f"cannot embed ad-hoc sentences: model dimension {self.model.dimension} "
                "is below the text embedder's minimum"
            )
        with self.embed_lock:
            self.embeddings[ref] = vec
        return vec


def create_app(
    model_path: Optional[str] = None,
    corpus_path: Optional[str] = None,
    embeddings_path: Optional[str] = None,
    truth_path: Optional[str] = None,
    data_dir: Optional[str] = None,
    machine_accuracy: float = 0.75,
    seed: int = 0,
    ui_dir: Optional[str] = None,
    model: Optional[PrototypeModel] = None,
    pairs: Optional[list[CasePair]] = None,
    embeddings: Optional[dict[SentenceRef, np.ndarray]] = None,
    categories: Optional[CategorySet] = None,
    decision_log_path: Optional[str] = None,
) -> FastAPI:
    if model is None and model_path is not None:
        model = load_model(model_path)
    if pairs is None and corpus_path is not None:
        pairs = corpus_mod.load_corpus(corpus_path)
    if embeddings is None and embeddings_path is not None:
        if model is None:
            raise ConfigError("embeddings need a model to validate their dimension")
        embeddings = import_embeddings(embeddings_path, model.dimension)
    relation_count, thresholds = 3, (0.45, 0.7)
    if truth_path is not None:
        truth = corpus_mod.load_truth(truth_path)
        categories = categories or truth.categories
        relation_count = truth.relation_count
        thresholds = truth.relation_thresholds

    state = ServiceState(
        model=model,
        pairs=pairs or [],
        embeddings=embeddings or {},
        categories=categories,
        machine_accuracy=machine_accuracy,
        seed=seed,
        data_dir=data_dir,
        relation_count=relation_count,
        relation_thresholds=thresholds,
        decision_log_path=decision_log_path,
    )

    app = FastAPI(title="comatch", version="0.1.0")
    app.state.comatch = state
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    api = "/api/v1"

    def _session_or_404(session_id: str) -> Session:
        session = state.store.get(session_id)
        if session is None:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id}")
        return session

    def _fused_schema(session: Session, ref: SentenceRef) -> FusedSchema:
        fused = session.fused[ref]
        prototype = session.prototype[ref]
        human = session.human[ref]
        row = state.model.confusions[prototype].likelihood_row(human.label)
        return FusedSchema(
            doc_id=ref.doc_id,
            index=ref.index,
            posterior=[float(x) for x in fused.posterior],
            argmax_label=fused.argmax_label,
            fallback_used=fused.fallback_used,
            prototype=prototype,
            confusion_row=[float(x) for x in row],
        )

    def _session_schema(session: Session) -> SessionSchema:
        sentences = []
        for doc in (session.pair.source, session.pair.target):
            for s in doc.sentences:
                ref = s.ref
                human = session.human.get(ref)
                sentences.append(
                    SentenceStateSchema(
                        doc_id=ref.doc_id,
                        index=ref.index,
                        text=s.text,
                        machine_probs=[float(x) for x in session.machine[ref].probs],
                        prototype=session.prototype[ref],
                        human_label=human.label if human else None,
                        fused=_fused_schema(session, ref) if ref in session.fused else None,
                    )
                )
        return SessionSchema(
            session_id=session.session_id,
            source_doc=session.pair.source.doc_id,
            target_doc=session.pair.target.doc_id,
            sentences=sentences,
            relation=session.relation,
            score=session.score,
            created_at=session.created_at,
            updated_at=session.updated_at,
        )

    @app.get(f"{api}/healthz", response_model=HealthResponse)
    @app.get("/healthz", response_model=HealthResponse, include_in_schema=False)
    def healthz():
        return HealthResponse(
            status="ok" if state.model is not None else "degraded",
            model_loaded=state.model is not None,
            sessions=len(state.store),
        )

    @app.get(f"{api}/model", response_model=ModelSummary)
    def model_summary():
        if state.model is None:
            raise HTTPException(status_code=503, detail="model not loaded")
        return ModelSummary(
            prototypes=state.model.prototype_count,
            dimension=state.model.dimension,
            confusions=[c.to_list() for c in state.model.confusions],
            config=state.model.config,
            categories=list(state.categories.names),
            importance_rank=list(state.categories.importance_rank),
        )

    @app.get(f"{api}/pairs", response_model=list[PairSummary])
    def list_pairs():
        return [
            PairSummary(
                pair_index=i,
                source_doc=p.source.doc_id,
                target_doc=p.target.doc_id,
                sentences=len(p.source.sentences) + len(p.target.sentences),
            )
            for i, p in enumerate(state.pairs)
        ]

    @app.get(f"{api}/sessions", response_model=list[SessionSummary])
    def list_sessions():
        out = []
        for session in state.store.all():
            out.append(
                SessionSummary(
                    session_id=session.session_id,
                    source_doc=session.pair.source.doc_id,
                    target_doc=session.pair.target.doc_id,
                    marked=len(session.fused),
                    total=len(session.refs()),
                    relation=session.relation,
                )
            )
        return sorted(out, key=lambda s: s.session_id)

    @app.post(f"{api}/sessions", response_model=SessionSchema, status_code=201)
    def create_session(request: CreateSessionRequest):
        if state.model is None:
            raise HTTPException(status_code=503, detail="model not loaded")
        pair = _resolve_pair(request)
        try:
            machine, prototype = _prepare_pair(pair)
        except ComatchError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        session = Session(
            session_id=state.store.new_id(),
            pair=pair,
            machine=machine,
            prototype=prototype,
        )
        state.store.add(session)
        return _session_schema(session)

    def _resolve_pair(request: CreateSessionRequest) -> CasePair:
        if request.pair_index is not None:
            if not (0 <= request.pair_index < len(state.pairs)):
                raise HTTPException(status_code=400, detail=f"pair_index out of range (have {len(state.pairs)} pairs)")
            return state.pairs[request.pair_index]
        if request.pair is None:
            raise HTTPException(status_code=400, detail="provide either pair or pair_index")
        try:
            source = Document(
                doc_id=request.pair.source.doc_id,
                sentences=tuple(
                    Sentence(request.pair.source.doc_id, i, s.text, s.label)
                    for i, s in enumerate(request.pair.source.sentences)
                ),
            )
            target = Document(
                doc_id=request.pair.target.doc_id,
                sentences=tuple(
                    Sentence(request.pair.target.doc_id, i, s.text, s.label)
                    for i, s in enumerate(request.pair.target.sentences)
                ),
            )
            return CasePair(source, target, request.pair.relation)
        except ComatchError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc

    def _prepare_pair(pair: CasePair):
        c = state.categories.count
        machine: dict[SentenceRef, MachineDecision] = {}
        prototype: dict[SentenceRef, int] = {}
        for doc in (pair.source, pair.target):
            labels = [s.true_label for s in doc.sentences]
            refs = [s.ref for s in doc.sentences]
            if any(l is None or not (0 <= l < c) for l in labels):
                raise ConfigError(
                    "machine source is the simulator, which needs labeled sentences; "
                    "create sessions from corpus pairs or provide labels"
                )
            cfg = MachineSimConfig(
                target_accuracy=state.machine_accuracy,
                seed=derive_seed("session-machine", state.seed, doc.doc_id),
            )
            _, decisions = simulate_machine(labels, cfg, c, refs=refs)
            for s, decision in zip(doc.sentences, decisions):
                machine[s.ref] = decision
                prototype[s.ref] = assign_nearest(state.embedding_for(doc, s.index), state.model.centroids)
        return machine, prototype

    @app.get(f"{api}/sessions/{{session_id}}", response_model=SessionSchema)
    def get_session(session_id: str):
        return _session_schema(_session_or_404(session_id))

    @app.put(f"{api}/sessions/{{session_id}}/decisions", response_model=DecisionsResponse)
    def put_decisions(session_id: str, request: DecisionsRequest | list[DecisionIn]):
        if state.model is None:
            raise HTTPException(status_code=503, detail="model not loaded")
        session = _session_or_404(session_id)
        submitted = request if isinstance(request, list) else request.decisions
        c = state.categories.count
        with session.lock:
            valid_refs = set(session.refs())
            decisions = []
            for d in submitted:
                ref = SentenceRef(d.doc_id, d.index)
                if ref not in valid_refs:
                    raise HTTPException(status_code=422, detail=f"unknown sentence {ref} in this session")
                if d.label >= c:
                    raise HTTPException(status_code=422, detail=f"label {d.label} out of range for {c} categories")
                decisions.append(HumanDecision(ref, d.label))
            fused = [session.apply_decision(h, state.model) for h in decisions]
            state.store.record_decisions(session, decisions, fused)
            _append_decision_records(session, decisions)
            return DecisionsResponse(
                session_id=session.session_id,
                fused=[_fused_schema(session, h.sentence_ref) for h in decisions],
            )

    def _append_decision_records(session: Session, decisions: list[HumanDecision]) -> None:
        if state.decision_log_path is None:
            return
        import json as _json
        from pathlib import Path as _Path

        with state.decision_log_lock:
            path = _Path(state.decision_log_path)
            new_file = not path.exists() or path.stat().st_size == 0
            with open(path, "a", encoding="utf-8") as fh:
                if new_file:
                    header = {
                        "dimension": state.model.dimension,
                        "categories": list(state.categories.names),
                        "importance_rank": list(state.categories.importance_rank),
                    }
                    fh.write(_json.dumps(header) + "\n")
                for human in decisions:
                    ref = human.sentence_ref
                    record = {
                        "doc_id": ref.doc_id,
                        "index": ref.index,
                        "embedding": [float(x) for x in state.embeddings[ref]],
                        "human_label": human.label,
                        "machine_probs": [float(p) for p in session.machine[ref].probs],
                    }
                    fh.write(_json.dumps(record) + "\n")

    @app.post(f"{api}/sessions/{{session_id}}/match", response_model=MatchResponse)
    def post_match(session_id: str, request: MatchRequest = MatchRequest()):
        if state.model is None:
            raise HTTPException(status_code=503, detail="model not loaded")
        session = _session_or_404(session_id)
        with session.lock:
            unmarked = session.unmarked()
            filled = []
            if unmarked and request.finalize_unmarked != "machine":
                raise HTTPException(
                    status_code=409,
                    detail=f"{len(unmarked)} sentences are unmarked; pass finalize_unmarked='machine' to fill them",
                )
            decisions: dict[SentenceRef, FusedDecision] = dict(session.fused)
            for ref in unmarked:
                probs = session.machine[ref].probs
                decisions[ref] = FusedDecision(ref, probs.copy())
                filled.append({"doc_id": ref.doc_id, "index": ref.index})
            fused_source = [decisions[s.ref] for s in session.pair.source.sentences]
            fused_target = [decisions[s.ref] for s in session.pair.target.sentences]
            import warnings as _warnings

            from ..errors import DegenerateDataWarning

            with _warnings.catch_warnings():
                _warnings.simplefilter("ignore", DegenerateDataWarning)
                relation, score = match_pair(
                    session.pair,
                    fused_source,
                    fused_target,
                    state.embeddings,
                    relation_count=state.relation_count,
                    thresholds=state.relation_thresholds,
                )
                breakdown = category_breakdown(fused_source, fused_target, state.embeddings)
            session.relation = relation
            session.score = score
            session.updated_at = session.updated_at
            state.store.record_match(session)
            return MatchResponse(
                session_id=session.session_id,
                relation=relation,
                score=score,
                per_category=[CategorySimilarity(**row) for row in breakdown],
                machine_filled=filled,
            )

    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
