"""Session state and crash-safe persistence.

Each session wraps one case pair: machine decisions are computed once at
creation and frozen; human decisions arrive incrementally and are fused
immediately through the stored prototype's confusion matrix
(last-write-wins per sentence). Mutations append events to a JSON Lines
log that is replayed on restart.
"""

from __future__ import annotations

import json
import threading
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

from ..model import (
    CasePair,
    FusedDecision,
    HumanDecision,
    MachineDecision,
    PrototypeModel,
    SentenceRef,
)
from ..fusion import fuse


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


@dataclass
class Session:
    session_id: str
    pair: CasePair
    machine: dict[SentenceRef, MachineDecision]
    prototype: dict[SentenceRef, int]
    human: dict[SentenceRef, HumanDecision] = field(default_factory=dict)
    fused: dict[SentenceRef, FusedDecision] = field(default_factory=dict)
    relation: Optional[int] = None
    score: Optional[float] = None
    created_at: str = field(default_factory=_now)
    updated_at: str = field(default_factory=_now)
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def refs(self) -> list[SentenceRef]:
        return [s.ref for doc in (self.pair.source, self.pair.target) for s in doc.sentences]

    def unmarked(self) -> list[SentenceRef]:
        return [r for r in self.refs() if r not in self.fused]

    def apply_decision(self, human: HumanDecision, model: PrototypeModel) -> FusedDecision:
        """Fuse one human decision; replaces any earlier decision for the
        same sentence. New decisions invalidate a stored verdict."""
        ref = human.sentence_ref
        fused = fuse(self.machine[ref], human, model.confusions[self.prototype[ref]])
        self.human[ref] = human
        self.fused[ref] = fused
        self.relation = None
        self.score = None
        self.updated_at = _now()
        return fused

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "pair": self.pair.to_dict(),
            "machine": [m.to_dict() for m in self.machine.values()],
            "prototype": [
                {"doc_id": r.doc_id, "index": r.index, "prototype": p} for r, p in self.prototype.items()
            ],
            "human": [h.to_dict() for h in self.human.values()],
            "fused": [f.to_dict() for f in self.fused.values()],
            "relation": self.relation,
            "score": self.score,
            "created_at": self.created_at,
            "updated_at": self.updated_at,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Session":
        machine = {}
        for row in d["machine"]:
            m = MachineDecision.from_dict(row)
            machine[m.sentence_ref] = m
        human = {}
        for row in d.get("human", []):
            h = HumanDecision.from_dict(row)
            human[h.sentence_ref] = h
        fused = {}
        for row in d.get("fused", []):
            f = FusedDecision.from_dict(row)
            fused[f.sentence_ref] = f
        return cls(
            session_id=d["session_id"],
            pair=CasePair.from_dict(d["pair"]),
            machine=machine,
            prototype={
                SentenceRef(r["doc_id"], r["index"]): r["prototype"] for r in d["prototype"]
            },
            human=human,
            fused=fused,
            relation=d.get("relation"),
            score=d.get("score"),
            created_at=d.get("created_at", _now()),
            updated_at=d.get("updated_at", _now()),
        )


class SessionStore:
    """In-memory sessions with an append-only event log."""

    def __init__(self, data_dir: Optional[str] = None):
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()
        self._log_path: Optional[Path] = None
        self._log_lock = threading.Lock()
        if data_dir is not None:
            directory = Path(data_dir)
            directory.mkdir(parents=True, exist_ok=True)
            self._log_path = directory / "sessions.jsonl"
            self._replay()

    def _replay(self) -> None:
        if self._log_path is None or not self._log_path.exists():
            return
        with open(self._log_path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                event = json.loads(line)
                kind = event.get("event")
                if kind == "create":
                    session = Session.from_dict(event["session"])
                    self._sessions[session.session_id] = session
                elif kind == "decisions":
                    session = self._sessions.get(event["session_id"])
                    if session is None:
                        continue
                    for row in event["human"]:
                        h = HumanDecision.from_dict(row)
                        session.human[h.sentence_ref] = h
                    for row in event["fused"]:
                        f = FusedDecision.from_dict(row)
                        session.fused[f.sentence_ref] = f
                    session.relation = None
                    session.score = None
                    session.updated_at = event.get("at", session.updated_at)
                elif kind == "match":
                    session = self._sessions.get(event["session_id"])
                    if session is None:
                        continue
                    session.relation = event["relation"]
                    session.score = event["score"]
                    session.updated_at = event.get("at", session.updated_at)

    def _append(self, event: dict) -> None:
        if self._log_path is None:
            return
        with self._log_lock:
            with open(self._log_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(event) + "\n")
                fh.flush()

    def new_id(self) -> str:
        return uuid.uuid4().hex

    def add(self, session: Session) -> None:
        with self._lock:
            self._sessions[session.session_id] = session
        self._append({"event": "create", "at": session.created_at, "session": session.to_dict()})

    def get(self, session_id: str) -> Optional[Session]:
        with self._lock:
            return self._sessions.get(session_id)

    def all(self) -> list[Session]:
        with self._lock:
            return list(self._sessions.values())

    def __len__(self) -> int:
        with self._lock:
            return len(self._sessions)

    def record_decisions(self, session: Session, human: list[HumanDecision], fused: list[FusedDecision]) -> None:
        self._append(
            {
                "event": "decisions",
                "at": session.updated_at,
                "session_id": session.session_id,
                "human": [h.to_dict() for h in human],
                "fused": [f.to_dict() for f in fused],
            }
        )

    def record_match(self, session: Session) -> None:
        self._append(
            {
                "event": "match",
                "at": session.updated_at,
                "session_id": session.session_id,
                "relation": session.relation,
                "score": session.score,
            }
        )
