"""Blinded listening-test HTTP service.

Raters get a seeded, condition-interleaved playlist of opaque clip
tokens; audio is served by token with no filename or condition metadata;
ratings and transcripts are persisted append-only before they are
acknowledged.  Aggregated results de-blind on the server side only.

Endpoints: ``POST /sessions``, ``GET /clips/{token}``, ``POST /ratings``,
``POST /transcripts``, ``GET /experiments/{id}/results``.
"""

from __future__ import annotations

import hashlib
import json
import random
import secrets
import time
from dataclasses import dataclass
from pathlib import Path

from fastapi import FastAPI, HTTPException, Response
from pydantic import BaseModel, Field

from ..evaluate import MOS_SCALES, cer, summarize_scores
from .storage import RecordLog


@dataclass(frozen=True)
class ClipInfo:
    clip_id: str
    condition: str
    path: Path
    sha256: str
    reference_text: str = ""
    sound: int = 0          # 1 or 2 for the two evaluation utterances


@dataclass
class Experiment:
    experiment_id: str
    clips: dict[str, ClipInfo]                  # clip_id -> info
    rows: dict[str, list[str]]                  # condition -> ordered clip ids

    @property
    def conditions(self) -> list[str]:
        return sorted(self.rows)


def load_experiment(path, references: dict | None = None,
                    experiment_id: str | None = None) -> Experiment:
    """Read a published clip listing (as written by the study runners).

    ``references`` maps clip paths (as listed) to
    ``{"text": ..., "sound": 1|2}`` for the clarity display and error-rate
    scoring; entries may also live in the file itself under "references".
    """
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    refs = dict(data.get("references", {}))
    if references:
        refs.update(references)
    exp_id = experiment_id or data.get("experiment") or path.stem
    base = path.parent
    clips: dict[str, ClipInfo] = {}
    rows: dict[str, list[str]] = {}
    for condition in sorted(data["rows"]):
        rows[condition] = []
        for rel in data["rows"][condition]:
            file_path = (base / rel).resolve()
            digest = hashlib.sha256(file_path.read_bytes()).hexdigest()
            clip_id = digest[:16]
            ref = refs.get(rel, {})
            clips[clip_id] = ClipInfo(clip_id, condition, file_path, digest,
                                      ref.get("text", ""),
                                      int(ref.get("sound", 0)))
            rows[condition].append(clip_id)
    if not clips:
        raise ValueError(f"experiment {exp_id!r} has no published clips")
    return Experiment(exp_id, clips, rows)


@dataclass
class SessionState:
    session_id: str
    rater_id: str
    experiment_id: str
    seed: int
    playlist: list[str]                 # ordered tokens
    tokens: dict[str, str]              # token -> clip_id
    lock: str

    def to_record(self) -> dict:
        return {"type": "session", "session_id": self.session_id,
                "rater_id": self.rater_id, "experiment": self.experiment_id,
                "seed": self.seed, "playlist": self.playlist,
                "tokens": self.tokens, "lock": self.lock,
                "ts": time.time()}

    @classmethod
    def from_record(cls, rec: dict) -> "SessionState":
        return cls(rec["session_id"], rec["rater_id"], rec["experiment"],
                   rec["seed"], list(rec["playlist"]), dict(rec["tokens"]),
                   rec.get("lock", ""))


def build_playlist(exp: Experiment, rater_id: str, seed: int) -> list[str]:
    """Seeded, condition-interleaved clip order.

    Conditions rotate by a rater-dependent offset (a Latin-square style
    assignment across raters) and clips round-robin through the rotated
    condition order, so no condition clusters at the start for everyone.
    Same (rater, experiment, seed) always yields the same order.
    """
    conditions = exp.conditions
    k = len(conditions)
    rot = int(hashlib.sha256(f"{rater_id}:{seed}".encode()).hexdigest(), 16) % k
    rotated = conditions[rot:] + conditions[:rot]
    rng = random.Random(f"{exp.experiment_id}:{rater_id}:{seed}")
    per_condition = {c: rng.sample(exp.rows[c], len(exp.rows[c]))
                     for c in rotated}
    playlist = []
    depth = max(len(ids) for ids in per_condition.values())
    for i in range(depth):
        for c in rotated:
            if i < len(per_condition[c]):
                playlist.append(per_condition[c][i])
    return playlist


def _session_id(rater_id: str, experiment_id: str, seed: int) -> str:
    return hashlib.sha256(f"{rater_id}:{experiment_id}:{seed}".encode()).hexdigest()[:16]


def _token(session_id: str, clip_id: str) -> str:
    return hashlib.sha256(f"{session_id}:{clip_id}".encode()).hexdigest()[:20]


# ---------------------------------------------------------------------------
# request/response schemas (rater-facing payloads carry no condition info)


class SessionRequest(BaseModel):
    rater_id: str = Field(min_length=1)
    experiment: str
    seed: int = 0
    takeover: bool = False


class PlaylistItem(BaseModel):
    token: str
    reference_text: str = ""


class SessionResponse(BaseModel):
    session_id: str
    experiment: str
    lock: str
    playlist: list[PlaylistItem]
    completed: list[str]


class RatingSubmission(BaseModel):
    session_id: str
    token: str
    scale: str
    score: int = Field(ge=1, le=5)


class TranscriptSubmission(BaseModel):
    session_id: str
    token: str
    text: str = ""


class Ack(BaseModel):
    status: str
    audit_entries: int


class AppState:
    def __init__(self, experiments: dict[str, Experiment], log: RecordLog):
        self.experiments = experiments
        self.log = log
        self.sessions: dict[str, SessionState] = {}
        for key, rec in log.effective().items():
            if key[0] == "session":
                self.sessions[rec["session_id"]] = SessionState.from_record(rec)

    # -- session bookkeeping --------------------------------------------------

    def completed_tokens(self, session: SessionState) -> list[str]:
        """Tokens with all three scales rated and a transcript submitted."""
        view = self.log.effective()
        done = []
        for token in session.playlist:
            scales = [("rating", session.session_id, token, s) for s in MOS_SCALES]
            if all(k in view for k in scales) and \
                    ("transcript", session.session_id, token) in view:
                done.append(token)
        return done

    def session_response(self, session: SessionState) -> SessionResponse:
        exp = self.experiments[session.experiment_id]
        items = [PlaylistItem(token=t,
                              reference_text=exp.clips[session.tokens[t]].reference_text)
                 for t in session.playlist]
        return SessionResponse(session_id=session.session_id,
                               experiment=session.experiment_id,
                               lock=session.lock, playlist=items,
                               completed=self.completed_tokens(session))

    def resolve(self, session_id: str, token: str):
        session = self.sessions.get(session_id)
        if session is None:
            raise HTTPException(403, "unknown session")
        clip_id = session.tokens.get(token)
        if clip_id is None:
            raise HTTPException(403, "token not in this session")
        return session, self.experiments[session.experiment_id].clips[clip_id]


def build_app(experiments, log: RecordLog) -> FastAPI:
    """Assemble the service around published experiments and a record log."""
    if isinstance(experiments, Experiment):
        experiments = {experiments.experiment_id: experiments}
    state = AppState(dict(experiments), log)
    app = FastAPI(title="listening-test service")
    app.state.listen = state

    @app.post("/sessions", response_model=SessionResponse)
    def create_session(req: SessionRequest) -> SessionResponse:
        exp = state.experiments.get(req.experiment)
        if exp is None:
            raise HTTPException(404, "unknown experiment")
        sid = _session_id(req.rater_id, req.experiment, req.seed)
        existing = state.sessions.get(sid)
        if existing is not None and not req.takeover:
            raise HTTPException(409, "session already active in another tab")
        playlist_ids = build_playlist(exp, req.rater_id, req.seed)
        tokens = {_token(sid, cid): cid for cid in playlist_ids}
        session = SessionState(sid, req.rater_id, req.experiment, req.seed,
                               [_token(sid, cid) for cid in playlist_ids],
                               tokens, secrets.token_hex(8))
        state.sessions[sid] = session
        log.append(session.to_record())
        return state.session_response(session)

    @app.get("/sessions/{session_id}", response_model=SessionResponse)
    def get_session(session_id: str) -> SessionResponse:
        session = state.sessions.get(session_id)
        if session is None:
            raise HTTPException(403, "unknown session")
        return state.session_response(session)

    @app.get("/clips/{token}")
    def serve_clip(token: str) -> Response:
        for session in state.sessions.values():
            clip_id = session.tokens.get(token)
            if clip_id is not None:
                exp = state.experiments[session.experiment_id]
                data = exp.clips[clip_id].path.read_bytes()
                return Response(content=data, media_type="audio/wav")
        raise HTTPException(403, "unknown token")

    @app.post("/ratings", response_model=Ack)
    def submit_rating(sub: RatingSubmission) -> Ack:
        if sub.scale not in MOS_SCALES:
            raise HTTPException(422, "unknown scale")
        session, clip = state.resolve(sub.session_id, sub.token)
        record = {"type": "rating", "session_id": session.session_id,
                  "rater_id": session.rater_id,
                  "experiment": session.experiment_id, "token": sub.token,
                  "clip_id": clip.clip_id, "condition": clip.condition,
                  "scale": sub.scale, "score": sub.score, "ts": time.time()}
        log.append(record)
        key = ("rating", session.session_id, sub.token, sub.scale)
        return Ack(status="ok", audit_entries=log.audit_count(key))

    @app.post("/transcripts", response_model=Ack)
    def submit_transcript(sub: TranscriptSubmission) -> Ack:
        session, clip = state.resolve(sub.session_id, sub.token)
        record = {"type": "transcript", "session_id": session.session_id,
                  "rater_id": session.rater_id,
                  "experiment": session.experiment_id, "token": sub.token,
                  "clip_id": clip.clip_id, "condition": clip.condition,
                  "text": sub.text, "sound": clip.sound,
                  "reference_text": clip.reference_text, "ts": time.time()}
        log.append(record)
        key = ("transcript", session.session_id, sub.token)
        return Ack(status="ok", audit_entries=log.audit_count(key))

    @app.get("/experiments/{experiment_id}/results")
    def results(experiment_id: str) -> dict:
        return compute_results(log, experiment_id)

    return app


def compute_results(log: RecordLog, experiment_id: str) -> dict:
    """De-blinded aggregation recomputed from the raw persisted records."""
    view = log.effective()
    mos: dict[str, dict[str, list[int]]] = {}
    cers: dict[str, dict[int, list[float]]] = {}
    n_ratings = n_transcripts = 0
    for key, rec in sorted(view.items()):
        if rec.get("experiment") != experiment_id:
            continue
        if key[0] == "rating":
            mos.setdefault(rec["condition"], {}).setdefault(
                rec["scale"], []).append(int(rec["score"]))
            n_ratings += 1
        elif key[0] == "transcript":
            n_transcripts += 1
            ref = rec.get("reference_text") or ""
            sound = int(rec.get("sound") or 0)
            if ref and sound in (1, 2):
                cers.setdefault(rec["condition"], {}).setdefault(
                    sound, []).append(cer(ref, rec["text"]))

    mos_summary = {
        cond: {scale: summarize_scores(scores).__dict__
               for scale, scores in sorted(by.items())}
        for cond, by in sorted(mos.items())}
    cer_table = {}
    cer_detail = {}
    for cond, by in sorted(cers.items()):
        pair = []
        for sound in (1, 2):
            vals = by.get(sound, [])
            pair.append(sum(vals) / len(vals) if vals else None)
        cer_table[cond] = pair
        cer_detail[cond] = {f"sound{s}": by.get(s, []) for s in (1, 2)}
    return {"experiment": experiment_id, "mos": mos,
            "mos_summary": mos_summary, "cer": cer_table,
            "cer_detail": cer_detail, "n_ratings": n_ratings,
            "n_transcripts": n_transcripts}
