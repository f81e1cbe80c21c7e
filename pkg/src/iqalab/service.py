"""Session-based HTTP API for collecting subjective quality ratings.

`RatingService` is the behavior: observer sessions walk a per-observer
shuffled image queue, one rating per (observer, image), withdrawal keeps
partial data, and exports feed the subjective-score aggregation CSV
schema directly.  Every submission is appended to a JSON-lines log and
fsynced *before* it is acknowledged, so an acknowledged rating survives
a crash; a snapshot is written every SNAPSHOT_EVERY events to speed up
replay on restart.

`build_app` wraps the service in a FastAPI application:

    POST /sessions                  create a session
    GET  /sessions/{id}/next        current image + recent score history
    POST /sessions/{id}/ratings     submit a rating for the current image
    POST /sessions/{id}/withdraw    close the session early
    GET  /export/{set}.csv          ratings CSV for aggregation
    GET  /images/{id}               original image bytes (served verbatim)

All JSON responses carry a "schema_version" field.
"""

import json
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from .errors import (
    ConfigError,
    DuplicatePathError,
    MissingFileError,
    RangeError,
    SessionError,
)
from .mos import Rating, RatingTable
from .rng import RngStream, mix

SCHEMA_VERSION = 1
ACR_LABEL_SCORES = {1: 0.0, 2: 0.25, 3: 0.5, 4: 0.75, 5: 1.0}
HISTORY_WINDOW = 20
SNAPSHOT_EVERY = 50
IMAGE_SUFFIXES = (".png", ".ppm", ".pgm")

ACTIVE, COMPLETED, WITHDRAWN = "active", "completed", "withdrawn"


@dataclass
class Session:
    session_id: str
    observer_id: str
    image_set: str
    queue: list
    cursor: int = 0
    status: str = ACTIVE
    created_at: float = 0.0
    closed_at: float | None = None
    history: list = field(default_factory=list)  # submitted scores, oldest first

    def to_state(self) -> dict:
        return {
            "session_id": self.session_id,
            "observer_id": self.observer_id,
            "image_set": self.image_set,
            "queue": self.queue,
            "cursor": self.cursor,
            "status": self.status,
            "created_at": self.created_at,
            "closed_at": self.closed_at,
            "history": self.history,
        }

    @classmethod
    def from_state(cls, d: dict) -> "Session":
        return cls(**d)


class RatingService:
    """Image-set registry, session lifecycle, durable rating log."""

    def __init__(self, state_dir):
        self.state_dir = Path(state_dir)
        self.state_dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.RLock()
        self.image_sets: dict = {}      # set name -> ordered list of image ids
        self._image_paths: dict = {}    # image id -> Path
        self.sessions: dict = {}
        self.ratings: dict = {}         # (observer_id, image_id) -> Rating
        self._session_counter = 0
        self._events_applied = 0
        self._replay()

    # --- registration ----------------------------------------------------------

    def register_image_set(self, name: str, image_dir) -> list:
        """Register every image under image_dir; ids are file stems."""
        image_dir = Path(image_dir)
        if not image_dir.is_dir():
            raise MissingFileError(f"image directory not found: {image_dir}")
        files = sorted(p for p in image_dir.iterdir()
                       if p.suffix.lower() in IMAGE_SUFFIXES)
        if not files:
            raise MissingFileError(f"no images under {image_dir}")
        with self._lock:
            ids = []
            for p in files:
                image_id = p.stem
                known = self._image_paths.get(image_id)
                if known is not None and known != p:
                    raise DuplicatePathError(
                        f"image id {image_id!r} already registered from {known}")
                ids.append(image_id)
            for p, image_id in zip(files, ids):
                self._image_paths[image_id] = p
            self.image_sets[name] = ids
        return ids

    def image_path(self, image_id: str) -> Path:
        path = self._image_paths.get(image_id)
        if path is None:
            raise MissingFileError(f"unknown image id: {image_id}")
        return path

    # --- persistence ----------------------------------------------------------

    def _log_path(self) -> Path:
        return self.state_dir / "events.jsonl"

    def _snapshot_path(self) -> Path:
        return self.state_dir / "snapshot.json"

    def _commit(self, event: dict) -> None:
        """Durable append, then apply, then maybe snapshot — in that order.

        The fsync happens before the in-memory state changes, so an
        acknowledged event is always on disk; the snapshot is taken only
        after the event is applied, so its event counter never includes
        an event whose effect it is missing.
        """
        with open(self._log_path(), "a") as fh:
            fh.write(json.dumps(event, sort_keys=True) + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        self._apply_event(event)
        self._events_applied += 1
        if self._events_applied % SNAPSHOT_EVERY == 0:
            self._write_snapshot()

    def _write_snapshot(self) -> None:
        state = {
            "schema_version": SCHEMA_VERSION,
            "events_applied": self._events_applied,
            "session_counter": self._session_counter,
            "sessions": [s.to_state() for s in self.sessions.values()],
            "ratings": [[r.image_id, r.observer_id, r.score, r.timestamp]
                        for r in self.ratings.values()],
        }
        tmp = self._snapshot_path().with_suffix(".json.tmp")
        tmp.write_text(json.dumps(state, sort_keys=True))
        tmp.replace(self._snapshot_path())

    def _load_snapshot(self) -> int:
        path = self._snapshot_path()
        if not path.exists():
            return 0
        state = json.loads(path.read_text())
        self._session_counter = state["session_counter"]
        for s in state["sessions"]:
            self.sessions[s["session_id"]] = Session.from_state(s)
        for image_id, observer_id, score, ts in state["ratings"]:
            self.ratings[(observer_id, image_id)] = Rating(
                image_id, observer_id, score, ts)
        return int(state["events_applied"])

    def _replay(self) -> None:
        skip = self._load_snapshot()
        self._events_applied = skip
        if not self._log_path().exists():
            return
        with open(self._log_path()) as fh:
            for i, line in enumerate(fh):
                if i < skip or not line.strip():
                    continue
                self._apply_event(json.loads(line))
                self._events_applied += 1

    def _apply_event(self, event: dict) -> None:
        kind = event["kind"]
        if kind == "session":
            s = Session.from_state(event["session"])
            self.sessions[s.session_id] = s
            n = int(s.session_id.split("-")[1])
            self._session_counter = max(self._session_counter, n)
        elif kind == "rating":
            s = self.sessions[event["session_id"]]
            rating = Rating(event["image_id"], s.observer_id,
                            event["score"], event["timestamp"])
            self.ratings[(s.observer_id, event["image_id"])] = rating
            s.cursor += 1
            s.history.append(event["score"])
            if s.cursor == len(s.queue):
                s.status = COMPLETED
                s.closed_at = event["timestamp"]
        elif kind == "withdraw":
            s = self.sessions[event["session_id"]]
            s.status = WITHDRAWN
            s.closed_at = event["timestamp"]

    # --- session lifecycle ----------------------------------------------------------

    def create_session(self, observer_id: str, image_set: str,
                       shuffle_seed: int = 0) -> dict:
        if not observer_id:
            raise ConfigError("observer_id must be nonempty")
        ids = self.image_sets.get(image_set)
        if ids is None:
            raise MissingFileError(f"unknown image set: {image_set}")
        with self._lock:
            order = RngStream(
                mix(shuffle_seed, "session", image_set, observer_id)
            ).permutation(len(ids))
            queue = [ids[i] for i in order]
            self._session_counter += 1
            session = Session(
                session_id=f"s-{self._session_counter:06d}",
                observer_id=observer_id,
                image_set=image_set,
                queue=queue,
                created_at=time.time(),
            )
            # persisted before the response so a crash cannot lose the session
            self._commit({"kind": "session", "session": session.to_state()})
            return self._session_view(self.sessions[session.session_id])

    def _get_active(self, session_id: str) -> Session:
        session = self.sessions.get(session_id)
        if session is None:
            raise MissingFileError(f"unknown session: {session_id}")
        if session.status != ACTIVE:
            raise SessionError(f"session {session_id} is {session.status}")
        return session

    def _session_view(self, s: Session) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "session_id": s.session_id,
            "observer_id": s.observer_id,
            "image_set": s.image_set,
            "status": s.status,
            "total": len(s.queue),
            "cursor": s.cursor,
        }

    def next_item(self, session_id: str) -> dict:
        with self._lock:
            s = self._get_active(session_id)
            return {
                "schema_version": SCHEMA_VERSION,
                "session_id": s.session_id,
                "image_id": s.queue[s.cursor],
                "index": s.cursor,
                "total": len(s.queue),
                "history": s.history[-HISTORY_WINDOW:],
            }

    def submit_rating(self, session_id: str, image_id: str,
                      score: float | None = None, label: int | None = None,
                      timestamp: float | None = None) -> dict:
        with self._lock:
            s = self._get_active(session_id)
            if image_id != s.queue[s.cursor]:
                raise SessionError(
                    f"rating for {image_id!r} but the current item is "
                    f"{s.queue[s.cursor]!r}")
            if label is not None:
                if label not in ACR_LABEL_SCORES:
                    raise RangeError(f"discrete label must be 1..5, got {label}")
                mapped = ACR_LABEL_SCORES[label]
                if score is not None and score != mapped:
                    raise RangeError(
                        f"label {label} maps to {mapped}, got score {score}")
                score = mapped
            if score is None:
                raise RangeError("a score or a discrete label is required")
            if not 0.0 <= score <= 1.0:
                raise RangeError(f"score must be in [0, 1], got {score}")
            if (s.observer_id, image_id) in self.ratings:
                raise SessionError(
                    f"observer {s.observer_id!r} already rated {image_id!r}")
            timestamp = float(timestamp) if timestamp is not None else time.time()
            event = {"kind": "rating", "session_id": session_id,
                     "image_id": image_id, "score": float(score),
                     "timestamp": timestamp}
            self._commit(event)  # fsynced before the ack below
            return {
                "schema_version": SCHEMA_VERSION,
                "session_id": session_id,
                "image_id": image_id,
                "score": float(score),
                "rated": s.cursor,
                "total": len(s.queue),
                "status": s.status,
            }

    def withdraw(self, session_id: str) -> dict:
        with self._lock:
            s = self._get_active(session_id)
            self._commit({"kind": "withdraw", "session_id": session_id,
                          "timestamp": time.time()})
            return self._session_view(s)

    # --- export --------------------------------------------------------------------

    def ratings_for_set(self, image_set: str) -> RatingTable:
        if image_set not in self.image_sets:
            raise MissingFileError(f"unknown image set: {image_set}")
        members = set(self.image_sets[image_set])
        rows = [r for r in self.ratings.values() if r.image_id in members]
        rows.sort(key=lambda r: r.timestamp)
        return RatingTable(rows)

    def export_csv(self, image_set: str, path) -> Path:
        path = Path(path)
        self.ratings_for_set(image_set).write_csv(path)
        return path


# --- HTTP wrapper ----------------------------------------------------------------------


def build_app(service: RatingService):
    """FastAPI application over a RatingService instance."""
    from fastapi import FastAPI, HTTPException
    from fastapi.responses import FileResponse, PlainTextResponse
    from pydantic import BaseModel

    class CreateSessionBody(BaseModel):
        observer_id: str
        image_set: str
        shuffle_seed: int = 0

    class RatingBody(BaseModel):
        image_id: str
        score: float | None = None
        label: int | None = None
        timestamp: float | None = None

    app = FastAPI(title="iqalab rating service")
    app.state.service = service

    def guarded(fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except MissingFileError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        except SessionError as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from exc
        except (RangeError, ConfigError) as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc

    @app.post("/sessions")
    def create_session(body: CreateSessionBody):
        return guarded(service.create_session, body.observer_id,
                       body.image_set, body.shuffle_seed)

    @app.get("/sessions/{session_id}/next")
    def next_item(session_id: str):
        return guarded(service.next_item, session_id)

    @app.post("/sessions/{session_id}/ratings")
    def submit_rating(session_id: str, body: RatingBody):
        return guarded(service.submit_rating, session_id, body.image_id,
                       body.score, body.label, body.timestamp)

    @app.post("/sessions/{session_id}/withdraw")
    def withdraw(session_id: str):
        return guarded(service.withdraw, session_id)

    @app.get("/export/{image_set}.csv", response_class=PlainTextResponse)
    def export_ratings(image_set: str):
        path = guarded(service.export_csv, image_set,
                       service.state_dir / f"export_{image_set}.csv")
        return path.read_text()

    @app.get("/images/{image_id}")
    def image_bytes(image_id: str):
        path = guarded(service.image_path, image_id)
        return FileResponse(path, media_type="image/png")

    return app
