"""Batch leasing service.

Labeling clients reserve a random open batch, rate it and post their
responses back. A reservation not completed within the lease returns the
batch to the pool. Every state change is appended to a log of
length-prefixed JSON records before it is acknowledged; on start the log is
replayed, and a torn final record (a crash mid-write) is truncated away.
"""

from __future__ import annotations

import json
import logging
import math
import os
import random
import re
import struct
import threading
import time
from dataclasses import asdict, dataclass, field
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Callable, Sequence
from urllib.parse import urlparse

import pandas as pd

from .exceptions import ConfigurationError
from .model import RESPONSE_COLUMNS

log = logging.getLogger(__name__)

AVAILABLE, RESERVED, COMPLETED = "available", "reserved", "completed"
HEADER = struct.Struct(">I")


class ServiceError(Exception):
    status = HTTPStatus.BAD_REQUEST

    def __init__(self, message, details=None):
        super().__init__(message)
        self.details = details


class NotFoundError(ServiceError):
    status = HTTPStatus.NOT_FOUND


class ConflictError(ServiceError):
    status = HTTPStatus.CONFLICT


class GoneError(ServiceError):
    status = HTTPStatus.GONE


class PayloadError(ServiceError):
    status = HTTPStatus.UNPROCESSABLE_ENTITY


@dataclass
class BatchState:
    batch_id: str
    comments: list
    status: str = AVAILABLE
    reserved_by: str | None = None
    reserved_at: float | None = None
    completed_at: float | None = None


@dataclass
class ServiceConfig:
    lease_hours: float = 10.0
    store_path: str | None = None
    listen: str = "127.0.0.1:8080"
    seed: int | None = None

    def __post_init__(self):
        if not self.lease_hours > 0:
            raise ConfigurationError("lease duration must be positive")

    @property
    def lease_seconds(self) -> float:
        return self.lease_hours * 3600.0

    @property
    def address(self):
        host, _, port = self.listen.rpartition(":")
        return host or "127.0.0.1", int(port)

    @classmethod
    def from_env(cls, environ=None, **overrides) -> "ServiceConfig":
        env = os.environ if environ is None else environ
        kw = {}
        if "FACET_LISTEN" in env:
            kw["listen"] = env["FACET_LISTEN"]
        if "FACET_STORE" in env:
            kw["store_path"] = env["FACET_STORE"]
        if "FACET_LEASE_HOURS" in env:
            kw["lease_hours"] = float(env["FACET_LEASE_HOURS"])
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kw)


class AppendLog:
    """Length-prefixed JSON records (4-byte big-endian length, then UTF-8)."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def replay(self) -> list:
        if not self.path.exists():
            return []
        data = self.path.read_bytes()
        records, pos = [], 0
        while pos + HEADER.size <= len(data):
            (n,) = HEADER.unpack_from(data, pos)
            end = pos + HEADER.size + n
            if end > len(data):
                break
            try:
                records.append(json.loads(data[pos + HEADER.size:end].decode("utf-8")))
            except (UnicodeDecodeError, json.JSONDecodeError):
                break
            pos = end
        if pos < len(data):
            log.warning("truncating %d torn byte(s) from %s", len(data) - pos, self.path)
            with open(self.path, "r+b") as fh:
                fh.truncate(pos)
        return records

    def append(self, record: dict) -> None:
        body = json.dumps(record, separators=(",", ":"), sort_keys=True).encode("utf-8")
        with open(self.path, "ab") as fh:
            fh.write(HEADER.pack(len(body)) + body)
            fh.flush()
            os.fsync(fh.fileno())


class BatchService:
    """Thread-safe lease table over the batches of a judging plan.

    ``clock`` returns seconds; inject a fake for timeout tests. With
    ``config.seed`` set, batch choice is reproducible.
    """

    def __init__(self, plan=None, config: ServiceConfig | None = None, clock: Callable[[], float] = time.time,
                 item_categories: dict | None = None):
        self.config = config or ServiceConfig()
        self.clock = clock
        self.item_categories = item_categories
        self._rng = random.Random(self.config.seed) if self.config.seed is not None else random.SystemRandom()
        self._lock = threading.Lock()
        self._batches: dict = {}
        self._expired: set = set()
        self._responses: list = []
        self._log = AppendLog(self.config.store_path) if self.config.store_path else None
        records = self._log.replay() if self._log else []
        if records:
            for rec in records:
                self._apply(rec)
            if plan is not None and sorted(b.batch_id for b in plan.batches) != sorted(self._batches):
                raise ConfigurationError("store holds a different plan")
        elif plan is not None:
            self._commit({"op": "init", "batches": [{"batch_id": b.batch_id, "comments": list(b.comments)} for b in plan.batches]})
        else:
            raise ConfigurationError("no plan and no existing store")

    # ------------------------------------------------------------------ log

    def _commit(self, rec):
        if self._log:
            self._log.append(rec)
        self._apply(rec)

    def _apply(self, rec):
        op = rec["op"]
        if op == "init":
            self._batches = {b["batch_id"]: BatchState(b["batch_id"], list(b["comments"])) for b in rec["batches"]}
        elif op == "reserve":
            b = self._batches[rec["batch_id"]]
            b.status, b.reserved_by, b.reserved_at = RESERVED, rec["client_id"], rec["at"]
        elif op == "complete":
            b = self._batches[rec["batch_id"]]
            b.status, b.completed_at = COMPLETED, rec["at"]
            self._responses.extend(rec["responses"])
        elif op == "requeue":
            for bid, client in rec["leases"]:
                b = self._batches[bid]
                b.status, b.reserved_by, b.reserved_at = AVAILABLE, None, None
                self._expired.add((bid, client))
        else:
            raise ConfigurationError(f"unknown log record {op!r}")

    # ------------------------------------------------------------------ operations

    def _sweep_locked(self, now):
        lease = self.config.lease_seconds
        leases = sorted(
            (b.batch_id, b.reserved_by)
            for b in self._batches.values()
            if b.status == RESERVED and now - b.reserved_at > lease
        )
        if leases:
            self._commit({"op": "requeue", "at": now, "leases": [list(x) for x in leases]})
        return [bid for bid, _ in leases]

    def sweep_expired(self, now: float | None = None) -> list:
        """Return expired reservations to the pool; ids of requeued batches."""
        with self._lock:
            return self._sweep_locked(self.clock() if now is None else now)

    def reserve(self, client_id: str):
        """Lease a random open batch: ``{"batch_id", "comments", "lease_expires_at"}`` or None."""
        client_id = _client(client_id)
        with self._lock:
            now = self.clock()
            self._sweep_locked(now)
            open_ids = sorted(bid for bid, b in self._batches.items() if b.status == AVAILABLE)
            if not open_ids:
                return None
            bid = self._rng.choice(open_ids)
            self._commit({"op": "reserve", "batch_id": bid, "client_id": client_id, "at": now})
            b = self._batches[bid]
            return {"batch_id": bid, "comments": list(b.comments), "lease_expires_at": now + self.config.lease_seconds}

    def retry_after(self) -> int:
        with self._lock:
            held = [b.reserved_at for b in self._batches.values() if b.status == RESERVED]
            if not held:
                return 3600
            wait = min(held) + self.config.lease_seconds - self.clock()
            return max(1, math.ceil(wait))

    def complete(self, batch_id: str, client_id: str, responses: Sequence[dict]) -> dict:
        client_id = _client(client_id)
        with self._lock:
            b = self._batches.get(batch_id)
            if b is None:
                raise NotFoundError(f"unknown batch {batch_id!r}")
            now = self.clock()
            if b.status == RESERVED and b.reserved_by == client_id and now - b.reserved_at > self.config.lease_seconds:
                self._sweep_locked(now)
            if b.status == COMPLETED:
                raise ConflictError(f"batch {batch_id} already completed")
            if b.status == AVAILABLE:
                if (batch_id, client_id) in self._expired:
                    raise GoneError(f"lease on {batch_id} expired; batch returned to the pool")
                raise ConflictError(f"batch {batch_id} is not reserved by {client_id}")
            if b.reserved_by != client_id:
                raise ConflictError(f"batch {batch_id} is reserved by another client")
            rows = self._check_payload(b, client_id, responses)
            self._commit({"op": "complete", "batch_id": batch_id, "client_id": client_id, "at": now, "responses": rows})
            return {"batch_id": batch_id, "status": COMPLETED, "responses": len(rows)}

    def _check_payload(self, b, client_id, responses):
        if not isinstance(responses, list) or not responses:
            raise PayloadError("responses must be a non-empty list")
        allowed = set(b.comments)
        errors, rows, seen = [], [], set()
        for n, r in enumerate(responses):
            if not isinstance(r, dict):
                errors.append({"row": n, "message": "not an object"})
                continue
            cid, iid = str(r.get("comment_id", "")), str(r.get("item_id", ""))
            rid = str(r.get("rater_id", client_id))
            rating = r.get("rating")
            if cid not in allowed:
                errors.append({"row": n, "message": f"comment {cid!r} is not in this batch"})
            elif not iid:
                errors.append({"row": n, "message": "missing item_id"})
            elif not isinstance(rating, int) or isinstance(rating, bool) or rating < 0:
                errors.append({"row": n, "message": f"rating {rating!r} is not a non-negative integer"})
            elif self.item_categories is not None and iid not in self.item_categories:
                errors.append({"row": n, "message": f"unknown item {iid!r}"})
            elif self.item_categories is not None and rating >= self.item_categories[iid]:
                errors.append({"row": n, "message": f"rating {rating} out of range for item {iid!r}"})
            elif r.get("any_identity") not in (None, 0, 1):
                errors.append({"row": n, "message": "any_identity must be 0, 1 or null"})
            elif (cid, rid, iid) in seen:
                errors.append({"row": n, "message": "duplicate (comment, rater, item)"})
            else:
                seen.add((cid, rid, iid))
                rows.append({"comment_id": cid, "rater_id": rid, "item_id": iid, "rating": rating,
                             "any_identity": r.get("any_identity"), "weight": r.get("weight")})
        if errors:
            raise PayloadError("invalid responses", errors)
        return rows

    # ------------------------------------------------------------------ reads

    def state(self, batch_id: str) -> dict:
        with self._lock:
            b = self._batches.get(batch_id)
            if b is None:
                raise NotFoundError(f"unknown batch {batch_id!r}")
            return asdict(b)

    def states(self) -> dict:
        with self._lock:
            return {bid: BatchState(**asdict(b)) for bid, b in self._batches.items()}

    def counts(self) -> dict:
        with self._lock:
            out = {AVAILABLE: 0, RESERVED: 0, COMPLETED: 0}
            for b in self._batches.values():
                out[b.status] += 1
            return out

    def responses(self) -> pd.DataFrame:
        with self._lock:
            rows = list(self._responses)
        df = pd.DataFrame(rows, columns=RESPONSE_COLUMNS)
        df["rating"] = df["rating"].astype("int64")
        df["any_identity"] = pd.to_numeric(df["any_identity"]).astype(float)
        df["weight"] = pd.to_numeric(df["weight"]).astype(float)
        return df


def _client(client_id) -> str:
    if not isinstance(client_id, str) or not client_id.strip():
        raise PayloadError("client_id must be a non-empty string")
    return client_id


# --------------------------------------------------------------------------- HTTP

_COMPLETE = re.compile(r"^/v1/batches/([^/]+)/complete$")
_STATE = re.compile(r"^/v1/batches/([^/]+)$")


class _Handler(BaseHTTPRequestHandler):
    service: BatchService
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):
        log.info("%s - %s", self.address_string(), fmt % args)

    def _send(self, status, body=None, headers=None, content_type="application/json"):
        data = b""
        if body is not None:
            data = body.encode("utf-8") if isinstance(body, str) else json.dumps(body).encode("utf-8")
        self.send_response(status)
        for k, v in (headers or {}).items():
            self.send_header(k, str(v))
        if status != HTTPStatus.NO_CONTENT:
            self.send_header("Content-Type", content_type)
            self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        if data and status != HTTPStatus.NO_CONTENT:
            self.wfile.write(data)

    def _body(self):
        n = int(self.headers.get("Content-Length") or 0)
        if not n:
            return {}
        try:
            return json.loads(self.rfile.read(n).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise PayloadError(f"invalid JSON body: {exc}") from exc

    def _guard(self, fn):
        try:
            fn()
        except ServiceError as exc:
            body = {"error": str(exc)}
            if exc.details:
                body["details"] = exc.details
            self._send(exc.status, body)
        except Exception:  # noqa: BLE001 - report, keep serving
            log.exception("request failed")
            self._send(HTTPStatus.INTERNAL_SERVER_ERROR, {"error": "internal error"})

    def do_POST(self):
        path = urlparse(self.path).path

        def run():
            body = self._body()
            if path == "/v1/batches/reserve":
                got = self.service.reserve(body.get("client_id"))
                if got is None:
                    self._send(HTTPStatus.NO_CONTENT, headers={"Retry-After": self.service.retry_after()})
                else:
                    self._send(HTTPStatus.OK, got)
                return
            m = _COMPLETE.match(path)
            if m:
                self._send(HTTPStatus.OK, self.service.complete(m.group(1), body.get("client_id"), body.get("responses")))
                return
            raise NotFoundError(f"no route {path}")

        self._guard(run)

    def do_GET(self):
        path = urlparse(self.path).path

        def run():
            if path == "/v1/health":
                self._send(HTTPStatus.OK, {"status": "ok", "batches": self.service.counts()})
            elif path == "/v1/admin/sweep":
                self._send(HTTPStatus.OK, {"requeued": self.service.sweep_expired()})
            elif path == "/v1/responses":
                from .io import responses_to_text

                self._send(HTTPStatus.OK, responses_to_text(self.service.responses()), content_type="text/csv")
            elif _STATE.match(path):
                self._send(HTTPStatus.OK, self.service.state(_STATE.match(path).group(1)))
            else:
                raise NotFoundError(f"no route {path}")

        self._guard(run)


class _Server(ThreadingHTTPServer):
    request_queue_size = 256


def make_server(service: BatchService, host="127.0.0.1", port=0) -> ThreadingHTTPServer:
    """HTTP server bound to ``service``; port 0 picks a free port."""
    handler = type("BoundHandler", (_Handler,), {"service": service})
    server = _Server((host, port), handler)
    server.daemon_threads = True
    return server


def serve(service: BatchService, config: ServiceConfig) -> None:
    host, port = config.address
    server = make_server(service, host, port)
    log.info("listening on %s:%d", *server.server_address[:2])
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
