"""HTTP JSON API for the human review loop over novel generated labels.

The service indexes a predictions file against the test corpus and the seen
label set, surfaces every instance that produced at least one out-of-vocabulary
label, records sensible/informative judgments in an append-only JSONL store,
aggregates the review-table statistics, and exports the accepted labels as a
vocabulary-expansion file.  Restarting the service and replaying the store
reproduces identical statistics.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, unquote, urlparse

from .corpus import Corpus
from .decoding import Prediction
from .metrics import Embeddings, semantic_rule, soft_match


class ApiError(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status
        self.message = message


@dataclass(frozen=True)
class NovelCandidate:
    """One out-of-vocabulary predicted label awaiting judgment."""

    instance_id: str
    label: str
    rank: int
    score: float
    semantic_match: bool | None  # None when no embeddings were provided


@dataclass(frozen=True)
class ReviewRecord:
    instance_id: str
    label: str
    sensible: bool
    informative: bool
    reviewer: str
    timestamp: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "instance_id": self.instance_id,
                "label": self.label,
                "sensible": self.sensible,
                "informative": self.informative,
                "reviewer": self.reviewer,
                "timestamp": self.timestamp,
            },
            ensure_ascii=False,
        )


def _pct(numerator: int, denominator: int) -> int | None:
    if denominator == 0:
        return None
    return int(numerator / denominator * 100 + 0.5)


class ReviewService:
    """Pure service logic; the HTTP handler below is a thin shell over it."""

    def __init__(
        self,
        predictions: list[Prediction],
        test_corpus: Corpus,
        seen: set[str] | frozenset[str],
        store_path: str | Path,
        embeddings: Embeddings | None = None,
        semantic_threshold: float = 0.94,
    ):
        self.seen = frozenset(seen)
        self.store_path = Path(store_path)
        self._lock = threading.Lock()
        by_id = {inst.id: inst for inst in test_corpus.instances}
        rule = semantic_rule(embeddings, semantic_threshold) if embeddings else None

        self._instances: dict[str, dict] = {}
        self._candidates: dict[tuple[str, str], NovelCandidate] = {}
        for pred in predictions:
            inst = by_id.get(pred.instance_id)
            if inst is None:
                raise ValueError(f"prediction id {pred.instance_id!r} not in test corpus")
            candidates: list[NovelCandidate] = []
            for rank, (label, score) in enumerate(pred.ranked, start=1):
                if label in self.seen:
                    continue
                matched: bool | None = None
                if rule is not None:
                    matched = any(soft_match(label, g, rule) for g in inst.labels)
                cand = NovelCandidate(
                    instance_id=inst.id,
                    label=label,
                    rank=rank,
                    score=score,
                    semantic_match=matched,
                )
                candidates.append(cand)
                self._candidates[(inst.id, label)] = cand
            if not candidates:
                continue
            gold = [{"label": g, "unseen": g not in self.seen} for g in sorted(inst.labels)]
            predicted = []
            for rank, (label, score) in enumerate(pred.ranked, start=1):
                if label in inst.labels:
                    category = "correct"
                elif label in self.seen:
                    category = "known"
                else:
                    category = "novel"
                predicted.append(
                    {"label": label, "score": score, "rank": rank, "category": category}
                )
            self._instances[inst.id] = {
                "id": inst.id,
                "text": inst.text,
                "gold": gold,
                "predicted": predicted,
                "candidates": [
                    {
                        "label": c.label,
                        "rank": c.rank,
                        "score": c.score,
                        "semantic_match": c.semantic_match,
                    }
                    for c in candidates
                ],
            }
        self._order = sorted(self._instances)
        self._records: list[ReviewRecord] = []
        self._load_store()

    # -- persistence --------------------------------------------------------

    def _load_store(self) -> None:
        if not self.store_path.exists():
            return
        with open(self.store_path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                raw = json.loads(line)
                self._records.append(
                    ReviewRecord(
                        instance_id=raw["instance_id"],
                        label=raw["label"],
                        sensible=bool(raw["sensible"]),
                        informative=bool(raw["informative"]),
                        reviewer=raw["reviewer"],
                        timestamp=int(raw["timestamp"]),
                    )
                )

    def _append(self, record: ReviewRecord) -> None:
        with self._lock:
            with open(self.store_path, "a", encoding="utf-8") as fh:
                fh.write(record.to_json() + "\n")
                fh.flush()
            self._records.append(record)

    def _latest_by_reviewer(self) -> dict[tuple[str, str], dict[str, ReviewRecord]]:
        """(instance_id, label) -> reviewer -> last record, in append order."""
        latest: dict[tuple[str, str], dict[str, ReviewRecord]] = {}
        for rec in self._records:
            latest.setdefault((rec.instance_id, rec.label), {})[rec.reviewer] = rec
        return latest

    # -- API operations ------------------------------------------------------

    def instance_payload(self, instance_id: str) -> dict:
        payload = self._instances.get(instance_id)
        if payload is None:
            raise ApiError(404, f"no reviewable instance {instance_id!r}")
        latest = self._latest_by_reviewer()
        enriched = dict(payload)
        enriched["candidates"] = [
            {
                **cand,
                "judgments": [
                    {
                        "reviewer": rec.reviewer,
                        "sensible": rec.sensible,
                        "informative": rec.informative,
                        "timestamp": rec.timestamp,
                    }
                    for rec in sorted(
                        latest.get((instance_id, cand["label"]), {}).values(),
                        key=lambda r: r.reviewer,
                    )
                ],
            }
            for cand in payload["candidates"]
        ]
        return enriched

    def list_novel(self, cursor: str | None = None, page_size: int = 20) -> dict:
        if page_size < 1 or page_size > 500:
            raise ApiError(400, "size must be in 1..500")
        start = 0
        if cursor:
            if cursor not in self._instances:
                raise ApiError(400, f"bad cursor {cursor!r}")
            start = self._order.index(cursor) + 1
        ids = self._order[start : start + page_size]
        next_cursor = ids[-1] if ids and start + page_size < len(self._order) else None
        return {
            "instances": [self.instance_payload(i) for i in ids],
            "next_cursor": next_cursor,
            "total_instances": len(self._order),
        }

    def record_review(self, body: dict) -> dict:
        if not isinstance(body, dict):
            raise ApiError(400, "body must be a JSON object")
        try:
            instance_id = body["instance_id"]
            label = body["label"]
            sensible = body["sensible"]
            informative = body["informative"]
            reviewer = body["reviewer"]
        except KeyError as exc:
            raise ApiError(400, f"missing field {exc}") from exc
        if (
            not isinstance(instance_id, str)
            or not isinstance(label, str)
            or not isinstance(sensible, bool)
            or not isinstance(informative, bool)
            or not isinstance(reviewer, str)
            or not reviewer
        ):
            raise ApiError(400, "wrong field types")
        if (instance_id, label) not in self._candidates:
            raise ApiError(404, f"{label!r} is not a novel candidate of {instance_id!r}")
        record = ReviewRecord(
            instance_id=instance_id,
            label=label,
            sensible=sensible,
            informative=informative,
            reviewer=reviewer,
            timestamp=int(time.time()),
        )
        self._append(record)
        return {"ok": True}

    def review_stats(self) -> dict:
        """Review-table rows split by semantic match, plus coverage.

        A candidate counts as reviewed when any reviewer judged it; it counts
        sensible/informative when at least one reviewer's latest judgment set
        that axis.  Percentages are over reviewed candidates only.
        """
        latest = self._latest_by_reviewer()
        buckets: dict[str, list[tuple[bool, bool]]] = {"yes": [], "no": [], "total": []}
        has_semantic = any(
            c.semantic_match is not None for c in self._candidates.values()
        )
        for key, cand in self._candidates.items():
            per_reviewer = latest.get(key)
            if not per_reviewer:
                continue
            sensible = any(rec.sensible for rec in per_reviewer.values())
            informative = any(rec.informative for rec in per_reviewer.values())
            buckets["total"].append((sensible, informative))
            if cand.semantic_match is not None:
                buckets["yes" if cand.semantic_match else "no"].append((sensible, informative))

        def row(key: str) -> dict:
            judged = buckets[key]
            n = len(judged)
            sen = sum(1 for s, _ in judged if s)
            inf = sum(1 for _, i in judged if i)
            return {
                "key": key,
                "n_labels": n,
                "sensible_pct": _pct(sen, n),
                "informative_pct": _pct(inf, n),
                "sensible_fraction": sen / n if n else None,
                "informative_fraction": inf / n if n else None,
            }

        keys = ["yes", "no", "total"] if has_semantic else ["total"]
        return {
            "rows": [row(k) for k in keys],
            "coverage": {
                "reviewed": len(buckets["total"]),
                "total": len(self._candidates),
            },
        }

    def export_accepted(self) -> str:
        """Labels judged sensible by at least one reviewer: one per line, sorted."""
        latest = self._latest_by_reviewer()
        accepted = {
            key[1]
            for key, per_reviewer in latest.items()
            if key in self._candidates and any(rec.sensible for rec in per_reviewer.values())
        }
        return "".join(label + "\n" for label in sorted(accepted))


# ---------------------------------------------------------------------------
# HTTP layer
# ---------------------------------------------------------------------------

_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".json": "application/json; charset=utf-8",
    ".map": "application/json; charset=utf-8",
    ".svg": "image/svg+xml",
}

_PLACEHOLDER_PAGE = """<!doctype html>
<html><head><meta charset="utf-8"><title>groov review</title></head>
<body><h1>groov review service</h1>
<p>No static UI bundle configured.  API endpoints:</p>
<ul>
<li>GET /api/instances?cursor=&amp;size=</li>
<li>GET /api/instances/{id}</li>
<li>POST /api/reviews</li>
<li>GET /api/stats</li>
<li>GET /api/export</li>
</ul></body></html>
"""


def make_handler(service: ReviewService, static_dir: str | Path | None):
    static_root = Path(static_dir).resolve() if static_dir else None

    class Handler(BaseHTTPRequestHandler):
        def log_message(self, fmt, *args):  # quiet by default
            pass

        def _send_json(self, payload: dict, status: int = 200) -> None:
            body = json.dumps(payload, ensure_ascii=False).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json; charset=utf-8")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _send_text(self, text: str, content_type: str, status: int = 200) -> None:
            body = text.encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", content_type)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _send_static(self, rel: str) -> None:
            if static_root is None:
                if rel in ("", "index.html"):
                    self._send_text(_PLACEHOLDER_PAGE, "text/html; charset=utf-8")
                else:
                    self._send_json({"error": "not found"}, 404)
                return
            target = (static_root / (rel or "index.html")).resolve()
            if not str(target).startswith(str(static_root)) or not target.is_file():
                self._send_json({"error": "not found"}, 404)
                return
            data = target.read_bytes()
            self.send_response(200)
            ctype = _CONTENT_TYPES.get(target.suffix, "application/octet-stream")
            self.send_header("Content-Type", ctype)
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def do_GET(self) -> None:
            parsed = urlparse(self.path)
            path = parsed.path
            try:
                if path == "/api/instances":
                    query = parse_qs(parsed.query)
                    cursor = query.get("cursor", [None])[0]
                    size = int(query.get("size", ["20"])[0])
                    self._send_json(service.list_novel(cursor=cursor, page_size=size))
                elif path.startswith("/api/instances/"):
                    instance_id = unquote(path[len("/api/instances/") :])
                    self._send_json(service.instance_payload(instance_id))
                elif path == "/api/stats":
                    self._send_json(service.review_stats())
                elif path == "/api/export":
                    self._send_text(service.export_accepted(), "text/plain; charset=utf-8")
                elif path.startswith("/api/"):
                    self._send_json({"error": "not found"}, 404)
                else:
                    self._send_static(path.lstrip("/"))
            except ApiError as exc:
                self._send_json({"error": exc.message}, exc.status)
            except ValueError as exc:
                self._send_json({"error": str(exc)}, 400)

        def do_POST(self) -> None:
            parsed = urlparse(self.path)
            if parsed.path != "/api/reviews":
                self._send_json({"error": "not found"}, 404)
                return
            try:
                length = int(self.headers.get("Content-Length", "0"))
                raw = self.rfile.read(length)
                try:
                    body = json.loads(raw)
                except json.JSONDecodeError:
                    raise ApiError(400, "body is not valid JSON")
                self._send_json(service.record_review(body))
            except ApiError as exc:
                self._send_json({"error": exc.message}, exc.status)

    return Handler


def make_server(
    service: ReviewService, port: int, static_dir: str | Path | None = None
) -> ThreadingHTTPServer:
    handler = make_handler(service, static_dir)
    return ThreadingHTTPServer(("127.0.0.1", port), handler)


def serve_forever(service: ReviewService, port: int, static_dir=None) -> None:
    server = make_server(service, port, static_dir)
    host, actual_port = server.server_address[:2]
    print(f"groov review service listening on http://{host}:{actual_port}/")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
