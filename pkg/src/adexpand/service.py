"""HTTP+JSON serving layer over the current snapshot.

Endpoints: POST /expand, POST /match, POST /refresh, GET /healthz. Matching
reads one atomic snapshot reference per request; /refresh is the only
mutation and is serialized behind a writer lock.
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .embeddings import KeywordRef, fallback_embed
from .errors import AdexpandError, UnknownMarketError, VersionRegressionError
from .expansion import ExpansionRecord, expand_keyword, record_to_doc
from .matching import MatchRecord, SnapshotHolder, match_query, match_record_to_doc
from .snapshot_store import RuntimeBundle, load_runtime


class NoSnapshotError(AdexpandError):
    """Serving was attempted before any snapshot was loaded."""


class MatchService:
    """Snapshot lifecycle plus the expand/match operations the API exposes."""

    def __init__(self, snapshot_dir: str | None = None, load_now: bool = True) -> None:
        self.snapshot_dir = snapshot_dir
        self._holder = SnapshotHolder()
        self._refresh_lock = threading.Lock()
        if snapshot_dir is not None and load_now:
            self.refresh()

    def current(self) -> RuntimeBundle:
        bundle = self._holder.current()
        if bundle is None:
            raise NoSnapshotError("no snapshot loaded")
        return bundle

    def refresh(self) -> tuple[int | None, int]:
        """Reload the snapshot directory and swap it in atomically."""
        if self.snapshot_dir is None:
            raise NoSnapshotError("service has no snapshot directory")
        with self._refresh_lock:
            bundle = load_runtime(self.snapshot_dir)
            old = self._holder.swap(bundle)
            return old, bundle.version

    def match(self, query: str, market: str) -> tuple[list[MatchRecord], int]:
        bundle = self.current()
        return match_query(query, market, bundle.snapshot), bundle.version

    def expand(self, keyword: str, market: str) -> ExpansionRecord:
        """Expand a possibly unseen keyword using the current snapshot.

        Ingested keywords reuse their stored vector; new ones are embedded on
        the fly with the fallback embedder.
        """
        bundle = self.current()
        context = bundle.contexts.get(market)
        if context is None:
            raise UnknownMarketError(f"unknown market {market!r}")
        ref = context.embedding_set.ref_by_text(keyword)
        if ref is not None:
            vector = context.embedding_set.vector(ref)
        else:
            ref = KeywordRef(market=market, text=keyword, id=-1)
            vector = fallback_embed(keyword, context.embedding_set.dim)
        return expand_keyword(
            ref,
            vector,
            context.index,
            context.clustering,
            context.table,
            k_neighbors=bundle.k_neighbors,
            filters_enabled=bundle.filters_enabled,
        )


class _Handler(BaseHTTPRequestHandler):
    service: MatchService  # set by make_server

    def log_message(self, format: str, *args) -> None:  # noqa: A002
        pass  # request logging is the caller's concern, not the test suite's

    def _send(self, status: int, payload) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _read_json(self) -> dict | None:
        try:
            length = int(self.headers.get("Content-Length", "0"))
            doc = json.loads(self.rfile.read(length).decode("utf-8"))
        except (ValueError, json.JSONDecodeError):
            return None
        return doc if isinstance(doc, dict) else None

    def do_GET(self) -> None:  # noqa: N802
        if self.path != "/healthz":
            self._send(404, {"error": "not found"})
            return
        bundle = self.service._holder.current()
        if bundle is None:
            self._send(503, {"status": "no_snapshot", "snapshot_version": None})
        else:
            self._send(200, {"status": "ok", "snapshot_version": bundle.version})

    def do_POST(self) -> None:  # noqa: N802
        if self.path == "/refresh":
            try:
                old, new = self.service.refresh()
            except VersionRegressionError as exc:
                self._send(409, {"error": str(exc)})
            except AdexpandError as exc:
                self._send(500, {"error": str(exc)})
            else:
                self._send(200, {"old_version": old, "new_version": new})
            return

        if self.path not in ("/expand", "/match"):
            self._send(404, {"error": "not found"})
            return
        doc = self._read_json()
        if doc is None:
            self._send(400, {"error": "malformed JSON body"})
            return
        market = doc.get("market")
        if not isinstance(market, str):
            self._send(400, {"error": "missing or invalid 'market'"})
            return
        try:
            if self.path == "/expand":
                keyword = doc.get("keyword")
                if not isinstance(keyword, str) or not keyword.strip():
                    self._send(400, {"error": "missing or invalid 'keyword'"})
                    return
                record = self.service.expand(keyword, market)
                self._send(200, record_to_doc(record))
            else:
                query = doc.get("query")
                if not isinstance(query, str):
                    self._send(400, {"error": "missing or invalid 'query'"})
                    return
                records, version = self.service.match(query, market)
                self._send(
                    200,
                    {
                        "snapshot_version": version,
                        "matches": [match_record_to_doc(r) for r in records],
                    },
                )
        except NoSnapshotError:
            self._send(503, {"error": "no snapshot loaded"})
        except UnknownMarketError as exc:
            self._send(404, {"error": str(exc)})
        except AdexpandError as exc:
            self._send(400, {"error": str(exc)})


def make_server(service: MatchService, port: int = 0) -> ThreadingHTTPServer:
    """ThreadingHTTPServer bound to localhost; port 0 picks a free port."""
    handler = type("BoundHandler", (_Handler,), {"service": service})
    return ThreadingHTTPServer(("127.0.0.1", port), handler)


def serve(snapshot_dir: str, port: int) -> None:
    """Blocking entry point used by the CLI."""
    service = MatchService(snapshot_dir)
    server = make_server(service, port)
    host, bound_port = server.server_address[0], server.server_address[1]
    print(f"serving on http://{host}:{bound_port} (snapshot version {service.current().version})")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
