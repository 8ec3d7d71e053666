"""HTTP facade over a registry root and results store, plus the client side.

The server is a stdlib ThreadingHTTPServer; writes funnel through the same
advisory locks the local backends use, so concurrent publishes and result
submissions serialize per store. The client mirrors the LocalRegistry
surface so callers can swap a URL for a directory path.

Routes:
  GET  /v1/index                              index document
  GET  /v1/components/{ns}/{name}/{version}   blob bytes (digest header)
  PUT  /v1/components/{ns}/{name}/{version}   publish blob, 201 or 409
  POST /v1/results                            ingest record, 201, 400, 409
  GET  /v1/results?solution=&since=           matching records

Mutations require the static bearer token when the server has one; reads
are open.
"""

from __future__ import annotations

import json
import logging
import urllib.error
import urllib.parse
import urllib.request
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from .archive import extract_tar_gz, pack_tree
from .canonical import canonical_json_bytes, sha256_hex
from .components import META_NAME, Component, load_component
from .errors import (
    DigestMismatch,
    DuplicateRecord,
    DuplicateVersion,
    ReefError,
    SchemaViolation,
    StorageFailure,
    TransportFailure,
    UnknownComponent,
)
from .registry import (
    DependencySpec,
    LocalRegistry,
    RegistryIndex,
    closure,
    resolve,
)
from .results import ingest, query
from .versions import Version, VersionReq, parse_component_id

log = logging.getLogger(__name__)

DIGEST_HEADER = "X-Reef-Digest"
DEFAULT_TIMEOUT = 30.0


# --- server --------------------------------------------------------------------


class ReefServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, address, registry_root, store, token=None):
        super().__init__(address, _Handler)
        self.registry = LocalRegistry(registry_root)
        self.store = Path(store)
        self.token = token

    @property
    def url(self) -> str:
        host, port = self.server_address[:2]
        return f"http://{host}:{port}"


def make_server(
    registry_root, store, host: str = "127.0.0.1", port: int = 0, token=None
) -> ReefServer:
    return ReefServer((host, port), registry_root, store, token=token)


_STATUS_FOR = {
    DuplicateVersion: 409,
    DuplicateRecord: 409,
    UnknownComponent: 404,
    StorageFailure: 500,
}


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):
        log.debug("%s %s", self.address_string(), fmt % args)

    def do_GET(self):
        self._dispatch("GET")

    def do_PUT(self):
        self._dispatch("PUT")

    def do_POST(self):
        self._dispatch("POST")

    def _dispatch(self, method: str) -> None:
        try:
            self._route(method)
        except ReefError as exc:
            status = 400
            for cls, code in _STATUS_FOR.items():
                if isinstance(exc, cls):
                    status = code
                    break
            self._send_json(status, {"error": type(exc).__name__, "message": str(exc)})
        except BrokenPipeError:
            pass
        except Exception as exc:  # pragma: no cover - defensive
            log.exception("unhandled error serving %s %s", method, self.path)
            self._send_json(500, {"error": "InternalError", "message": str(exc)})

    def _route(self, method: str) -> None:
        split = urllib.parse.urlsplit(self.path)
        parts = [p for p in split.path.split("/") if p]
        if parts == ["v1", "index"] and method == "GET":
            self._send_bytes(200, self.server.registry.index().to_bytes(), "application/json")
        elif len(parts) == 5 and parts[:2] == ["v1", "components"]:
            ns, name, version = parts[2], parts[3], parts[4]
            parse_component_id(f"{ns}/{name}")
            if method == "GET":
                self._get_component(f"{ns}/{name}", Version.parse(version))
            elif method == "PUT":
                self._put_component(f"{ns}/{name}", Version.parse(version))
            else:
                self._method_not_allowed()
        elif parts == ["v1", "results"]:
            if method == "GET":
                self._list_results(urllib.parse.parse_qs(split.query))
            elif method == "POST":
                self._post_result()
            else:
                self._method_not_allowed()
        else:
            self._send_json(404, {"error": "NotFound", "message": split.path})

    # --- component routes ---

    def _get_component(self, id_: str, version: Version) -> None:
        blob, digest = self.server.registry.blob_bytes(id_, version)
        self._send_bytes(200, blob, "application/octet-stream", {DIGEST_HEADER: digest})

    def _put_component(self, id_: str, version: Version) -> None:
        if not self._authorized():
            return
        digest = self.headers.get(DIGEST_HEADER)
        if not digest:
            self._send_json(
                400, {"error": "MissingDigest", "message": f"{DIGEST_HEADER} header required"}
            )
            return
        blob = self._read_body()
        try:
            result = self.server.registry.publish_blob(id_, version, blob, digest)
        except StorageFailure as exc:
            # malformed upload, not a server fault
            self._send_json(400, {"error": "StorageFailure", "message": str(exc)})
            return
        self._send_json(201, result)

    # --- result routes ---

    def _post_result(self) -> None:
        if not self._authorized():
            return
        body = self._read_body()
        try:
            record = json.loads(body)
        except ValueError as exc:
            self._send_json(400, {"error": "MalformedBody", "message": str(exc)})
            return
        if not isinstance(record, dict):
            self._send_json(400, {"error": "MalformedBody", "message": "expected a JSON object"})
            return
        rid = ingest(record, self.server.store)
        self._send_json(201, {"id": rid})

    def _list_results(self, params: dict) -> None:
        solution = params.get("solution", [None])[0]
        since = params.get("since", [None])[0]
        records = query(self.server.store, solution=solution, since=since)
        self._send_json(200, records)

    # --- plumbing ---

    def _authorized(self) -> bool:
        token = self.server.token
        if token is None:
            return True
        if self.headers.get("Authorization") == f"Bearer {token}":
            return True
        self._send_json(401, {"error": "Unauthorized", "message": "bearer token required"})
        return False

    def _read_body(self) -> bytes:
        length = int(self.headers.get("Content-Length") or 0)
        return self.rfile.read(length) if length else b""

    def _method_not_allowed(self) -> None:
        self._send_json(405, {"error": "MethodNotAllowed", "message": self.command})

    def _send_json(self, status: int, doc) -> None:
        self._send_bytes(status, canonical_json_bytes(doc) + b"\n", "application/json")

    def _send_bytes(self, status: int, body: bytes, content_type: str, headers=None) -> None:
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        for key, value in (headers or {}).items():
            self.send_header(key, value)
        self.end_headers()
        self.wfile.write(body)


# --- client --------------------------------------------------------------------


def _request(url, method="GET", body=None, headers=None, token=None, timeout=DEFAULT_TIMEOUT):
    """Returns (status, body, headers); connection-level failures raise
    TransportFailure, HTTP error statuses are returned for the caller to map."""
    req = urllib.request.Request(url, data=body, method=method)
    for key, value in (headers or {}).items():
        req.add_header(key, value)
    if token:
        req.add_header("Authorization", f"Bearer {token}")
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            return resp.status, resp.read(), dict(resp.headers)
    except urllib.error.HTTPError as exc:
        with exc:
            return exc.code, exc.read(), dict(exc.headers or {})
    except urllib.error.URLError as exc:
        raise TransportFailure(f"{method} {url}: {exc.reason}")
    except OSError as exc:
        raise TransportFailure(f"{method} {url}: {exc}")


def _error_message(body: bytes) -> str:
    try:
        doc = json.loads(body)
        return doc.get("message") or doc.get("error") or body.decode("utf-8", "replace")
    except ValueError:
        return body.decode("utf-8", "replace")


class RemoteRegistry:
    """Registry client over HTTP, mirroring the LocalRegistry surface."""

    def __init__(self, base_url: str, token=None, timeout: float = DEFAULT_TIMEOUT):
        self.base_url = base_url.rstrip("/")
        self.token = token
        self.timeout = timeout

    def index(self) -> RegistryIndex:
        status, body, _ = _request(f"{self.base_url}/v1/index", timeout=self.timeout)
        if status != 200:
            raise TransportFailure(f"index fetch failed: HTTP {status}: {_error_message(body)}")
        return RegistryIndex.from_doc(json.loads(body))

    def index_digest(self) -> str:
        return self.index().digest()

    def publish(self, component: Component) -> dict:
        if component.root is None:
            raise StorageFailure("component has no backing directory")
        blob = pack_tree(component.root, [META_NAME] + component.file_paths)
        url = f"{self.base_url}/v1/components/{component.id}/{component.version}"
        status, body, _ = _request(
            url,
            method="PUT",
            body=blob,
            headers={
                DIGEST_HEADER: component.digest,
                "Content-Type": "application/octet-stream",
            },
            token=self.token,
            timeout=self.timeout,
        )
        if status == 201:
            return json.loads(body)
        if status == 409:
            raise DuplicateVersion(component.ref)
        raise TransportFailure(f"publish failed: HTTP {status}: {_error_message(body)}")

    def pull(self, id_: str, version, dest) -> Component:
        if isinstance(version, str):
            version = Version.parse(version)
        url = f"{self.base_url}/v1/components/{id_}/{version}"
        status, body, headers = _request(url, timeout=self.timeout)
        if status == 404:
            raise UnknownComponent(f"{id_}@{version}")
        if status != 200:
            raise TransportFailure(f"pull failed: HTTP {status}: {_error_message(body)}")
        dest = Path(dest)
        dest.mkdir(parents=True, exist_ok=True)
        extract_tar_gz(body, dest)
        component = load_component(dest)
        expected = headers.get(DIGEST_HEADER) or component.digest
        if component.digest != expected:
            raise DigestMismatch(f"{id_}@{version}", expected, component.digest)
        return component

    def blob_bytes(self, id_: str, version: Version) -> tuple[bytes, str]:
        url = f"{self.base_url}/v1/components/{id_}/{version}"
        status, body, headers = _request(url, timeout=self.timeout)
        if status == 404:
            raise UnknownComponent(f"{id_}@{version}")
        if status != 200:
            raise TransportFailure(f"fetch failed: HTTP {status}: {_error_message(body)}")
        digest = headers.get(DIGEST_HEADER) or sha256_hex(body)
        return body, digest

    def resolve(self, id_: str, req) -> Version:
        if isinstance(req, str):
            req = VersionReq(req)
        return resolve(self.index(), id_, req)

    def closure(self, specs: list[DependencySpec], platform: str):
        return closure(self.index(), specs, platform)


def open_registry(location: str, token=None):
    """A path opens a local store; an http(s) URL opens the remote client."""
    text = str(location)
    if text.startswith("http://") or text.startswith("https://"):
        return RemoteRegistry(text, token=token)
    return LocalRegistry(Path(text))


# --- result submission ------------------------------------------------------------


def submit_result(record: dict, base_url: str, token=None, timeout=DEFAULT_TIMEOUT) -> str:
    status, body, _ = _request(
        f"{base_url.rstrip('/')}/v1/results",
        method="POST",
        body=canonical_json_bytes(record),
        headers={"Content-Type": "application/json"},
        token=token,
        timeout=timeout,
    )
    if status == 201:
        return json.loads(body)["id"]
    if status == 409:
        raise DuplicateRecord(_error_message(body))
    if status == 400:
        raise SchemaViolation([], _error_message(body))
    raise TransportFailure(f"submit failed: HTTP {status}: {_error_message(body)}")


def list_results(base_url: str, solution=None, since=None, timeout=DEFAULT_TIMEOUT) -> list:
    params = {}
    if solution:
        params["solution"] = solution
    if since:
        params["since"] = since
    url = f"{base_url.rstrip('/')}/v1/results"
    if params:
        url += "?" + urllib.parse.urlencode(params)
    status, body, _ = _request(url, timeout=timeout)
    if status != 200:
        raise TransportFailure(f"list failed: HTTP {status}: {_error_message(body)}")
    return json.loads(body)
