"""HTTP surface over the ApiService.

Endpoints (JSON over HTTP/1.1):

* ``POST /v1/query-status``  {pageUrl, resourceUrl, clientId} -> status JSON
* ``GET  /v1/heartbeat?clientId=..&epoch=..`` -> heartbeat JSON
* ``POST /v1/admin/mode``    {mode} (bearer token)
* ``POST /v1/admin/policy``  multipart fields ``policy`` + ``bindings``
* ``GET  /v1/admin/links`` / ``GET /v1/admin/violations``

TLS termination and multi-site routing are left to a fronting proxy.
"""

from __future__ import annotations

import json
import logging
from email import message_from_bytes
from email.policy import HTTP as EMAIL_HTTP_POLICY

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .errors import (
    BindingValidationError,
    ConfigurationError,
    LimsError,
    MalformedUrl,
    PolicySyntaxError,
    StoreError,
)
from .server import ApiService, Mode, StatusQuery

logger = logging.getLogger(__name__)


def parse_multipart_form(body: bytes, content_type: str) -> dict[str, bytes]:
    """Decode a multipart/form-data body into {field name: payload bytes}."""
    synthetic = (
        f"Content-Type: {content_type}\r\nMIME-Version: 1.0\r\n\r\n".encode("latin-1")
        + body
    )
    message = message_from_bytes(synthetic, policy=EMAIL_HTTP_POLICY)
    if not message.is_multipart():
        raise ValueError("body is not multipart/form-data")
    fields: dict[str, bytes] = {}
    for part in message.iter_parts():
        name = part.get_param("name", header="content-disposition")
        if name is None:
            continue
        payload = part.get_payload(decode=True)
        fields[str(name)] = payload if payload is not None else b""
    return fields


def create_app(service: ApiService, admin_token: str) -> FastAPI:
    app = FastAPI(title="link-integrity API", docs_url=None, redoc_url=None)

    def _unauthorized() -> JSONResponse:
        return JSONResponse({"error": "invalid or missing admin token"}, status_code=401)

    def _authorized(request: Request) -> bool:
        header = request.headers.get("authorization", "")
        return header == f"Bearer {admin_token}"

    @app.exception_handler(StoreError)
    async def _store_error(request: Request, exc: StoreError) -> JSONResponse:
        logger.error("store failure serving %s: %s", request.url.path, exc)
        return JSONResponse({"error": "storage failure"}, status_code=500)

    @app.post("/v1/query-status")
    async def query_status(request: Request) -> JSONResponse:
        try:
            payload = await request.json()
        except json.JSONDecodeError:
            return JSONResponse({"error": "invalid JSON body"}, status_code=400)
        try:
            query = StatusQuery(
                page_url=str(payload["pageUrl"]),
                resource_url=str(payload["resourceUrl"]),
                client_id=str(payload.get("clientId", "")),
                protocol_version=int(payload.get("protocolVersion", 1)),
            )
        except (KeyError, TypeError, ValueError):
            return JSONResponse(
                {"error": "pageUrl and resourceUrl are required"}, status_code=400
            )
        try:
            response = service.handle_query_status(query)
        except MalformedUrl as exc:
            return JSONResponse({"error": str(exc)}, status_code=400)
        return JSONResponse(response.to_json())

    @app.get("/v1/heartbeat")
    async def heartbeat(clientId: str = "", epoch: int = 0) -> JSONResponse:
        return JSONResponse(service.handle_heartbeat(clientId, epoch).to_json())

    @app.post("/v1/admin/mode")
    async def set_mode(request: Request) -> JSONResponse:
        if not _authorized(request):
            return _unauthorized()
        try:
            payload = await request.json()
            mode = Mode.parse(str(payload["mode"]))
        except (json.JSONDecodeError, KeyError, ConfigurationError):
            return JSONResponse({"error": "body must carry a valid mode"}, status_code=400)
        service.set_mode(mode)
        return JSONResponse({"mode": mode.value, "configEpoch": service.config_epoch})

    @app.post("/v1/admin/policy")
    async def update_policy(request: Request) -> JSONResponse:
        if not _authorized(request):
            return _unauthorized()
        content_type = request.headers.get("content-type", "")
        if "multipart/form-data" not in content_type:
            return JSONResponse(
                {"error": "expected multipart/form-data with policy and bindings"},
                status_code=400,
            )
        body = await request.body()
        try:
            fields = parse_multipart_form(body, content_type)
            policy_text = fields["policy"].decode("utf-8")
            binding_rows = json.loads(fields["bindings"].decode("utf-8"))
        except (ValueError, KeyError) as exc:
            return JSONResponse(
                {"error": f"malformed upload: {exc}"}, status_code=400
            )
        try:
            summary = service.update_policy(policy_text, binding_rows)
        except (PolicySyntaxError, BindingValidationError) as exc:
            return JSONResponse({"error": str(exc)}, status_code=400)
        return JSONResponse(summary)

    @app.get("/v1/admin/links")
    async def list_links(request: Request) -> JSONResponse:
        if not _authorized(request):
            return _unauthorized()
        return JSONResponse({"links": [r.to_json() for r in service.store.links()]})

    @app.get("/v1/admin/violations")
    async def list_violations(request: Request) -> JSONResponse:
        if not _authorized(request):
            return _unauthorized()
        return JSONResponse(
            {"violations": [v.to_json() for v in service.store.violations()]}
        )

    @app.exception_handler(LimsError)
    async def _other_error(request: Request, exc: LimsError) -> JSONResponse:
        logger.error("error serving %s: %s", request.url.path, exc)
        return JSONResponse({"error": str(exc)}, status_code=500)

    return app
