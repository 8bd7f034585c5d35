"""JSON-over-HTTP request helper shared by the live VLM and LLM clients."""

from __future__ import annotations

import logging
import os
import time

import requests

from .errors import TransportError

log = logging.getLogger(__name__)

DEFAULT_RETRIES = 3
DEFAULT_BACKOFF = 0.5

_RETRYABLE_STATUS = {408, 429, 500, 502, 503, 504}


def api_key_from_env(*names):
    for name in names:
        value = os.environ.get(name)
        if value:
            return value
    return None


def post_json(url, payload, api_key=None, retries=DEFAULT_RETRIES, backoff=DEFAULT_BACKOFF,
              timeout=60.0, session=None, sleep=time.sleep) -> dict:
    """POST ``payload`` and return the decoded JSON body.

    Connection errors and retryable status codes are retried ``retries`` times
    with exponential backoff; anything else fails immediately.
    """
    session = session or requests.Session()
    headers = {"Content-Type": "application/json"}
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"
    last = None
    for attempt in range(retries + 1):
        if attempt:
            sleep(backoff * 2 ** (attempt - 1))
        try:
            resp = session.post(url, json=payload, headers=headers, timeout=timeout)
        except requests.RequestException as exc:
            last = exc
            log.warning("request to %s failed (attempt %d): %s", url, attempt + 1, exc)
            continue
        if resp.status_code in _RETRYABLE_STATUS:
            last = TransportError(f"{url} returned HTTP {resp.status_code}")
            log.warning("request to %s returned %d (attempt %d)", url, resp.status_code, attempt + 1)
            continue
        if resp.status_code >= 400:
            raise TransportError(f"{url} returned HTTP {resp.status_code}")
        try:
            return resp.json()
        except ValueError as exc:
            raise TransportError(f"{url} returned a non-JSON body") from exc
    raise TransportError(f"{url} unreachable after {retries + 1} attempts: {last}")
