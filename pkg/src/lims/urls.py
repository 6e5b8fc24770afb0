"""URL normalization and registrable-domain extraction.

Normalized form is ``host/path``: scheme stripped, default port removed,
host lowercased, query string and fragment dropped. Percent-encoding is
left untouched so normalization never changes path identity.
"""

from __future__ import annotations

import functools
from importlib import resources
from urllib.parse import urlsplit

from .errors import MalformedUrl

_DEFAULT_PORTS = {"http": 80, "https": 443}


def normalize_url(raw: str) -> str:
    """Normalize an absolute http(s) URL to ``host/path`` form.

    Raises MalformedUrl for inputs without a parseable host or with a
    scheme other than http/https.
    """
    normalized, _ = split_url(raw)
    return normalized


def split_url(raw: str) -> tuple[str, str | None]:
    """Normalize like :func:`normalize_url`, also returning the raw query.

    The query is excluded from the normalized text (patterns cannot express
    it) but callers may retain it as link metadata.
    """
    try:
        parts = urlsplit(raw.strip())
    except ValueError as exc:
        raise MalformedUrl(f"unparseable URL: {raw!r}") from exc
    scheme = parts.scheme.lower()
    if scheme not in _DEFAULT_PORTS:
        raise MalformedUrl(f"unsupported or missing scheme in {raw!r}")
    if not parts.hostname:
        raise MalformedUrl(f"no host in {raw!r}")
    host = parts.hostname.lower()
    try:
        port = parts.port
    except ValueError as exc:
        raise MalformedUrl(f"invalid port in {raw!r}") from exc
    if port is not None and port != _DEFAULT_PORTS[scheme]:
        host = f"{host}:{port}"
    return f"{host}{parts.path}", (parts.query or None)


def host_of(normalized: str) -> str:
    """Host portion of a normalized URL, without any port."""
    host = normalized.split("/", 1)[0]
    return host.rsplit(":", 1)[0] if ":" in host else host


def path_of(normalized: str) -> str:
    """Path portion of a normalized URL (no leading slash)."""
    _, _, path = normalized.partition("/")
    return path


@functools.lru_cache(maxsize=1)
def _suffix_rules() -> tuple[frozenset[str], frozenset[str], frozenset[str]]:
    text = (
        resources.files("lims.data")
        .joinpath("public_suffix_snapshot.dat")
        .read_text(encoding="utf-8")
    )
    plain: set[str] = set()
    wildcard: set[str] = set()
    exception: set[str] = set()
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("//"):
            continue
        if line.startswith("!"):
            exception.add(line[1:])
        elif line.startswith("*."):
            wildcard.add(line[2:])
        else:
            plain.add(line)
    return frozenset(plain), frozenset(wildcard), frozenset(exception)


def registrable_domain(host: str) -> str:
    """eTLD+1 of a hostname per the bundled public-suffix snapshot.

    Falls back to last-two-labels when no rule matches the host, and
    returns the host unchanged when it is itself a public suffix or a
    bare single label.
    """
    host = host.lower().rstrip(".")
    labels = host.split(".")
    if len(labels) < 2:
        return host
    plain, wildcard, exception = _suffix_rules()
    suffix_len = 1  # implicit "*" rule: unknown TLDs behave as suffixes
    for i in range(len(labels)):
        candidate = ".".join(labels[i:])
        rest = ".".join(labels[i + 1 :])
        if candidate in exception:
            # exception rules mark the candidate itself as registrable
            return candidate
        if candidate in plain:
            suffix_len = max(suffix_len, len(labels) - i)
        if rest and rest in wildcard:
            suffix_len = max(suffix_len, len(labels) - i)
    if suffix_len >= len(labels):
        return host
    return ".".join(labels[-(suffix_len + 1) :])
