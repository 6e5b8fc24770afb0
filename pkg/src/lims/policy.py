"""Integrity-policy rule language: parsing, serialization, URL matching.

A policy document is a sequence of rules::

    allow "shop.example.com/*" "cdn.example.net/*";
    deny  "example.com/*" "*" if recent_registration;

Each rule names an action, a page pattern, a resource pattern, and an
optional condition. Patterns are globs over normalized ``host/path`` URLs:
``*`` matches any run of characters, everything else matches itself, and
the match is anchored at both ends. The host portion of a pattern is
case-insensitive; the path portion is case-sensitive.
"""

from __future__ import annotations

import enum
import functools
import re
from dataclasses import dataclass, field

from .errors import PolicySyntaxError
from .urls import normalize_url

PATTERN_CHARS = frozenset(
    "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789./:_-*"
)
_CONDITION_NAME = re.compile(r"[A-Za-z][A-Za-z0-9_]*\Z")
_WORD_CHARS = frozenset("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_")


class Action(enum.Enum):
    ALLOW = "allow"
    DENY = "deny"


@dataclass(frozen=True)
class UrlPattern:
    """Glob pattern over normalized URLs."""

    raw: str

    def __post_init__(self) -> None:
        bad = next((c for c in self.raw if c not in PATTERN_CHARS), None)
        if bad is not None:
            raise ValueError(f"character {bad!r} not allowed in URL patterns")

    def matches(self, url: str) -> bool:
        return _compile_pattern(self.raw).fullmatch(url) is not None


@functools.lru_cache(maxsize=4096)
def _compile_pattern(raw: str) -> re.Pattern[str]:
    # Hosts compare case-insensitively: lowercase the pattern up to the
    # first "/" to line up with normalize_url's lowercased hosts.
    head, sep, tail = raw.partition("/")
    canonical = head.lower() + sep + tail
    parts = [".*" if c == "*" else re.escape(c) for c in canonical]
    return re.compile("".join(parts), re.DOTALL)


def matches(pattern: UrlPattern, url: str) -> bool:
    """True iff the normalized URL is in the pattern's language."""
    return pattern.matches(url)


@dataclass(frozen=True)
class PolicyRule:
    action: Action
    page_pattern: UrlPattern
    resource_pattern: UrlPattern
    condition: str | None = None
    rule_id: int = 0

    def __post_init__(self) -> None:
        if self.condition is not None and not _CONDITION_NAME.match(self.condition):
            raise ValueError(f"malformed condition name {self.condition!r}")


@dataclass(frozen=True)
class PolicyDocument:
    rules: tuple[PolicyRule, ...] = ()

    def __len__(self) -> int:
        return len(self.rules)


@dataclass(frozen=True)
class _Token:
    kind: str  # "word" | "pattern" | "semicolon" | "eof"
    text: str
    line: int
    column: int


def _tokenize(source: str) -> list[_Token]:
    tokens: list[_Token] = []
    line, col = 1, 1
    i, n = 0, len(source)
    while i < n:
        ch = source[i]
        if ch == "\n":
            line += 1
            col = 1
            i += 1
            continue
        if ch in " \t\r":
            col += 1
            i += 1
            continue
        if ch == ";":
            tokens.append(_Token("semicolon", ";", line, col))
            col += 1
            i += 1
            continue
        if ch == '"':
            start_line, start_col = line, col
            i += 1
            col += 1
            chars: list[str] = []
            while i < n and source[i] != '"':
                c = source[i]
                if c == "\n":
                    raise PolicySyntaxError(
                        "unterminated URL pattern", line, col, 'closing \'"\''
                    )
                if c not in PATTERN_CHARS:
                    raise PolicySyntaxError(
                        f"character {c!r} not allowed in URL patterns",
                        line,
                        col,
                        "URL character or '*'",
                    )
                chars.append(c)
                i += 1
                col += 1
            if i >= n:
                raise PolicySyntaxError(
                    "unterminated URL pattern", line, col, 'closing \'"\''
                )
            i += 1  # closing quote
            col += 1
            tokens.append(_Token("pattern", "".join(chars), start_line, start_col))
            continue
        if ch in _WORD_CHARS:
            start_col = col
            j = i
            while j < n and source[j] in _WORD_CHARS:
                j += 1
            tokens.append(_Token("word", source[i:j], line, start_col))
            col += j - i
            i = j
            continue
        raise PolicySyntaxError(f"unexpected character {ch!r}", line, col, "rule")
    tokens.append(_Token("eof", "", line, col))
    return tokens


class _Parser:
    def __init__(self, tokens: list[_Token]):
        self._tokens = tokens
        self._pos = 0

    def _peek(self) -> _Token:
        return self._tokens[self._pos]

    def _next(self) -> _Token:
        tok = self._tokens[self._pos]
        if tok.kind != "eof":
            self._pos += 1
        return tok

    def _fail(self, tok: _Token, message: str, expected: str) -> PolicySyntaxError:
        where = "end of input" if tok.kind == "eof" else f"{tok.text!r}"
        return PolicySyntaxError(f"{message}: got {where}", tok.line, tok.column, expected)

    def parse_document(self) -> PolicyDocument:
        rules: list[PolicyRule] = []
        while self._peek().kind != "eof":
            rules.append(self._parse_rule(len(rules)))
        return PolicyDocument(tuple(rules))

    def _parse_rule(self, rule_id: int) -> PolicyRule:
        tok = self._next()
        if tok.kind != "word" or tok.text not in ("allow", "deny"):
            raise self._fail(tok, "bad action keyword", "'allow' or 'deny'")
        action = Action(tok.text)

        page = self._parse_pattern("page URL pattern")
        resource = self._parse_pattern("resource URL pattern")

        condition: str | None = None
        tok = self._peek()
        if tok.kind == "word":
            if tok.text != "if":
                raise self._fail(tok, "unexpected token after patterns", "'if' or ';'")
            self._next()
            cond = self._next()
            if cond.kind != "word" or not _CONDITION_NAME.match(cond.text):
                raise self._fail(cond, "malformed condition name", "condition name")
            condition = cond.text

        tok = self._next()
        if tok.kind != "semicolon":
            raise self._fail(tok, "missing rule terminator", "';'")
        return PolicyRule(action, page, resource, condition, rule_id)

    def _parse_pattern(self, what: str) -> UrlPattern:
        tok = self._next()
        if tok.kind != "pattern":
            raise self._fail(tok, f"missing {what}", "quoted URL pattern")
        return UrlPattern(tok.text)


def parse_policy(source: str) -> PolicyDocument:
    """Parse policy text into a document; empty text yields an empty document."""
    return _Parser(_tokenize(source)).parse_document()


def serialize_policy(doc: PolicyDocument) -> str:
    """Emit one rule per line in grammar form; inverse of parse_policy."""
    lines = []
    for rule in doc.rules:
        text = (
            f'{rule.action.value} "{rule.page_pattern.raw}" "{rule.resource_pattern.raw}"'
        )
        if rule.condition is not None:
            text += f" if {rule.condition}"
        lines.append(text + ";")
    return "\n".join(lines) + ("\n" if lines else "")


def applicable_rules(
    doc: PolicyDocument, page_url: str, resource_url: str
) -> list[PolicyRule]:
    """Rules whose page and resource patterns both match, in document order.

    Both URLs must already be normalized.
    """
    return [
        rule
        for rule in doc.rules
        if rule.page_pattern.matches(page_url) and rule.resource_pattern.matches(resource_url)
    ]


@dataclass(frozen=True)
class RequestRequirements:
    """What a (page, resource) pair must satisfy under a document.

    ``static_deny`` is set when an unconditional deny rule matched; deny
    rules take precedence over allow rules, and the governing action
    class contributes the conditions to verify (first occurrence of each
    condition name wins, duplicates collapse).
    """

    static_deny: bool = False
    conditions: tuple[str, ...] = ()
    matched: tuple[PolicyRule, ...] = field(default=())


def derive_requirements(
    doc: PolicyDocument, page_url: str, resource_url: str
) -> RequestRequirements:
    matched = tuple(applicable_rules(doc, page_url, resource_url))
    deny = [r for r in matched if r.action is Action.DENY]
    governing = deny if deny else [r for r in matched if r.action is Action.ALLOW]
    static_deny = any(r.condition is None for r in deny)
    seen: dict[str, None] = {}
    for rule in governing:
        if rule.condition is not None and rule.condition not in seen:
            seen[rule.condition] = None
    return RequestRequirements(static_deny, tuple(seen), matched)


def load_builtin_pattern(text: str) -> UrlPattern:
    """Pattern loader for the bundled default policies.

    The default-policy catalogue historically wrote wildcards as ``.*``;
    the canonical dialect is plain ``*``, so the sequence is rewritten.
    """
    return UrlPattern(text.replace(".*", "*"))
