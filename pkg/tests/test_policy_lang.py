from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lims.errors import MalformedUrl, PolicySyntaxError
from lims.policy import (
    Action,
    PolicyDocument,
    PolicyRule,
    UrlPattern,
    applicable_rules,
    derive_requirements,
    load_builtin_pattern,
    matches,
    parse_policy,
    serialize_policy,
)
from lims.urls import normalize_url, registrable_domain

# --- strategies generated from the rule grammar -------------------------

URL_CHARS = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789./:_-"

LETTERS = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ"

pattern_texts = st.text(alphabet=URL_CHARS + "*", min_size=0, max_size=16)
condition_names = st.builds(
    lambda first, rest: first + rest,
    st.sampled_from(LETTERS),
    st.text(alphabet=LETTERS + "0123456789_", max_size=10),
)
actions = st.sampled_from(["allow", "deny"])


@st.composite
def rule_texts(draw) -> str:
    action = draw(actions)
    page = draw(pattern_texts)
    resource = draw(pattern_texts)
    text = f'{action} "{page}" "{resource}"'
    if draw(st.booleans()):
        text += f" if {draw(condition_names)}"
    return text + ";"


@st.composite
def policy_texts(draw) -> str:
    rules = draw(st.lists(rule_texts(), max_size=6))
    sep = draw(st.sampled_from(["\n", " ", "\n\n", "\t"]))
    return sep.join(rules)


@st.composite
def documents(draw) -> PolicyDocument:
    n = draw(st.integers(min_value=0, max_value=6))
    rules = []
    for i in range(n):
        rules.append(
            PolicyRule(
                action=Action(draw(actions)),
                page_pattern=UrlPattern(draw(pattern_texts)),
                resource_pattern=UrlPattern(draw(pattern_texts)),
                condition=draw(st.one_of(st.none(), condition_names)),
                rule_id=i,
            )
        )
    return PolicyDocument(tuple(rules))


# --- parsing -------------------------------------------------------------


def test_parse_single_deny_rule_with_condition():
    doc = parse_policy('deny "example.com/*" "*" if domain_lifecycle;')
    assert len(doc) == 1
    rule = doc.rules[0]
    assert rule.action is Action.DENY
    assert rule.page_pattern.raw == "example.com/*"
    assert rule.resource_pattern.raw == "*"
    assert rule.condition == "domain_lifecycle"


def test_parse_empty_text_yields_empty_document():
    assert parse_policy("") == PolicyDocument()
    assert parse_policy("  \n\t ") == PolicyDocument()


def test_parse_missing_semicolon_errors_at_end_of_input():
    with pytest.raises(PolicySyntaxError) as exc:
        parse_policy('allow "a.com/*" "*"')
    assert exc.value.expected == "';'"
    assert exc.value.line == 1
    assert exc.value.column == len('allow "a.com/*" "*"') + 1


def test_parse_bad_action_keyword():
    with pytest.raises(PolicySyntaxError) as exc:
        parse_policy('permit "a" "b";')
    assert "allow" in exc.value.expected


def test_parse_character_outside_url_alphabet():
    with pytest.raises(PolicySyntaxError) as exc:
        parse_policy('allow "a?b" "c";')
    assert "URL character" in exc.value.expected
    assert exc.value.line == 1


def test_parse_malformed_condition_name():
    with pytest.raises(PolicySyntaxError) as exc:
        parse_policy('allow "a" "b" if 9bad;')
    assert exc.value.expected == "condition name"


def test_parse_reports_line_numbers_across_rules():
    text = 'allow "a" "b";\nallow "c" "d";\ndeny "e" ;\n'
    with pytest.raises(PolicySyntaxError) as exc:
        parse_policy(text)
    assert exc.value.line == 3


def test_rule_order_preserved_and_ids_assigned():
    doc = parse_policy('allow "a" "b";\ndeny "c" "d";')
    assert [r.rule_id for r in doc.rules] == [0, 1]
    assert [r.action for r in doc.rules] == [Action.ALLOW, Action.DENY]


# --- serialization --------------------------------------------------------


def test_serialize_empty_document():
    assert serialize_policy(PolicyDocument()) == ""


def test_serialize_rule_with_condition():
    doc = parse_policy('deny "example.com/*" "*" if domain_lifecycle;')
    assert serialize_policy(doc) == 'deny "example.com/*" "*" if domain_lifecycle;\n'


def test_serialize_omits_absent_condition():
    doc = parse_policy('allow "a.com/*" "b.com/*";')
    assert serialize_policy(doc) == 'allow "a.com/*" "b.com/*";\n'


@given(documents())
@settings(max_examples=200)
def test_parse_serialize_round_trip(doc: PolicyDocument):
    assert parse_policy(serialize_policy(doc)) == doc


@given(policy_texts())
@settings(max_examples=200)
def test_grammar_generated_sentences_parse(text: str):
    parse_policy(text)  # must not raise


@given(rule_texts(), st.sampled_from(["action", "semicolon", "pattern_char", "condition"]))
@settings(max_examples=200)
def test_single_token_mutations_rejected_with_position(rule: str, mutation: str):
    if mutation == "action":
        mutated = "permit" + rule[rule.index(" ") :]
    elif mutation == "semicolon":
        mutated = rule.rstrip(";")
    elif mutation == "pattern_char":
        quote = rule.index('"')
        mutated = rule[: quote + 1] + "?" + rule[quote + 1 :]
    else:
        if " if " in rule:
            head, _, _ = rule.rpartition(" if ")
            mutated = head + " if 9bad;"
        else:
            mutated = rule[:-1] + " if 9bad;"
    with pytest.raises(PolicySyntaxError) as exc:
        parse_policy(mutated)
    assert exc.value.line >= 1 and exc.value.column >= 1


# --- pattern matching ------------------------------------------------------


def test_sole_wildcard_matches_everything():
    assert matches(UrlPattern("*"), "example.com/a/b")
    assert matches(UrlPattern("*"), "")


def test_glob_expansion():
    assert matches(UrlPattern("example.com/*"), "example.com/checkout")
    assert matches(UrlPattern("example.com/*"), "example.com/")
    assert matches(UrlPattern("*.js"), "cdn.example/app.js")


def test_match_is_anchored():
    assert not matches(UrlPattern("example.com/*"), "evil.com/example.com/")
    assert not matches(UrlPattern("ample.com/*"), "example.com/x")


def test_host_case_insensitive_path_case_sensitive():
    assert matches(UrlPattern("Example.COM/path"), "example.com/path")
    assert not matches(UrlPattern("example.com/PATH"), "example.com/path")


def test_pattern_rejects_characters_outside_alphabet():
    with pytest.raises(ValueError):
        UrlPattern("a?b")
    with pytest.raises(ValueError):
        UrlPattern("a b")


def test_builtin_pattern_loader_translates_dot_star():
    assert load_builtin_pattern("example.com/.*").raw == "example.com/*"
    assert load_builtin_pattern(".*").raw == "*"


@given(st.text(alphabet=URL_CHARS, max_size=20))
def test_wildcard_matches_any_url(url: str):
    assert matches(UrlPattern("*"), url)


@given(st.text(alphabet=URL_CHARS.replace("/", "").lower(), max_size=20))
def test_star_free_pattern_is_exact_equality(text: str):
    # lower-cased, slash-free text: host-folding cannot kick in
    assert matches(UrlPattern(text), text)
    assert not matches(UrlPattern(text), text + "x")


# --- URL normalization -----------------------------------------------------


def test_normalize_strips_scheme_port_query_and_lowercases_host():
    assert normalize_url("https://Example.COM:443/a?id=1") == "example.com/a"


def test_normalize_keeps_trailing_slash():
    assert normalize_url("https://a.b/") == "a.b/"


def test_normalize_rejects_non_urls():
    with pytest.raises(MalformedUrl):
        normalize_url("not a url")
    with pytest.raises(MalformedUrl):
        normalize_url("ftp://host/file")
    with pytest.raises(MalformedUrl):
        normalize_url("https:///nohost")


def test_normalize_preserves_non_default_port_and_percent_encoding():
    assert normalize_url("https://h.example:8443/a%20b") == "h.example:8443/a%20b"
    assert normalize_url("http://h.example:80/x") == "h.example/x"


def test_registrable_domain_snapshot_rules():
    assert registrable_domain("example.com") == "example.com"
    assert registrable_domain("a.b.example.co.uk") == "example.co.uk"
    assert registrable_domain("foo.bar.ck") == "foo.bar.ck"  # *.ck wildcard
    assert registrable_domain("sub.www.ck") == "www.ck"  # !www.ck exception
    assert registrable_domain("localhost") == "localhost"
    assert registrable_domain("x.unknown-tld") == "x.unknown-tld"


# --- applicable rules -------------------------------------------------------


def test_applicable_rules_empty_document():
    assert applicable_rules(PolicyDocument(), "a.com/x", "b.com/y") == []


def test_applicable_rules_single_match():
    doc = parse_policy('deny "example.com/*" "*";')
    found = applicable_rules(doc, "example.com/p", "cdn.x/y")
    assert found == [doc.rules[0]]
    assert applicable_rules(doc, "other.com/p", "cdn.x/y") == []


def test_applicable_rules_preserves_document_order():
    doc = parse_policy('allow "*" "*";\ndeny "example.com/*" "*";')
    found = applicable_rules(doc, "example.com/p", "cdn.x/y")
    assert [r.rule_id for r in found] == [0, 1]


@given(documents(), st.text(alphabet=URL_CHARS, max_size=12), st.text(alphabet=URL_CHARS, max_size=12))
@settings(max_examples=200)
def test_applicable_rules_equals_brute_force_filter(doc, page, resource):
    brute = [
        r
        for r in doc.rules
        if r.page_pattern.matches(page) and r.resource_pattern.matches(resource)
    ]
    assert applicable_rules(doc, page, resource) == brute


# --- requirement derivation ---------------------------------------------------


def test_deny_wins_over_allow():
    doc = parse_policy(
        'allow "*" "*" if benign_check;\ndeny "*" "cdn.x/*" if strict_check;'
    )
    req = derive_requirements(doc, "a.com/p", "cdn.x/y")
    assert req.conditions == ("strict_check",)
    assert not req.static_deny


def test_unconditional_deny_is_static():
    doc = parse_policy('deny "*" "blocked.example/*";')
    req = derive_requirements(doc, "a.com/p", "blocked.example/x")
    assert req.static_deny


def test_conditions_deduplicate_in_first_match_order():
    doc = parse_policy(
        'deny "*" "*" if checkA;\ndeny "*" "cdn.x/*" if checkB;\ndeny "*" "*" if checkA;'
    )
    req = derive_requirements(doc, "a.com/p", "cdn.x/y")
    assert req.conditions == ("checkA", "checkB")


def test_allow_rule_conditions_verified_when_no_deny_matches():
    doc = parse_policy('allow "*" "cdn.x/*" if digest_check;')
    req = derive_requirements(doc, "a.com/p", "cdn.x/y")
    assert req.conditions == ("digest_check",)
    assert derive_requirements(doc, "a.com/p", "other.y/z").conditions == ()
