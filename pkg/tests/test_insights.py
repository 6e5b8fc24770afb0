from __future__ import annotations

import json
from datetime import date, timedelta

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lims.errors import InsufficientData
from lims.insights import (
    SnapshotIndex,
    SnapshotSeries,
    Stability,
    UNRANKED_IMPUTED_RANK,
    classify_stability,
    inclusion_summary,
    index_to_date,
    load_snapshots,
    lowest_rank_series,
    registration_age_series,
    replay_thresholds,
    suggest_thresholds,
)
from lims.providers import RankingProvider, RegistrationProvider, RegistrationRecord

# Frozen from the stdlib ISO-calendar oracle (date.fromisocalendar), run
# ahead of the implementation.
ISO_MONDAYS = {
    "2024-01": date(2024, 1, 1),
    "2024-42": date(2024, 10, 14),
    "2024-33": date(2024, 8, 12),
    "2023-40": date(2023, 10, 2),
}


# --- index dating -------------------------------------------------------------


@pytest.mark.parametrize("label,expected", sorted(ISO_MONDAYS.items()))
def test_index_to_date_matches_calendar_oracle(label, expected):
    assert index_to_date(label) == expected
    assert expected.isoweekday() == 1  # Monday per ISO-8601


def test_index_week_53_valid_only_in_long_years():
    assert index_to_date("2020-53") == date(2020, 12, 28)
    with pytest.raises(ValueError):
        index_to_date("2024-53")


@pytest.mark.parametrize("label", ["2024-60", "2024-00", "garbage", "2024", "2024-1-1"])
def test_index_to_date_rejects_bad_labels(label):
    with pytest.raises(ValueError):
        index_to_date(label)


def test_snapshot_series_requires_increasing_indexes():
    i1 = SnapshotIndex.parse("2024-02")
    i2 = SnapshotIndex.parse("2024-01")
    with pytest.raises(ValueError):
        SnapshotSeries("site.example", ((i1, frozenset()), (i2, frozenset())))


# --- fixtures -------------------------------------------------------------------


def series(points: dict[str, set[str]]) -> SnapshotSeries:
    return SnapshotSeries(
        "usps-style.example",
        tuple(
            (SnapshotIndex.parse(label), frozenset(domains))
            for label, domains in sorted(points.items())
        ),
    )


def registrations(rows: dict[str, date]) -> RegistrationProvider:
    return RegistrationProvider(
        [RegistrationRecord(domain, registered) for domain, registered in rows.items()]
    )


# --- registration age series ------------------------------------------------------


def test_age_series_drops_when_young_domain_appears():
    # A long-standing dependency registered years back, then a service
    # domain first linked 424 days after its own registration.
    base = ISO_MONDAYS["2024-01"]
    young_registration = ISO_MONDAYS["2024-42"] - timedelta(days=424)
    provider = registrations(
        {"old-partner.example": base - timedelta(days=4000), "lockers.example": young_registration}
    )
    snapshot_points = series(
        {
            "2024-01": {"old-partner.example"},
            "2024-41": {"old-partner.example"},
            "2024-42": {"old-partner.example", "lockers.example"},
        }
    )
    result = registration_age_series(snapshot_points, provider)
    values = {index.label: age for index, age in result}
    assert values["2024-42"] == 424
    assert values["2024-41"] > values["2024-42"]


def test_age_series_14_day_young_insertion():
    young = ISO_MONDAYS["2024-01"] - timedelta(days=14)
    provider = registrations(
        {"stable.example": date(2015, 1, 1), "brand-new.example": young}
    )
    result = registration_age_series(
        series({"2024-01": {"stable.example", "brand-new.example"}}), provider
    )
    assert result[0][1] == 14


def test_age_series_unchanged_links_grow_by_exactly_seven_days():
    provider = registrations({"stable.example": date(2020, 1, 6)})
    result = registration_age_series(
        series({"2024-01": {"stable.example"}, "2024-02": {"stable.example"}}), provider
    )
    assert result[1][1] - result[0][1] == 7


def test_age_series_skips_unknown_registrations():
    provider = registrations({"known.example": date(2020, 1, 1)})
    result = registration_age_series(
        series({"2024-01": {"known.example", "mystery.example"}, "2024-02": {"mystery.example"}}),
        provider,
    )
    assert [index.label for index, _ in result] == ["2024-01"]


# --- lowest rank series --------------------------------------------------------------


def ranking_for_indexes(rows_by_label: dict[str, dict[str, int]]) -> RankingProvider:
    return RankingProvider(
        {ISO_MONDAYS.get(label) or index_to_date(label): rows
         for label, rows in rows_by_label.items()}
    )


def test_unranked_domain_imputes_ten_million():
    provider = ranking_for_indexes({"2024-01": {"good.example": 100}})
    result = lowest_rank_series(
        series({"2024-01": {"good.example", "ghost.example"}}), provider, True
    )
    assert result[0][1] == UNRANKED_IMPUTED_RANK == 10_000_000


def test_rank_series_picks_worst_rank():
    provider = ranking_for_indexes(
        {"2024-33": {"good.example": 100, "hotline.example": 995_000}}
    )
    result = lowest_rank_series(
        series({"2024-33": {"good.example", "hotline.example"}}), provider, False
    )
    assert result[0][1] == 995_000


def test_rank_series_impute_off_excludes_and_may_yield_no_point():
    provider = ranking_for_indexes({"2024-01": {"good.example": 100}})
    result = lowest_rank_series(
        series({"2024-01": {"ghost.example"}}), provider, False
    )
    assert result == []


def test_rank_series_uses_nearest_list_at_or_before_index():
    list_day = ISO_MONDAYS["2024-01"] - timedelta(days=3)
    provider = RankingProvider({list_day: {"good.example": 77}})
    result = lowest_rank_series(series({"2024-01": {"good.example"}}), provider, False)
    assert result[0][1] == 77


def test_impute_on_is_pointwise_geq_impute_off():
    provider = ranking_for_indexes(
        {"2024-01": {"a.example": 10}, "2024-02": {"a.example": 20}}
    )
    snapshot_points = series(
        {"2024-01": {"a.example", "ghost.example"}, "2024-02": {"a.example"}}
    )
    on = dict((i.label, v) for i, v in lowest_rank_series(snapshot_points, provider, True))
    off = dict((i.label, v) for i, v in lowest_rank_series(snapshot_points, provider, False))
    for label, value in off.items():
        assert on[label] >= value


# --- stability --------------------------------------------------------------------------


def idx_points(values: list[int]) -> list[tuple[SnapshotIndex, int]]:
    return [
        (SnapshotIndex.parse(f"2024-{week:02d}"), value)
        for week, value in enumerate(values, start=1)
    ]


def test_strictly_increasing_series_is_stable():
    assert classify_stability(idx_points([100, 107, 114])) is Stability.STABLE


def test_flat_step_is_still_stable():
    assert classify_stability(idx_points([100, 100, 107])) is Stability.STABLE


def test_single_drop_is_unstable():
    assert classify_stability(idx_points([100, 107, 42, 49])) is Stability.UNSTABLE


def test_drop_with_recovery_above_previous_level_is_unstable():
    # temporal content: drop, jump back to the pre-drop trajectory
    assert classify_stability(idx_points([100, 107, 42, 114, 121])) is Stability.UNSTABLE


def test_fewer_than_two_points_is_indeterminate():
    with pytest.raises(InsufficientData):
        classify_stability(idx_points([100]))


@given(st.lists(st.integers(min_value=0, max_value=10_000), min_size=2, max_size=12))
@settings(max_examples=200)
def test_stability_matches_brute_force_scan(values):
    expected = (
        Stability.STABLE
        if all(a <= b for a, b in zip(values, values[1:]))
        else Stability.UNSTABLE
    )
    assert classify_stability(idx_points(values)) is expected


# --- threshold suggestion ------------------------------------------------------------------


def test_suggest_min_age_from_424_day_history():
    thresholds = suggest_thresholds(idx_points([500, 424, 431]), [], age_margin_days=0)
    assert thresholds.min_age_days == 424


def test_suggest_max_rank_with_margin():
    rank_points = idx_points([900_000, 995_000, 910_000])
    thresholds = suggest_thresholds(idx_points([100, 107]), rank_points, rank_margin=5_000)
    assert thresholds.max_rank == 1_000_000


def test_suggest_ignores_imputed_ranks():
    rank_points = idx_points([900_000, UNRANKED_IMPUTED_RANK])
    thresholds = suggest_thresholds(idx_points([100, 107]), rank_points)
    assert thresholds.max_rank == 900_000


def test_replay_of_history_produces_zero_violations():
    age_points = idx_points([500, 424, 431, 438])
    rank_points = idx_points([900_000, 995_000, 910_000])
    thresholds = suggest_thresholds(age_points, rank_points, 0, 5_000)
    assert replay_thresholds(age_points, rank_points, thresholds) == []


def test_replay_flags_data_outside_thresholds():
    age_points = idx_points([500, 424])
    thresholds = suggest_thresholds(age_points, [], 0, 0)
    younger = idx_points([500, 423])
    assert replay_thresholds(younger, [], thresholds) != []


def test_stable_series_threshold_equals_first_value_minus_margin():
    age_points = idx_points([424, 431, 438])
    assert classify_stability(age_points) is Stability.STABLE
    thresholds = suggest_thresholds(age_points, [], age_margin_days=10)
    assert thresholds.min_age_days == 424 - 10


@given(st.lists(st.integers(min_value=0, max_value=5000), min_size=1, max_size=10))
@settings(max_examples=100)
def test_age_replay_never_flags_by_construction(values):
    age_points = idx_points(values)
    thresholds = suggest_thresholds(age_points, [])
    assert replay_thresholds(age_points, [], thresholds) == []


# --- affine growth invariant -------------------------------------------------------------


def test_unchanging_link_set_ages_affinely():
    provider = registrations({"steady.example": date(2019, 5, 6)})
    labels = [f"2024-{w:02d}" for w in range(1, 9)]
    snapshot_points = series({label: {"steady.example"} for label in labels})
    result = registration_age_series(snapshot_points, provider)
    deltas = {
        (b_idx.approx_date - a_idx.approx_date).days: b_val - a_val
        for (a_idx, a_val), (b_idx, b_val) in zip(result, result[1:])
    }
    for day_gap, age_gap in deltas.items():
        assert day_gap == age_gap  # slope exactly 1 day/day


# --- inclusion summary ---------------------------------------------------------------------


def test_single_site_inclusion_medians():
    log = {
        "shop.example": [
            "https://ads.example/a",
            "https://ads.example/b",
            "https://ads.example/c",
            "https://cdn.example/1",
            "https://cdn.example/2",
            "https://shop.example/own-asset",  # first-party: excluded
        ]
    }
    summary = inclusion_summary(log)
    assert summary.median_external_urls == 5
    assert summary.median_external_origins == 2
    assert summary.median_urls_per_origin == 2.5


def test_empty_log_yields_absent_medians():
    summary = inclusion_summary({})
    assert summary.median_external_urls is None
    assert summary.median_external_origins is None
    assert summary.median_urls_per_origin is None
    assert summary.top_origins == ()


def test_fixture_reproducing_headline_medians():
    # Three sites tuned so the independent medians land on (197, 7, 32).
    def site(n_urls: int, n_origins: int, tag: str) -> list[str]:
        urls = []
        for i in range(n_urls):
            origin = i % n_origins
            urls.append(f"https://origin{origin}.{tag}-ext.example/u{i}")
        return urls

    log = {
        "alpha.example": site(96, 3, "alpha"),
        "beta.example": site(197, 7, "beta"),
        "gamma.example": site(640, 20, "gamma"),
    }
    summary = inclusion_summary(log)
    assert summary.median_external_urls == 197
    assert summary.median_external_origins == 7
    assert summary.median_urls_per_origin == 32


def test_top_origins_ranked_by_requesting_sites():
    log = {
        "a.example": ["https://tag.manager.example/x", "https://solo.example/y"],
        "b.example": ["https://tag.manager.example/z"],
    }
    summary = inclusion_summary(log)
    assert summary.top_origins[0] == ("tag.manager.example", 2)


# --- snapshot loading -----------------------------------------------------------------------


def test_load_snapshots_groups_and_orders(tmp_path):
    rows = [
        {"site": "shop.example", "index": "2024-02", "links": ["https://b.example/x"]},
        {"site": "shop.example", "index": "2024-01", "links": ["https://sub.a.example/y"]},
        {"site": "other.example", "index": "2024-01", "links": ["https://c.example/z"]},
    ]
    path = tmp_path / "snapshots.jsonl"
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
    loaded = load_snapshots(path)
    assert set(loaded) == {"shop.example", "other.example"}
    shop = loaded["shop.example"]
    assert [index.label for index, _ in shop.points] == ["2024-01", "2024-02"]
    assert shop.points[0][1] == frozenset({"a.example"})  # eTLD+1 aggregation
