"""Administrator command-line interface.

All admin mutations go through the running server's HTTP endpoints so the
invariants enforced there hold regardless of entry point. Configuration
comes from a JSON file (``--config`` or the ``LIMS_CONFIG`` environment
variable); flags override file values.

Exit codes: 0 success, 1 operational error, 2 usage error.
"""

from __future__ import annotations

import json
import logging
import sys
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import click
import httpx

from .conditions import load_bindings
from .errors import BindingValidationError, ConfigurationError, LimsError, PolicySyntaxError
from .http_api import create_app
from .policy import parse_policy
from .providers import (
    ContentProvider,
    CoreFileProvider,
    DependencyProvider,
    GeoLocator,
    ProviderBundle,
    RankingProvider,
    RegistrationProvider,
    SriProvider,
    ThreatIntelProvider,
    TlsStatusProvider,
)
from .server import ApiService, Mode, ServerConfig
from .sim import (
    DEFAULT_PROFILES,
    PageTrace,
    NetworkProfile,
    Simulation,
    Stage,
    default_policy_fixture,
    generate_traces,
    run_matrix,
)
from .store import InMemoryLinkStore, SqliteLinkStore
from .verifier import Verifier
from . import insights as insights_mod

logger = logging.getLogger(__name__)


def _load_config(path: str | None) -> dict[str, Any]:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc


def _build_store(config: dict[str, Any]):
    store_cfg = config.get("store", {})
    if store_cfg.get("backend", "memory") == "sqlite":
        return SqliteLinkStore(store_cfg.get("path", "lims.db"))
    return InMemoryLinkStore()


def _build_providers(config: dict[str, Any]) -> ProviderBundle:
    fixtures = config.get("fixtures", {})

    def path_or_none(key: str):
        return fixtures.get(key)

    bundle = ProviderBundle()
    if path_or_none("registrations"):
        bundle.registrations = RegistrationProvider(fixtures["registrations"])
    if path_or_none("rankingsDir"):
        bundle.rankings = RankingProvider(fixtures["rankingsDir"])
    if path_or_none("threatIndicators"):
        bundle.threat_intel = ThreatIntelProvider(fixtures["threatIndicators"])
    if path_or_none("dns"):
        bundle.geo = GeoLocator(fixtures["dns"], fixtures.get("geo"))
    if path_or_none("dependencies"):
        bundle.dependencies = DependencyProvider(fixtures["dependencies"])
    if path_or_none("sri"):
        bundle.sri = SriProvider(fixtures["sri"])
    if path_or_none("coreManifest"):
        bundle.core_files = CoreFileProvider(
            fixtures["coreManifest"], fixtures.get("appRoot")
        )
    if path_or_none("tlsStatus"):
        bundle.tls_status = TlsStatusProvider(fixtures["tlsStatus"])
    if path_or_none("content"):
        bundle.content = ContentProvider(fixtures["content"])
    return bundle


def _server_config(config: dict[str, Any]) -> ServerConfig:
    raw = config.get("server", {})
    return ServerConfig(
        mode=Mode.parse(raw.get("mode", "enforce")),
        default_decision=raw.get("defaultDecision", "allow"),
        on_demand_timeout_ms=int(raw.get("onDemandTimeoutMs", 500)),
        client_poll_interval_seconds=int(raw.get("clientPollIntervalSeconds", 60)),
        client_failure_threshold=int(raw.get("clientFailureThreshold", 3)),
        client_cache_ttl_seconds=int(raw.get("clientCacheTtlSeconds", 300)),
    )


def _build_service(config: dict[str, Any]) -> tuple[ApiService, Verifier]:
    policy_file = config.get("policyFile")
    bindings_file = config.get("bindingsFile")
    document = (
        parse_policy(Path(policy_file).read_text(encoding="utf-8"))
        if policy_file
        else parse_policy("")
    )
    bindings = (
        load_bindings(json.loads(Path(bindings_file).read_text(encoding="utf-8")))
        if bindings_file
        else {}
    )
    store = _build_store(config)
    providers = _build_providers(config)
    verifier_cfg = config.get("verifier", {})
    verifier = Verifier(
        store,
        bindings,
        providers,
        workers=int(verifier_cfg.get("workers", 2)),
        queue_capacity=int(verifier_cfg.get("queueCapacity", 64)),
        refresh_lead_seconds=float(verifier_cfg.get("refreshLeadSeconds", 30.0)),
    )
    service = ApiService(store, document, bindings, verifier, _server_config(config))
    return service, verifier


def _admin_client(config: dict[str, Any], server_url: str | None) -> httpx.Client:
    base = server_url or config.get("serverUrl", "http://127.0.0.1:8300")
    token = config.get("adminToken", "")
    return httpx.Client(
        base_url=base, headers={"Authorization": f"Bearer {token}"}, timeout=10.0
    )


def _emit(ctx: click.Context, payload: Any, table_rows: list[list[str]] | None = None) -> None:
    if ctx.obj["output"] == "json" or table_rows is None:
        click.echo(json.dumps(payload, indent=2, default=str))
        return
    widths = [max(len(str(row[i])) for row in table_rows) for i in range(len(table_rows[0]))]
    for row in table_rows:
        click.echo("  ".join(str(cell).ljust(widths[i]) for i, cell in enumerate(row)))


@click.group()
@click.option(
    "--config",
    "config_path",
    envvar="LIMS_CONFIG",
    type=click.Path(exists=True, dir_okay=False),
    default=None,
    help="JSON configuration file (env: LIMS_CONFIG).",
)
@click.option(
    "--output",
    type=click.Choice(["json", "table"]),
    default="json",
    show_default=True,
)
@click.option("--server-url", default=None, help="Override the configured server URL.")
@click.pass_context
def main(ctx: click.Context, config_path: str | None, output: str, server_url: str | None):
    """Manage link-integrity policies, servers, and analyses."""
    ctx.ensure_object(dict)
    try:
        ctx.obj["config"] = _load_config(config_path)
    except ConfigurationError as exc:
        raise click.ClickException(str(exc)) from exc
    ctx.obj["output"] = output
    ctx.obj["server_url"] = server_url


@main.command()
@click.option("--host", default=None)
@click.option("--port", type=int, default=None)
@click.pass_context
def serve(ctx: click.Context, host: str | None, port: int | None):
    """Run the status/heartbeat/admin HTTP server."""
    import uvicorn

    config = ctx.obj["config"]
    try:
        service, verifier = _build_service(config)
    except (LimsError, OSError) as exc:
        raise click.ClickException(str(exc)) from exc
    verifier.start()
    app = create_app(service, config.get("adminToken", ""))
    listen = config.get("listen", {})
    try:
        uvicorn.run(
            app,
            host=host or listen.get("host", "127.0.0.1"),
            port=port or int(listen.get("port", 8300)),
            log_level="info",
        )
    finally:
        verifier.stop()


@main.command()
@click.option(
    "--periodic-interval",
    type=float,
    default=30.0,
    show_default=True,
    help="Seconds between refresh sweeps.",
)
@click.option("--once", is_flag=True, help="Run a single sweep and exit.")
@click.pass_context
def verify(ctx: click.Context, periodic_interval: float, once: bool):
    """Run the periodic verification refresh loop."""
    config = ctx.obj["config"]
    try:
        _, verifier = _build_service(config)
    except (LimsError, OSError) as exc:
        raise click.ClickException(str(exc)) from exc
    while True:
        refreshed = verifier.run_periodic_refresh(datetime.now(timezone.utc))
        click.echo(json.dumps({"refreshed": refreshed}))
        if once:
            return
        try:
            time.sleep(periodic_interval)
        except KeyboardInterrupt:  # pragma: no cover - interactive only
            return


@main.group()
def policy():
    """Validate or apply policy documents."""


@policy.command("validate")
@click.argument("policy_file", type=click.Path(exists=True, dir_okay=False))
@click.argument("bindings_file", type=click.Path(exists=True, dir_okay=False))
@click.pass_context
def policy_validate(ctx: click.Context, policy_file: str, bindings_file: str):
    """Parse the rule text and binding schema without applying them."""
    try:
        document = parse_policy(Path(policy_file).read_text(encoding="utf-8"))
        bindings = load_bindings(json.loads(Path(bindings_file).read_text(encoding="utf-8")))
    except (PolicySyntaxError, BindingValidationError, json.JSONDecodeError) as exc:
        raise click.ClickException(f"invalid policy: {exc}") from exc
    missing = sorted(
        {rule.condition for rule in document.rules if rule.condition}
        - set(bindings)
    )
    if missing:
        raise click.ClickException(f"rules reference unbound conditions: {missing}")
    _emit(ctx, {"rules": len(document), "bindings": len(bindings), "valid": True})


@policy.command("apply")
@click.argument("policy_file", type=click.Path(exists=True, dir_okay=False))
@click.argument("bindings_file", type=click.Path(exists=True, dir_okay=False))
@click.pass_context
def policy_apply(ctx: click.Context, policy_file: str, bindings_file: str):
    """Upload a policy + bindings to the running server."""
    try:
        with _admin_client(ctx.obj["config"], ctx.obj["server_url"]) as client:
            response = client.post(
                "/v1/admin/policy",
                files={
                    "policy": ("policy.rules", Path(policy_file).read_bytes(), "text/plain"),
                    "bindings": (
                        "bindings.json",
                        Path(bindings_file).read_bytes(),
                        "application/json",
                    ),
                },
            )
    except httpx.HTTPError as exc:
        raise click.ClickException(f"server unreachable: {exc}") from exc
    if response.status_code != 200:
        raise click.ClickException(f"server rejected policy: {response.text}")
    _emit(ctx, response.json())


@main.group()
def mode():
    """Deployment mode control."""


@mode.command("set")
@click.argument("new_mode", type=click.Choice(["discovery", "report-only", "enforce"]))
@click.pass_context
def mode_set(ctx: click.Context, new_mode: str):
    """Switch the server's deployment mode."""
    try:
        with _admin_client(ctx.obj["config"], ctx.obj["server_url"]) as client:
            response = client.post("/v1/admin/mode", json={"mode": new_mode})
    except httpx.HTTPError as exc:
        raise click.ClickException(f"server unreachable: {exc}") from exc
    if response.status_code != 200:
        raise click.ClickException(f"mode change rejected: {response.text}")
    _emit(ctx, response.json())


@main.group()
def links():
    """Inspect discovered links."""


@links.command("list")
@click.pass_context
def links_list(ctx: click.Context):
    try:
        with _admin_client(ctx.obj["config"], ctx.obj["server_url"]) as client:
            response = client.get("/v1/admin/links")
    except httpx.HTTPError as exc:
        raise click.ClickException(f"server unreachable: {exc}") from exc
    if response.status_code != 200:
        raise click.ClickException(response.text)
    payload = response.json()
    rows = [["LINK", "PAGE", "RESOURCE", "HITS"]] + [
        [r["linkId"][:12], r["pageUrl"], r["resourceUrl"], str(r["hitCount"])]
        for r in payload["links"]
    ]
    _emit(ctx, payload, rows)


@main.group()
def violations():
    """Inspect recorded violations."""


@violations.command("list")
@click.pass_context
def violations_list(ctx: click.Context):
    try:
        with _admin_client(ctx.obj["config"], ctx.obj["server_url"]) as client:
            response = client.get("/v1/admin/violations")
    except httpx.HTTPError as exc:
        raise click.ClickException(f"server unreachable: {exc}") from exc
    if response.status_code != 200:
        raise click.ClickException(response.text)
    payload = response.json()
    rows = [["LINK", "CONDITION", "DETAIL"]] + [
        [v["linkId"][:12], v["conditionName"], v["detail"]] for v in payload["violations"]
    ]
    _emit(ctx, payload, rows)


@main.group()
def sim():
    """Staged load-time simulations."""


@sim.command("run")
@click.option(
    "--stage",
    "stages",
    multiple=True,
    type=click.Choice([s.value for s in Stage]),
    help="Stages to run (default: all four).",
)
@click.option(
    "--profile",
    "profiles",
    multiple=True,
    type=click.Choice(sorted(DEFAULT_PROFILES)),
    help="Network profiles (default: all three).",
)
@click.option("--traces", "traces_file", type=click.Path(exists=True), default=None)
@click.option("--num-traces", type=int, default=25, show_default=True)
@click.option("--trials", type=int, default=1, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--csv-out", type=click.Path(), default=None)
@click.pass_context
def sim_run(
    ctx: click.Context,
    stages: tuple[str, ...],
    profiles: tuple[str, ...],
    traces_file: str | None,
    num_traces: int,
    trials: int,
    seed: int,
    csv_out: str | None,
):
    """Run the stage matrix over synthetic or supplied traces."""
    document, bindings, providers = default_policy_fixture()
    simulation = Simulation(document, bindings, providers)
    if traces_file:
        rows = json.loads(Path(traces_file).read_text(encoding="utf-8"))
        trace_list = [PageTrace.from_json(r) for r in rows]
    else:
        trace_list = generate_traces(num_traces, seed=seed)
    simulation.bootstrap_verifications(trace_list, simulation.clock_now)
    stage_list = [Stage(s) for s in stages] if stages else list(Stage)
    profile_list = [DEFAULT_PROFILES[p] for p in profiles] if profiles else list(
        DEFAULT_PROFILES.values()
    )
    report = run_matrix(
        simulation, trace_list, profile_list, trials_per_cell=trials, seed=seed,
        stages=stage_list,
    )
    if csv_out:
        with open(csv_out, "w", encoding="utf-8", newline="") as fh:
            report.write_csv(fh)
    _emit(ctx, report.to_json())


@main.group()
def insights():
    """Longitudinal snapshot analytics."""


@insights.command("run")
@click.option("--snapshots", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--registrations", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--rankings", "rankings_dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--out-dir", type=click.Path(file_okay=False), default=None)
@click.option("--age-margin", type=int, default=0, show_default=True)
@click.option("--rank-margin", type=int, default=0, show_default=True)
@click.pass_context
def insights_run(
    ctx: click.Context,
    snapshots: str,
    registrations: str,
    rankings_dir: str,
    out_dir: str | None,
    age_margin: int,
    rank_margin: int,
):
    """Compute per-site series, stability, and suggested thresholds."""
    registration_provider = RegistrationProvider(registrations)
    ranking_provider = RankingProvider(rankings_dir)
    try:
        series_by_site = insights_mod.load_snapshots(snapshots)
    except (OSError, ValueError, KeyError) as exc:
        raise click.ClickException(f"cannot read snapshots: {exc}") from exc
    summary: dict[str, Any] = {"sites": {}}
    out_path = Path(out_dir) if out_dir else None
    if out_path:
        out_path.mkdir(parents=True, exist_ok=True)
    for site, series in sorted(series_by_site.items()):
        age_series = insights_mod.registration_age_series(series, registration_provider)
        rank_series = insights_mod.lowest_rank_series(series, ranking_provider, True)
        site_row: dict[str, Any] = {
            "points": len(series.points),
            "ageSeries": [[i.label, v] for i, v in age_series],
            "rankSeries": [[i.label, v] for i, v in rank_series],
        }
        try:
            site_row["stability"] = insights_mod.classify_stability(age_series).value
        except LimsError:
            site_row["stability"] = "indeterminate"
        try:
            thresholds = insights_mod.suggest_thresholds(
                age_series, rank_series, age_margin, rank_margin
            )
            site_row["suggestedThresholds"] = thresholds.to_json()
            site_row["replayViolations"] = len(
                insights_mod.replay_thresholds(age_series, rank_series, thresholds)
            )
        except LimsError:
            site_row["suggestedThresholds"] = None
        summary["sites"][site] = site_row
        if out_path:
            with (out_path / f"{site}.csv").open("w", encoding="utf-8", newline="") as fh:
                insights_mod.write_series_csv(fh, site, age_series, rank_series)
    if out_path:
        (out_path / "summary.json").write_text(
            json.dumps(summary, indent=2), encoding="utf-8"
        )
    _emit(ctx, summary)


if __name__ == "__main__":
    main()
