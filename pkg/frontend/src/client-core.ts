/**
 * Portable client decision logic: verdict cache, heartbeat handling, and
 * the fail-open state machine. This mirrors the backend's reference
 * client implementation event for event; the shared vector suite under
 * ../../tests/vectors pins the equivalence.
 *
 * The worker holds no policy logic. Verdicts come only from the server;
 * this module decides when to ask, what to cache, and when to get out of
 * the way.
 */

export type InterceptAction = "pass_through" | "blocked_404";
export type ClientMode = "active" | "no_op";

export interface StatusResponse {
  allowed: boolean;
  ttlSeconds: number;
  reason: string;
}

export interface HeartbeatResponse {
  mode: string;
  pollIntervalSeconds: number;
  invalidations: string[];
  configEpoch: number;
}

/** Implementations throw TransportFailure when the backend is unreachable. */
export interface Transport {
  queryStatus(pageUrl: string, resourceUrl: string, clientId: string): Promise<StatusResponse>;
  heartbeat(clientId: string, epoch: number): Promise<HeartbeatResponse>;
}

export class TransportFailure extends Error {}

export interface CacheEntry {
  linkId: string;
  pageUrl: string;
  resourceUrl: string;
  allowed: boolean;
  expiresAtMs: number;
}

/** Optional persistence surviving worker termination. */
export interface CacheStore {
  load(): Promise<CacheEntry[]>;
  put(entry: CacheEntry): Promise<void>;
  remove(linkId: string): Promise<void>;
}

export interface ClientConfig {
  clientId: string;
  version: string;
  failureThreshold: number;
  pollIntervalSeconds: number;
}

export const DEFAULT_CONFIG: ClientConfig = {
  clientId: "sw-client",
  version: "1",
  failureThreshold: 3,
  pollIntervalSeconds: 60,
};

const DEFAULT_PORTS: Record<string, string> = { "http:": "80", "https:": "443" };

/**
 * Normalize an absolute http(s) URL to `host/path` form: scheme stripped,
 * default port removed, host lowercased, query and fragment dropped.
 * Returns null for anything unparseable (the caller fails open).
 */
export function normalizeUrl(raw: string): string | null {
  let url: URL;
  try {
    url = new URL(raw.trim());
  } catch {
    return null;
  }
  if (!(url.protocol in DEFAULT_PORTS) || url.hostname === "") {
    return null;
  }
  let host = url.hostname.toLowerCase();
  if (url.port !== "" && url.port !== DEFAULT_PORTS[url.protocol]) {
    host = `${host}:${url.port}`;
  }
  // URL synthesizes "/" for bare authorities; keep an empty path empty so
  // identities match the backend's normalization.
  let path = url.pathname;
  if (path === "/") {
    const afterScheme = raw.trim().slice(raw.trim().indexOf("://") + 3);
    const boundary = afterScheme.search(/[/?#]/);
    if (boundary === -1 || afterScheme[boundary] !== "/") {
      path = "";
    }
  }
  return `${host}${path}`;
}

/** 128-bit stable id of a normalized (page, resource) pair. */
export async function linkId(pageUrl: string, resourceUrl: string): Promise<string> {
  const bytes = new TextEncoder().encode(`${pageUrl}\n${resourceUrl}`);
  const digest = await crypto.subtle.digest("SHA-256", bytes);
  return Array.from(new Uint8Array(digest).slice(0, 16))
    .map((b) => b.toString(16).padStart(2, "0"))
    .join("");
}

const PATTERN_CHARS = /^[A-Za-z0-9./:_\-*]*$/;
const LINK_ID_HEX = /^[0-9a-f]{32}$/;

/** Compile a glob pattern (anchored, case-insensitive host) to a RegExp. */
export function compilePattern(pattern: string): RegExp | null {
  if (!PATTERN_CHARS.test(pattern)) {
    return null;
  }
  const slash = pattern.indexOf("/");
  const canonical =
    slash === -1
      ? pattern.toLowerCase()
      : pattern.slice(0, slash).toLowerCase() + pattern.slice(slash);
  const escaped = canonical.replace(/[.*+?^${}()|[\]\\]/g, (c) =>
    c === "*" ? ".*" : `\\${c}`,
  );
  return new RegExp(`^${escaped}$`, "s");
}

export interface ClientState {
  mode: ClientMode;
  consecutiveFailures: number;
  configEpoch: number;
  pollIntervalSeconds: number;
  serverMode: string | null;
}

export class IntegrityClient {
  readonly config: ClientConfig;
  readonly state: ClientState;
  readonly cache = new Map<string, CacheEntry>();
  queryCount = 0;
  ignoredMessages = 0;
  private installedVersion: string | null = null;
  private refreshConsumed = false;
  private readonly store: CacheStore | null;

  constructor(config: Partial<ClientConfig> = {}, store: CacheStore | null = null) {
    this.config = { ...DEFAULT_CONFIG, ...config };
    this.state = {
      mode: "active",
      consecutiveFailures: 0,
      configEpoch: 0,
      pollIntervalSeconds: this.config.pollIntervalSeconds,
      serverMode: null,
    };
    this.store = store;
  }

  /** Rehydrate the in-memory cache from persistent storage. */
  async restore(nowMs: number): Promise<number> {
    if (this.store === null) {
      return 0;
    }
    let restored = 0;
    for (const entry of await this.store.load()) {
      if (nowMs < entry.expiresAtMs) {
        this.cache.set(entry.linkId, entry);
        restored += 1;
      }
    }
    return restored;
  }

  async intercept(
    pageUrl: string,
    resourceUrl: string,
    nowMs: number,
    transport: Transport,
  ): Promise<InterceptAction> {
    if (this.state.mode === "no_op") {
      return "pass_through";
    }
    const page = normalizeUrl(pageUrl);
    const resource = normalizeUrl(resourceUrl);
    if (page === null || resource === null) {
      return "pass_through";
    }
    const key = await linkId(page, resource);
    const entry = this.cache.get(key);
    if (entry !== undefined && nowMs < entry.expiresAtMs) {
      return entry.allowed ? "pass_through" : "blocked_404";
    }
    let response: StatusResponse;
    try {
      this.queryCount += 1;
      response = await transport.queryStatus(pageUrl, resourceUrl, this.config.clientId);
    } catch {
      this.recordFailure();
      return "pass_through"; // fail open for this request
    }
    this.recordSuccess();
    const fresh: CacheEntry = {
      linkId: key,
      pageUrl: page,
      resourceUrl: resource,
      allowed: response.allowed,
      expiresAtMs: nowMs + response.ttlSeconds * 1000,
    };
    this.cache.set(key, fresh);
    if (this.store !== null) {
      await this.store.put(fresh); // persisted before the verdict is served
    }
    return response.allowed ? "pass_through" : "blocked_404";
  }

  async heartbeatTick(nowMs: number, transport: Transport): Promise<boolean> {
    let response: HeartbeatResponse;
    try {
      response = await transport.heartbeat(this.config.clientId, this.state.configEpoch);
    } catch {
      this.recordFailure();
      return false;
    }
    this.recordSuccess();
    for (const target of response.invalidations) {
      await this.purge(target);
    }
    this.state.configEpoch = response.configEpoch;
    this.state.pollIntervalSeconds = response.pollIntervalSeconds;
    this.state.serverMode = response.mode;
    return true;
  }

  private async purge(target: string): Promise<void> {
    if (LINK_ID_HEX.test(target)) {
      this.cache.delete(target);
      if (this.store !== null) {
        await this.store.remove(target);
      }
      return;
    }
    const pattern = compilePattern(target);
    if (pattern === null) {
      return;
    }
    for (const [key, entry] of [...this.cache]) {
      if (pattern.test(entry.resourceUrl)) {
        this.cache.delete(key);
        if (this.store !== null) {
          await this.store.remove(key);
        }
      }
    }
  }

  /** True exactly once per fresh installation or version change. */
  postInstallRefreshNeeded(version: string): boolean {
    if (this.installedVersion === version) {
      return false;
    }
    this.installedVersion = version;
    this.refreshConsumed = false;
    return true;
  }

  /** First registration-script message wins; the rest are counted noise. */
  handleRegistrationMessage(): boolean {
    if (!this.refreshConsumed) {
      this.refreshConsumed = true;
      return true;
    }
    this.ignoredMessages += 1;
    return false;
  }

  private recordFailure(): void {
    this.state.consecutiveFailures += 1;
    if (this.state.consecutiveFailures >= this.config.failureThreshold) {
      this.state.mode = "no_op";
    }
  }

  private recordSuccess(): void {
    this.state.consecutiveFailures = 0;
    this.state.mode = "active";
  }
}
