/**
 * Service-worker wiring around the integrity client.
 *
 * The worker proxies every fetch in its scope: allowed requests hit the
 * network untouched (response caching stays with the browser); denied
 * requests get a synthesized 404 with an empty body and no caching
 * headers. Backend trouble always fails open, and after enough
 * consecutive failures the client stops querying entirely until a
 * heartbeat succeeds.
 */

import {
  IntegrityClient,
  Transport,
  type ClientConfig,
} from "./client-core.js";
import { HttpTransport, type FetchLike } from "./transport.js";
import { IdbCacheStore } from "./storage.js";
import type { CacheStore } from "./client-core.js";

interface ClientLike {
  url: string;
  navigate?(url: string): Promise<unknown>;
}

interface ClientsLike {
  claim(): Promise<void>;
  matchAll(options?: { type?: string }): Promise<ClientLike[]>;
}

interface FetchEventLike {
  request: {
    url: string;
    mode?: string;
    referrer?: string;
  };
  respondWith(response: Response | Promise<Response>): void;
}

interface ExtendableEventLike {
  waitUntil(promise: Promise<unknown>): void;
}

export interface WorkerScopeLike {
  addEventListener(type: string, handler: (event: never) => void): void;
  skipWaiting(): Promise<void>;
  clients: ClientsLike;
  registration?: { scope: string };
  location?: { href: string };
}

export interface WorkerOptions {
  apiBase?: string;
  config?: Partial<ClientConfig>;
  transport?: Transport;
  store?: CacheStore | null;
  fetchFn?: FetchLike;
  now?: () => number;
  scheduleHeartbeats?: boolean;
}

export interface WorkerController {
  client: IntegrityClient;
  transport: Transport;
  /** Runs one heartbeat poll immediately; used by tests and timers. */
  heartbeatNow(): Promise<boolean>;
  refreshCount: number;
}

export function blockedResponse(): Response {
  return new Response(null, {
    status: 404,
    statusText: "Not Found",
    headers: { "cache-control": "no-store" },
  });
}

export function setupWorker(
  scope: WorkerScopeLike,
  options: WorkerOptions = {},
): WorkerController {
  const now = options.now ?? (() => Date.now());
  const networkFetch: FetchLike =
    options.fetchFn ?? ((input, init) => fetch(input, init));
  const transport =
    options.transport ?? new HttpTransport(options.apiBase ?? "", networkFetch);
  const store = options.store === undefined ? new IdbCacheStore() : options.store;
  const client = new IntegrityClient(options.config ?? {}, store);
  const restored = client.restore(now());

  const controller: WorkerController = {
    client,
    transport,
    refreshCount: 0,
    async heartbeatNow() {
      return client.heartbeatTick(now(), transport);
    },
  };

  async function refreshAllWindows(): Promise<void> {
    controller.refreshCount += 1;
    const windows = await scope.clients.matchAll({ type: "window" });
    await Promise.all(
      windows.map((w) => (w.navigate ? w.navigate(w.url).catch(() => null) : null)),
    );
  }

  async function respond(event: FetchEventLike): Promise<Response> {
    const request = event.request;
    const pageUrl =
      request.mode === "navigate"
        ? request.url
        : request.referrer ||
          scope.location?.href ||
          scope.registration?.scope ||
          request.url;
    let action: "pass_through" | "blocked_404";
    try {
      await restored;
      action = await client.intercept(pageUrl, request.url, now(), transport);
    } catch {
      action = "pass_through"; // internal failures behave as transport failures
    }
    if (action === "blocked_404") {
      return blockedResponse();
    }
    return networkFetch(request.url);
  }

  scope.addEventListener("install", ((event: ExtendableEventLike) => {
    event.waitUntil(scope.skipWaiting());
  }) as never as (event: never) => void);

  scope.addEventListener("activate", ((event: ExtendableEventLike) => {
    event.waitUntil(
      (async () => {
        await scope.clients.claim();
        // (Re-)arm the refresh latch for this version. The reload itself is
        // message-driven: the registration snippet pings once after install
        // so tabs reload with interception in force.
        client.postInstallRefreshNeeded(client.config.version);
      })(),
    );
  }) as never as (event: never) => void);

  scope.addEventListener("fetch", ((event: FetchEventLike) => {
    event.respondWith(respond(event));
  }) as never as (event: never) => void);

  scope.addEventListener("message", ((event: { data?: unknown }) => {
    // The registration snippet pings once after install; floods of
    // spurious messages are ignored and counted.
    if (client.handleRegistrationMessage()) {
      void refreshAllWindows();
    }
  }) as never as (event: never) => void);

  if (options.scheduleHeartbeats ?? true) {
    const tick = async () => {
      await controller.heartbeatNow().catch(() => false);
      setTimeout(tick, client.state.pollIntervalSeconds * 1000);
    };
    setTimeout(tick, client.state.pollIntervalSeconds * 1000);
  }

  return controller;
}
