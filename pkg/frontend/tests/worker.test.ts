/**
 * Worker wiring against a simulated service-worker scope: fetch-event
 * interception, 404 synthesis, install/activate/message lifecycle, and
 * the uninstalled-is-untouched property.
 */

import { describe, expect, it } from "vitest";

import {
  TransportFailure,
  type HeartbeatResponse,
  type StatusResponse,
  type Transport,
} from "../src/client-core.js";
import { MemoryCacheStore } from "../src/storage.js";
import { registerIntegrityWorker } from "../src/register.js";
import { blockedResponse, setupWorker, type WorkerScopeLike } from "../src/worker.js";

class FakeWindow {
  navigations = 0;
  constructor(public url: string) {}
  async navigate(url: string): Promise<void> {
    this.navigations += 1;
  }
}

type Handler = (event: unknown) => void;

class FakeScope implements WorkerScopeLike {
  handlers = new Map<string, Handler[]>();
  windows: FakeWindow[] = [new FakeWindow("https://shop.example/checkout")];
  claimed = 0;

  addEventListener(type: string, handler: Handler): void {
    const list = this.handlers.get(type) ?? [];
    list.push(handler);
    this.handlers.set(type, list);
  }

  async skipWaiting(): Promise<void> {}

  clients = {
    claim: async () => {
      this.claimed += 1;
    },
    matchAll: async () => this.windows,
  };

  registration = { scope: "https://shop.example/" };

  async dispatch(type: string, event: unknown): Promise<void> {
    for (const handler of this.handlers.get(type) ?? []) {
      handler(event);
    }
  }
}

class FakeFetchEvent {
  response: Promise<Response> | null = null;
  constructor(
    public request: { url: string; mode?: string; referrer?: string },
  ) {}
  respondWith(response: Response | Promise<Response>): void {
    this.response = Promise.resolve(response);
  }
}

class ExtendableEvent {
  pending: Promise<unknown> | null = null;
  waitUntil(promise: Promise<unknown>): void {
    this.pending = promise;
  }
}

class StubTransport implements Transport {
  queries = 0;
  constructor(
    public allowedFor: (resourceUrl: string) => boolean | "fail",
    public heartbeatResponse: HeartbeatResponse = {
      mode: "enforce",
      pollIntervalSeconds: 60,
      invalidations: [],
      configEpoch: 1,
    },
  ) {}

  async queryStatus(pageUrl: string, resourceUrl: string): Promise<StatusResponse> {
    this.queries += 1;
    const verdict = this.allowedFor(resourceUrl);
    if (verdict === "fail") {
      throw new TransportFailure("down");
    }
    return { allowed: verdict, ttlSeconds: 600, reason: "policy" };
  }

  async heartbeat(): Promise<HeartbeatResponse> {
    return this.heartbeatResponse;
  }
}

const NETWORK_BODY = "network-bytes";

function networkFetch(): Promise<Response> {
  return Promise.resolve(new Response(NETWORK_BODY, { status: 200 }));
}

interface Harness {
  scope: FakeScope;
  transport: StubTransport;
  controller: ReturnType<typeof setupWorker>;
}

function makeHarness(allowedFor: (url: string) => boolean | "fail"): Harness {
  const scope = new FakeScope();
  const transport = new StubTransport(allowedFor);
  const controller = setupWorker(scope, {
    transport,
    store: null,
    fetchFn: networkFetch,
    now: () => 1_000_000,
    scheduleHeartbeats: false,
    config: { clientId: "test", version: "v1", failureThreshold: 3, pollIntervalSeconds: 60 },
  });
  return { scope, transport, controller };
}

async function activate(scope: FakeScope): Promise<void> {
  const install = new ExtendableEvent();
  await scope.dispatch("install", install);
  await install.pending;
  const activateEvent = new ExtendableEvent();
  await scope.dispatch("activate", activateEvent);
  await activateEvent.pending;
}

function fetchEvent(url: string, mode = "no-cors"): FakeFetchEvent {
  return new FakeFetchEvent({
    url,
    mode,
    referrer: "https://shop.example/checkout",
  });
}

describe("fetch interception", () => {
  it("synthesizes a 404 with empty body and no caching for denied resources", async () => {
    const { scope } = makeHarness(() => false);
    await activate(scope);
    const event = fetchEvent("https://evil.example/skimmer.js");
    await scope.dispatch("fetch", event);
    const response = await event.response!;
    expect(response.status).toBe(404);
    expect(response.headers.get("cache-control")).toBe("no-store");
    expect(await response.text()).toBe("");
  });

  it("passes allowed requests through to the network", async () => {
    const { scope, transport } = makeHarness(() => true);
    await activate(scope);
    const event = fetchEvent("https://cdn.example/app.js");
    await scope.dispatch("fetch", event);
    const response = await event.response!;
    expect(response.status).toBe(200);
    expect(await response.text()).toBe(NETWORK_BODY);
    expect(transport.queries).toBe(1);
  });

  it("intercepts navigation requests too, using the request URL as the page", async () => {
    const seen: string[] = [];
    const scope = new FakeScope();
    const transport = new StubTransport(() => true);
    const original = transport.queryStatus.bind(transport);
    transport.queryStatus = async (pageUrl, resourceUrl) => {
      seen.push(pageUrl);
      return original(pageUrl, resourceUrl);
    };
    setupWorker(scope, {
      transport,
      store: null,
      fetchFn: networkFetch,
      scheduleHeartbeats: false,
    });
    const event = fetchEvent("https://shop.example/landing", "navigate");
    await scope.dispatch("fetch", event);
    await event.response!;
    expect(seen).toEqual(["https://shop.example/landing"]);
  });

  it("serves repeat requests from cache without re-querying", async () => {
    const { scope, transport } = makeHarness(() => false);
    await activate(scope);
    for (let i = 0; i < 3; i += 1) {
      const event = fetchEvent("https://evil.example/skimmer.js");
      await scope.dispatch("fetch", event);
      expect((await event.response!).status).toBe(404);
    }
    expect(transport.queries).toBe(1);
  });

  it("fails open on transport failure and goes silent past the threshold", async () => {
    const { scope, transport, controller } = makeHarness(() => "fail");
    await activate(scope);
    for (let i = 0; i < 5; i += 1) {
      const event = fetchEvent(`https://cdn.example/r${i}.js`);
      await scope.dispatch("fetch", event);
      const response = await event.response!;
      expect(response.status).toBe(200); // network result, never an error page
    }
    expect(controller.client.state.mode).toBe("no_op");
    expect(transport.queries).toBe(3); // threshold reached, then no more queries
  });
});

describe("lifecycle", () => {
  it("activation claims clients; the first registration message refreshes tabs once", async () => {
    const { scope, controller } = makeHarness(() => true);
    await activate(scope);
    expect(scope.claimed).toBe(1);
    expect(controller.refreshCount).toBe(0);
    await scope.dispatch("message", { data: { type: "post-install" } });
    expect(controller.refreshCount).toBe(1);
    expect(scope.windows[0]!.navigations).toBe(1);
  });

  it("ignores and counts spurious message floods", async () => {
    const { scope, controller } = makeHarness(() => true);
    await activate(scope);
    for (let i = 0; i < 100; i += 1) {
      await scope.dispatch("message", { data: { type: "post-install" } });
    }
    expect(controller.refreshCount).toBe(1);
    expect(controller.client.ignoredMessages).toBe(99);
  });

  it("heartbeat invalidations force a single re-query", async () => {
    const scope = new FakeScope();
    const transport = new StubTransport(() => true);
    const controller = setupWorker(scope, {
      transport,
      store: null,
      fetchFn: networkFetch,
      now: () => 1_000_000,
      scheduleHeartbeats: false,
    });
    const event = fetchEvent("https://cdn.example/app.js");
    await scope.dispatch("fetch", event);
    await event.response!;
    expect(transport.queries).toBe(1);
    const lid = [...controller.client.cache.keys()][0]!;
    transport.heartbeatResponse = {
      mode: "enforce",
      pollIntervalSeconds: 60,
      invalidations: [lid],
      configEpoch: 2,
    };
    await controller.heartbeatNow();
    for (let i = 0; i < 2; i += 1) {
      const again = fetchEvent("https://cdn.example/app.js");
      await scope.dispatch("fetch", again);
      await again.response!;
    }
    expect(transport.queries).toBe(2);
  });
});

describe("uninstalled behavior", () => {
  it("a scope without the worker leaves fetches untouched", async () => {
    const scope = new FakeScope(); // navigation after unregistration: nothing listens
    const event = fetchEvent("https://cdn.example/app.js");
    await scope.dispatch("fetch", event);
    expect(event.response).toBeNull();
  });

  it("registration helper reports unsupported environments without side effects", async () => {
    expect(await registerIntegrityWorker(undefined, undefined)).toBe(false);
  });
});

describe("persistence", () => {
  it("verdicts survive worker termination via the cache store", async () => {
    const store = new MemoryCacheStore();
    const first = new FakeScope();
    const transport = new StubTransport(() => false);
    setupWorker(first, {
      transport,
      store,
      fetchFn: networkFetch,
      now: () => 1_000_000,
      scheduleHeartbeats: false,
    });
    const event = fetchEvent("https://evil.example/skimmer.js");
    await first.dispatch("fetch", event);
    expect((await event.response!).status).toBe(404);
    expect(transport.queries).toBe(1);

    // "terminated" worker: fresh scope + fresh client, same storage
    const revived = new FakeScope();
    setupWorker(revived, {
      transport,
      store,
      fetchFn: networkFetch,
      now: () => 1_200_000, // still within the 600 s TTL
      scheduleHeartbeats: false,
    });
    const replay = fetchEvent("https://evil.example/skimmer.js");
    await revived.dispatch("fetch", replay);
    expect((await replay.response!).status).toBe(404);
    expect(transport.queries).toBe(1); // no extra query: restored from storage
  });
});

describe("response synthesis", () => {
  it("blockedResponse carries no body and forbids caching", async () => {
    const response = blockedResponse();
    expect(response.status).toBe(404);
    expect(response.headers.get("cache-control")).toBe("no-store");
    expect(await response.text()).toBe("");
  });
});
