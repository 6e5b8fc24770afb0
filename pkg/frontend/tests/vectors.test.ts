/**
 * Behavioral-equivalence gate: the same JSON event vectors that pin the
 * backend's reference client must pass against this implementation,
 * scenario for scenario.
 */

import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";
import { describe, expect, it } from "vitest";

import {
  IntegrityClient,
  TransportFailure,
  type HeartbeatResponse,
  type StatusResponse,
  type Transport,
} from "../src/client-core.js";

const here = dirname(fileURLToPath(import.meta.url));
const VECTOR_PATH = join(here, "..", "..", "tests", "vectors", "client_state_vectors.json");

interface TransportScript {
  kind: "ok" | "fail" | "none";
  allowed?: boolean;
  ttlSeconds?: number;
  mode?: string;
  pollIntervalSeconds?: number;
  invalidations?: string[];
  configEpoch?: number;
}

interface VectorEvent {
  type: "intercept" | "heartbeat" | "install" | "message";
  atMs?: number;
  pageUrl?: string;
  resourceUrl?: string;
  version?: string;
  transport?: TransportScript;
  expect: Record<string, unknown>;
}

interface Scenario {
  name: string;
  config: { failureThreshold: number; pollIntervalSeconds: number };
  events: VectorEvent[];
}

const vectors = JSON.parse(readFileSync(VECTOR_PATH, "utf-8")) as {
  format: number;
  scenarios: Scenario[];
};

class VectorTransport implements Transport {
  outcome: TransportScript = { kind: "none" };
  calls = 0;

  arm(outcome: TransportScript | undefined): void {
    this.outcome = outcome ?? { kind: "none" };
    this.calls = 0;
  }

  async queryStatus(): Promise<StatusResponse> {
    this.calls += 1;
    if (this.outcome.kind === "ok") {
      return {
        allowed: this.outcome.allowed ?? true,
        ttlSeconds: this.outcome.ttlSeconds ?? 60,
        reason: "policy",
      };
    }
    if (this.outcome.kind === "fail") {
      throw new TransportFailure("scripted failure");
    }
    throw new Error("queryStatus called when none was scripted");
  }

  async heartbeat(): Promise<HeartbeatResponse> {
    this.calls += 1;
    if (this.outcome.kind === "ok") {
      return {
        mode: this.outcome.mode ?? "enforce",
        pollIntervalSeconds: this.outcome.pollIntervalSeconds ?? 60,
        invalidations: this.outcome.invalidations ?? [],
        configEpoch: this.outcome.configEpoch ?? 1,
      };
    }
    if (this.outcome.kind === "fail") {
      throw new TransportFailure("scripted failure");
    }
    throw new Error("heartbeat called when none was scripted");
  }
}

async function runScenario(scenario: Scenario): Promise<void> {
  const client = new IntegrityClient({
    failureThreshold: scenario.config.failureThreshold,
    pollIntervalSeconds: scenario.config.pollIntervalSeconds,
  });
  const transport = new VectorTransport();
  for (const [step, event] of scenario.events.entries()) {
    const label = `${scenario.name}[${step}]`;
    const expected = event.expect;
    if (event.type === "intercept") {
      transport.arm(event.transport);
      const action = await client.intercept(
        event.pageUrl!,
        event.resourceUrl!,
        event.atMs ?? 0,
        transport,
      );
      expect(action, label).toBe(expected.action);
      expect(transport.calls > 0, label).toBe(expected.queried);
    } else if (event.type === "heartbeat") {
      transport.arm(event.transport);
      const applied = await client.heartbeatTick(event.atMs ?? 0, transport);
      expect(applied, label).toBe(expected.applied);
    } else if (event.type === "install") {
      expect(client.postInstallRefreshNeeded(event.version!), label).toBe(expected.refresh);
    } else if (event.type === "message") {
      expect(client.handleRegistrationMessage(), label).toBe(expected.refresh);
    }
    if ("mode" in expected) {
      expect(client.state.mode, label).toBe(expected.mode);
    }
    if ("consecutiveFailures" in expected) {
      expect(client.state.consecutiveFailures, label).toBe(expected.consecutiveFailures);
    }
    if ("ignoredMessages" in expected) {
      expect(client.ignoredMessages, label).toBe(expected.ignoredMessages);
    }
    if ("pollIntervalSeconds" in expected) {
      expect(client.state.pollIntervalSeconds, label).toBe(expected.pollIntervalSeconds);
    }
    if ("configEpoch" in expected) {
      expect(client.state.configEpoch, label).toBe(expected.configEpoch);
    }
  }
}

describe("shared client behavior vectors", () => {
  it("carries at least the required scenario coverage", () => {
    expect(vectors.scenarios.length).toBeGreaterThanOrEqual(30);
  });

  for (const scenario of vectors.scenarios) {
    it(scenario.name, async () => {
      await runScenario(scenario);
    });
  }
});
