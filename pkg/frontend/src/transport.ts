/**
 * HTTP transport speaking the backend's wire protocol:
 * POST /v1/query-status and GET /v1/heartbeat.
 */

import type { HeartbeatResponse, StatusResponse, Transport } from "./client-core.js";
import { TransportFailure } from "./client-core.js";

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class HttpTransport implements Transport {
  constructor(
    private readonly apiBase: string,
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  async queryStatus(
    pageUrl: string,
    resourceUrl: string,
    clientId: string,
  ): Promise<StatusResponse> {
    let response: Response;
    try {
      response = await this.fetchFn(`${this.apiBase}/v1/query-status`, {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify({ pageUrl, resourceUrl, clientId }),
      });
    } catch (error) {
      throw new TransportFailure(String(error));
    }
    if (!response.ok) {
      throw new TransportFailure(`query-status returned ${response.status}`);
    }
    return (await response.json()) as StatusResponse;
  }

  async heartbeat(clientId: string, epoch: number): Promise<HeartbeatResponse> {
    const params = new URLSearchParams({ clientId, epoch: String(epoch) });
    let response: Response;
    try {
      response = await this.fetchFn(`${this.apiBase}/v1/heartbeat?${params}`, {
        method: "GET",
      });
    } catch (error) {
      throw new TransportFailure(String(error));
    }
    if (!response.ok) {
      throw new TransportFailure(`heartbeat returned ${response.status}`);
    }
    return (await response.json()) as HeartbeatResponse;
  }
}
