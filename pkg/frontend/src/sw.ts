/// <reference lib="webworker" />
/**
 * Worker entry point served at the site root (e.g. /sw.js after build).
 * The API base defaults to same-origin; deployments fronted elsewhere can
 * rebuild with API_BASE set.
 */

import { setupWorker } from "./worker.js";

declare const self: ServiceWorkerGlobalScope;

const API_BASE = ""; // same origin

setupWorker(self as never, {
  apiBase: API_BASE,
  config: { clientId: "sw", version: "1" },
});
