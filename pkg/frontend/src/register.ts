/**
 * Registration snippet pages embed. Registers the worker file served at
 * the site root with scope "/", so it intercepts every fetch on every
 * page of the domain, then pings the active worker exactly once to
 * trigger the post-install tab refresh.
 */

export interface RegistrationSnippet {
  scriptUrl: string;
  scope: "/";
}

export const DEFAULT_SNIPPET: RegistrationSnippet = { scriptUrl: "/sw.js", scope: "/" };

export async function registerIntegrityWorker(
  snippet: RegistrationSnippet = DEFAULT_SNIPPET,
  container: ServiceWorkerContainer | undefined = globalThis.navigator?.serviceWorker,
): Promise<boolean> {
  if (container === undefined) {
    return false; // unsupported browser: pages behave exactly as without us
  }
  try {
    await container.register(snippet.scriptUrl, { scope: snippet.scope, type: "module" });
    const ready = await container.ready;
    ready.active?.postMessage({ type: "post-install" });
    return true;
  } catch {
    return false;
  }
}

/** The literal one-line embed for sites that inline it. */
export const SNIPPET_TEXT =
  `<script>navigator.serviceWorker&&navigator.serviceWorker.register("/sw.js",{scope:"/",type:"module"})` +
  `.then(function(){return navigator.serviceWorker.ready}).then(function(r){r.active&&r.active.postMessage({type:"post-install"})});</script>`;
