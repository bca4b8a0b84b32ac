/**
 * Runtime configuration. The API base URL (and optional bearer token) can
 * be set per deployment without rebuilding:
 *
 *   1. query parameters:  index.html?api=https://host:8080&token=...
 *   2. globals set before the app module loads: window.ECP_API_BASE,
 *      window.ECP_API_TOKEN (e.g. from a tiny inline <script>)
 *   3. default: same origin as the page (the server's --static-dir mode)
 */

export interface AppConfig {
  apiBase: string;
  token: string | null;
}

export function resolveConfig(win: Window): AppConfig {
  const params = new URLSearchParams(win.location.search);
  const globals = win as unknown as Record<string, unknown>;
  const fromGlobalBase = typeof globals.ECP_API_BASE === "string" ? globals.ECP_API_BASE : "";
  const fromGlobalToken =
    typeof globals.ECP_API_TOKEN === "string" ? globals.ECP_API_TOKEN : null;
  return {
    apiBase: params.get("api") ?? fromGlobalBase,
    token: params.get("token") ?? fromGlobalToken,
  };
}
