/** Hash router: exactly two routes, chat and review. */

export type Route = { name: "chat" } | { name: "review"; sessionId: string };

export function parseHash(hash: string): Route {
  const path = hash.replace(/^#/, "");
  const parts = path.split("/").filter((part) => part.length > 0);
  if (parts[0] === "review") {
    return { name: "review", sessionId: decodeURIComponent(parts[1] ?? "") };
  }
  return { name: "chat" };
}

export function startRouter(win: Window, onRoute: (route: Route) => void): void {
  const dispatch = () => onRoute(parseHash(win.location.hash));
  win.addEventListener("hashchange", dispatch);
  dispatch();
}
