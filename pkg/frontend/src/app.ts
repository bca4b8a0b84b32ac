/** Bootstraps the single-page client: config, API client, routes, views. */

import { ApiClient } from "./api.js";
import { ChatView, SESSION_STORAGE_KEY } from "./chat.js";
import { resolveConfig } from "./config.js";
import { ReviewView } from "./review.js";
import { startRouter } from "./router.js";

export function startApp(win: Window): void {
  const doc = win.document;
  const main = doc.getElementById("app");
  if (!main) throw new Error("missing #app mount point");

  const config = resolveConfig(win);
  const client = new ApiClient({ baseUrl: config.apiBase, token: config.token });

  const chatRoot = doc.createElement("section");
  chatRoot.id = "chat-view";
  const reviewRoot = doc.createElement("section");
  reviewRoot.id = "review-view";
  main.append(chatRoot, reviewRoot);

  const chat = new ChatView(client, win);
  chat.mount(chatRoot);
  const review = new ReviewView(client);
  review.mount(reviewRoot);

  const reviewNav = doc.getElementById("nav-review") as HTMLAnchorElement | null;
  const syncNav = () => {
    if (!reviewNav) return;
    const sessionId = win.sessionStorage.getItem(SESSION_STORAGE_KEY) ?? "";
    reviewNav.href = `#/review/${sessionId}`;
  };
  chat.onStateChange = syncNav;

  let chatStarted = false;
  startRouter(win, (route) => {
    syncNav();
    if (route.name === "chat") {
      chatRoot.hidden = false;
      reviewRoot.hidden = true;
      if (!chatStarted) {
        chatStarted = true;
        void chat.start();
      }
    } else {
      chatRoot.hidden = true;
      reviewRoot.hidden = false;
      void review.load(route.sessionId);
    }
  });
}
