import { ConsoleClient } from "./client.js";
import { grabDom, wireUp } from "./ui.js";

function bridgeUrl(): string {
  const params = new URLSearchParams(window.location.search);
  const fromQuery = params.get("bridge");
  if (fromQuery !== null) {
    return fromQuery;
  }
  return `ws://${window.location.hostname || "127.0.0.1"}:7421`;
}

window.addEventListener("load", () => {
  const client = new ConsoleClient({ url: bridgeUrl() });
  wireUp(grabDom(document), client);
  client.connect();
});
