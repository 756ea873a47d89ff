/**
 * Browser entry point. Wires the controller to the document, keeps the
 * long-poll loop alive while a chat is on, and repaints the countdown
 * between polls without rebuilding the page.
 *
 * The only configuration is the server base URL, taken from a ?server=
 * query parameter; with none given the client talks to its own origin.
 */

import { ArenaClient, type FetchFn } from "./api.js";
import { Controller } from "./controller.js";
import { displayRemaining } from "./state.js";
import { formatClock, render } from "./view.js";

function main(): void {
  const root = document.getElementById("app");
  if (root === null) throw new Error("missing #app mount point");

  const baseUrl = new URLSearchParams(window.location.search).get("server") ?? "";
  const fetchFn: FetchFn = (url, init) => window.fetch(url, init);
  const ctl = new Controller(new ArenaClient(baseUrl, fetchFn));

  let pollLoopRunning = false;
  const ensurePollLoop = (): void => {
    if (pollLoopRunning || ctl.state.phase !== "chatting") return;
    pollLoopRunning = true;
    void ctl.runPollLoop().finally(() => {
      pollLoopRunning = false;
    });
  };

  ctl.onChange(() => {
    render(root, ctl);
    ensurePollLoop();
  });

  window.setInterval(() => {
    if (ctl.state.phase !== "chatting") return;
    const clock = root.querySelector("[data-role=countdown]");
    if (clock !== null) {
      clock.textContent = formatClock(displayRemaining(ctl.state, Date.now()));
    }
  }, 500);

  render(root, ctl);
}

main();
