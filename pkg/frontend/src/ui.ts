// Thin DOM layer: renders the reducer state, forwards clicks and chat input.

import { ConsoleClient } from "./client.js";
import { canSendChat, canSendCommand, ConsoleState } from "./state.js";

export interface ConsoleDom {
  banner: HTMLElement;
  phaseBadge: HTMLElement;
  probeReadout: HTMLElement;
  forceReadout: HTMLElement;
  forceCanvas: HTMLCanvasElement;
  chatLog: HTMLElement;
  chatInput: HTMLInputElement;
  chatSend: HTMLButtonElement;
  startButton: HTMLButtonElement;
  stopButton: HTMLButtonElement;
}

export function grabDom(root: Document): ConsoleDom {
  const get = (id: string) => {
    const el = root.getElementById(id);
    if (el === null) {
      throw new Error(`missing element #${id}`);
    }
    return el;
  };
  return {
    banner: get("banner"),
    phaseBadge: get("phase-badge"),
    probeReadout: get("probe-readout"),
    forceReadout: get("force-readout"),
    forceCanvas: get("force-canvas") as HTMLCanvasElement,
    chatLog: get("chat-log"),
    chatInput: get("chat-input") as HTMLInputElement,
    chatSend: get("chat-send") as HTMLButtonElement,
    startButton: get("start-button") as HTMLButtonElement,
    stopButton: get("stop-button") as HTMLButtonElement,
  };
}

function drawForceTrace(canvas: HTMLCanvasElement, state: ConsoleState): void {
  const ctx = canvas.getContext("2d");
  if (ctx === null) {
    return;
  }
  const { width, height } = canvas;
  ctx.clearRect(0, 0, width, height);
  ctx.strokeStyle = "#556";
  ctx.strokeRect(0.5, 0.5, width - 1, height - 1);
  const trace = state.forceTrace;
  if (trace.length < 2) {
    return;
  }
  const t0 = trace[0].t;
  const t1 = trace[trace.length - 1].t;
  const span = Math.max(1e-6, t1 - t0);
  const fMax = Math.max(10.0, ...trace.map((p) => p.force));
  ctx.strokeStyle = "#4da";
  ctx.lineWidth = 1.5;
  ctx.beginPath();
  trace.forEach((p, i) => {
    const x = ((p.t - t0) / span) * (width - 8) + 4;
    const y = height - 4 - (p.force / fMax) * (height - 8);
    if (i === 0) {
      ctx.moveTo(x, y);
    } else {
      ctx.lineTo(x, y);
    }
  });
  ctx.stroke();
}

export function render(dom: ConsoleDom, state: ConsoleState, nowMs: number): void {
  dom.banner.hidden = state.connection === "connected";
  dom.phaseBadge.textContent = state.phase ?? "waiting";
  dom.phaseBadge.dataset.phase = state.phase ?? "none";
  if (state.probe !== null) {
    const [x, y, z] = state.probe;
    dom.probeReadout.textContent = `probe (${x.toFixed(3)}, ${y.toFixed(3)}, ${z.toFixed(3)}) m`;
  } else {
    dom.probeReadout.textContent = "probe: no data";
  }
  const last = state.forceTrace[state.forceTrace.length - 1];
  dom.forceReadout.textContent = last ? `${last.force.toFixed(2)} N` : "0.00 N";
  drawForceTrace(dom.forceCanvas, state);

  dom.chatLog.replaceChildren(
    ...state.chat.map((entry) => {
      const line = dom.chatLog.ownerDocument.createElement("div");
      line.className = `chat-line chat-${entry.speaker}`;
      line.textContent = `${entry.speaker === "agent" ? "assistant" : "you"}: ${entry.text}`;
      return line;
    }),
  );
  dom.chatLog.scrollTop = dom.chatLog.scrollHeight;

  dom.startButton.disabled = !canSendCommand(state, "start_scan", nowMs);
  dom.stopButton.disabled = !canSendCommand(state, "stop_scan", nowMs);
  dom.chatSend.disabled = !canSendChat(state, dom.chatInput.value);
}

export function wireUp(dom: ConsoleDom, client: ConsoleClient): void {
  const rerender = () => render(dom, client.state, Date.now());
  client.onChange = rerender;
  dom.startButton.addEventListener("click", () => {
    client.sendCommand("start_scan");
    rerender();
  });
  dom.stopButton.addEventListener("click", () => {
    client.sendCommand("stop_scan");
    rerender();
  });
  const sendChat = () => {
    if (client.sendChat(dom.chatInput.value)) {
      dom.chatInput.value = "";
    }
    rerender();
  };
  dom.chatSend.addEventListener("click", sendChat);
  dom.chatInput.addEventListener("keydown", (ev) => {
    if (ev.key === "Enter") {
      sendChat();
    }
  });
  dom.chatInput.addEventListener("input", rerender);
  // Button disables depend on the 3 s command timeout; refresh periodically.
  setInterval(rerender, 500);
  rerender();
}
