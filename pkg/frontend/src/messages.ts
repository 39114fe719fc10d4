// Bridge frames exchanged with the session server as JSON text.

export type Phase =
  | "setup"
  | "greeting"
  | "resting"
  | "execution"
  | "complete"
  | "aborted";

export const PHASES: readonly Phase[] = [
  "setup",
  "greeting",
  "resting",
  "execution",
  "complete",
  "aborted",
];

export interface StateMessage {
  type: "state";
  t_s: number;
  phase: Phase;
  probe: [number, number, number];
  force_n: number;
  orientation_wxyz?: number[];
}

export interface ChatMessage {
  type: "chat";
  speaker: "patient" | "agent";
  text: string;
  t_s?: number;
}

export type CommandName = "start_scan" | "stop_scan";

export interface CommandMessage {
  type: "command";
  cmd: CommandName;
}

export type BridgeMessage = StateMessage | ChatMessage | CommandMessage;

export function parseBridgeMessage(raw: string): BridgeMessage | null {
  let obj: unknown;
  try {
    obj = JSON.parse(raw);
  } catch {
    return null;
  }
  if (typeof obj !== "object" || obj === null) {
    return null;
  }
  const msg = obj as Record<string, unknown>;
  if (msg.type === "state") {
    if (
      typeof msg.t_s !== "number" ||
      !PHASES.includes(msg.phase as Phase) ||
      !Array.isArray(msg.probe) ||
      msg.probe.length !== 3 ||
      typeof msg.force_n !== "number"
    ) {
      return null;
    }
    return {
      type: "state",
      t_s: msg.t_s,
      phase: msg.phase as Phase,
      probe: [Number(msg.probe[0]), Number(msg.probe[1]), Number(msg.probe[2])],
      force_n: msg.force_n,
    };
  }
  if (msg.type === "chat") {
    if (typeof msg.text !== "string") {
      return null;
    }
    const speaker = msg.speaker === "patient" ? "patient" : "agent";
    return {
      type: "chat",
      speaker,
      text: msg.text,
      t_s: typeof msg.t_s === "number" ? msg.t_s : undefined,
    };
  }
  if (msg.type === "command") {
    if (msg.cmd !== "start_scan" && msg.cmd !== "stop_scan") {
      return null;
    }
    return { type: "command", cmd: msg.cmd };
  }
  return null;
}
