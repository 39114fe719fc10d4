// Console state lives behind one pure reducer: replaying the same event
// log always rebuilds the identical state.

import { BridgeMessage, CommandName, Phase } from "./messages.js";

export const FORCE_TRACE_CAPACITY = 2000;
export const COMMAND_TIMEOUT_MS = 3000;

export interface ForcePoint {
  t: number;
  force: number;
}

export interface ChatEntry {
  speaker: "patient" | "agent";
  text: string;
}

export interface PendingCommand {
  cmd: CommandName;
  atMs: number;
}

export interface ConsoleState {
  connection: "disconnected" | "connected";
  phase: Phase | null;
  forceTrace: ForcePoint[];
  probe: [number, number, number] | null;
  chat: ChatEntry[];
  pendingCommand: PendingCommand | null;
}

export type ConsoleEvent =
  | { kind: "connected" }
  | { kind: "disconnected" }
  | { kind: "message"; msg: BridgeMessage }
  | { kind: "command_sent"; cmd: CommandName; atMs: number }
  | { kind: "chat_sent"; text: string };

export function initialState(): ConsoleState {
  return {
    connection: "disconnected",
    phase: null,
    forceTrace: [],
    probe: null,
    chat: [],
    pendingCommand: null,
  };
}

function pushForce(trace: ForcePoint[], point: ForcePoint): ForcePoint[] {
  const out = trace.length >= FORCE_TRACE_CAPACITY
    ? trace.slice(trace.length - FORCE_TRACE_CAPACITY + 1)
    : trace.slice();
  out.push(point);
  return out;
}

export function reduce(state: ConsoleState, event: ConsoleEvent): ConsoleState {
  switch (event.kind) {
    case "connected":
      return { ...state, connection: "connected" };
    case "disconnected":
      return { ...state, connection: "disconnected" };
    case "command_sent":
      return { ...state, pendingCommand: { cmd: event.cmd, atMs: event.atMs } };
    case "chat_sent":
      return { ...state, chat: [...state.chat, { speaker: "patient", text: event.text }] };
    case "message": {
      const msg = event.msg;
      if (msg.type === "state") {
        const phaseChanged = state.phase !== null && state.phase !== msg.phase;
        return {
          ...state,
          phase: msg.phase,
          probe: msg.probe,
          forceTrace: pushForce(state.forceTrace, { t: msg.t_s, force: msg.force_n }),
          pendingCommand: phaseChanged ? null : state.pendingCommand,
        };
      }
      if (msg.type === "chat") {
        // Our own chat lines are appended locally at send time.
        if (msg.speaker === "patient") {
          return state;
        }
        return { ...state, chat: [...state.chat, { speaker: msg.speaker, text: msg.text }] };
      }
      return state;
    }
  }
}

export function replay(events: ConsoleEvent[]): ConsoleState {
  return events.reduce(reduce, initialState());
}

function pendingBlocks(state: ConsoleState, nowMs: number): boolean {
  return (
    state.pendingCommand !== null &&
    nowMs - state.pendingCommand.atMs < COMMAND_TIMEOUT_MS
  );
}

export function canSendCommand(
  state: ConsoleState,
  cmd: CommandName,
  nowMs: number,
): boolean {
  if (state.connection !== "connected" || pendingBlocks(state, nowMs)) {
    return false;
  }
  if (cmd === "start_scan") {
    return state.phase === "resting";
  }
  return state.phase === "resting" || state.phase === "execution";
}

export function canSendChat(state: ConsoleState, text: string): boolean {
  return state.connection === "connected" && text.trim().length > 0;
}
