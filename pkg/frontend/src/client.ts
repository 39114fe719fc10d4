// WebSocket client for the session bridge: reconnects with backoff and
// funnels everything through the state reducer.

import { CommandName, parseBridgeMessage } from "./messages.js";
import {
  canSendChat,
  canSendCommand,
  ConsoleEvent,
  ConsoleState,
  initialState,
  reduce,
} from "./state.js";

export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
}

export interface ClientOptions {
  url: string;
  socketFactory?: (url: string) => SocketLike;
  reconnectBaseMs?: number;
  reconnectMaxMs?: number;
  now?: () => number;
}

export class ConsoleClient {
  state: ConsoleState = initialState();
  onChange: ((state: ConsoleState) => void) | null = null;

  private readonly url: string;
  private readonly socketFactory: (url: string) => SocketLike;
  private readonly reconnectBaseMs: number;
  private readonly reconnectMaxMs: number;
  private readonly now: () => number;
  private socket: SocketLike | null = null;
  private retryMs: number;
  private retryTimer: ReturnType<typeof setTimeout> | null = null;
  private closed = false;
  readonly eventLog: ConsoleEvent[] = [];

  constructor(options: ClientOptions) {
    this.url = options.url;
    this.socketFactory =
      options.socketFactory ?? ((url) => new WebSocket(url) as unknown as SocketLike);
    this.reconnectBaseMs = options.reconnectBaseMs ?? 250;
    this.reconnectMaxMs = options.reconnectMaxMs ?? 4000;
    this.retryMs = this.reconnectBaseMs;
    this.now = options.now ?? (() => Date.now());
  }

  private dispatch(event: ConsoleEvent): void {
    this.eventLog.push(event);
    this.state = reduce(this.state, event);
    this.onChange?.(this.state);
  }

  connect(): void {
    this.closed = false;
    let socket: SocketLike;
    try {
      socket = this.socketFactory(this.url);
    } catch {
      this.scheduleReconnect();
      return;
    }
    this.socket = socket;
    socket.onopen = () => {
      this.retryMs = this.reconnectBaseMs;
      this.dispatch({ kind: "connected" });
    };
    socket.onmessage = (ev) => {
      const msg = parseBridgeMessage(String(ev.data));
      if (msg !== null) {
        this.dispatch({ kind: "message", msg });
      }
    };
    socket.onerror = () => {
      // close follows; nothing to do here
    };
    socket.onclose = () => {
      this.socket = null;
      if (this.state.connection === "connected") {
        this.dispatch({ kind: "disconnected" });
      }
      this.scheduleReconnect();
    };
  }

  private scheduleReconnect(): void {
    if (this.closed || this.retryTimer !== null) {
      return;
    }
    this.retryTimer = setTimeout(() => {
      this.retryTimer = null;
      if (!this.closed) {
        this.connect();
      }
    }, this.retryMs);
    this.retryMs = Math.min(this.retryMs * 2, this.reconnectMaxMs);
  }

  sendCommand(cmd: CommandName): boolean {
    if (this.socket === null || !canSendCommand(this.state, cmd, this.now())) {
      return false;
    }
    this.socket.send(JSON.stringify({ type: "command", cmd }));
    this.dispatch({ kind: "command_sent", cmd, atMs: this.now() });
    return true;
  }

  sendChat(text: string): boolean {
    if (this.socket === null || !canSendChat(this.state, text)) {
      return false;
    }
    this.socket.send(
      JSON.stringify({ type: "chat", speaker: "patient", text: text.trim() }),
    );
    this.dispatch({ kind: "chat_sent", text: text.trim() });
    return true;
  }

  close(): void {
    this.closed = true;
    if (this.retryTimer !== null) {
      clearTimeout(this.retryTimer);
      this.retryTimer = null;
    }
    this.socket?.close();
    this.socket = null;
  }
}
