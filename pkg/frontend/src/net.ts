/**
 * Websocket client: parses inbound frames, gates every outbound message
 * through schema validation, and retries the connection with a fixed
 * 1 s backoff so the cockpit recovers from server restarts on its own.
 */

import { parseFrame, validateOutbound } from "./protocol.js";
import type { ClientMsg, Frame } from "./protocol.js";

export interface ClientHooks {
  onFrame(frame: Frame): void;
  onClose(): void;
}

export class CockpitClient {
  private ws: WebSocket | null = null;
  private closed = false;

  constructor(private url: string, private hooks: ClientHooks) {}

  connect(): void {
    if (this.closed) return;
    const ws = new WebSocket(this.url);
    this.ws = ws;
    ws.onmessage = (ev) => {
      if (typeof ev.data !== "string") return;
      const frame = parseFrame(ev.data);
      if (frame !== null) this.hooks.onFrame(frame);
    };
    ws.onclose = () => {
      this.ws = null;
      this.hooks.onClose();
      if (!this.closed) setTimeout(() => this.connect(), 1000);
    };
    ws.onerror = () => ws.close();
  }

  send(msg: ClientMsg): boolean {
    if (!validateOutbound(msg)) return false;
    if (this.ws === null || this.ws.readyState !== WebSocket.OPEN) return false;
    this.ws.send(JSON.stringify(msg));
    return true;
  }

  close(): void {
    this.closed = true;
    this.ws?.close();
  }
}
