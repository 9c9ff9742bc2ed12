/** Transport abstraction: the session logic is framing-agnostic. */

import { ClientMsg, ServerMsg } from "./protocol.js";

export interface Transport {
  send(msg: ClientMsg): void;
  onMessage(cb: (msg: ServerMsg) => void): void;
  onClose(cb: () => void): void;
  close(): void;
}

/** One JSON message per WebSocket frame (browser side). */
export class WebSocketTransport implements Transport {
  private messageCb: ((msg: ServerMsg) => void) | null = null;
  private closeCb: (() => void) | null = null;

  constructor(private ws: WebSocket) {
    ws.onmessage = (ev) => {
      if (this.messageCb) this.messageCb(JSON.parse(String(ev.data)));
    };
    ws.onclose = () => {
      if (this.closeCb) this.closeCb();
    };
    ws.onerror = () => {
      try {
        ws.close();
      } catch {
        /* already closed */
      }
    };
  }

  send(msg: ClientMsg) {
    if (this.ws.readyState === WebSocket.OPEN) {
      this.ws.send(JSON.stringify(msg));
    }
  }

  onMessage(cb: (msg: ServerMsg) => void) {
    this.messageCb = cb;
  }

  onClose(cb: () => void) {
    this.closeCb = cb;
  }

  close() {
    this.ws.close();
  }
}

export function connectWebSocket(url: string): Promise<Transport> {
  return new Promise((resolve, reject) => {
    const ws = new WebSocket(url);
    ws.onopen = () => resolve(new WebSocketTransport(ws));
    ws.onerror = () => reject(new Error(`cannot reach ${url}`));
  });
}
