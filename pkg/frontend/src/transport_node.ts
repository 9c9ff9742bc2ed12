/**
 * Node-side TCP transport speaking the native length-prefixed framing.
 * Used by tests and scripted drivers; the browser build never imports it.
 */

import * as net from "node:net";

import { ClientMsg, LengthPrefixDecoder, ServerMsg, encodeFrame } from "./protocol.js";
import { Transport } from "./transport.js";

export class TcpTransport implements Transport {
  private decoder = new LengthPrefixDecoder();
  private messageCb: ((msg: ServerMsg) => void) | null = null;
  private closeCb: (() => void) | null = null;

  constructor(private sock: net.Socket) {
    sock.on("data", (chunk: Buffer) => {
      for (const msg of this.decoder.feed(new Uint8Array(chunk))) {
        if (this.messageCb) this.messageCb(msg);
      }
    });
    sock.on("close", () => {
      if (this.closeCb) this.closeCb();
    });
    sock.on("error", () => {
      /* close event follows */
    });
  }

  send(msg: ClientMsg) {
    this.sock.write(encodeFrame(msg));
  }

  onMessage(cb: (msg: ServerMsg) => void) {
    this.messageCb = cb;
  }

  onClose(cb: () => void) {
    this.closeCb = cb;
  }

  close() {
    this.sock.destroy();
  }
}

export function connectTcp(host: string, port: number, timeoutMs = 5000): Promise<Transport> {
  return new Promise((resolve, reject) => {
    const sock = net.createConnection({ host, port });
    const timer = setTimeout(() => {
      sock.destroy();
      reject(new Error(`connect timeout ${host}:${port}`));
    }, timeoutMs);
    sock.once("connect", () => {
      clearTimeout(timer);
      resolve(new TcpTransport(sock));
    });
    sock.once("error", (err) => {
      clearTimeout(timer);
      reject(err);
    });
  });
}
