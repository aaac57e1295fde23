/**
 * TCP server for the backend wire protocol. Requests on one connection are
 * answered strictly in arrival order; malformed payloads get structured
 * error responses instead of dropped connections.
 */

import net from "node:net";

import { FrameDecoder, encodeMessage, errorResponse, requestSchema } from "./protocol.js";

export type Responder = (request: { kind: string }) => string;

export interface ServerHandle {
  port: number;
  close(): Promise<void>;
}

export function makeResponder(handle: Responder): (body: string) => string {
  return (body: string) => {
    let parsed: unknown;
    try {
      parsed = JSON.parse(body);
    } catch {
      return errorResponse("request is not valid JSON");
    }
    const validated = requestSchema.safeParse(parsed);
    if (!validated.success) {
      return errorResponse(`bad request: ${validated.error.issues[0]?.message ?? "invalid"}`);
    }
    try {
      return handle(validated.data);
    } catch (err) {
      return errorResponse(`backend failure: ${(err as Error).message}`);
    }
  };
}

export function startServer(responder: Responder, port = 0, host = "127.0.0.1"): Promise<ServerHandle> {
  const handleBody = makeResponder(responder);
  const server = net.createServer((socket) => {
    const decoder = new FrameDecoder();
    socket.on("data", (chunk) => {
      let bodies: string[];
      try {
        bodies = decoder.push(chunk);
      } catch (err) {
        socket.write(encodeMessage(errorResponse((err as Error).message)));
        socket.end();
        return;
      }
      for (const body of bodies) {
        socket.write(encodeMessage(handleBody(body)));
      }
    });
    socket.on("error", () => socket.destroy());
  });
  return new Promise((resolve, reject) => {
    server.once("error", reject);
    server.listen(port, host, () => {
      const address = server.address() as net.AddressInfo;
      resolve({
        port: address.port,
        close: () =>
          new Promise<void>((done) => {
            server.close(() => done());
          }),
      });
    });
  });
}
