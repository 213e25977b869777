// A minimal transport seam over WebSocket so tests can substitute a stub
// and node tests can pass the `ws` implementation.

export interface Transport {
  send(text: string): void;
  close(): void;
  onMessage(handler: (text: string) => void): void;
  onOpen(handler: () => void): void;
  onClose(handler: () => void): void;
}

export type TransportFactory = () => Transport;

// Shape shared by the browser WebSocket and the `ws` package. Handler
// parameters are `any` so both libraries' event types unify.
export interface WebSocketLike {
  onopen: ((event: any) => void) | null;
  onmessage: ((event: any) => void) | null;
  onclose: ((event: any) => void) | null;
  onerror: ((event: any) => void) | null;
  send(data: string): void;
  close(): void;
}

export interface WebSocketCtor {
  new (url: string): WebSocketLike;
}

export function webSocketTransport(url: string, ctor: WebSocketCtor): TransportFactory {
  return () => {
    const socket = new ctor(url);
    let messageHandler: (text: string) => void = () => {};
    let openHandler: () => void = () => {};
    let closeHandler: () => void = () => {};
    let closed = false;
    socket.onopen = () => openHandler();
    socket.onmessage = (event) => messageHandler(String(event.data));
    socket.onclose = () => {
      if (!closed) {
        closed = true;
        closeHandler();
      }
    };
    socket.onerror = () => {
      // errors surface as closures; the client schedules a retry
      if (!closed) {
        closed = true;
        closeHandler();
      }
    };
    return {
      send: (text) => socket.send(text),
      close: () => socket.close(),
      onMessage: (handler) => {
        messageHandler = handler;
      },
      onOpen: (handler) => {
        openHandler = handler;
      },
      onClose: (handler) => {
        closeHandler = handler;
      },
    };
  };
}
