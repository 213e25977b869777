// A minimal transport seam over WebSocket so tests can substitute a stub
// and node tests can pass the `ws` implementation.
export function webSocketTransport(url, ctor) {
    return () => {
        const socket = new ctor(url);
        let messageHandler = () => { };
        let openHandler = () => { };
        let closeHandler = () => { };
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
