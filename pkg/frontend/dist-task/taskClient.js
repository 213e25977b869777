// The worker task client: connects, registers, maintains heartbeats, keeps a
// local draft, submits work, and exposes the feedback / tips / remote
// procedure channels. Framework-free; the DOM layer renders from its state.
import { ActTypes, makePacket, decodePacket, encodePacket, PacketTypes, } from "./packets.js";
import { applyPacket, applyTransport, initialState, } from "./taskState.js";
const defaultSchedule = (fn, everyMs) => {
    const id = setInterval(fn, everyMs);
    return () => clearInterval(id);
};
const defaultDelay = (fn, afterMs) => {
    const id = setTimeout(fn, afterMs);
    return () => clearTimeout(id);
};
export class TaskClient {
    constructor(options) {
        this.state = initialState;
        this.eventLog = [];
        this.transport = null;
        this.heartbeatCancel = null;
        this.retryCancel = null;
        this.pendingCalls = new Map();
        this.stopped = false;
        this.options = {
            providerType: "mock",
            heartbeatIntervalMs: 5000,
            retryDelayMs: 2000,
            ...options,
        };
    }
    // -- lifecycle ------------------------------------------------------------
    start() {
        this.stopped = false;
        this.openTransport();
    }
    stop() {
        this.stopped = true;
        this.stopHeartbeats();
        if (this.retryCancel) {
            this.retryCancel();
            this.retryCancel = null;
        }
        this.transport?.close();
        this.transport = null;
    }
    openTransport() {
        const transport = this.options.connect();
        this.transport = transport;
        transport.onMessage((text) => this.handleMessage(text));
        transport.onOpen(() => {
            this.record({ kind: "transport", event: "open" }, applyTransport(this.state, "open"));
            this.register();
        });
        transport.onClose(() => this.handleClose());
    }
    handleClose() {
        this.stopHeartbeats();
        for (const pending of this.pendingCalls.values()) {
            pending.reject(new Error("connection lost"));
        }
        this.pendingCalls.clear();
        if (this.stopped) {
            return;
        }
        this.record({ kind: "transport", event: "closed" }, applyTransport(this.state, "closed"));
        const terminal = this.state.view === "submitted" || this.state.view === "blocked";
        if (terminal) {
            return;
        }
        this.retryCancel = (this.options.delay ?? defaultDelay)(() => {
            this.record({ kind: "transport", event: "retry" }, applyTransport(this.state, "retry"));
            this.openTransport();
        }, this.options.retryDelayMs);
    }
    handleMessage(text) {
        let packet;
        try {
            packet = decodePacket(text);
        }
        catch {
            return; // not ours to crash on; the server logs malformed traffic
        }
        const next = applyPacket(this.state, packet);
        this.record({ kind: "packet", packet }, next);
        if (packet.packet_type === PacketTypes.AGENT_DETAILS) {
            this.onDetails(packet.payload);
        }
        else if (packet.packet_type === PacketTypes.RP_RESPONSE) {
            const pending = this.pendingCalls.get(packet.subject_id);
            if (pending) {
                this.pendingCalls.delete(packet.subject_id);
                pending.resolve(packet.payload);
            }
        }
        else if (packet.packet_type === PacketTypes.UPDATE_STATUS &&
            (packet.payload ?? {}).status === "submitted") {
            this.clearDraft();
            this.stopHeartbeats();
        }
    }
    onDetails(payload) {
        if (payload.agent_id) {
            this.startHeartbeats();
        }
        else {
            this.stopHeartbeats();
        }
    }
    record(cause, next) {
        this.state = next;
        this.eventLog.push({ cause, view: next.view, at: Date.now() });
        this.options.onChange?.(next);
    }
    send(packet) {
        if (!this.transport) {
            throw new Error("client is not connected");
        }
        this.transport.send(encodePacket(packet));
    }
    // -- heartbeats -----------------------------------------------------------
    startHeartbeats() {
        this.stopHeartbeats();
        const schedule = this.options.schedule ?? defaultSchedule;
        this.heartbeatCancel = schedule(() => {
            if (this.state.agentId) {
                this.send(makePacket(PacketTypes.HEARTBEAT, this.state.agentId, {}));
            }
        }, this.options.heartbeatIntervalMs);
    }
    stopHeartbeats() {
        if (this.heartbeatCancel) {
            this.heartbeatCancel();
            this.heartbeatCancel = null;
        }
    }
    // -- user actions ------------------------------------------------------------
    register(requestedUnitId = null) {
        this.record({ kind: "user", action: "register" }, this.state);
        this.send(makePacket(PacketTypes.REGISTER_AGENT, "", {
            worker_name: this.options.workerName,
            provider_type: this.options.providerType,
            requested_unit_id: requestedUnitId,
        }));
    }
    submitOnboarding(answers) {
        this.record({ kind: "user", action: "submit_onboarding" }, this.state);
        this.send(makePacket(PacketTypes.SUBMIT_ONBOARDING, this.state.agentId ?? "", {
            worker_name: this.options.workerName,
            answers,
        }));
    }
    submitTask(outputs) {
        if (!this.state.agentId) {
            throw new Error("no live agent to submit for");
        }
        this.record({ kind: "user", action: "submit", detail: outputs }, this.state);
        this.send(makePacket(PacketTypes.SUBMIT_UNIT, this.state.agentId, outputs));
    }
    savePartial(outputs) {
        if (!this.state.agentId) {
            return;
        }
        this.send(makePacket(PacketTypes.ACT, this.state.agentId, {
            type: ActTypes.PARTIAL_SAVE,
            data: outputs,
        }));
    }
    returnUnit() {
        if (!this.state.agentId) {
            return;
        }
        this.record({ kind: "user", action: "return_unit" }, this.state);
        this.send(makePacket(PacketTypes.ACT, this.state.agentId, { type: ActTypes.RETURN_UNIT, data: null }));
    }
    sendFeedback(text, category = null) {
        if (!text || !this.state.agentId) {
            throw new Error("feedback requires text and a live agent");
        }
        this.record({ kind: "user", action: "feedback" }, this.state);
        this.send(makePacket(PacketTypes.ACT, this.state.agentId, {
            type: ActTypes.FEEDBACK,
            data: { text, category },
        }));
    }
    sendTip(header, body) {
        if (!header || !body || !this.state.agentId) {
            throw new Error("tips require a header, a body, and a live agent");
        }
        this.record({ kind: "user", action: "tip" }, this.state);
        this.send(makePacket(PacketTypes.ACT, this.state.agentId, {
            type: ActTypes.TIP,
            data: { header, body },
        }));
    }
    callProcedure(name, args) {
        const packet = makePacket(PacketTypes.RP_REQUEST, "", {
            agent_id: this.state.agentId,
            procedure: name,
            args,
        });
        const request = { ...packet, subject_id: packet.packet_id };
        return new Promise((resolve, reject) => {
            this.pendingCalls.set(request.subject_id, { resolve, reject });
            this.send(request);
        });
    }
    // -- drafts ----------------------------------------------------------------
    draftKey() {
        return this.state.agentId ? `taskforge-draft-${this.state.agentId}` : null;
    }
    saveDraft(data) {
        const key = this.draftKey();
        if (key && this.options.storage) {
            this.options.storage.setItem(key, JSON.stringify(data));
        }
    }
    loadDraft() {
        const key = this.draftKey();
        if (!key || !this.options.storage) {
            return null;
        }
        const raw = this.options.storage.getItem(key);
        return raw === null ? null : JSON.parse(raw);
    }
    clearDraft() {
        const key = this.draftKey();
        if (key && this.options.storage) {
            this.options.storage.removeItem(key);
        }
    }
}
