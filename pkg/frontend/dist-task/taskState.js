// The client view state machine. Pure: packets and transport events map to
// new states; every transition's cause lands in the event log, so the client
// can never fabricate a view.
import { activeView, PacketTypes } from "./packets.js";
export const initialState = {
    view: "connecting",
    flags: null,
    initData: null,
    agentId: null,
    unitId: null,
    unitKind: null,
    tips: [],
    reason: null,
    connectionHealthy: false,
    lastStatus: null,
};
const FLAG_TO_VIEW = {
    show_preview: "preview",
    show_onboarding: "onboarding",
    show_task: "task",
    show_submitted: "submitted",
    blocked: "blocked",
};
export function applyPacket(state, packet) {
    switch (packet.packet_type) {
        case PacketTypes.AGENT_DETAILS: {
            const payload = packet.payload ?? {};
            const flags = payload.view_flags;
            return {
                ...state,
                view: FLAG_TO_VIEW[activeView(flags)],
                flags,
                initData: payload.init_data ?? null,
                agentId: payload.agent_id ?? null,
                unitId: payload.unit_id ?? null,
                unitKind: payload.unit_kind ?? null,
                tips: Array.isArray(payload.tips) ? payload.tips : state.tips,
                reason: payload.reason ?? null,
                connectionHealthy: true,
            };
        }
        case PacketTypes.UPDATE_STATUS: {
            const payload = packet.payload ?? {};
            const next = {
                ...state,
                lastStatus: payload.status ?? state.lastStatus,
            };
            if (payload.view_flags && payload.status) {
                next.view = FLAG_TO_VIEW[activeView(payload.view_flags)];
                next.flags = payload.view_flags;
            }
            return next;
        }
        default:
            return state;
    }
}
export function applyTransport(state, event) {
    if (event === "open") {
        return { ...state, connectionHealthy: true };
    }
    if (event === "closed") {
        // terminal views survive a dropped connection; live ones show the error
        const terminal = state.view === "submitted" || state.view === "blocked";
        return {
            ...state,
            connectionHealthy: false,
            view: terminal ? state.view : "error",
        };
    }
    return { ...state, view: "connecting" };
}
