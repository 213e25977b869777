// The worker task client: connects, registers, maintains heartbeats, keeps a
// local draft, submits work, and exposes the feedback / tips / remote
// procedure channels. Framework-free; the DOM layer renders from its state.

import {
  ActTypes,
  AgentDetailsPayload,
  makePacket,
  decodePacket,
  encodePacket,
  Packet,
  PacketTypes,
} from "./packets.js";
import {
  applyPacket,
  applyTransport,
  ClientViewState,
  initialState,
  LoggedEvent,
  StateCause,
} from "./taskState.js";
import { Transport, TransportFactory } from "./transport.js";

export interface KeyValueStorage {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
  removeItem(key: string): void;
}

type Canceller = () => void;

export interface TaskClientOptions {
  workerName: string;
  connect: TransportFactory;
  providerType?: string;
  storage?: KeyValueStorage;
  heartbeatIntervalMs?: number;
  retryDelayMs?: number;
  // injectable timers so tests control the clock
  schedule?: (fn: () => void, everyMs: number) => Canceller;
  delay?: (fn: () => void, afterMs: number) => Canceller;
  onChange?: (state: ClientViewState) => void;
}

const defaultSchedule = (fn: () => void, everyMs: number): Canceller => {
  const id = setInterval(fn, everyMs);
  return () => clearInterval(id);
};

const defaultDelay = (fn: () => void, afterMs: number): Canceller => {
  const id = setTimeout(fn, afterMs);
  return () => clearTimeout(id);
};

interface PendingCall {
  resolve: (value: unknown) => void;
  reject: (err: Error) => void;
}

export class TaskClient {
  state: ClientViewState = initialState;
  readonly eventLog: LoggedEvent[] = [];

  private readonly options: Required<
    Pick<TaskClientOptions, "providerType" | "heartbeatIntervalMs" | "retryDelayMs">
  > &
    TaskClientOptions;
  private transport: Transport | null = null;
  private heartbeatCancel: Canceller | null = null;
  private retryCancel: Canceller | null = null;
  private pendingCalls = new Map<string, PendingCall>();
  private stopped = false;

  constructor(options: TaskClientOptions) {
    this.options = {
      providerType: "mock",
      heartbeatIntervalMs: 5000,
      retryDelayMs: 2000,
      ...options,
    };
  }

  // -- lifecycle ------------------------------------------------------------

  start(): void {
    this.stopped = false;
    this.openTransport();
  }

  stop(): void {
    this.stopped = true;
    this.stopHeartbeats();
    if (this.retryCancel) {
      this.retryCancel();
      this.retryCancel = null;
    }
    this.transport?.close();
    this.transport = null;
  }

  private openTransport(): void {
    const transport = this.options.connect();
    this.transport = transport;
    transport.onMessage((text) => this.handleMessage(text));
    transport.onOpen(() => {
      this.record({ kind: "transport", event: "open" }, applyTransport(this.state, "open"));
      this.register();
    });
    transport.onClose(() => this.handleClose());
  }

  private handleClose(): void {
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

  private handleMessage(text: string): void {
    let packet: Packet;
    try {
      packet = decodePacket(text);
    } catch {
      return; // not ours to crash on; the server logs malformed traffic
    }
    const next = applyPacket(this.state, packet);
    this.record({ kind: "packet", packet }, next);
    if (packet.packet_type === PacketTypes.AGENT_DETAILS) {
      this.onDetails(packet.payload as AgentDetailsPayload);
    } else if (packet.packet_type === PacketTypes.RP_RESPONSE) {
      const pending = this.pendingCalls.get(packet.subject_id);
      if (pending) {
        this.pendingCalls.delete(packet.subject_id);
        pending.resolve(packet.payload);
      }
    } else if (
      packet.packet_type === PacketTypes.UPDATE_STATUS &&
      (packet.payload ?? {}).status === "submitted"
    ) {
      this.clearDraft();
      this.stopHeartbeats();
    }
  }

  private onDetails(payload: AgentDetailsPayload): void {
    if (payload.agent_id) {
      this.startHeartbeats();
    } else {
      this.stopHeartbeats();
    }
  }

  private record(cause: StateCause, next: ClientViewState): void {
    this.state = next;
    this.eventLog.push({ cause, view: next.view, at: Date.now() });
    this.options.onChange?.(next);
  }

  private send(packet: Packet): void {
    if (!this.transport) {
      throw new Error("client is not connected");
    }
    this.transport.send(encodePacket(packet));
  }

  // -- heartbeats -----------------------------------------------------------

  private startHeartbeats(): void {
    this.stopHeartbeats();
    const schedule = this.options.schedule ?? defaultSchedule;
    this.heartbeatCancel = schedule(() => {
      if (this.state.agentId) {
        this.send(makePacket(PacketTypes.HEARTBEAT, this.state.agentId, {}));
      }
    }, this.options.heartbeatIntervalMs);
  }

  private stopHeartbeats(): void {
    if (this.heartbeatCancel) {
      this.heartbeatCancel();
      this.heartbeatCancel = null;
    }
  }

  // -- user actions ------------------------------------------------------------

  register(requestedUnitId: string | null = null): void {
    this.record({ kind: "user", action: "register" }, this.state);
    this.send(
      makePacket(PacketTypes.REGISTER_AGENT, "", {
        worker_name: this.options.workerName,
        provider_type: this.options.providerType,
        requested_unit_id: requestedUnitId,
      }),
    );
  }

  submitOnboarding(answers: unknown): void {
    this.record({ kind: "user", action: "submit_onboarding" }, this.state);
    this.send(
      makePacket(PacketTypes.SUBMIT_ONBOARDING, this.state.agentId ?? "", {
        worker_name: this.options.workerName,
        answers,
      }),
    );
  }

  submitTask(outputs: unknown): void {
    if (!this.state.agentId) {
      throw new Error("no live agent to submit for");
    }
    this.record({ kind: "user", action: "submit", detail: outputs }, this.state);
    this.send(makePacket(PacketTypes.SUBMIT_UNIT, this.state.agentId, outputs));
  }

  savePartial(outputs: unknown): void {
    if (!this.state.agentId) {
      return;
    }
    this.send(
      makePacket(PacketTypes.ACT, this.state.agentId, {
        type: ActTypes.PARTIAL_SAVE,
        data: outputs,
      }),
    );
  }

  returnUnit(): void {
    if (!this.state.agentId) {
      return;
    }
    this.record({ kind: "user", action: "return_unit" }, this.state);
    this.send(
      makePacket(PacketTypes.ACT, this.state.agentId, { type: ActTypes.RETURN_UNIT, data: null }),
    );
  }

  sendFeedback(text: string, category: string | null = null): void {
    if (!text || !this.state.agentId) {
      throw new Error("feedback requires text and a live agent");
    }
    this.record({ kind: "user", action: "feedback" }, this.state);
    this.send(
      makePacket(PacketTypes.ACT, this.state.agentId, {
        type: ActTypes.FEEDBACK,
        data: { text, category },
      }),
    );
  }

  sendTip(header: string, body: string): void {
    if (!header || !body || !this.state.agentId) {
      throw new Error("tips require a header, a body, and a live agent");
    }
    this.record({ kind: "user", action: "tip" }, this.state);
    this.send(
      makePacket(PacketTypes.ACT, this.state.agentId, {
        type: ActTypes.TIP,
        data: { header, body },
      }),
    );
  }

  callProcedure(name: string, args: unknown): Promise<unknown> {
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

  private draftKey(): string | null {
    return this.state.agentId ? `taskforge-draft-${this.state.agentId}` : null;
  }

  saveDraft(data: unknown): void {
    const key = this.draftKey();
    if (key && this.options.storage) {
      this.options.storage.setItem(key, JSON.stringify(data));
    }
  }

  loadDraft(): unknown {
    const key = this.draftKey();
    if (!key || !this.options.storage) {
      return null;
    }
    const raw = this.options.storage.getItem(key);
    return raw === null ? null : JSON.parse(raw);
  }

  clearDraft(): void {
    const key = this.draftKey();
    if (key && this.options.storage) {
      this.options.storage.removeItem(key);
    }
  }
}
