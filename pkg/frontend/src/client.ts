// WebSocket client with request/ack correlation and a state store.
// Works against the browser WebSocket or any API-compatible implementation
// injected for tests (the 'ws' package exposes the same onX surface).

import {
    CommandKind,
    ServerMessage,
    makeCommand,
    parseServerMessage,
} from "./protocol";
import {
    PanelState,
    applyMessage,
    initialState,
    isStale,
    onDisconnect,
} from "./state";

export interface WebSocketLike {
    send(data: string): void;
    close(): void;
    onopen: ((ev?: unknown) => void) | null;
    onclose: ((ev?: unknown) => void) | null;
    onerror: ((ev?: unknown) => void) | null;
    onmessage: ((ev: { data: unknown }) => void) | null;
}

export type WsFactory = (url: string) => WebSocketLike;

export class ServerError extends Error {
    readonly payload: any;

    constructor(payload: any) {
        super(String(payload?.reason ?? "server error"));
        this.payload = payload;
    }

    get ceiling(): number | undefined {
        return this.payload?.ceiling;
    }
}

interface Pending {
    resolve: (payload: any) => void;
    reject: (err: Error) => void;
}

export class PanelClient {
    private ws: WebSocketLike | null = null;
    private pending = new Map<string, Pending>();
    private requestCounter = 0;
    private _state: PanelState = initialState();
    private listeners: Array<(state: PanelState, msg: ServerMessage | null) => void> = [];
    private welcome: Pending | null = null;

    constructor(
        private url: string,
        private wsFactory: WsFactory = (u) => new (globalThis as any).WebSocket(u),
        private now: () => number = () => Date.now(),
    ) {}

    get state(): PanelState {
        return this._state;
    }

    onChange(fn: (state: PanelState, msg: ServerMessage | null) => void): void {
        this.listeners.push(fn);
    }

    connect(): Promise<PanelState> {
        this._state = { ...initialState(), connection: "connecting" };
        this.emit(null);
        return new Promise((resolve, reject) => {
            const ws = this.wsFactory(this.url);
            this.ws = ws;
            this.welcome = { resolve: () => resolve(this._state), reject };
            ws.onopen = () => {
                /* welcome ack confirms the session */
            };
            ws.onerror = () => {
                if (this.welcome) {
                    this.welcome.reject(new Error("connection failed"));
                    this.welcome = null;
                }
            };
            ws.onclose = () => this.handleClose();
            ws.onmessage = (ev) => this.handleRaw(String(ev.data));
        });
    }

    close(): void {
        this.ws?.close();
    }

    private handleClose(): void {
        this._state = onDisconnect(this._state);
        for (const [, p] of this.pending) {
            p.reject(new Error("connection closed"));
        }
        this.pending.clear();
        this.emit(null);
    }

    private handleRaw(raw: string): void {
        let msg: ServerMessage;
        try {
            msg = parseServerMessage(raw);
        } catch {
            return; // ignore unparseable frames; server owns the contract
        }
        this._state = applyMessage(this._state, msg, this.now());
        if (msg.request_id === "__welcome__" && this.welcome) {
            this.welcome.resolve(null);
            this.welcome = null;
        } else if (msg.request_id && this.pending.has(msg.request_id)) {
            const p = this.pending.get(msg.request_id)!;
            this.pending.delete(msg.request_id);
            if (msg.kind === "error") {
                p.reject(new ServerError(msg.payload));
            } else {
                p.resolve(msg.payload);
            }
        }
        this.emit(msg);
    }

    private emit(msg: ServerMessage | null): void {
        for (const fn of this.listeners) {
            fn(this._state, msg);
        }
    }

    // Send a command; resolves with the ack payload, rejects with ServerError.
    send(kind: CommandKind, payload: Record<string, unknown> = {}): Promise<any> {
        if (!this.ws) {
            return Promise.reject(new Error("not connected"));
        }
        const requestId = `r${++this.requestCounter}`;
        const msg = makeCommand(kind, payload, requestId);
        return new Promise((resolve, reject) => {
            this.pending.set(requestId, { resolve, reject });
            this.ws!.send(JSON.stringify(msg));
        });
    }

    subscribe(): Promise<any> {
        return this.send("subscribe");
    }

    setRpm(rpm: number): Promise<any> {
        return this.send("set_rpm", { rpm });
    }

    injectFault(payload: Record<string, unknown>): Promise<any> {
        return this.send("inject_fault", payload);
    }

    clearFault(id: string): Promise<any> {
        return this.send("clear_fault", { id });
    }

    stale(): boolean {
        return isStale(this._state, this.now());
    }
}
