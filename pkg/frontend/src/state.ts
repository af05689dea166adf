// Panel state: a pure reducer over server messages.
// Only server-acknowledged data lands here; there is no optimistic path,
// so the ledger and every rendered number trace back to a telemetry message.

import {
    Diagnostics,
    FrameSummary,
    LedgerEntry,
    ServerMessage,
} from "./protocol";

export type ConnectionStatus = "disconnected" | "connecting" | "connected";

export interface PanelState {
    connection: ConnectionStatus;
    connectionId: number | null;
    controller: boolean;
    summary: FrameSummary | null;
    summaryReceivedAt: number | null; // ms timestamp of the last summary
    diagnostics: Diagnostics | null;
    ledger: LedgerEntry[];
    lastError: string | null;
}

export const STALE_AFTER_MS = 2000;

export function initialState(): PanelState {
    return {
        connection: "disconnected",
        connectionId: null,
        controller: false,
        summary: null,
        summaryReceivedAt: null,
        diagnostics: null,
        ledger: [],
        lastError: null,
    };
}

export function applyMessage(
    state: PanelState,
    msg: ServerMessage,
    now: number,
): PanelState {
    switch (msg.kind) {
        case "ack":
            if (msg.request_id === "__welcome__") {
                return {
                    ...state,
                    connection: "connected",
                    connectionId: msg.payload.connection_id ?? null,
                    controller: Boolean(msg.payload.controller),
                };
            }
            return state;
        case "error":
            return { ...state, lastError: String(msg.payload?.reason ?? "error") };
        case "frame_summary":
            return { ...state, summary: msg.payload, summaryReceivedAt: now };
        case "diagnostics":
            return { ...state, diagnostics: msg.payload };
        case "fault_ledger":
            return { ...state, ledger: msg.payload.faults ?? [] };
        default:
            return state;
    }
}

export function onDisconnect(state: PanelState): PanelState {
    return { ...state, connection: "disconnected", controller: false };
}

// True when connected but no frame summary arrived for STALE_AFTER_MS.
export function isStale(state: PanelState, now: number): boolean {
    if (state.connection !== "connected") return false;
    if (state.summaryReceivedAt === null) return false;
    return now - state.summaryReceivedAt > STALE_AFTER_MS;
}
