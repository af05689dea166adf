import { describe, expect, it } from "vitest";

import { ServerMessage } from "../src/protocol";
import {
    applyMessage,
    initialState,
    isStale,
    onDisconnect,
} from "../src/state";

function msg(kind: string, payload: any, requestId?: string): ServerMessage {
    return {
        v: 1, kind: kind as any, seq: 0, request_id: requestId, payload,
    };
}

describe("panel state reducer", () => {
    it("welcome ack establishes the connection and role", () => {
        const s = applyMessage(
            initialState(),
            msg("ack", { connection_id: 4, controller: true }, "__welcome__"),
            1000,
        );
        expect(s.connection).toBe("connected");
        expect(s.connectionId).toBe(4);
        expect(s.controller).toBe(true);
    });

    it("ledger reflects only server fault_ledger messages", () => {
        let s = initialState();
        // an ack for inject_fault does NOT add to the ledger (no optimism)
        s = applyMessage(s, msg("ack", { fault_id: "f1" }, "r1"), 0);
        expect(s.ledger).toEqual([]);
        s = applyMessage(s, msg("fault_ledger", {
            faults: [{ id: "f1", type: "missing_tooth", activation: "on_start" }],
        }), 0);
        expect(s.ledger.length).toBe(1);
        expect(s.ledger[0].id).toBe("f1");
    });

    it("frame summaries update the timestamp used for staleness", () => {
        let s = applyMessage(
            initialState(),
            msg("ack", { connection_id: 1, controller: true }, "__welcome__"),
            0,
        );
        s = applyMessage(s, msg("frame_summary", { t: 1, rpm_actual: 2000 }), 5000);
        expect(isStale(s, 6000)).toBe(false);
        expect(isStale(s, 7001)).toBe(true); // > 2 s without frames
    });

    it("errors are surfaced, not swallowed", () => {
        const s = applyMessage(initialState(), msg("error", { reason: "nope" }), 0);
        expect(s.lastError).toBe("nope");
    });

    it("disconnect drops authority", () => {
        let s = applyMessage(
            initialState(),
            msg("ack", { connection_id: 1, controller: true }, "__welcome__"),
            0,
        );
        s = onDisconnect(s);
        expect(s.connection).toBe("disconnected");
        expect(s.controller).toBe(false);
        expect(isStale(s, 1e9)).toBe(false); // stale flag only while connected
    });

    it("diagnostics stored verbatim", () => {
        const d = {
            rpm_estimate: 1999.8, rpm_valid: true, sync: "synchronized",
            fault_codes: ["crank_tooth_fault"], crank_angle_estimate: 123.4,
        };
        const s = applyMessage(initialState(), msg("diagnostics", d), 0);
        expect(s.diagnostics).toEqual(d);
    });
});
