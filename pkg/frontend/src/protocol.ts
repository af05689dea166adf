// Message grammar for the bench service websocket (protocol v1).
// Every message carries {"v": 1}; servers stamp a monotone per-connection seq.

export const PROTOCOL_VERSION = 1;

export type CommandKind =
    | "start"
    | "stop"
    | "set_rpm"
    | "set_operating_point"
    | "inject_fault"
    | "clear_fault"
    | "load_scenario"
    | "subscribe";

export type TelemetryKind =
    | "ack"
    | "error"
    | "frame_summary"
    | "diagnostics"
    | "fault_ledger";

export interface CommandMessage {
    v: 1;
    kind: CommandKind;
    request_id: string;
    payload: Record<string, unknown>;
}

export interface ServerMessage {
    v: 1;
    kind: TelemetryKind;
    seq: number;
    request_id?: string;
    payload: any;
}

export interface DisplayBuckets {
    buckets: number;
    bucket_deg: number;
    crank_min: number[];
    crank_max: number[];
    cam_min: number[];
    cam_max: number[];
}

export interface FrameSummary {
    t: number;
    rpm_actual: number;
    rpm_commanded: number;
    angle: number;
    cycle: number;
    display: DisplayBuckets | null;
}

export interface Diagnostics {
    rpm_estimate: number;
    rpm_valid: boolean;
    sync: string;
    fault_codes: string[];
    crank_angle_estimate: number;
}

export interface LedgerEntry {
    id: string;
    type: string;
    activation: string;
    seed?: number;
    sensor?: string;
    tooth?: number;
    factor?: number;
    sigma_volts?: number;
    noise_amplitude?: number;
    offset_deg?: number;
    applied_cycle?: number;
    applied_sample?: number;
    applied_t?: number;
}

export function makeCommand(
    kind: CommandKind,
    payload: Record<string, unknown>,
    requestId: string,
): CommandMessage {
    return { v: PROTOCOL_VERSION, kind, request_id: requestId, payload };
}

export function parseServerMessage(raw: string): ServerMessage {
    let msg: any;
    try {
        msg = JSON.parse(raw);
    } catch (e) {
        throw new Error(`unparseable server message: ${(e as Error).message}`);
    }
    if (msg === null || typeof msg !== "object") {
        throw new Error("server message is not an object");
    }
    if (msg.v !== PROTOCOL_VERSION) {
        throw new Error(`unsupported protocol version ${msg.v}`);
    }
    const kinds: TelemetryKind[] = [
        "ack", "error", "frame_summary", "diagnostics", "fault_ledger",
    ];
    if (!kinds.includes(msg.kind)) {
        throw new Error(`unknown server message kind ${msg.kind}`);
    }
    if (typeof msg.seq !== "number") {
        throw new Error("server message missing seq");
    }
    return msg as ServerMessage;
}

export function isDisplayBuckets(d: any): d is DisplayBuckets {
    return (
        d !== null &&
        typeof d === "object" &&
        typeof d.buckets === "number" &&
        typeof d.bucket_deg === "number" &&
        Array.isArray(d.crank_min) &&
        Array.isArray(d.crank_max) &&
        Array.isArray(d.cam_min) &&
        Array.isArray(d.cam_max) &&
        d.crank_min.length === d.buckets &&
        d.crank_max.length === d.buckets
    );
}
