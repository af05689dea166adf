// Waveform trace geometry from min/max display buckets.
// Pure functions shared by the canvas renderer and the tests: the panel
// never synthesizes waveforms, it only maps server buckets to pixels.

import { DisplayBuckets } from "./protocol";

export interface Envelope {
    // per-bucket pixel coordinates of the min and max outline
    xs: number[];
    yMin: number[];
    yMax: number[];
}

export interface Viewport {
    x0: number;
    y0: number;
    width: number;
    height: number;
    vMin: number;
    vMax: number;
    angleFrom: number; // deg
    angleTo: number; // deg
}

function bucketRange(d: DisplayBuckets, from: number, to: number): [number, number] {
    const b0 = Math.max(0, Math.floor(from / d.bucket_deg));
    const b1 = Math.min(d.buckets, Math.ceil(to / d.bucket_deg));
    return [b0, b1];
}

// Map one channel's buckets into an envelope polyline for the viewport.
// Extrema are taken straight from the buckets, so a missing tooth (a flat
// zero window) stays visible at any zoom.
export function envelope(
    d: DisplayBuckets,
    channel: "crank" | "cam",
    vp: Viewport,
): Envelope {
    const mins = channel === "crank" ? d.crank_min : d.cam_min;
    const maxs = channel === "crank" ? d.crank_max : d.cam_max;
    const [b0, b1] = bucketRange(d, vp.angleFrom, vp.angleTo);
    const xs: number[] = [];
    const yMin: number[] = [];
    const yMax: number[] = [];
    const span = vp.angleTo - vp.angleFrom;
    const vSpan = vp.vMax - vp.vMin;
    for (let b = b0; b < b1; b++) {
        const angle = (b + 0.5) * d.bucket_deg;
        xs.push(vp.x0 + ((angle - vp.angleFrom) / span) * vp.width);
        yMin.push(vp.y0 + vp.height * (1 - (mins[b] - vp.vMin) / vSpan));
        yMax.push(vp.y0 + vp.height * (1 - (maxs[b] - vp.vMin) / vSpan));
    }
    return { xs, yMin, yMax };
}

// Contiguous angle windows where the signal is flat at baseline
// (|min| and |max| below eps): missing teeth and the index gap.
export function emptyAngleWindows(
    d: DisplayBuckets,
    channel: "crank" | "cam",
    minWidthDeg: number,
    eps = 1e-6,
): Array<[number, number]> {
    const mins = channel === "crank" ? d.crank_min : d.cam_min;
    const maxs = channel === "crank" ? d.crank_max : d.cam_max;
    const out: Array<[number, number]> = [];
    let runStart: number | null = null;
    for (let b = 0; b <= d.buckets; b++) {
        const empty =
            b < d.buckets &&
            Math.abs(mins[b]) <= eps &&
            Math.abs(maxs[b]) <= eps;
        if (empty && runStart === null) {
            runStart = b;
        } else if (!empty && runStart !== null) {
            const width = (b - runStart) * d.bucket_deg;
            if (width >= minWidthDeg) {
                out.push([runStart * d.bucket_deg, b * d.bucket_deg]);
            }
            runStart = null;
        }
    }
    return out;
}

// Count pulses per revolution: contiguous bucket runs whose max exceeds
// the threshold, within [revStart, revStart + 360).
export function countPulses(
    d: DisplayBuckets,
    channel: "crank" | "cam",
    revStart: number,
    spanDeg: number,
    threshold = 0.3,
): number {
    const maxs = channel === "crank" ? d.crank_max : d.cam_max;
    const [b0, b1] = bucketRange(d, revStart, revStart + spanDeg);
    let pulses = 0;
    let inPulse = false;
    for (let b = b0; b < b1; b++) {
        const hot = maxs[b] > threshold;
        if (hot && !inPulse) pulses++;
        inPulse = hot;
    }
    return pulses;
}
