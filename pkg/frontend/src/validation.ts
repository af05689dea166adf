// Client-side fault form validation mirroring the server's scenario rules.
// A form that fails here is never sent; the server re-validates anyway.

export interface FaultForm {
    id: string;
    type: string;
    sensor?: string;
    tooth?: number | null;
    factor?: number | null;
    sigma_volts?: number | null;
    noise_amplitude?: number | null;
    offset_deg?: number | null;
    activation: string;
    seed?: number | null;
}

export const FAULT_TYPES = [
    "missing_tooth",
    "amplitude_scale",
    "width_scale",
    "partial_noise",
    "full_noise_replace",
    "sync_offset",
    "global_noise",
] as const;

export const ACTIVATIONS = [
    "on_start",
    "live_immediate",
    "live_cycle_boundary",
] as const;

const NEEDS_SENSOR = new Set([
    "missing_tooth", "amplitude_scale", "width_scale", "partial_noise",
    "full_noise_replace", "global_noise",
]);
const NEEDS_TOOTH = new Set([
    "missing_tooth", "amplitude_scale", "width_scale", "partial_noise",
    "full_noise_replace",
]);

export const CRANK_TEETH = 60;
export const CAM_PEAKS = 7;

export function validateFault(
    form: FaultForm,
    crankTeeth: number = CRANK_TEETH,
    camPeaks: number = CAM_PEAKS,
): string[] {
    const errors: string[] = [];
    if (!form.id || form.id.trim() === "") {
        errors.push("fault id must be non-empty");
    }
    if (!(FAULT_TYPES as readonly string[]).includes(form.type)) {
        errors.push(`unknown fault type '${form.type}'`);
        return errors;
    }
    if (!(ACTIVATIONS as readonly string[]).includes(form.activation)) {
        errors.push(`unknown activation '${form.activation}'`);
    }
    if (NEEDS_SENSOR.has(form.type)) {
        if (form.sensor !== "crank" && form.sensor !== "cam") {
            errors.push("sensor must be 'crank' or 'cam'");
        }
    }
    if (NEEDS_TOOTH.has(form.type)) {
        const tooth = form.tooth;
        if (tooth === null || tooth === undefined || !Number.isInteger(tooth)) {
            errors.push("tooth must be an integer");
        } else {
            const limit = form.sensor === "cam" ? camPeaks : crankTeeth;
            if (tooth < 1 || tooth > limit) {
                errors.push(`tooth ${tooth} out of range 1..${limit}`);
            }
        }
    }
    if (form.type === "amplitude_scale" || form.type === "width_scale") {
        if (!(typeof form.factor === "number" && form.factor > 0)) {
            errors.push("factor must be > 0");
        }
    }
    if (form.type === "partial_noise" || form.type === "global_noise") {
        if (!(typeof form.sigma_volts === "number" && form.sigma_volts >= 0)) {
            errors.push("sigma_volts must be >= 0");
        }
    }
    if (form.type === "full_noise_replace") {
        if (!(typeof form.noise_amplitude === "number" && form.noise_amplitude > 0)) {
            errors.push("noise_amplitude must be > 0");
        }
    }
    if (form.type === "sync_offset") {
        if (!(typeof form.offset_deg === "number" && isFinite(form.offset_deg))) {
            errors.push("offset_deg must be a finite number");
        }
        if (form.sensor) {
            errors.push("sync_offset takes no sensor (applies to the cam channel)");
        }
    }
    return errors;
}

// Build the wire payload, dropping fields the fault type does not take.
export function faultPayload(form: FaultForm): Record<string, unknown> {
    const payload: Record<string, unknown> = {
        id: form.id,
        type: form.type,
        activation: form.activation,
    };
    if (NEEDS_SENSOR.has(form.type)) payload.sensor = form.sensor;
    if (NEEDS_TOOTH.has(form.type)) payload.tooth = form.tooth;
    if (form.type === "amplitude_scale" || form.type === "width_scale") {
        payload.factor = form.factor;
    }
    if (form.type === "partial_noise" || form.type === "global_noise") {
        payload.sigma_volts = form.sigma_volts;
    }
    if (form.type === "full_noise_replace") {
        payload.noise_amplitude = form.noise_amplitude;
    }
    if (form.type === "sync_offset") payload.offset_deg = form.offset_deg;
    if (form.seed !== null && form.seed !== undefined) payload.seed = form.seed;
    return payload;
}
