// Browser panel: DOM wiring and canvas rendering over PanelClient.
// Layout: controls upper-left, fault ledger top-middle, waveforms center.
// Every rendered number comes from a server telemetry message; fault
// entries appear in the ledger only after the server acknowledges them.

import { PanelClient, ServerError } from "./client";
import { DisplayBuckets, LedgerEntry } from "./protocol";
import { PanelState, STALE_AFTER_MS, isStale } from "./state";
import { envelope, Viewport } from "./trace";
import { FaultForm, faultPayload, validateFault } from "./validation";

const $ = (id: string) => document.getElementById(id)!;

export class ControlPanel {
    private client: PanelClient;
    private canvas: HTMLCanvasElement;
    private detached: Window | null = null;
    private staleTimer: number | undefined;

    constructor(wsUrl: string) {
        this.client = new PanelClient(wsUrl);
        this.canvas = $("waveform") as HTMLCanvasElement;
        this.client.onChange((state, msg) => {
            if (msg === null || msg.kind !== "frame_summary") {
                this.renderStatus(state);
            }
            if (msg?.kind === "frame_summary") {
                this.renderSummary(state);
            }
            if (msg?.kind === "fault_ledger") {
                this.renderLedger(state.ledger);
            }
            if (msg?.kind === "diagnostics") {
                this.renderDiagnostics(state);
            }
        });
    }

    async start(): Promise<void> {
        this.bindControls();
        await this.client.connect();
        await this.client.subscribe();
        this.staleTimer = window.setInterval(
            () => this.renderStaleFlag(),
            STALE_AFTER_MS / 4,
        );
        this.renderStatus(this.client.state);
    }

    private bindControls(): void {
        const rpmSlider = $("rpm-slider") as HTMLInputElement;
        const rpmNumber = $("rpm-number") as HTMLInputElement;
        const sendRpm = async (value: number) => {
            rpmSlider.value = String(value);
            rpmNumber.value = String(value);
            try {
                await this.client.setRpm(value);
                this.flashError("");
            } catch (e) {
                this.flashError(this.describeError(e));
            }
        };
        rpmSlider.addEventListener("change", () => sendRpm(Number(rpmSlider.value)));
        rpmNumber.addEventListener("change", () => sendRpm(Number(rpmNumber.value)));

        ($("op-apply") as HTMLButtonElement).addEventListener("click", async () => {
            const values: Record<string, number> = {};
            for (const sid of ["throttle_position", "oil_pressure",
                               "boost_pressure", "rail_pressure",
                               "coolant_temperature", "boost_temperature"]) {
                const input = $(`op-${sid}`) as HTMLInputElement;
                if (input.value !== "") values[sid] = Number(input.value);
            }
            try {
                await this.client.send("set_operating_point", values);
                this.flashError("");
            } catch (e) {
                this.flashError(this.describeError(e));
            }
        });

        ($("fault-submit") as HTMLButtonElement).addEventListener("click", () =>
            this.submitFault(),
        );
        ($("fault-type") as HTMLSelectElement).addEventListener("change", () =>
            this.updateFaultFields(),
        );
        ($("detach") as HTMLButtonElement).addEventListener("click", () =>
            this.detachPlot(),
        );
        this.updateFaultFields();
    }

    private faultForm(): FaultForm {
        const num = (id: string): number | null => {
            const v = ($(id) as HTMLInputElement).value;
            return v === "" ? null : Number(v);
        };
        return {
            id: ($("fault-id") as HTMLInputElement).value,
            type: ($("fault-type") as HTMLSelectElement).value,
            sensor: ($("fault-sensor") as HTMLSelectElement).value || undefined,
            tooth: num("fault-tooth"),
            factor: num("fault-factor"),
            sigma_volts: num("fault-sigma"),
            noise_amplitude: num("fault-amplitude"),
            offset_deg: num("fault-offset"),
            activation: ($("fault-activation") as HTMLSelectElement).value,
            seed: num("fault-seed"),
        };
    }

    private updateFaultFields(): void {
        const type = ($("fault-type") as HTMLSelectElement).value;
        const show = (id: string, on: boolean) => {
            ($(id).closest("label") as HTMLElement).style.display = on ? "" : "none";
        };
        show("fault-sensor", type !== "sync_offset");
        show("fault-tooth", !["sync_offset", "global_noise"].includes(type));
        show("fault-factor", ["amplitude_scale", "width_scale"].includes(type));
        show("fault-sigma", ["partial_noise", "global_noise"].includes(type));
        show("fault-amplitude", type === "full_noise_replace");
        show("fault-offset", type === "sync_offset");
    }

    private async submitFault(): Promise<void> {
        const form = this.faultForm();
        if (form.type === "sync_offset") form.sensor = undefined;
        const errors = validateFault(form);
        const box = $("fault-errors");
        if (errors.length) {
            box.textContent = errors.join("; ");
            return; // invalid forms are never sent
        }
        box.textContent = "";
        try {
            const ack = await this.client.injectFault(faultPayload(form));
            const at = ack.applies_at_cycle !== null && ack.applies_at_cycle !== undefined
                ? `cycle ${ack.applies_at_cycle}`
                : `sample ${ack.applies_at_sample}`;
            $("fault-ack").textContent = `applied '${ack.fault_id}' at ${at}`;
        } catch (e) {
            box.textContent = this.describeError(e);
        }
    }

    private describeError(e: unknown): string {
        if (e instanceof ServerError && e.ceiling !== undefined) {
            return `${e.message} (ceiling ${e.ceiling} rpm)`;
        }
        return e instanceof Error ? e.message : String(e);
    }

    private flashError(text: string): void {
        $("command-errors").textContent = text;
    }

    // -- rendering -----------------------------------------------------

    private renderStatus(state: PanelState): void {
        $("conn-status").textContent = state.connection
            + (state.controller ? " (controller)" : state.connection === "connected" ? " (observer)" : "");
        const controls = document.querySelectorAll<HTMLInputElement>(".needs-authority");
        controls.forEach((el) => {
            el.disabled = !state.controller;
        });
        if (state.lastError) {
            this.flashError(state.lastError);
        }
    }

    private renderSummary(state: PanelState): void {
        const s = state.summary;
        if (!s) return;
        $("rpm-actual").textContent = s.rpm_actual.toFixed(0);
        $("angle-readout").textContent = `${s.angle.toFixed(1)} deg, cycle ${s.cycle}`;
        if (s.display) {
            this.drawWaveforms(s.display, this.canvas);
            if (this.detached && !this.detached.closed) {
                const remote = this.detached.document.getElementById("waveform-detached");
                if (remote) this.drawWaveforms(s.display, remote as HTMLCanvasElement);
            }
        }
        this.renderStaleFlag();
    }

    private renderStaleFlag(): void {
        const stale = isStale(this.client.state, Date.now());
        $("stale-flag").textContent = stale ? "STALE (no frames)" : "";
    }

    private renderDiagnostics(state: PanelState): void {
        const d = state.diagnostics;
        if (!d) return;
        $("diag-rpm").textContent = d.rpm_valid
            ? `${d.rpm_estimate.toFixed(0)} rpm`
            : "invalid";
        $("diag-sync").textContent = d.sync;
        $("diag-codes").textContent = d.fault_codes.length
            ? d.fault_codes.join(", ")
            : "none";
    }

    private renderLedger(ledger: LedgerEntry[]): void {
        const list = $("ledger") as HTMLUListElement;
        list.innerHTML = "";
        for (const entry of ledger) {
            const li = document.createElement("li");
            const where = entry.sensor ? `${entry.sensor} ${entry.tooth ?? ""}` : "cam";
            li.textContent = `${entry.id}: ${entry.type} ${where} [${entry.activation}]`;
            list.appendChild(li);
        }
    }

    private drawWaveforms(d: DisplayBuckets, canvas: HTMLCanvasElement): void {
        const ctx = canvas.getContext("2d")!;
        const w = canvas.width;
        const h = canvas.height;
        ctx.clearRect(0, 0, w, h);
        ctx.fillStyle = "#101418";
        ctx.fillRect(0, 0, w, h);
        const vp: Viewport = {
            x0: 40, y0: 10, width: w - 50, height: h - 40,
            vMin: -1.3, vMax: 1.3, angleFrom: 0, angleTo: 720,
        };
        this.drawGrid(ctx, vp);
        this.drawEnvelope(ctx, d, "cam", vp, "#e8a33d");
        this.drawEnvelope(ctx, d, "crank", vp, "#4db8ff");
    }

    private drawGrid(ctx: CanvasRenderingContext2D, vp: Viewport): void {
        ctx.strokeStyle = "#2a3138";
        ctx.fillStyle = "#8a949e";
        ctx.font = "10px monospace";
        for (let a = 0; a <= 720; a += 90) {
            const x = vp.x0 + (a / 720) * vp.width;
            ctx.beginPath();
            ctx.moveTo(x, vp.y0);
            ctx.lineTo(x, vp.y0 + vp.height);
            ctx.stroke();
            ctx.fillText(`${a}`, x - 8, vp.y0 + vp.height + 14);
        }
        const zero = vp.y0 + vp.height * (1 - (0 - vp.vMin) / (vp.vMax - vp.vMin));
        ctx.beginPath();
        ctx.moveTo(vp.x0, zero);
        ctx.lineTo(vp.x0 + vp.width, zero);
        ctx.stroke();
    }

    private drawEnvelope(
        ctx: CanvasRenderingContext2D,
        d: DisplayBuckets,
        channel: "crank" | "cam",
        vp: Viewport,
        color: string,
    ): void {
        const env = envelope(d, channel, vp);
        if (env.xs.length === 0) return;
        // filled min/max band so narrow pulses and empty windows stay visible
        ctx.beginPath();
        ctx.moveTo(env.xs[0], env.yMax[0]);
        for (let i = 1; i < env.xs.length; i++) ctx.lineTo(env.xs[i], env.yMax[i]);
        for (let i = env.xs.length - 1; i >= 0; i--) ctx.lineTo(env.xs[i], env.yMin[i]);
        ctx.closePath();
        ctx.fillStyle = color + "66";
        ctx.fill();
        ctx.strokeStyle = color;
        ctx.lineWidth = 1;
        ctx.stroke();
    }

    private detachPlot(): void {
        this.detached = window.open("", "waveforms", "width=900,height=420");
        if (!this.detached) return;
        this.detached.document.write(
            "<title>crank / cam</title><body style='margin:0;background:#101418'>" +
            "<canvas id='waveform-detached' width='880' height='380'></canvas></body>",
        );
    }
}

export function mount(): void {
    const url = `ws://${location.host}/ws`;
    const panel = new ControlPanel(url);
    panel.start().catch((e) => {
        document.getElementById("conn-status")!.textContent =
            `connection failed: ${e.message}`;
    });
}

if (typeof document !== "undefined" && document.getElementById("waveform")) {
    mount();
}
