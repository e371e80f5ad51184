/** Labeling app state machine.
 *
 * One pair on screen at a time; the three label controls (left / tie /
 * right) map to 0 / 0.5 / 1. Controls stay disabled while a request is in
 * flight, so a double click can never issue a second POST. A conflict
 * response (someone already labeled the pair) refreshes to the next pair
 * with a visible notice instead of corrupting state.
 */

import { ApiError, isDone, LabelApi, type PairPayload, type PreferenceLabel } from "./api.js";
import {
  actionMagnitudes,
  pathGeometry,
  sharedBounds,
  sparklinePath,
  stateTraces,
  type Viewport,
} from "./render.js";

const PANEL: Viewport = { width: 320, height: 260, margin: 16 };
const SPARK_W = 320;
const SPARK_H = 48;

const STATE_COLORS = ["#0aa", "#08c", "#55c", "#a3c", "#c66", "#c93"];

export type AppPhase = "loading" | "labeling" | "submitting" | "done" | "error";

export class LabelerApp {
  phase: AppPhase = "loading";
  pair: PairPayload | null = null;
  cursor = 0;
  postsIssued = 0; // instrumentation for tests
  notice = "";

  private readonly api: LabelApi;

  constructor(
    private readonly root: HTMLElement,
    baseUrl = "",
  ) {
    this.api = new LabelApi(baseUrl);
    this.buildSkeleton();
    this.bindKeys();
  }

  async start(): Promise<void> {
    await this.loadNext();
  }

  async loadNext(): Promise<void> {
    this.phase = "loading";
    this.renderStatus("loading next pair...");
    try {
      const resp = await this.api.nextPair();
      if (isDone(resp)) {
        this.phase = "done";
        this.pair = null;
        this.renderDone(resp.labeled);
        return;
      }
      this.pair = resp;
      this.cursor = 0;
      this.phase = "labeling";
      this.renderPair();
    } catch (err) {
      this.phase = "error";
      this.renderError(err instanceof Error ? err.message : String(err));
    }
  }

  /** Submit a label for the current pair; no-op unless labeling is active. */
  async submit(label: PreferenceLabel): Promise<void> {
    if (this.phase !== "labeling" || this.pair === null) {
      return;
    }
    this.phase = "submitting";
    this.setControlsEnabled(false);
    this.postsIssued += 1;
    const pairId = this.pair.pair_id;
    try {
      await this.api.submit(pairId, label);
      this.notice = "";
      await this.loadNext();
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        this.notice = `pair ${pairId} was already labeled; skipping ahead`;
        await this.loadNext();
        return;
      }
      this.phase = "error";
      this.renderError(err instanceof Error ? err.message : String(err));
    }
  }

  setCursor(t: number): void {
    if (this.pair === null) return;
    const max = this.pair.traj0.states.length - 1;
    this.cursor = Math.max(0, Math.min(max, t));
    this.drawPanels();
  }

  // -- DOM ----------------------------------------------------------------

  private buildSkeleton(): void {
    this.root.innerHTML = `
      <header>
        <h1>Which behavior do you prefer?</h1>
        <span id="progress" aria-live="polite"></span>
      </header>
      <div id="notice" class="notice" hidden></div>
      <main id="panels" class="panels">
        <section class="panel" id="panel0">
          <h2>Trajectory A</h2>
          <canvas id="path0" width="${PANEL.width}" height="${PANEL.height}"></canvas>
          <canvas id="spark-state0" width="${SPARK_W}" height="${SPARK_H}"></canvas>
          <canvas id="spark-action0" width="${SPARK_W}" height="${SPARK_H}"></canvas>
        </section>
        <section class="panel" id="panel1">
          <h2>Trajectory B</h2>
          <canvas id="path1" width="${PANEL.width}" height="${PANEL.height}"></canvas>
          <canvas id="spark-state1" width="${SPARK_W}" height="${SPARK_H}"></canvas>
          <canvas id="spark-action1" width="${SPARK_W}" height="${SPARK_H}"></canvas>
        </section>
      </main>
      <div class="scrub">
        <label>timestep <input type="range" id="scrubber" min="0" max="0" value="0"></label>
      </div>
      <div class="controls">
        <button id="btn-left" disabled>&#8592; A is better (0)</button>
        <button id="btn-tie" disabled>tie (0.5)</button>
        <button id="btn-right" disabled>B is better (1) &#8594;</button>
      </div>
      <p class="hint">keyboard: &#8592; A, &#8595; tie, &#8594; B</p>
      <div id="status"></div>
    `;
    this.byId("btn-left").addEventListener("click", () => void this.submit(0));
    this.byId("btn-tie").addEventListener("click", () => void this.submit(0.5));
    this.byId("btn-right").addEventListener("click", () => void this.submit(1));
    const scrub = this.byId("scrubber") as HTMLInputElement;
    scrub.addEventListener("input", () => this.setCursor(Number(scrub.value)));
  }

  private bindKeys(): void {
    this.root.ownerDocument.addEventListener("keydown", (ev: KeyboardEvent) => {
      if (!this.root.isConnected) return; // app unmounted
      if (ev.key === "ArrowLeft") void this.submit(0);
      else if (ev.key === "ArrowDown") void this.submit(0.5);
      else if (ev.key === "ArrowRight") void this.submit(1);
    });
  }

  private byId(id: string): HTMLElement {
    const el = this.root.querySelector<HTMLElement>(`#${id}`);
    if (el === null) throw new Error(`missing element #${id}`);
    return el;
  }

  private setControlsEnabled(enabled: boolean): void {
    for (const id of ["btn-left", "btn-tie", "btn-right"]) {
      (this.byId(id) as HTMLButtonElement).disabled = !enabled;
    }
  }

  private renderStatus(text: string): void {
    this.byId("status").textContent = text;
  }

  private renderError(message: string): void {
    this.setControlsEnabled(false);
    const banner = this.byId("notice");
    banner.hidden = false;
    banner.innerHTML = "";
    banner.append(`service unreachable: ${message} `);
    const retry = this.root.ownerDocument.createElement("button");
    retry.textContent = "retry";
    retry.addEventListener("click", () => void this.loadNext());
    banner.append(retry);
  }

  private renderDone(labeled: number): void {
    this.setControlsEnabled(false);
    this.byId("panels").innerHTML =
      `<div class="done"><h2>All pairs labeled</h2><p>${labeled} labels recorded. Thank you.</p></div>`;
    this.byId("progress").textContent = `${labeled} / ${labeled}`;
    this.renderStatus("session complete");
  }

  private renderPair(): void {
    if (this.pair === null) return;
    const banner = this.byId("notice");
    banner.hidden = this.notice === "";
    banner.textContent = this.notice;
    this.byId("progress").textContent = `${this.pair.labeled} / ${this.pair.total}`;
    const scrub = this.byId("scrubber") as HTMLInputElement;
    scrub.max = String(this.pair.traj0.states.length - 1);
    scrub.value = "0";
    this.setControlsEnabled(true);
    this.renderStatus(`pair ${this.pair.pair_id} (${this.pair.traj0.env})`);
    this.drawPanels();
  }

  private drawPanels(): void {
    if (this.pair === null) return;
    const bounds = sharedBounds([this.pair.traj0, this.pair.traj1]);
    for (const side of [0, 1] as const) {
      const traj = side === 0 ? this.pair.traj0 : this.pair.traj1;
      this.drawPath(`path${side}`, traj, bounds);
      this.drawStateSparkline(`spark-state${side}`, traj);
      this.drawActionSparkline(`spark-action${side}`, traj);
    }
  }

  private context(id: string): CanvasRenderingContext2D | null {
    const canvas = this.byId(id) as HTMLCanvasElement;
    if (typeof canvas.getContext !== "function") return null; // headless tests
    return canvas.getContext("2d");
  }

  private drawPath(
    id: string,
    traj: Parameters<typeof pathGeometry>[0],
    bounds: ReturnType<typeof sharedBounds>,
  ): void {
    const ctx = this.context(id);
    if (ctx === null) return;
    const geo = pathGeometry(traj, bounds, PANEL);
    ctx.clearRect(0, 0, PANEL.width, PANEL.height);
    ctx.strokeStyle = "#246";
    ctx.lineWidth = 2;
    ctx.beginPath();
    geo.points.forEach((pt, i) => (i === 0 ? ctx.moveTo(pt.x, pt.y) : ctx.lineTo(pt.x, pt.y)));
    ctx.stroke();
    ctx.fillStyle = "#2a2";
    ctx.beginPath();
    ctx.arc(geo.start.x, geo.start.y, 5, 0, Math.PI * 2);
    ctx.fill();
    ctx.fillStyle = "#c22";
    ctx.beginPath();
    ctx.arc(geo.end.x, geo.end.y, 5, 0, Math.PI * 2);
    ctx.fill();
    const cur = geo.points[Math.min(this.cursor, geo.points.length - 1)];
    ctx.strokeStyle = "#f80";
    ctx.beginPath();
    ctx.arc(cur.x, cur.y, 7, 0, Math.PI * 2);
    ctx.stroke();
  }

  private drawStateSparkline(id: string, traj: Parameters<typeof stateTraces>[0]): void {
    const ctx = this.context(id);
    if (ctx === null) return;
    ctx.clearRect(0, 0, SPARK_W, SPARK_H);
    stateTraces(traj).forEach((trace, j) => {
      ctx.strokeStyle = STATE_COLORS[j % STATE_COLORS.length];
      ctx.lineWidth = 1;
      ctx.beginPath();
      sparklinePath(trace, SPARK_W, SPARK_H).forEach((pt, i) =>
        i === 0 ? ctx.moveTo(pt.x, pt.y) : ctx.lineTo(pt.x, pt.y),
      );
      ctx.stroke();
    });
    this.drawCursor(ctx, traj.states.length);
  }

  private drawActionSparkline(id: string, traj: Parameters<typeof actionMagnitudes>[0]): void {
    const ctx = this.context(id);
    if (ctx === null) return;
    ctx.clearRect(0, 0, SPARK_W, SPARK_H);
    ctx.strokeStyle = "#808";
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    const series = sparklinePath(actionMagnitudes(traj), SPARK_W, SPARK_H);
    series.forEach((pt, i) => (i === 0 ? ctx.moveTo(pt.x, pt.y) : ctx.lineTo(pt.x, pt.y)));
    ctx.stroke();
    this.drawCursor(ctx, traj.actions.length);
  }

  private drawCursor(ctx: CanvasRenderingContext2D, length: number): void {
    if (length < 2) return;
    const x = (this.cursor / (length - 1)) * SPARK_W;
    ctx.strokeStyle = "#f80";
    ctx.beginPath();
    ctx.moveTo(x, 0);
    ctx.lineTo(x, SPARK_H);
    ctx.stroke();
  }
}
