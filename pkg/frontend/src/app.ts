import { ApiClient, type StateJson, type TfJson } from "./api.js";
import { luminanceHistogram, type DecodedFrame } from "./frames.js";
import { LossSeries } from "./loss_chart.js";
import { clampOrbit, orbitForVolume, orbitToCamera, Throttle, type OrbitParams } from "./orbit.js";
import { FrameSocket, type FrameStats, type SocketStatus } from "./socket.js";
import { StatePoller } from "./state.js";
import { TfDraft } from "./tf_editor.js";

const SVG_NS = "http://www.w3.org/2000/svg";
const CAMERA_MIN_INTERVAL_MS = 34; // at most ~30 camera posts per second

// The state endpoint reports only a hash of the live transfer function, so a
// fresh UI seeds its draft with the server's default map and owns it from the
// first commit on.
const SERVER_DEFAULT_TF: TfJson = {
  colors: [[0.0, 0.1, 0.2, 0.9], [0.5, 0.9, 0.4, 0.1], [1.0, 1.0, 0.9, 0.2]],
  opacities: [[0.0, 0.0], [0.3, 0.0], [0.6, 0.9], [1.0, 1.0]],
  density_scale: 2.0,
};

export interface AppDeps {
  doc: Document;
  base?: string; // http origin, "" when served by the session itself
  fetchFn?: typeof fetch;
  makeWebSocket?: (url: string) => any;
  present?: (frame: DecodedFrame, canvas: HTMLCanvasElement) => void;
}

function presentToCanvas(frame: DecodedFrame, canvas: HTMLCanvasElement): void {
  if (canvas.width !== frame.width) canvas.width = frame.width;
  if (canvas.height !== frame.height) canvas.height = frame.height;
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  // copy pins the backing store to a plain ArrayBuffer, which ImageData wants
  const px = new Uint8ClampedArray(frame.pixels);
  ctx.putImageData(new ImageData(px, frame.width, frame.height), 0, 0);
}

export class App {
  api: ApiClient;
  socket: FrameSocket;
  poller: StatePoller;
  draft: TfDraft;
  orbit: OrbitParams | null = null;
  lastFrame: DecodedFrame | null = null;
  lastStats: FrameStats | null = null;
  histogram: number[] = new Array(64).fill(0);

  private doc: Document;
  private present: (frame: DecodedFrame, canvas: HTMLCanvasElement) => void;
  private cameraThrottle: Throttle<void>;
  private els!: Record<string, HTMLElement>;
  private dragPoint = -1;
  private lastHistogramAt = 0;

  constructor(deps: AppDeps) {
    this.doc = deps.doc;
    const base = deps.base ?? "";
    this.present = deps.present ?? presentToCanvas;
    this.api = new ApiClient(base, deps.fetchFn);
    const wsBase = base
      ? base.replace(/^http/, "ws")
      : `ws://${this.doc.location.host}`;
    this.socket = new FrameSocket(`${wsBase}/ws/frames`, {
      onFrame: (frame, stats) => this.onFrame(frame, stats),
      onStatus: (status, retryInMs) => this.onStatus(status, retryInMs),
      makeWebSocket: deps.makeWebSocket,
    });
    this.poller = new StatePoller(this.api, (s) => this.onState(s));
    this.draft = new TfDraft(SERVER_DEFAULT_TF);
    this.cameraThrottle = new Throttle(CAMERA_MIN_INTERVAL_MS, () => this.postCamera());
  }

  start(): void {
    this.grabElements();
    this.wireCanvas();
    this.wireTraining();
    this.wireRenderer();
    this.wireTf();
    this.poller.start();
    this.socket.connect();
  }

  stop(): void {
    this.poller.stop();
    this.socket.close();
    this.cameraThrottle.dispose();
  }

  get loss(): LossSeries {
    return this.poller.loss;
  }

  // ------------------------------------------------------------ wiring

  private grabElements(): void {
    const ids = [
      "view", "banner", "readout", "btn-pause", "btn-resume", "btn-step",
      "step-count", "mode-select", "macrocells-check", "size-select",
      "btn-save", "tf-box", "btn-tf-apply", "btn-tf-zero", "density-scale",
      "loss-box",
    ];
    this.els = {};
    for (const id of ids) {
      const el = this.doc.getElementById(id);
      if (!el) throw new Error(`missing #${id}`);
      this.els[id] = el as HTMLElement;
    }
  }

  private wireCanvas(): void {
    const canvas = this.els["view"] as HTMLCanvasElement;
    let dragging = false;
    let px = 0;
    let py = 0;
    canvas.addEventListener("pointerdown", (e) => {
      dragging = true;
      px = e.clientX;
      py = e.clientY;
      canvas.setPointerCapture?.(e.pointerId);
    });
    canvas.addEventListener("pointermove", (e) => {
      if (!dragging || !this.orbit) return;
      this.orbit = clampOrbit({
        ...this.orbit,
        azimuthDeg: this.orbit.azimuthDeg - (e.clientX - px) * 0.4,
        elevationDeg: this.orbit.elevationDeg + (e.clientY - py) * 0.4,
      });
      px = e.clientX;
      py = e.clientY;
      this.cameraThrottle.push(undefined);
    });
    canvas.addEventListener("pointerup", () => (dragging = false));
    canvas.addEventListener("wheel", (e) => {
      if (!this.orbit) return;
      e.preventDefault();
      this.orbit = clampOrbit({
        ...this.orbit,
        distance: this.orbit.distance * Math.exp(e.deltaY * 1e-3),
      });
      this.cameraThrottle.push(undefined);
    }, { passive: false });
  }

  private postCamera(): void {
    if (!this.orbit) return;
    this.api.setCamera(orbitToCamera(this.orbit)).catch(() => {});
  }

  private wireTraining(): void {
    this.els["btn-pause"].addEventListener("click", () => {
      this.api.training("pause").catch(() => {});
    });
    this.els["btn-resume"].addEventListener("click", () => {
      this.api.training("resume").catch(() => {});
    });
    this.els["btn-step"].addEventListener("click", () => {
      const n = parseInt((this.els["step-count"] as HTMLInputElement).value, 10);
      if (Number.isInteger(n) && n >= 1) this.api.training("step", n).catch(() => {});
    });
  }

  private wireRenderer(): void {
    this.els["mode-select"].addEventListener("change", () => {
      const mode = (this.els["mode-select"] as HTMLSelectElement).value as any;
      this.api.setRenderer({ mode }).catch(() => {});
    });
    this.els["macrocells-check"].addEventListener("change", () => {
      const on = (this.els["macrocells-check"] as HTMLInputElement).checked;
      this.api.setRenderer({ macrocells: on }).catch(() => {});
    });
    this.els["size-select"].addEventListener("change", () => {
      const n = parseInt((this.els["size-select"] as HTMLSelectElement).value, 10);
      this.api.setRenderer({ size: [n, n] }).catch(() => {});
    });
    this.els["btn-save"].addEventListener("click", () => {
      this.api.save().catch(() => {});
    });
  }

  private wireTf(): void {
    this.els["btn-tf-apply"].addEventListener("click", () => void this.commitTf());
    this.els["btn-tf-zero"].addEventListener("click", () => {
      this.draft.zeroAll();
      this.renderTfEditor();
      void this.commitTf();
    });
    this.els["density-scale"].addEventListener("change", () => {
      const v = parseFloat((this.els["density-scale"] as HTMLInputElement).value);
      if (v > 0) this.draft.densityScale = v;
      this.renderTfEditor();
    });
    this.renderTfEditor();
  }

  async commitTf(): Promise<void> {
    if (this.draft.problem()) return; // clamped edits keep this unreachable
    await this.api.setTransferFunction(this.draft.toJson()).catch(() => {});
  }

  // ------------------------------------------------------------ updates

  onFrame(frame: DecodedFrame, stats: FrameStats | null): void {
    this.lastFrame = frame;
    this.lastStats = stats;
    this.present(frame, this.els["view"] as HTMLCanvasElement);
    const now = Date.now();
    if (now - this.lastHistogramAt > 1000) {
      this.lastHistogramAt = now;
      this.histogram = luminanceHistogram(frame);
      this.renderTfEditor();
    }
    this.renderReadout();
  }

  onState(s: StateJson): void {
    if (!this.orbit) {
      // first state defines the orbit; afterwards the UI owns the camera
      this.orbit = orbitForVolume(s.volume.dims);
    }
    (this.els["mode-select"] as HTMLSelectElement).value = s.renderer.mode;
    (this.els["macrocells-check"] as HTMLInputElement).checked = s.renderer.macrocells;
    this.renderReadout();
    this.renderLoss();
  }

  onStatus(status: SocketStatus, retryInMs?: number): void {
    const banner = this.els["banner"];
    if (status === "open") {
      banner.style.display = "none";
      return;
    }
    banner.style.display = "block";
    banner.textContent =
      status === "retrying"
        ? `connection lost, retrying in ${((retryInMs ?? 0) / 1000).toFixed(1)}s`
        : `connection ${status}`;
  }

  // ------------------------------------------------------------ rendering

  private renderReadout(): void {
    const s = this.poller.state;
    const parts: string[] = [];
    if (s) {
      parts.push(`step ${s.step}`);
      if (s.loss != null) parts.push(`loss ${s.loss.toExponential(3)}`);
      parts.push(`lr ${s.lr.toExponential(2)}`);
      parts.push(`${s.fps.toFixed(1)} fps`);
      parts.push(`${s.model.params.toLocaleString()} params`);
      parts.push(s.paused ? "paused" : "training");
      if (s.error) parts.push(`error: ${s.error}`);
    }
    if (this.lastStats) parts.push(`${this.lastStats.field_evaluations.toLocaleString()} evals/frame`);
    this.els["readout"].textContent = parts.join("  ·  ");
  }

  private renderLoss(): void {
    const box = this.els["loss-box"];
    const w = 240;
    const h = 60;
    let svg = box.querySelector("svg");
    if (!svg) {
      svg = this.doc.createElementNS(SVG_NS, "svg");
      svg.setAttribute("viewBox", `0 0 ${w} ${h}`);
      const line = this.doc.createElementNS(SVG_NS, "polyline");
      line.setAttribute("class", "loss-line");
      line.setAttribute("fill", "none");
      svg.appendChild(line);
      box.appendChild(svg);
    }
    svg.querySelector("polyline")!.setAttribute("points", this.loss.polyline(w, h));
  }

  renderTfEditor(): void {
    const box = this.els["tf-box"];
    const w = 240;
    const h = 120;
    box.textContent = "";
    const svg = this.doc.createElementNS(SVG_NS, "svg");
    svg.setAttribute("viewBox", `0 0 ${w} ${h}`);
    const bins = this.histogram.length;
    for (let i = 0; i < bins; i++) {
      const bar = this.doc.createElementNS(SVG_NS, "rect");
      const bh = this.histogram[i] * (h - 4);
      bar.setAttribute("x", String((i / bins) * w));
      bar.setAttribute("y", String(h - bh));
      bar.setAttribute("width", String(w / bins));
      bar.setAttribute("height", String(bh));
      bar.setAttribute("class", "hist-bar");
      svg.appendChild(bar);
    }
    const line = this.doc.createElementNS(SVG_NS, "polyline");
    line.setAttribute("fill", "none");
    line.setAttribute("class", "tf-line");
    line.setAttribute(
      "points",
      this.draft.points.map((p) => `${p.v * w},${(1 - p.a) * h}`).join(" "),
    );
    svg.appendChild(line);
    this.draft.points.forEach((p, i) => {
      const dot = this.doc.createElementNS(SVG_NS, "circle");
      dot.setAttribute("cx", String(p.v * w));
      dot.setAttribute("cy", String((1 - p.a) * h));
      dot.setAttribute("r", "4");
      dot.setAttribute("class", "tf-dot");
      dot.addEventListener("pointerdown", (e) => {
        e.preventDefault();
        this.dragPoint = i;
      });
      dot.addEventListener("contextmenu", (e) => {
        e.preventDefault();
        this.draft.remove(i);
        this.renderTfEditor();
      });
      svg.appendChild(dot);
    });
    const toLocal = (e: PointerEvent | MouseEvent) => {
      const r = (svg as unknown as Element).getBoundingClientRect();
      const sx = r.width > 0 ? w / r.width : 1;
      const sy = r.height > 0 ? h / r.height : 1;
      return { v: (e.clientX - r.left) * sx / w, a: 1 - ((e.clientY - r.top) * sy) / h };
    };
    svg.addEventListener("pointermove", (e) => {
      if (this.dragPoint < 0) return;
      const { v, a } = toLocal(e);
      this.draft.drag(this.dragPoint, v, a);
      this.renderTfEditor();
    });
    svg.addEventListener("pointerup", () => (this.dragPoint = -1));
    svg.addEventListener("dblclick", (e) => {
      const { v } = toLocal(e);
      this.draft.add(v);
      this.renderTfEditor();
    });
    box.appendChild(svg);
  }
}
