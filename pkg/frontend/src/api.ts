// Typed client for the session API. Every payload is validated here with the
// same rules the server enforces, so the UI never sends a request the server
// would reject with a 400.

export type RenderMode = "raymarch" | "raymarch_shadow" | "pathtrace";
export const RENDER_MODES: RenderMode[] = ["raymarch", "raymarch_shadow", "pathtrace"];

export interface CameraJson {
  eye: [number, number, number];
  center: [number, number, number];
  up: [number, number, number];
  vfov_deg: number;
}

export interface TfJson {
  colors: number[][]; // rows [v, r, g, b], v strictly increasing
  opacities: number[][]; // rows [v, alpha], v strictly increasing
  density_scale: number;
}

export interface RendererUpdate {
  mode?: RenderMode;
  macrocells?: boolean;
  size?: [number, number];
}

export interface StateJson {
  step: number;
  loss: number | null;
  lr: number;
  paused: boolean;
  pending_steps: number;
  error: string | null;
  fps: number;
  tick_ms: number;
  frame_id: number;
  accum_frames: number;
  model: { params: number; encoding: string; batch_size: number };
  volume: { dims: number[]; dtype: string; value_range: number[] | null };
  renderer: { mode: RenderMode; macrocells: boolean; size: [number, number] };
  camera: CameraJson & { width: number; height: number };
  tf_hash: string;
}

export type LossRecord = [step: number, loss: number, lr: number];

const finite3 = (v: unknown): v is [number, number, number] =>
  Array.isArray(v) && v.length === 3 && v.every((x) => typeof x === "number" && Number.isFinite(x));

function cross(a: number[], b: number[]): number[] {
  return [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
}

/** Returns an error message, or null when the payload is acceptable. */
export function validateCamera(cam: CameraJson): string | null {
  if (!finite3(cam.eye) || !finite3(cam.center) || !finite3(cam.up)) {
    return "eye/center/up must be finite 3-vectors";
  }
  if (!(cam.vfov_deg > 0 && cam.vfov_deg < 180)) {
    return `vfov_deg must be in (0, 180), got ${cam.vfov_deg}`;
  }
  const fwd = cam.center.map((c, i) => c - cam.eye[i]);
  if (fwd.every((x) => x === 0)) return "eye and center coincide";
  const side = cross(fwd, cam.up);
  if (side.every((x) => x === 0)) return "up is parallel to the view direction";
  return null;
}

function sortedRows(rows: number[][], width: number, what: string): string | null {
  if (!Array.isArray(rows) || rows.length === 0) return `${what} must be nonempty`;
  for (const row of rows) {
    if (!Array.isArray(row) || row.length !== width) return `${what} rows must have ${width} entries`;
    if (!row.every((x) => typeof x === "number" && Number.isFinite(x))) return `${what} must be finite`;
  }
  for (let i = 1; i < rows.length; i++) {
    if (!(rows[i][0] > rows[i - 1][0])) return `${what} positions must be strictly increasing`;
  }
  return null;
}

export function validateTf(tf: TfJson): string | null {
  return (
    sortedRows(tf.colors, 4, "color points") ??
    sortedRows(tf.opacities, 2, "opacity points") ??
    (tf.density_scale > 0 ? null : `density_scale must be > 0, got ${tf.density_scale}`)
  );
}

export function validateRenderer(upd: RendererUpdate): string | null {
  if (upd.mode === undefined && upd.macrocells === undefined && upd.size === undefined) {
    return "renderer update needs at least one of mode, macrocells, size";
  }
  if (upd.mode !== undefined && !RENDER_MODES.includes(upd.mode)) {
    return `unknown render mode ${upd.mode}`;
  }
  if (upd.macrocells !== undefined && typeof upd.macrocells !== "boolean") {
    return "macrocells must be a boolean";
  }
  if (upd.size !== undefined) {
    const ok = Array.isArray(upd.size) && upd.size.length === 2 &&
      upd.size.every((v) => Number.isInteger(v) && v >= 1 && v <= 4096);
    if (!ok) return "size must be [width, height] with integers in 1..4096";
  }
  return null;
}

export function validateTraining(action: string, count?: number): string | null {
  if (action !== "pause" && action !== "resume" && action !== "step") {
    return `unknown training action ${action}`;
  }
  if (action === "step" && !(Number.isInteger(count) && (count as number) >= 1)) {
    return `count must be an integer >= 1, got ${count}`;
  }
  return null;
}

export class ApiClient {
  constructor(
    public base: string,
    private fetchFn: typeof fetch = (...a) => fetch(...a),
  ) {}

  private async post(path: string, body: unknown): Promise<Record<string, unknown>> {
    const res = await this.fetchFn(this.base + path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!res.ok) throw new Error(`${path} -> ${res.status} ${await res.text()}`);
    return res.json();
  }

  async state(): Promise<StateJson> {
    const res = await this.fetchFn(this.base + "/api/state");
    if (!res.ok) throw new Error(`/api/state -> ${res.status}`);
    return res.json();
  }

  async loss(since: number): Promise<{ records: LossRecord[]; latest_step: number }> {
    const res = await this.fetchFn(`${this.base}/api/loss?since=${since}`);
    if (!res.ok) throw new Error(`/api/loss -> ${res.status}`);
    return res.json();
  }

  setCamera(cam: CameraJson) {
    const err = validateCamera(cam);
    if (err) return Promise.reject(new Error(err));
    return this.post("/api/camera", cam);
  }

  setTransferFunction(tf: TfJson) {
    const err = validateTf(tf);
    if (err) return Promise.reject(new Error(err));
    return this.post("/api/transfer_function", tf);
  }

  training(action: "pause" | "resume" | "step", count?: number) {
    const err = validateTraining(action, count);
    if (err) return Promise.reject(new Error(err));
    return this.post("/api/training", action === "step" ? { action, count } : { action });
  }

  setRenderer(upd: RendererUpdate) {
    const err = validateRenderer(upd);
    if (err) return Promise.reject(new Error(err));
    return this.post("/api/renderer", upd);
  }

  save(path?: string) {
    return this.post("/api/save", path ? { path } : {});
  }
}
