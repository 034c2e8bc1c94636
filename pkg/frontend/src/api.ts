// Typed client for the session service. DOM-free so it runs in tests under node.

export type Task = "interactive_seg" | "semantic_seg" | "matting" | "depth";
export type Kind = "sb" | "bmsb" | "bmsb-m" | "bmconv";

export interface PredictionPayload {
  format: "png_palette" | "png_u16";
  data: string; // base64 PNG
  classes?: number;
  min?: number;
  max?: number;
}

export interface RefinementReport {
  loss_refine: number[];
  loss_consistency: number[];
  loss_total: number[];
  iterations_executed: number;
  early_stopped: boolean;
  wall_seconds: number;
}

export interface ClickRecord {
  u: number;
  v: number;
  r: number;
  label: number | string;
}

export interface SessionInfo {
  task: Task;
  mode: string;
  kind: string;
  config: Record<string, unknown>;
  clicks: ClickRecord[];
  reports: RefinementReport[];
}

export interface CreateResponse {
  session_id: string;
  task: Task;
  prediction: PredictionPayload;
}

export interface InteractResponse {
  prediction: PredictionPayload;
  report?: RefinementReport;
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

async function jsonOrThrow(resp: Response): Promise<any> {
  if (!resp.ok) {
    let detail = resp.statusText;
    try {
      const body = await resp.json();
      detail = body.error ?? JSON.stringify(body);
    } catch {
      /* non-JSON error body */
    }
    throw new ApiError(resp.status, detail);
  }
  return resp.json();
}

export class SessionApi {
  constructor(private baseUrl: string = "") {}

  async createSession(opts: {
    imageBase64: string;
    task: Task;
    kind?: Kind;
    mode?: string;
    layers?: number;
    config?: Record<string, unknown>;
  }): Promise<CreateResponse> {
    const resp = await fetch(`${this.baseUrl}/sessions`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({
        image: opts.imageBase64,
        task: opts.task,
        kind: opts.kind ?? "bmconv",
        mode: opts.mode ?? "gbrs",
        layers: opts.layers ?? 1,
        config: opts.config ?? {},
      }),
    });
    return jsonOrThrow(resp);
  }

  async click(
    id: string,
    u: number,
    v: number,
    r: number,
    label: number | string,
  ): Promise<InteractResponse> {
    const resp = await fetch(`${this.baseUrl}/sessions/${id}/click`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ u, v, r, label }),
    });
    return jsonOrThrow(resp);
  }

  async stroke(
    id: string,
    points: Array<{ u: number; v: number; r: number; class: number }>,
  ): Promise<InteractResponse> {
    const resp = await fetch(`${this.baseUrl}/sessions/${id}/stroke`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ points }),
    });
    return jsonOrThrow(resp);
  }

  async push(
    id: string,
    u: number,
    v: number,
    direction: "up" | "down",
  ): Promise<InteractResponse> {
    const resp = await fetch(`${this.baseUrl}/sessions/${id}/push`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ u, v, direction }),
    });
    return jsonOrThrow(resp);
  }

  async undo(id: string): Promise<InteractResponse> {
    const resp = await fetch(`${this.baseUrl}/sessions/${id}/undo`, {
      method: "POST",
    });
    return jsonOrThrow(resp);
  }

  async info(id: string): Promise<SessionInfo> {
    const resp = await fetch(`${this.baseUrl}/sessions/${id}`);
    return jsonOrThrow(resp);
  }

  async remove(id: string): Promise<void> {
    await jsonOrThrow(await fetch(`${this.baseUrl}/sessions/${id}`, { method: "DELETE" }));
  }
}
