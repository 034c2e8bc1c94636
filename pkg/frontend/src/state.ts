// UI session store: mirrors server state, queues interactions FIFO so only
// one request per session is ever in flight.

import {
  ApiError,
  ClickRecord,
  InteractResponse,
  PredictionPayload,
  SessionApi,
  Task,
} from "./api.js";

export type Tool = "pos-click" | "neg-click" | "class-stroke" | "push-up" | "push-down" | "value-click";

export interface UiState {
  sessionId: string | null;
  task: Task | null;
  tool: Tool;
  radius: number;
  selectedClass: number;
  valueLabel: number; // alpha / depth target for value clicks
  overlayOpacity: number;
  clicks: ClickRecord[];
  prediction: PredictionPayload | null;
  busy: boolean;
  lastError: string | null;
}

type Interaction =
  | { kind: "click"; u: number; v: number; r: number; label: number | string }
  | { kind: "stroke"; points: Array<{ u: number; v: number; r: number; class: number }> }
  | { kind: "push"; u: number; v: number; direction: "up" | "down" }
  | { kind: "undo" };

export class SessionStore {
  state: UiState = {
    sessionId: null,
    task: null,
    tool: "pos-click",
    radius: 5,
    selectedClass: 1,
    valueLabel: 1.0,
    overlayOpacity: 0.55,
    clicks: [],
    prediction: null,
    busy: false,
    lastError: null,
  };

  private queue: Interaction[] = [];
  private inFlight = false;
  private listeners: Array<(s: UiState) => void> = [];

  constructor(private api: SessionApi) {}

  subscribe(fn: (s: UiState) => void): void {
    this.listeners.push(fn);
  }

  private emit(): void {
    for (const fn of this.listeners) fn(this.state);
  }

  patch(partial: Partial<UiState>): void {
    this.state = { ...this.state, ...partial };
    this.emit();
  }

  async create(imageBase64: string, task: Task, kind: string, layers: number,
               config: Record<string, unknown> = {}): Promise<void> {
    this.patch({ busy: true, lastError: null });
    try {
      const resp = await this.api.createSession({
        imageBase64,
        task,
        kind: kind as never,
        layers,
        config,
      });
      this.queue = [];
      this.patch({
        sessionId: resp.session_id,
        task,
        prediction: resp.prediction,
        clicks: [],
        busy: false,
      });
    } catch (err) {
      this.patch({ busy: false, lastError: describe(err) });
      throw err;
    }
  }

  /** Queue an interaction; requests drain strictly one at a time. */
  enqueue(action: Interaction): Promise<void> {
    this.queue.push(action);
    return this.drain();
  }

  pendingCount(): number {
    return this.queue.length + (this.inFlight ? 1 : 0);
  }

  private async drain(): Promise<void> {
    if (this.inFlight) return;
    this.inFlight = true;
    this.patch({ busy: true });
    try {
      while (this.queue.length > 0) {
        const action = this.queue.shift()!;
        await this.run(action);
      }
    } finally {
      this.inFlight = false;
      this.patch({ busy: false });
    }
  }

  private async run(action: Interaction): Promise<void> {
    const id = this.state.sessionId;
    if (!id) return;
    try {
      let resp: InteractResponse;
      if (action.kind === "click") {
        resp = await this.api.click(id, action.u, action.v, action.r, action.label);
      } else if (action.kind === "stroke") {
        resp = await this.api.stroke(id, action.points);
      } else if (action.kind === "push") {
        resp = await this.api.push(id, action.u, action.v, action.direction);
      } else {
        resp = await this.api.undo(id);
      }
      const info = await this.api.info(id);
      this.patch({
        prediction: resp.prediction,
        clicks: info.clicks,
        lastError: null,
      });
    } catch (err) {
      this.patch({ lastError: describe(err) });
    }
  }
}

function describe(err: unknown): string {
  if (err instanceof ApiError) return `server ${err.status}: ${err.message}`;
  return String(err);
}
