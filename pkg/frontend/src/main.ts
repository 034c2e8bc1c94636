// Wiring: DOM events -> store actions -> renderer updates.

import { SessionApi, Task } from "./api.js";
import { OverlayRenderer } from "./canvas.js";
import {
  ImagePoint,
  ViewTransform,
  canvasToImage,
  fitTransform,
  sampleStrokePath,
} from "./geometry.js";
import { encodePpmBase64, syntheticSample } from "./ppm.js";
import { SessionStore, Tool } from "./state.js";

const $ = <T extends HTMLElement>(id: string): T =>
  document.getElementById(id) as T;

const api = new SessionApi("");
const store = new SessionStore(api);
const canvas = $("view") as unknown as HTMLCanvasElement;
const renderer = new OverlayRenderer(canvas);

let transform: ViewTransform = { zoom: 1, panX: 0, panY: 0 };
let cursor: { u: number; v: number; r: number } | null = null;
let strokePath: ImagePoint[] = [];
let dragging = false;
let lastImageBase64: string | null = null;

function selectedTask(): Task {
  return ($("task") as HTMLSelectElement).value as Task;
}

function currentTool(): Tool {
  return ($("tool") as HTMLSelectElement).value as Tool;
}

function radius(): number {
  return Number(($("radius") as HTMLInputElement).value);
}

function refreshToolChoices(): void {
  const task = selectedTask();
  const tool = $("tool") as HTMLSelectElement;
  const options: Array<[Tool, string, boolean]> = [
    ["pos-click", "positive click", task === "interactive_seg"],
    ["neg-click", "negative click (right-drag too)", task === "interactive_seg"],
    ["class-stroke", "class stroke", task === "semantic_seg"],
    ["value-click", "value click", task === "matting" || task === "depth"],
    ["push-up", "push up (left)", task === "matting" || task === "depth"],
    ["push-down", "push down (right)", task === "matting" || task === "depth"],
  ];
  tool.innerHTML = "";
  for (const [value, label, enabled] of options) {
    if (!enabled) continue;
    const opt = document.createElement("option");
    opt.value = value;
    opt.textContent = label;
    tool.appendChild(opt);
  }
  $("class-row").style.display = task === "semantic_seg" ? "" : "none";
  $("value-row").style.display =
    task === "matting" || task === "depth" ? "" : "none";
}

async function newSession(imageBase64: string): Promise<void> {
  lastImageBase64 = imageBase64;
  status("creating session…");
  await store.create(imageBase64, selectedTask(), ($("kind") as HTMLSelectElement).value,
                     Number(($("layers") as HTMLSelectElement).value));
  const blob = await (await fetch(`data:image/x-portable-pixmap;base64,${imageBase64}`)).blob();
  await renderer.setBaseImage(blob);
  transform = fitTransform(renderer.imageWidth, renderer.imageHeight,
                           canvas.width, canvas.height);
  await redraw();
  status("ready");
}

async function redraw(): Promise<void> {
  await renderer.setPrediction(store.state.prediction, store.state.task);
  renderer.render(transform, store.state.overlayOpacity, cursor);
  $("history").textContent = store.state.clicks
    .map((c, i) => `${i + 1}: (${c.u},${c.v}) r=${c.r.toFixed(1)} -> ${c.label}`)
    .join("\n");
  const err = store.state.lastError;
  if (err) status(`error: ${err}`);
}

function status(text: string): void {
  $("status").textContent = text;
}

function labelFor(tool: Tool, button: number): number | string {
  const task = store.state.task;
  if (task === "interactive_seg") {
    if (tool === "neg-click" || button === 2) return -1;
    return 1;
  }
  if (task === "semantic_seg") return Number(($("cls") as HTMLSelectElement).value);
  return Number(($("value") as HTMLInputElement).value);
}

function onPointer(x: number, y: number, button: number, isDragSample: boolean): void {
  const p = canvasToImage(x, y, transform, renderer.imageWidth, renderer.imageHeight);
  if (!p || !store.state.sessionId) return;
  const tool = currentTool();
  if (tool === "class-stroke") {
    strokePath.push(p);
    return; // submitted on pointer-up
  }
  if (isDragSample) return; // only strokes accumulate during drags
  if (tool === "push-up" || tool === "push-down") {
    const direction = button === 2 || tool === "push-down" ? "down" : "up";
    store.enqueue({ kind: "push", u: p.u, v: p.v, direction }).then(redraw);
    return;
  }
  store
    .enqueue({ kind: "click", u: p.u, v: p.v, r: radius(), label: labelFor(tool, button) })
    .then(redraw);
}

function bindEvents(): void {
  canvas.addEventListener("contextmenu", (e) => e.preventDefault());
  canvas.addEventListener("pointerdown", (e) => {
    dragging = true;
    strokePath = [];
    onPointer(e.offsetX, e.offsetY, e.button, false);
  });
  canvas.addEventListener("pointermove", (e) => {
    const p = canvasToImage(e.offsetX, e.offsetY, transform,
                            renderer.imageWidth, renderer.imageHeight);
    cursor = p ? { u: p.u, v: p.v, r: radius() } : null;
    renderer.render(transform, store.state.overlayOpacity, cursor);
    if (dragging && currentTool() === "class-stroke") {
      onPointer(e.offsetX, e.offsetY, e.button, false);
    }
  });
  canvas.addEventListener("pointerup", () => {
    dragging = false;
    if (currentTool() === "class-stroke" && strokePath.length > 0) {
      const r = radius();
      const cls = Number(($("cls") as HTMLSelectElement).value);
      const points = sampleStrokePath(strokePath, r).map((p) => ({
        u: p.u,
        v: p.v,
        r,
        class: cls,
      }));
      strokePath = [];
      store.enqueue({ kind: "stroke", points }).then(redraw);
    }
  });
  $("undo").addEventListener("click", () => {
    store.enqueue({ kind: "undo" }).then(redraw);
  });
  $("task").addEventListener("change", refreshToolChoices);
  ($("opacity") as HTMLInputElement).addEventListener("input", (e) => {
    store.patch({ overlayOpacity: Number((e.target as HTMLInputElement).value) });
    renderer.render(transform, store.state.overlayOpacity, cursor);
  });
  $("new-synthetic").addEventListener("click", () => {
    const size = 64;
    const seed = Math.floor(Math.random() * 1e9);
    const rgb = syntheticSample(size, seed);
    newSession(encodePpmBase64(rgb, size, size)).catch(() => undefined);
  });
  ($("file") as HTMLInputElement).addEventListener("change", async (e) => {
    const file = (e.target as HTMLInputElement).files?.[0];
    if (!file) return;
    const buf = new Uint8Array(await file.arrayBuffer());
    let binary = "";
    for (const b of buf) binary += String.fromCharCode(b);
    newSession(btoa(binary)).catch(() => undefined);
  });
  store.subscribe(() => {
    $("busy").textContent = store.state.busy
      ? `working (${store.pendingCount()} queued)`
      : "";
  });
}

refreshToolChoices();
bindEvents();
status("upload an image or generate a synthetic sample to begin");
