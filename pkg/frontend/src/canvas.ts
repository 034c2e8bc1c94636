// Canvas rendering: base image + prediction overlay + cursor radius ring.
// Pixel math lives in geometry.ts; this layer only draws.

import { PredictionPayload } from "./api.js";
import { ViewTransform, imageToCanvas } from "./geometry.js";
import { CLASS_PALETTE } from "./palette.js";

export class OverlayRenderer {
  private baseBitmap: ImageBitmap | null = null;
  private overlayBitmap: ImageBitmap | null = null;
  imageWidth = 0;
  imageHeight = 0;

  constructor(private canvas: HTMLCanvasElement) {}

  async setBaseImage(blob: Blob): Promise<void> {
    this.baseBitmap = await createImageBitmap(blob);
    this.imageWidth = this.baseBitmap.width;
    this.imageHeight = this.baseBitmap.height;
  }

  async setPrediction(pred: PredictionPayload | null, task: string | null): Promise<void> {
    if (!pred) {
      this.overlayBitmap = null;
      return;
    }
    const raw = await createImageBitmap(await pngBlob(pred.data));
    // draw the decoded PNG into a scratch canvas to recolor it per task
    const scratch = document.createElement("canvas");
    scratch.width = raw.width;
    scratch.height = raw.height;
    const ctx = scratch.getContext("2d")!;
    ctx.drawImage(raw, 0, 0);
    const img = ctx.getImageData(0, 0, raw.width, raw.height);
    if (pred.format === "png_palette") {
      // the PNG already carries the palette; make background transparent
      for (let i = 0; i < raw.width * raw.height; i++) {
        const r = img.data[i * 4];
        const g = img.data[i * 4 + 1];
        const b = img.data[i * 4 + 2];
        const [br, bg, bb] = CLASS_PALETTE[0];
        const isBackground =
          (r === br && g === bg && b === bb) || (r === 0 && g === 0 && b === 0);
        img.data[i * 4 + 3] = isBackground ? 0 : 255;
      }
    }
    ctx.putImageData(img, 0, 0);
    this.overlayBitmap = await createImageBitmap(scratch);
  }

  render(t: ViewTransform, opacity: number,
         cursor: { u: number; v: number; r: number } | null): void {
    const ctx = this.canvas.getContext("2d")!;
    ctx.clearRect(0, 0, this.canvas.width, this.canvas.height);
    ctx.imageSmoothingEnabled = false;
    if (this.baseBitmap) {
      ctx.drawImage(
        this.baseBitmap,
        t.panX, t.panY,
        this.imageWidth * t.zoom, this.imageHeight * t.zoom,
      );
    }
    if (this.overlayBitmap) {
      ctx.globalAlpha = opacity;
      ctx.drawImage(
        this.overlayBitmap,
        t.panX, t.panY,
        this.imageWidth * t.zoom, this.imageHeight * t.zoom,
      );
      ctx.globalAlpha = 1.0;
    }
    if (cursor) {
      const { x, y } = imageToCanvas({ u: cursor.u, v: cursor.v }, t);
      ctx.strokeStyle = "#ffffff";
      ctx.lineWidth = 1.5;
      ctx.setLineDash([4, 3]);
      ctx.beginPath();
      ctx.arc(x, y, cursor.r * t.zoom, 0, Math.PI * 2);
      ctx.stroke();
      ctx.setLineDash([]);
    }
  }
}

async function pngBlob(base64: string): Promise<Blob> {
  const resp = await fetch(`data:image/png;base64,${base64}`);
  return resp.blob();
}
