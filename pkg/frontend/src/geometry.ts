// Canvas <-> image coordinate mapping and stroke path sampling. Pure functions.

export interface ViewTransform {
  zoom: number; // canvas pixels per image pixel
  panX: number; // canvas position of image pixel (0, 0)
  panY: number;
}

export interface ImagePoint {
  u: number; // row
  v: number; // col
}

/** Canvas position -> integer image pixel, or null when outside the image. */
export function canvasToImage(
  x: number,
  y: number,
  t: ViewTransform,
  width: number,
  height: number,
): ImagePoint | null {
  const v = Math.floor((x - t.panX) / t.zoom);
  const u = Math.floor((y - t.panY) / t.zoom);
  if (u < 0 || v < 0 || u >= height || v >= width) return null;
  return { u, v };
}

/** Center of an image pixel in canvas coordinates. */
export function imageToCanvas(p: ImagePoint, t: ViewTransform): { x: number; y: number } {
  return {
    x: t.panX + (p.v + 0.5) * t.zoom,
    y: t.panY + (p.u + 0.5) * t.zoom,
  };
}

/**
 * Sample disk centers along a drag path so consecutive disks overlap:
 * the step between samples is radius / 2.
 */
export function sampleStrokePath(
  path: ImagePoint[],
  radius: number,
): ImagePoint[] {
  if (path.length === 0) return [];
  const step = Math.max(radius / 2, 0.5);
  const out: ImagePoint[] = [{ ...path[0] }];
  let last = { u: path[0].u, v: path[0].v };
  let carried = 0;
  for (let i = 1; i < path.length; i++) {
    const seg = path[i];
    const du = seg.u - last.u;
    const dv = seg.v - last.v;
    const dist = Math.hypot(du, dv);
    if (dist === 0) continue;
    let travelled = carried;
    while (travelled + step <= dist) {
      travelled += step;
      out.push({
        u: Math.round(last.u + (du * travelled) / dist),
        v: Math.round(last.v + (dv * travelled) / dist),
      });
    }
    carried = 0;
    last = { u: seg.u, v: seg.v };
  }
  const tail = path[path.length - 1];
  const prev = out[out.length - 1];
  if (prev.u !== tail.u || prev.v !== tail.v) out.push({ ...tail });
  return out;
}

/** Fit-to-view transform keeping square pixels. */
export function fitTransform(
  imageWidth: number,
  imageHeight: number,
  canvasWidth: number,
  canvasHeight: number,
): ViewTransform {
  const zoom = Math.min(canvasWidth / imageWidth, canvasHeight / imageHeight);
  return {
    zoom,
    panX: (canvasWidth - imageWidth * zoom) / 2,
    panY: (canvasHeight - imageHeight * zoom) / 2,
  };
}
