// Six-class palette shared with the server, plus buffer-level compositing
// helpers kept DOM-free for testing.

export const CLASS_PALETTE: Array<[number, number, number]> = [
  [30, 30, 30],
  [230, 80, 60],
  [70, 160, 240],
  [90, 200, 120],
  [240, 200, 70],
  [180, 100, 220],
];

export interface Raster {
  width: number;
  height: number;
  data: Uint8ClampedArray; // RGBA
}

/** Composite overlay onto base in place at the given opacity (skips alpha-0). */
export function compositeOverlay(base: Raster, overlay: Raster, opacity: number): void {
  const n = base.width * base.height;
  for (let i = 0; i < n; i++) {
    const a = (overlay.data[i * 4 + 3] / 255) * opacity;
    if (a <= 0) continue;
    for (let c = 0; c < 3; c++) {
      const idx = i * 4 + c;
      base.data[idx] = Math.round(base.data[idx] * (1 - a) + overlay.data[idx] * a);
    }
  }
}

/** Paletted class indices -> RGBA raster; class 0 (background) is transparent. */
export function classesToRaster(
  indices: Uint8Array,
  width: number,
  height: number,
): Raster {
  const data = new Uint8ClampedArray(width * height * 4);
  for (let i = 0; i < width * height; i++) {
    const cls = indices[i];
    if (cls === 0) continue;
    const [r, g, b] = CLASS_PALETTE[cls % CLASS_PALETTE.length];
    data[i * 4] = r;
    data[i * 4 + 1] = g;
    data[i * 4 + 2] = b;
    data[i * 4 + 3] = 255;
  }
  return { width, height, data };
}

/** 16-bit grayscale field -> RGBA raster (min/max normalized grayscale). */
export function fieldToRaster(
  values: Uint16Array,
  width: number,
  height: number,
): Raster {
  const data = new Uint8ClampedArray(width * height * 4);
  for (let i = 0; i < width * height; i++) {
    const g = values[i] >> 8;
    data[i * 4] = g;
    data[i * 4 + 1] = g;
    data[i * 4 + 2] = g;
    data[i * 4 + 3] = 255;
  }
  return { width, height, data };
}
