// Binary PPM (P6) encoding: lets the client upload raw pixels or synthetic
// samples without a PNG encoder. DOM-free.

export function encodePpmBase64(
  rgb: Uint8Array, // interleaved RGB, row-major
  width: number,
  height: number,
): string {
  const header = `P6\n${width} ${height}\n255\n`;
  const headerBytes = new TextEncoder().encode(header);
  const out = new Uint8Array(headerBytes.length + rgb.length);
  out.set(headerBytes, 0);
  out.set(rgb, headerBytes.length);
  let binary = "";
  const chunk = 0x8000;
  for (let i = 0; i < out.length; i += chunk) {
    binary += String.fromCharCode(...out.subarray(i, i + chunk));
  }
  if (typeof btoa !== "undefined") return btoa(binary);
  return Buffer.from(out).toString("base64");
}

/**
 * Client-side synthetic sample: colored shapes over a gradient, mirroring the
 * service's training distribution closely enough for demos.
 */
export function syntheticSample(size: number, seed: number): Uint8Array {
  const rand = mulberry32(seed);
  const rgb = new Uint8Array(size * size * 3);
  const c0 = [rand() * 255, rand() * 255, rand() * 255];
  const c1 = [rand() * 255, rand() * 255, rand() * 255];
  const vertical = rand() < 0.5;
  for (let y = 0; y < size; y++) {
    for (let x = 0; x < size; x++) {
      const t = (vertical ? y : x) / (size - 1);
      for (let c = 0; c < 3; c++) {
        rgb[(y * size + x) * 3 + c] = Math.round(c0[c] + (c1[c] - c0[c]) * t);
      }
    }
  }
  const nShapes = 2 + Math.floor(rand() * 4);
  for (let s = 0; s < nShapes; s++) {
    const cx = size / 8 + rand() * size * 0.75;
    const cy = size / 8 + rand() * size * 0.75;
    const a = size / 12 + rand() * size / 5;
    const b = size / 12 + rand() * size / 5;
    const color = [rand() * 255, rand() * 255, rand() * 255];
    const rect = rand() < 0.4;
    for (let y = 0; y < size; y++) {
      for (let x = 0; x < size; x++) {
        const inside = rect
          ? Math.abs(x - cx) <= a && Math.abs(y - cy) <= b
          : ((x - cx) / a) ** 2 + ((y - cy) / b) ** 2 <= 1;
        if (inside) {
          for (let c = 0; c < 3; c++) rgb[(y * size + x) * 3 + c] = Math.round(color[c]);
        }
      }
    }
  }
  return rgb;
}

function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a |= 0;
    a = (a + 0x6d2b79f5) | 0;
    let t = Math.imul(a ^ (a >>> 15), 1 | a);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}
