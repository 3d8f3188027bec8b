import { FEATURE_DIM, PATCH_PX, PatchFeatureExtractor, type ExtractorConfig } from "./model.js";
import { mirrorGray, type GrayImage } from "./png.js";

export interface SelfcheckReport {
  dim: number;
  patchesPerSide: number;
  meanMirrorCosine: number;
  allFinite: boolean;
  pass: boolean;
}

function cosine(a: Float32Array, b: Float32Array, offA: number, offB: number, d: number): number {
  let dot = 0,
    na = 0,
    nb = 0;
  for (let i = 0; i < d; i++) {
    dot += a[offA + i] * b[offB + i];
    na += a[offA + i] ** 2;
    nb += b[offB + i] ** 2;
  }
  return dot / Math.sqrt(na * nb || 1);
}

/** A left/right symmetric synthetic "render": soft disk on a light background. */
function syntheticRender(size: number): GrayImage {
  const pixels = new Float32Array(size * size);
  const c = (size - 1) / 2;
  const r = size * 0.3;
  for (let y = 0; y < size; y++) {
    for (let x = 0; x < size; x++) {
      const dist = Math.hypot(x - c, y - c);
      const inside = 1 / (1 + Math.exp((dist - r) / 2));
      pixels[y * size + x] = 1.0 - 0.3 * inside; // background 1.0, body 0.7
    }
  }
  return { width: size, height: size, pixels };
}

/**
 * Verify the model contract: d = 384, P*14 = input size, finite output on a
 * blank image, and horizontally mirroring the input permutes patch columns
 * with mean cosine similarity > 0.8 (approximate reflective stability).
 */
export async function selfcheck(cfg: ExtractorConfig): Promise<SelfcheckReport> {
  const extractor = await PatchFeatureExtractor.load(cfg);
  try {
    const P = extractor.patchesPerSide;
    if (P * PATCH_PX !== cfg.inputSize) {
      throw new Error(`patch grid ${P} * ${PATCH_PX} != input size ${cfg.inputSize}`);
    }
    const blank: GrayImage = {
      width: cfg.inputSize,
      height: cfg.inputSize,
      pixels: new Float32Array(cfg.inputSize * cfg.inputSize).fill(1.0),
    };
    const image = syntheticRender(cfg.inputSize);
    const [blankGrid, grid, mirrored] = await extractor.extract([
      blank,
      image,
      mirrorGray(image),
    ]);
    const allFinite = blankGrid.every(Number.isFinite) && grid.every(Number.isFinite);
    const d = FEATURE_DIM;
    let cosSum = 0;
    for (let row = 0; row < P; row++) {
      for (let col = 0; col < P; col++) {
        const a = (row * P + col) * d;
        const b = (row * P + (P - 1 - col)) * d;
        cosSum += cosine(grid, mirrored, a, b, d);
      }
    }
    const meanMirrorCosine = cosSum / (P * P);
    return {
      dim: d,
      patchesPerSide: P,
      meanMirrorCosine,
      allFinite,
      pass: allFinite && meanMirrorCosine > 0.8,
    };
  } finally {
    await extractor.dispose();
  }
}
