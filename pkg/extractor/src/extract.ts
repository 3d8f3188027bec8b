import { mkdirSync, readdirSync } from "node:fs";
import { join } from "node:path";
import { fmapFilename, parseRenderFilename, saveFeatureMap } from "./fmap.js";
import { FEATURE_DIM, PatchFeatureExtractor, type ExtractorConfig } from "./model.js";
import { readGrayPng } from "./png.js";

export interface ExtractReport {
  written: string[];
  errors: { file: string; message: string }[];
}

/**
 * Run the extractor over every render PNG in `inDir` and write one FMAP
 * per image to `outDir`. Per-file failures are collected, not fatal, so a
 * single bad image does not waste a long batch run.
 */
export async function extractDir(
  inDir: string,
  outDir: string,
  cfg: ExtractorConfig,
  log: (msg: string) => void = console.error
): Promise<ExtractReport> {
  const pngs = readdirSync(inDir).filter((f) => f.endsWith(".png")).sort();
  if (pngs.length === 0) {
    throw new Error(`${inDir}: no PNG renders found`);
  }
  mkdirSync(outDir, { recursive: true });
  // Loaded on the first valid batch, so runs where every file fails
  // validation still produce a complete error report without the model.
  let extractor: PatchFeatureExtractor | null = null;
  const report: ExtractReport = { written: [], errors: [] };
  try {
    for (let start = 0; start < pngs.length; start += cfg.batchSize) {
      const batchNames = pngs.slice(start, start + cfg.batchSize);
      const batch: { name: string; viewId: number; rotationDeg: number; img: ReturnType<typeof readGrayPng> }[] = [];
      for (const name of batchNames) {
        try {
          const { viewId, rotationDeg } = parseRenderFilename(name);
          const img = readGrayPng(join(inDir, name));
          if (img.width !== cfg.inputSize || img.height !== cfg.inputSize) {
            throw new Error(
              `expected ${cfg.inputSize}x${cfg.inputSize}, got ${img.width}x${img.height}`
            );
          }
          batch.push({ name, viewId, rotationDeg, img });
        } catch (err) {
          report.errors.push({ file: name, message: String(err) });
          log(`SKIP ${name}: ${String(err)}`);
        }
      }
      if (batch.length === 0) continue;
      extractor ??= await PatchFeatureExtractor.load(cfg);
      const grids = await extractor.extract(batch.map((b) => b.img));
      const P = extractor.patchesPerSide;
      batch.forEach((item, i) => {
        const out = join(outDir, fmapFilename(item.viewId, item.rotationDeg));
        saveFeatureMap(
          {
            viewId: item.viewId,
            rotationDeg: item.rotationDeg,
            patches: P,
            dim: FEATURE_DIM,
            grid: grids[i],
          },
          out
        );
        report.written.push(out);
        log(`${item.name} -> ${out} (${P}x${P}x${FEATURE_DIM})`);
      });
    }
  } finally {
    await extractor?.dispose();
  }
  return report;
}
