import { AutoModel, env, Tensor, type PreTrainedModel } from "@huggingface/transformers";
import type { GrayImage } from "./png.js";

// ViT-S/14 with registers: 384-d patch tokens on a 14px grid.
export const DEFAULT_MODEL_ID = "onnx-community/dinov2-with-registers-small";
export const DEFAULT_REVISION = "main";
export const PATCH_PX = 14;
export const FEATURE_DIM = 384;

// ImageNet statistics, as used by the DINOv2 image processor.
const MEAN = [0.485, 0.456, 0.406];
const STD = [0.229, 0.224, 0.225];

export interface ExtractorConfig {
  modelId: string;
  revision: string;
  device: "auto" | "cpu";
  batchSize: number;
  /** Required input side length; must equal the render size. */
  inputSize: number;
  /** Local model cache; when set, nothing is fetched from the hub. */
  cacheDir?: string;
}

export function defaultConfig(overrides: Partial<ExtractorConfig> = {}): ExtractorConfig {
  return {
    modelId: DEFAULT_MODEL_ID,
    revision: DEFAULT_REVISION,
    device: "auto",
    batchSize: 8,
    inputSize: 518,
    ...overrides,
  };
}

export class PatchFeatureExtractor {
  private constructor(
    private readonly model: PreTrainedModel,
    readonly cfg: ExtractorConfig,
    private readonly numPrefixTokens: number
  ) {}

  static async load(cfg: ExtractorConfig): Promise<PatchFeatureExtractor> {
    if (cfg.inputSize % PATCH_PX !== 0) {
      throw new Error(`input size ${cfg.inputSize} is not a multiple of ${PATCH_PX}`);
    }
    if (cfg.cacheDir) {
      env.cacheDir = cfg.cacheDir;
      env.allowRemoteModels = false;
    }
    const model = await AutoModel.from_pretrained(cfg.modelId, {
      revision: cfg.revision,
      dtype: "fp32",
      device: cfg.device === "cpu" ? "cpu" : undefined,
    });
    const mcfg = model.config as unknown as Record<string, unknown>;
    // class token + register tokens precede the patch tokens
    const numRegisters = (mcfg.num_register_tokens as number) ?? 4;
    return new PatchFeatureExtractor(model, cfg, 1 + numRegisters);
  }

  get patchesPerSide(): number {
    return this.cfg.inputSize / PATCH_PX;
  }

  /**
   * Run one batch of same-sized grayscale images; returns one (P, P, d)
   * row-major grid per image, patch rows top to bottom in image space.
   */
  async extract(images: GrayImage[]): Promise<Float32Array[]> {
    const S = this.cfg.inputSize;
    for (const img of images) {
      if (img.width !== S || img.height !== S) {
        throw new Error(`expected ${S}x${S} input, got ${img.width}x${img.height}`);
      }
    }
    const B = images.length;
    const data = new Float32Array(B * 3 * S * S);
    for (let b = 0; b < B; b++) {
      for (let c = 0; c < 3; c++) {
        const base = (b * 3 + c) * S * S;
        for (let i = 0; i < S * S; i++) {
          data[base + i] = (images[b].pixels[i] - MEAN[c]) / STD[c];
        }
      }
    }
    const pixelValues = new Tensor("float32", data, [B, 3, S, S]);
    const output = await this.model({ pixel_values: pixelValues });
    const hidden = output.last_hidden_state as Tensor;
    const [bOut, tokens, d] = hidden.dims as number[];
    const P = this.patchesPerSide;
    if (bOut !== B || tokens !== this.numPrefixTokens + P * P) {
      throw new Error(`unexpected token layout ${hidden.dims}`);
    }
    const raw = hidden.data as Float32Array;
    const grids: Float32Array[] = [];
    for (let b = 0; b < B; b++) {
      const start = (b * tokens + this.numPrefixTokens) * d;
      grids.push(raw.slice(start, start + P * P * d));
    }
    return grids;
  }

  async dispose(): Promise<void> {
    await this.model.dispose();
  }
}
