import { readFileSync } from "node:fs";
import { PNG } from "pngjs";

export interface GrayImage {
  width: number;
  height: number;
  /** Row-major grayscale in [0, 1]. */
  pixels: Float32Array;
}

/** Decode a PNG to grayscale (renders are gray already; RGB averages channels). */
export function readGrayPng(path: string): GrayImage {
  const png = PNG.sync.read(readFileSync(path));
  const { width, height, data } = png; // RGBA8
  const pixels = new Float32Array(width * height);
  for (let i = 0; i < pixels.length; i++) {
    const o = i * 4;
    pixels[i] = (data[o] + data[o + 1] + data[o + 2]) / (3 * 255);
  }
  return { width, height, pixels };
}

/** Horizontal mirror (used by the selfcheck). */
export function mirrorGray(img: GrayImage): GrayImage {
  const pixels = new Float32Array(img.pixels.length);
  for (let y = 0; y < img.height; y++) {
    for (let x = 0; x < img.width; x++) {
      pixels[y * img.width + x] = img.pixels[y * img.width + (img.width - 1 - x)];
    }
  }
  return { width: img.width, height: img.height, pixels };
}
