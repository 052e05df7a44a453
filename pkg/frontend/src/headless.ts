/**
 * Headless export: rasterize a JSON stroke list to a scribble PNG.
 *
 * Usage: node dist/headless.js strokes.json out.png
 * The JSON holds {width, height, strokes: [{polarity, radius, points}]}.
 * Uses the exact same rasterizer and encoder as the browser UI, so the
 * output bytes match what saving those strokes in the UI would upload.
 */

import { readFileSync, writeFileSync } from "node:fs";

import { encodeGrayPng } from "./png.js";
import { rasterizeStrokes, Stroke } from "./scribble.js";

const [, , inputPath, outputPath] = process.argv;
if (!inputPath || !outputPath) {
  console.error("usage: headless.js strokes.json out.png");
  process.exit(1);
}

const spec = JSON.parse(readFileSync(inputPath, "utf8")) as {
  width: number;
  height: number;
  strokes: Stroke[];
};
const labels = rasterizeStrokes(spec.width, spec.height, spec.strokes);
writeFileSync(outputPath, encodeGrayPng(labels, spec.width, spec.height));
