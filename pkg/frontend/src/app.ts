/** Annotation UI: sample browser, layer viewer, scribble painting. */

import { AnnotationApi, ApiError, Layer, SampleEntry } from "./api.js";
import { decodeGrayPng } from "./png.js";
import { Polarity, ScribbleCanvas } from "./scribble.js";

const LAYERS: Layer[] = ["image", "prediction", "background", "diff"];
const SCALE = 6;

interface Session {
  id: string;
  canvas: ScribbleCanvas;
  width: number;
  height: number;
}

export class App {
  private api: AnnotationApi;
  private session: Session | null = null;
  private polarity: Polarity = "foreground";
  private radius = 3;
  private saving = false;
  private currentStroke: { x: number; y: number }[] | null = null;

  constructor(private readonly root: HTMLElement, apiBase = "") {
    this.api = new AnnotationApi(apiBase);
    this.root.innerHTML = `
      <div id="banner" class="banner hidden"></div>
      <div class="columns">
        <ul id="samples" class="samples"></ul>
        <div class="editor">
          <div id="stack" class="stack"></div>
          <div class="controls">
            <span id="tool"></span>
            <label>layers:</label>
            <span id="toggles"></span>
            <button id="undo" title="undo (z)">undo</button>
            <button id="save" title="save (s)">save</button>
          </div>
          <p class="help">f/b/e polarity &middot; [ ] brush size &middot; z undo &middot; s save</p>
        </div>
      </div>`;
    document.addEventListener("keydown", (e) => this.onKey(e));
    (this.root.querySelector("#undo") as HTMLElement).onclick = () => this.undo();
    (this.root.querySelector("#save") as HTMLElement).onclick = () => void this.save();
    this.renderTool();
    void this.refreshList();
  }

  private banner(message: string | null): void {
    const el = this.root.querySelector("#banner") as HTMLElement;
    el.textContent = message ?? "";
    el.classList.toggle("hidden", message === null);
  }

  async refreshList(): Promise<void> {
    let entries: SampleEntry[];
    try {
      entries = await this.api.listSamples();
      this.banner(null);
    } catch (err) {
      this.banner(`cannot reach server: ${(err as Error).message} — retrying`);
      setTimeout(() => void this.refreshList(), 3000);
      return;
    }
    const list = this.root.querySelector("#samples") as HTMLElement;
    list.innerHTML = "";
    for (const entry of entries) {
      const item = document.createElement("li");
      item.textContent = `${entry.id} (${entry.role})`;
      if (entry.annotated) {
        const badge = document.createElement("span");
        badge.className = "badge";
        badge.textContent = "annotated";
        item.appendChild(badge);
      }
      if (this.session?.id === entry.id) item.classList.add("active");
      item.onclick = () => void this.open(entry.id);
      list.appendChild(item);
    }
  }

  async open(id: string): Promise<void> {
    const stack = this.root.querySelector("#stack") as HTMLElement;
    stack.innerHTML = "";
    const image = new Image();
    image.src = this.api.layerUrl(id, "image");
    await image.decode().catch(() => undefined);
    const width = image.naturalWidth || 64;
    const height = image.naturalHeight || 64;

    const toggles = this.root.querySelector("#toggles") as HTMLElement;
    toggles.innerHTML = "";
    for (const layer of LAYERS) {
      const img = document.createElement("img");
      img.src = this.api.layerUrl(id, layer);
      img.className = `layer layer-${layer}`;
      img.style.width = `${width * SCALE}px`;
      img.style.height = `${height * SCALE}px`;
      img.onerror = () => (img.style.display = "none");
      stack.appendChild(img);
      const label = document.createElement("label");
      const box = document.createElement("input");
      box.type = "checkbox";
      box.checked = layer === "image";
      img.style.opacity = box.checked ? "1" : "0";
      box.onchange = () => (img.style.opacity = box.checked ? "1" : "0");
      label.append(box, layer);
      toggles.appendChild(label);
    }

    const overlay = document.createElement("canvas");
    overlay.id = "scribble-overlay";
    overlay.width = width;
    overlay.height = height;
    overlay.style.width = `${width * SCALE}px`;
    overlay.style.height = `${height * SCALE}px`;
    stack.appendChild(overlay);

    let initial: Uint8Array | undefined;
    try {
      const existing = await this.api.fetchScribbles(id);
      if (existing) initial = decodeGrayPng(existing).pixels;
    } catch {
      initial = undefined; // foreign encoder or no annotation: start fresh
    }
    this.session = { id, canvas: new ScribbleCanvas(width, height, initial), width, height };
    overlay.onpointerdown = (e) => this.penDown(e, overlay);
    overlay.onpointermove = (e) => this.penMove(e, overlay);
    overlay.onpointerup = () => this.penUp();
    this.redraw();
    void this.refreshList();
  }

  private pixelOf(e: PointerEvent, overlay: HTMLCanvasElement): { x: number; y: number } {
    const rect = overlay.getBoundingClientRect();
    return {
      x: ((e.clientX - rect.left) / rect.width) * overlay.width,
      y: ((e.clientY - rect.top) / rect.height) * overlay.height,
    };
  }

  private penDown(e: PointerEvent, overlay: HTMLCanvasElement): void {
    if (!this.session) return;
    overlay.setPointerCapture(e.pointerId);
    this.currentStroke = [this.pixelOf(e, overlay)];
  }

  private penMove(e: PointerEvent, overlay: HTMLCanvasElement): void {
    if (!this.currentStroke) return;
    this.currentStroke.push(this.pixelOf(e, overlay));
  }

  private penUp(): void {
    if (!this.session || !this.currentStroke) return;
    this.session.canvas.stroke({
      polarity: this.polarity,
      radius: this.radius,
      points: this.currentStroke,
    });
    this.currentStroke = null;
    this.redraw();
  }

  private redraw(): void {
    if (!this.session) return;
    const overlay = this.root.querySelector("#scribble-overlay") as HTMLCanvasElement;
    const ctx = overlay.getContext("2d");
    if (!ctx) return;
    const { canvas, width, height } = this.session;
    const pixels = ctx.createImageData(width, height);
    for (let i = 0; i < canvas.labels.length; i++) {
      const v = canvas.labels[i];
      const at = i * 4;
      if (v === 255) {
        pixels.data[at] = 0;
        pixels.data[at + 1] = 200;
        pixels.data[at + 2] = 0;
        pixels.data[at + 3] = 180;
      } else if (v === 0) {
        pixels.data[at] = 220;
        pixels.data[at + 1] = 0;
        pixels.data[at + 2] = 0;
        pixels.data[at + 3] = 180;
      }
    }
    ctx.putImageData(pixels, 0, 0);
  }

  private renderTool(): void {
    const el = this.root.querySelector("#tool") as HTMLElement;
    el.textContent = `${this.polarity} r=${this.radius}`;
  }

  private undo(): void {
    if (this.session?.canvas.undo()) this.redraw();
  }

  /** Save requests are serialized: a save in flight blocks the next one. */
  private async save(): Promise<void> {
    if (!this.session || this.saving) return;
    this.saving = true;
    try {
      await this.api.putScribbles(this.session.id, this.session.canvas.exportPng());
      this.session.canvas.markSaved();
      this.banner(null);
      await this.refreshList();
    } catch (err) {
      // Surface the server's rejection verbatim.
      const detail = err instanceof ApiError ? err.message : `save failed: ${err}`;
      this.banner(detail);
    } finally {
      this.saving = false;
    }
  }

  private onKey(e: KeyboardEvent): void {
    if (e.key === "f") this.polarity = "foreground";
    else if (e.key === "b") this.polarity = "background";
    else if (e.key === "e") this.polarity = "eraser";
    else if (e.key === "[") this.radius = Math.max(1, this.radius - 1);
    else if (e.key === "]") this.radius = Math.min(16, this.radius + 1);
    else if (e.key === "z") this.undo();
    else if (e.key === "s") void this.save();
    else return;
    this.renderTool();
  }
}
