/**
 * DOM wiring for the annotation tool. All preference semantics live on the
 * server; this file only renders state from store.ts and forwards events.
 */

import { ApiClient } from "./api.js";
import { boundingBox } from "./geometry.js";
import { MaskRaster, Point } from "./mask.js";
import { encodeMaskPng } from "./png.js";
import { SessionStore, SubmitOutcome } from "./store.js";

type Tool = "brush" | "polygon" | "erase";

const BRUSH_RADIUS = 6;
const CROP_MARGIN = 8;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

async function imageSizeOf(url: string): Promise<{ width: number; height: number }> {
  const img = new Image();
  img.src = url;
  await img.decode();
  return { width: img.naturalWidth, height: img.naturalHeight };
}

class Editor {
  private tool: Tool = "brush";
  private stroke: Point[] = [];
  private polygon: Point[] = [];
  private drawing = false;

  constructor(
    private canvas: HTMLCanvasElement,
    private image: HTMLImageElement,
    private mask: MaskRaster,
    private onChange: () => void,
  ) {
    canvas.width = mask.width;
    canvas.height = mask.height;
    canvas.addEventListener("pointerdown", (e) => this.down(this.pos(e)));
    canvas.addEventListener("pointermove", (e) => this.move(this.pos(e)));
    canvas.addEventListener("pointerup", () => this.up());
    canvas.addEventListener("dblclick", () => this.closePolygon());
    this.render();
  }

  setTool(tool: Tool): void {
    this.tool = tool;
    this.polygon = [];
  }

  private pos(e: PointerEvent): Point {
    const rect = this.canvas.getBoundingClientRect();
    return {
      x: ((e.clientX - rect.left) / rect.width) * this.mask.width,
      y: ((e.clientY - rect.top) / rect.height) * this.mask.height,
    };
  }

  private down(p: Point): void {
    if (this.tool === "polygon") {
      this.polygon.push(p);
      this.render();
      return;
    }
    this.drawing = true;
    this.stroke = [p];
  }

  private move(p: Point): void {
    if (!this.drawing) return;
    this.stroke.push(p);
    this.render();
  }

  private up(): void {
    if (!this.drawing) return;
    this.drawing = false;
    this.mask.brushStroke(this.stroke, BRUSH_RADIUS, this.tool === "erase" ? 0 : 1);
    this.stroke = [];
    this.render();
    this.onChange();
  }

  private closePolygon(): void {
    if (this.polygon.length >= 3) {
      this.mask.fillPolygon(this.polygon);
      this.polygon = [];
      this.render();
      this.onChange();
    }
  }

  undo(): void {
    if (this.mask.undo()) {
      this.render();
      this.onChange();
    }
  }

  render(): void {
    const ctx = this.canvas.getContext("2d")!;
    ctx.drawImage(this.image, 0, 0, this.mask.width, this.mask.height);
    const overlay = ctx.getImageData(0, 0, this.mask.width, this.mask.height);
    for (let i = 0; i < this.mask.data.length; i++) {
      if (this.mask.data[i]) {
        overlay.data[4 * i] = Math.min(255, overlay.data[4 * i] + 90);
        overlay.data[4 * i + 2] = Math.max(0, overlay.data[4 * i + 2] - 40);
      }
    }
    ctx.putImageData(overlay, 0, 0);
    ctx.strokeStyle = "#ffd166";
    if (this.polygon.length > 0) {
      ctx.beginPath();
      ctx.moveTo(this.polygon[0].x, this.polygon[0].y);
      for (const p of this.polygon.slice(1)) ctx.lineTo(p.x, p.y);
      ctx.stroke();
    }
  }
}

async function renderCompareGrid(store: SessionStore, api: ApiClient, onPick: () => void) {
  const grid = el<HTMLDivElement>("compare-grid");
  grid.replaceChildren();
  const view = store.view;
  if (!view) return;
  const box = boundingBox(view.mask, CROP_MARGIN);
  for (const cand of view.detail.candidates) {
    const tile = document.createElement("div");
    tile.className = "tile";
    const canvas = document.createElement("canvas");
    const img = new Image();
    img.src = api.imageUrl(cand.url);
    await img.decode();
    const crop = box ?? { x: 0, y: 0, w: img.naturalWidth, h: img.naturalHeight };
    canvas.width = crop.w;
    canvas.height = crop.h;
    canvas.getContext("2d")!.drawImage(img, crop.x, crop.y, crop.w, crop.h, 0, 0, crop.w, crop.h);
    const label = document.createElement("span");
    label.textContent = cand.prompt_kind === "general" ? "general" : `level ${cand.level}`;
    tile.append(canvas, label);
    tile.addEventListener("click", () => {
      const res = view.selection.clickTile(cand.index, view.detail.candidates.length);
      setStatus(res.accepted ? "" : (res.hint ?? ""));
      tile.classList.toggle("winner", view.selection.winnerIdx === cand.index);
      tile.classList.toggle("loser", view.selection.loserIdx === cand.index);
      onPick();
    });
    grid.append(tile);
  }
}

function setStatus(message: string): void {
  el<HTMLSpanElement>("status").textContent = message;
}

function describeOutcome(outcome: SubmitOutcome): string {
  switch (outcome.kind) {
    case "ok":
      return "saved";
    case "blocked":
      return outcome.message;
    case "conflict":
      return `${outcome.message} — use Skip to move on`;
    case "rejected":
      return `server rejected (${outcome.code}): ${outcome.message}`;
    case "network":
      return `network error, state preserved — retry: ${outcome.message}`;
  }
}

async function boot(): Promise<void> {
  const api = new ApiClient("");
  const probe = await api.listPairs();
  if (probe.length === 0) {
    setStatus("no pairs to annotate");
    return;
  }
  const first = await api.getPair(probe[0].pair_id);
  const size = await imageSizeOf(api.imageUrl(first.candidates[0].url));
  const store = new SessionStore(api, size);
  const annotatorInput = el<HTMLInputElement>("annotator");
  annotatorInput.addEventListener("input", () => (store.annotator = annotatorInput.value));
  await store.start();

  let editor: Editor | null = null;

  const refresh = async () => {
    el<HTMLSpanElement>("progress").textContent =
      `${store.submitted} submitted · ${store.queueIndex}/${store.pairs.length}`;
    if (!store.view) {
      setStatus("all pairs annotated");
      return;
    }
    const img = new Image();
    img.src = api.imageUrl(store.view.detail.candidates[0].url);
    await img.decode();
    editor = new Editor(el<HTMLCanvasElement>("editor"), img, store.view.mask, () => {
      void renderCompareGrid(store, api, updateSubmit);
      updateSubmit();
    });
    await renderCompareGrid(store, api, updateSubmit);
    updateSubmit();
  };

  const updateSubmit = () => {
    const check = store.canSubmit();
    el<HTMLButtonElement>("submit").disabled = !check.ok;
    el<HTMLButtonElement>("submit").title = check.reason ?? "";
  };

  for (const tool of ["brush", "polygon", "erase"] as Tool[]) {
    el<HTMLButtonElement>(`tool-${tool}`).addEventListener("click", () => editor?.setTool(tool));
  }
  el<HTMLButtonElement>("tool-undo").addEventListener("click", () => editor?.undo());
  el<HTMLButtonElement>("tool-whole").addEventListener("click", () => {
    if (store.view) {
      store.view.wholeImage = !store.view.wholeImage;
      updateSubmit();
    }
  });
  el<HTMLButtonElement>("skip").addEventListener("click", async () => {
    await store.skipCurrent();
    await refresh();
  });
  el<HTMLButtonElement>("submit").addEventListener("click", async () => {
    const outcome = await store.submit(encodeMaskPng);
    setStatus(describeOutcome(outcome));
    if (outcome.kind === "ok") await refresh();
  });

  await refresh();
}

void boot().catch((err) => setStatus(`failed to start: ${err}`));
