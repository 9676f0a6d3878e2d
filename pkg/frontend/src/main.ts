/**
 * Browser wiring: toolbar, canvas interaction, and the annotate-verify
 * loop against the service. All document state lives in the UiSession;
 * this file only routes events.
 */

import { ServiceClient, ServiceError } from "./api.js";
import { Pixel } from "./document.js";
import { applyDrawList, buildDrawList } from "./render.js";
import { UiSession } from "./session.js";

type Tool = "scribble" | "erase" | "region" | "points";

const session = new UiSession();
let client = new ServiceClient("http://127.0.0.1:8642");
let zoom = 4;
let tool: Tool = "scribble";
let brushRadius = 2.0;
let pendingStroke: Pixel[] = [];
let pendingPolygon: Pixel[] = [];
let imageBitmap: ImageBitmap | null = null;
let solveInFlight = false;
let queuedSolve = false;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function status(text: string, isError = false): void {
  const bar = el<HTMLDivElement>("status");
  bar.textContent = text;
  bar.className = isError ? "status error" : "status";
}

function canvas(): HTMLCanvasElement {
  return el<HTMLCanvasElement>("board");
}

function redraw(): void {
  const ctx = canvas().getContext("2d");
  if (!ctx) return;
  ctx.clearRect(0, 0, canvas().width, canvas().height);
  const ops = buildDrawList(session, zoom);
  applyDrawList(ctx, ops, imageBitmap);
  if (pendingPolygon.length > 1) {
    ctx.strokeStyle = "#ffffff";
    ctx.setLineDash([4, 3]);
    ctx.beginPath();
    pendingPolygon.forEach(([x, y], i) => {
      if (i === 0) ctx.moveTo((x + 0.5) * zoom, (y + 0.5) * zoom);
      else ctx.lineTo((x + 0.5) * zoom, (y + 0.5) * zoom);
    });
    ctx.stroke();
    ctx.setLineDash([]);
  }
  el<HTMLSpanElement>("undo-depth").textContent = String(session.undoDepth);
}

async function sha256Hex(bytes: ArrayBuffer): Promise<string> {
  const digest = await crypto.subtle.digest("SHA-256", bytes);
  return [...new Uint8Array(digest)].map((b) => b.toString(16).padStart(2, "0")).join("");
}

function toBase64(bytes: ArrayBuffer): string {
  let out = "";
  const arr = new Uint8Array(bytes);
  for (let i = 0; i < arr.length; i += 0x8000) {
    out += String.fromCharCode(...arr.subarray(i, i + 0x8000));
  }
  return btoa(out);
}

async function onLoadFile(file: File): Promise<void> {
  const bytes = await file.arrayBuffer();
  imageBitmap = await createImageBitmap(new Blob([bytes]));
  // the server hashes the decoded raster, not the container; leave the
  // hash empty for hand-loaded files so validation skips it
  session.loadImage(
    { file: file.name, width: imageBitmap.width, height: imageBitmap.height, sha256: "" },
    toBase64(bytes)
  );
  canvas().width = imageBitmap.width * zoom;
  canvas().height = imageBitmap.height * zoom;
  status(`loaded ${file.name} (${imageBitmap.width}x${imageBitmap.height})`);
  await refreshCanny();
}

async function refreshCanny(): Promise<void> {
  if (!session.imagePng) return;
  const params = {
    sigma: parseFloat(el<HTMLInputElement>("sigma").value),
    low: parseFloat(el<HTMLInputElement>("low").value),
    high: parseFloat(el<HTMLInputElement>("high").value),
  };
  try {
    const resp = await client.canny(session.imagePng, params);
    session.setCanny(params, resp.pixels);
    status(`canny: ${resp.pixels.length} edge pixels`);
  } catch (err) {
    status(`canny failed: ${err}`, true);
  }
  redraw();
}

async function runSolve(): Promise<void> {
  if (!session.imagePng) return;
  if (solveInFlight) {
    queuedSolve = true; // queue-replace: at most one pending request
    return;
  }
  solveInFlight = true;
  status("solving...");
  try {
    const resp = await client.solve(session.imagePng, session.toDoc());
    session.recordSolve({
      reflectancePng: resp.reflectance_png,
      shadingPng: resp.shading_png,
      residual: resp.residual,
      elapsedMs: resp.elapsed_ms,
    });
    el<HTMLImageElement>("preview-r").src = `data:image/png;base64,${resp.reflectance_png}`;
    el<HTMLImageElement>("preview-s").src = `data:image/png;base64,${resp.shading_png}`;
    status(`solve ok: residual ${resp.residual.toExponential(2)} in ${resp.elapsed_ms.toFixed(0)} ms`);
  } catch (err) {
    if (err instanceof ServiceError && err.violations.length) {
      status(`annotation rejected: ${err.violations[0]}`, true);
    } else {
      status(`solve failed: ${err}`, true);
    }
  } finally {
    solveInFlight = false;
    if (queuedSolve) {
      queuedSolve = false;
      void runSolve();
    }
  }
}

function canvasPixel(event: MouseEvent): Pixel {
  const rect = canvas().getBoundingClientRect();
  return [
    Math.floor((event.clientX - rect.left) / zoom),
    Math.floor((event.clientY - rect.top) / zoom),
  ];
}

function bindEvents(): void {
  el<HTMLInputElement>("file").addEventListener("change", (ev) => {
    const file = (ev.target as HTMLInputElement).files?.[0];
    if (file) void onLoadFile(file);
  });
  el<HTMLButtonElement>("recanny").addEventListener("click", () => void refreshCanny());
  el<HTMLButtonElement>("solve").addEventListener("click", () => void runSolve());
  el<HTMLButtonElement>("undo").addEventListener("click", () => { session.undo(); redraw(); });
  el<HTMLButtonElement>("redo").addEventListener("click", () => { session.redo(); redraw(); });
  el<HTMLSelectElement>("tool").addEventListener("change", (ev) => {
    tool = (ev.target as HTMLSelectElement).value as Tool;
    pendingPolygon = [];
    redraw();
  });
  el<HTMLInputElement>("brush").addEventListener("change", (ev) => {
    brushRadius = parseFloat((ev.target as HTMLInputElement).value);
  });
  el<HTMLInputElement>("zoom").addEventListener("change", (ev) => {
    zoom = Math.min(8, Math.max(1, parseInt((ev.target as HTMLInputElement).value, 10)));
    if (imageBitmap) {
      canvas().width = imageBitmap.width * zoom;
      canvas().height = imageBitmap.height * zoom;
    }
    redraw();
  });

  el<HTMLButtonElement>("export").addEventListener("click", () => {
    const blob = new Blob([session.exportJson()], { type: "application/json" });
    const a = document.createElement("a");
    a.href = URL.createObjectURL(blob);
    a.download = "annotation.json";
    a.click();
    URL.revokeObjectURL(a.href);
    status("exported annotation.json");
  });
  el<HTMLInputElement>("import").addEventListener("change", async (ev) => {
    const file = (ev.target as HTMLInputElement).files?.[0];
    if (!file) return;
    try {
      session.importJson(await file.text());
      status(`imported ${file.name}`);
    } catch (err) {
      status(`import failed: ${err}`, true);
    }
    redraw();
  });

  let dragging = false;
  canvas().addEventListener("mousedown", (ev) => {
    const p = canvasPixel(ev);
    if (tool === "scribble" || tool === "erase") {
      dragging = true;
      pendingStroke = [p];
    } else if (tool === "region") {
      pendingPolygon.push(p);
      redraw();
    } else if (tool === "points") {
      session.addRegionPoints([p]);
      redraw();
    }
  });
  canvas().addEventListener("mousemove", (ev) => {
    if (!dragging) return;
    pendingStroke.push(canvasPixel(ev));
  });
  window.addEventListener("mouseup", () => {
    if (!dragging) return;
    dragging = false;
    if (pendingStroke.length) {
      const stroke = { points: pendingStroke, radius: brushRadius };
      const n = tool === "erase" ? session.eraseScribble(stroke) : session.scribble(stroke);
      status(tool === "erase" ? `deselected ${n} edge pixels` : `selected ${n} edge pixels`);
      pendingStroke = [];
      redraw();
    }
  });
  canvas().addEventListener("dblclick", () => {
    if (tool === "region" && pendingPolygon.length >= 3) {
      const id = session.addRegionPolygon(pendingPolygon);
      status(`added region ${id}`);
      pendingPolygon = [];
      redraw();
    }
  });
  el<HTMLInputElement>("server").addEventListener("change", (ev) => {
    client = new ServiceClient((ev.target as HTMLInputElement).value);
  });
}

async function init(): Promise<void> {
  bindEvents();
  try {
    const h = await client.health();
    status(`service ${h.version} reachable`);
  } catch {
    status("service unreachable; set the server URL and reload", true);
  }
}

void init();
