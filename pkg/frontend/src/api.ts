/**
 * Client for the decomposition service. All payloads are self-contained
 * JSON bodies with base64 images; the service is stateless.
 */

import { AnnotationDoc, CannyParams, Pixel } from "./document.js";

export interface CannyResponse {
  width: number;
  height: number;
  pixels: Pixel[];
  overlay_png: string;
}

export interface SolveResponse {
  reflectance_png: string;
  shading_png: string;
  reflectance_exposure: number;
  residual: number;
  elapsed_ms: number;
}

export interface ValidationFailure {
  violations: string[];
}

export class ServiceError extends Error {
  constructor(public status: number, message: string, public violations: string[] = []) {
    super(message);
  }
}

export class ServiceClient {
  constructor(public baseUrl: string, private fetchImpl: typeof fetch = fetch) {}

  private async post<T>(path: string, body: unknown): Promise<T> {
    const resp = await this.fetchImpl(`${this.baseUrl}${path}`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    const payload = await resp.json();
    if (!resp.ok) {
      const violations = (payload && payload.violations) || [];
      const message = (payload && (payload.error || payload.detail)) ||
        (violations.length ? `validation failed: ${violations[0]}` : `HTTP ${resp.status}`);
      throw new ServiceError(resp.status, message, violations);
    }
    return payload as T;
  }

  async health(): Promise<{ status: string; version: string }> {
    const resp = await this.fetchImpl(`${this.baseUrl}/health`);
    return (await resp.json()) as { status: string; version: string };
  }

  async canny(imagePngBase64: string, params: CannyParams): Promise<CannyResponse> {
    return this.post<CannyResponse>("/canny", {
      image: imagePngBase64,
      sigma: params.sigma,
      low: params.low,
      high: params.high,
    });
  }

  async solve(imagePngBase64: string, doc: AnnotationDoc): Promise<SolveResponse> {
    return this.post<SolveResponse>("/solve", { image: imagePngBase64, annotation: doc });
  }

  async evaluate(
    imagePngBase64: string,
    doc: AnnotationDoc,
    predRBase64: string,
    predSBase64: string
  ): Promise<Record<string, unknown>> {
    return this.post("/evaluate", {
      image: imagePngBase64,
      annotation: doc,
      pred_r: predRBase64,
      pred_s: predSBase64,
    });
  }
}
