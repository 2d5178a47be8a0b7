/**
 * Typed client for the segmentation service. These six routes are the only
 * backend surface the viewer touches.
 */

import { PlacedPoint } from './state';

export interface VolumeMeta {
  volume_id: string;
  shape: [number, number, number];
  spacing: [number, number, number];
}

export interface SegmentResult {
  mask_id: string;
  dice: number | null;
}

export class ApiError extends Error {
  constructor(public status: number, detail: string) {
    super(`HTTP ${status}: ${detail}`);
  }
}

type Fetch = typeof globalThis.fetch;

export class Client {
  constructor(private base: string = '',
              private fetchFn: Fetch = globalThis.fetch.bind(globalThis)) {}

  private async checked(path: string, init?: RequestInit): Promise<Response> {
    const resp = await this.fetchFn(this.base + path, init);
    if (!resp.ok) {
      let detail = resp.statusText;
      try {
        const body = await resp.json();
        if (body && typeof body.detail === 'string') detail = body.detail;
      } catch { /* non-JSON error body; keep the status text */ }
      throw new ApiError(resp.status, detail);
    }
    return resp;
  }

  async health(): Promise<unknown> {
    return (await this.checked('/healthz')).json();
  }

  async uploadVolume(bytes: ArrayBuffer | Uint8Array): Promise<VolumeMeta> {
    const resp = await this.checked('/volumes', {
      method: 'POST',
      headers: { 'Content-Type': 'application/octet-stream' },
      body: bytes as BodyInit,
    });
    return resp.json() as Promise<VolumeMeta>;
  }

  /**
   * The request body lists points exactly as placed, in placement order;
   * the wire keys are x/y/x image convention.
   */
  async segment(volumeId: string, points: PlacedPoint[]): Promise<SegmentResult> {
    const body = {
      points: points.map(p => ({ x: p.x, y: p.y, z: p.z, label: p.label })),
    };
    const resp = await this.checked(`/volumes/${volumeId}/segment`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(body),
    });
    return resp.json() as Promise<SegmentResult>;
  }

  volumeSliceUrl(volumeId: string, axis: number, index: number,
                 window?: { lo: number; hi: number }): string {
    const q = window ? `?lo=${window.lo}&hi=${window.hi}` : '';
    return `${this.base}/volumes/${volumeId}/slices/${axis}/${index}${q}`;
  }

  maskSliceUrl(maskId: string, axis: number, index: number): string {
    return `${this.base}/masks/${maskId}/slices/${axis}/${index}`;
  }

  maskDownloadUrl(maskId: string): string {
    return `${this.base}/masks/${maskId}`;
  }
}
