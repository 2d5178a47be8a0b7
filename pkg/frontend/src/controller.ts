/**
 * Store + segmentation controller. The store is the single mutation point;
 * the controller enforces one in-flight segmentation request and surfaces
 * the server's busy signal as a retry notice instead of an error.
 */

import { ApiError, Client } from './api';
import { ViewerState } from './state';

export class Store {
  private listeners: ((s: ViewerState) => void)[] = [];

  constructor(private state: ViewerState) {}

  get(): ViewerState {
    return this.state;
  }

  update(fn: (s: ViewerState) => ViewerState): void {
    this.state = fn(this.state);
    for (const l of this.listeners) l(this.state);
  }

  subscribe(listener: (s: ViewerState) => void): void {
    this.listeners.push(listener);
    listener(this.state);
  }
}

export type Notice = { kind: 'error' | 'retry' | 'info'; message: string };
export type Notify = (notice: Notice) => void;

/**
 * POST the placed points and adopt the returned mask. No-op when a request
 * is already pending or no points are placed (the button should be disabled
 * in both cases, but the guard does not rely on the DOM).
 */
export async function runSegmentation(store: Store, client: Client,
                                      notify: Notify): Promise<void> {
  const s = store.get();
  if (s.segmenting || s.placedPoints.length === 0) return;
  store.update(st => ({ ...st, segmenting: true }));
  try {
    const result = await client.segment(s.volumeId, s.placedPoints);
    store.update(st => ({ ...st, activeMaskId: result.mask_id }));
    notify({ kind: 'info', message: 'segmentation ready' });
  } catch (err) {
    if (err instanceof ApiError && err.status === 409) {
      notify({ kind: 'retry', message: 'volume is busy segmenting; try again' });
    } else {
      const message = err instanceof Error ? err.message : String(err);
      notify({ kind: 'error', message });
    }
  } finally {
    store.update(st => ({ ...st, segmenting: false }));
  }
}
