/**
 * Scene drawing decoupled from CanvasRenderingContext2D so tests can record
 * draw calls. The real surface is a thin adapter in main.ts.
 */

import { sliceDims, sliceToScreen, ViewTransform, voxelToSlice } from './geometry';
import { pointsOnCurrentSlice, ViewerState } from './state';

export interface DrawSurface {
  readonly width: number;
  readonly height: number;
  clear(): void;
  /** dw/dh are on-screen sizes; alpha in [0, 1] */
  drawImage(image: unknown, dx: number, dy: number, dw: number, dh: number,
            alpha: number): void;
  drawMarker(x: number, y: number, color: string, radius: number): void;
}

export const FG_COLOR = '#ffd23f';
export const BG_COLOR = '#3fa7ff';

export interface SceneImages {
  /** decoded grayscale slice; null while loading */
  slice: unknown | null;
  /** decoded RGBA mask slice; null when no mask or while loading */
  overlay: unknown | null;
}

export function renderScene(surface: DrawSurface, state: ViewerState,
                            t: ViewTransform, images: SceneImages): void {
  surface.clear();
  const { rows, cols } = sliceDims(state.shape, state.axis);
  const w = cols * t.scale;
  const h = rows * t.scale;
  if (images.slice !== null) {
    surface.drawImage(images.slice, t.offsetX, t.offsetY, w, h, 1.0);
  }
  if (images.overlay !== null) {
    surface.drawImage(images.overlay, t.offsetX, t.offsetY, w, h,
                      state.overlayOpacity);
  }
  for (const { point } of pointsOnCurrentSlice(state)) {
    const loc = voxelToSlice(state.axis, point);
    // +0.5: mark the voxel center, not its corner
    const px = sliceToScreen(t, { row: loc.row + 0.5, col: loc.col + 0.5 });
    surface.drawMarker(px.x, px.y, point.label === 'fg' ? FG_COLOR : BG_COLOR,
                       Math.max(3, t.scale * 0.35));
  }
}
