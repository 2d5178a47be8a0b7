/**
 * Viewer state and its pure transitions. The DOM layer dispatches into
 * these; nothing here touches the network or the canvas, which keeps every
 * invariant unit-testable.
 */

import { clickToVoxel, sliceCount, ViewTransform, VoxelPoint } from './geometry';

export type PointLabel = 'fg' | 'bg';

export interface PlacedPoint extends VoxelPoint {
  label: PointLabel;
}

export interface ViewerState {
  volumeId: string;
  /** preprocessed-grid shape (z, y, x), from the upload response */
  shape: [number, number, number];
  axis: 0 | 1 | 2;
  sliceIndex: number;
  window: { lo: number; hi: number };
  placedPoints: PlacedPoint[];
  activeMaskId: string | null;
  overlayOpacity: number;
  activeTool: PointLabel;
  /** run button disabled and further runs refused while true */
  segmenting: boolean;
}

export function initialState(volumeId: string, shape: [number, number, number],
                             window: { lo: number; hi: number }): ViewerState {
  return {
    volumeId,
    shape,
    axis: 0,
    sliceIndex: Math.floor(shape[0] / 2),
    window,
    placedPoints: [],
    activeMaskId: null,
    overlayOpacity: 0.5,
    activeTool: 'fg',
    segmenting: false,
  };
}

export function clampIndex(state: ViewerState, index: number): number {
  return Math.min(sliceCount(state.shape, state.axis) - 1, Math.max(0, Math.round(index)));
}

export function setSlice(state: ViewerState, index: number): ViewerState {
  return { ...state, sliceIndex: clampIndex(state, index) };
}

/** Switching axis re-centers the slice index; points and mask are kept. */
export function setAxis(state: ViewerState, axis: 0 | 1 | 2): ViewerState {
  const next = { ...state, axis };
  return { ...next, sliceIndex: Math.floor(sliceCount(state.shape, axis) / 2) };
}

export function setWindow(state: ViewerState, lo: number, hi: number): ViewerState {
  if (!(hi > lo)) return state; // sliders can momentarily cross; ignore
  return { ...state, window: { lo, hi } };
}

export function setOpacity(state: ViewerState, opacity: number): ViewerState {
  return { ...state, overlayOpacity: Math.min(1, Math.max(0, opacity)) };
}

export function inBounds(shape: [number, number, number], v: VoxelPoint): boolean {
  return v.z >= 0 && v.z < shape[0] && v.y >= 0 && v.y < shape[1]
      && v.x >= 0 && v.x < shape[2];
}

/**
 * Map a canvas click through the current view to a labeled voxel and append
 * it. Clicks outside the image are ignored and return the state unchanged.
 */
export function placeClick(state: ViewerState, t: ViewTransform,
                           sx: number, sy: number): ViewerState {
  const voxel = clickToVoxel(t, state.shape, state.axis, state.sliceIndex, sx, sy);
  if (voxel === null || !inBounds(state.shape, voxel)) return state;
  const point: PlacedPoint = { ...voxel, label: state.activeTool };
  return { ...state, placedPoints: [...state.placedPoints, point] };
}

/** Drop the most recent point. Purely local: no server call. */
export function undoPoint(state: ViewerState): ViewerState {
  if (state.placedPoints.length === 0) return state;
  return { ...state, placedPoints: state.placedPoints.slice(0, -1) };
}

export function clearPoints(state: ViewerState): ViewerState {
  return { ...state, placedPoints: [], activeMaskId: null };
}

/** Points placed on the slice currently shown, with their list positions. */
export function pointsOnCurrentSlice(state: ViewerState): { point: PlacedPoint; idx: number }[] {
  const coord = (p: PlacedPoint) => [p.z, p.y, p.x][state.axis];
  return state.placedPoints
    .map((point, idx) => ({ point, idx }))
    .filter(({ point }) => coord(point) === state.sliceIndex);
}
