/**
 * Coordinate plumbing between the canvas, the displayed slice, and the
 * volume's voxel grid.
 *
 * Three frames are involved:
 *   screen px  --(ViewTransform: zoom+pan affine)-->  slice px (row/col)
 *   slice px   --(axis table below)-->                voxel (z, y, x)
 *
 * The server slices a (z, y, x) array; the PNG's rows/cols are the two
 * remaining array axes in order:
 *
 *   axis | fixed | row | col
 *   -----+-------+-----+----
 *     0  |   z   |  y  |  x
 *     1  |   y   |  z  |  x
 *     2  |   x   |  z  |  y
 */

export interface ViewTransform {
  /** screen px per slice px; > 0 */
  scale: number;
  /** screen position of the slice's (0, 0) corner */
  offsetX: number;
  offsetY: number;
}

export interface SlicePoint {
  /** continuous slice coordinates; col grows right, row grows down */
  col: number;
  row: number;
}

export interface VoxelPoint {
  z: number;
  y: number;
  x: number;
}

export const IDENTITY: ViewTransform = { scale: 1, offsetX: 0, offsetY: 0 };

export function screenToSlice(t: ViewTransform, sx: number, sy: number): SlicePoint {
  return { col: (sx - t.offsetX) / t.scale, row: (sy - t.offsetY) / t.scale };
}

export function sliceToScreen(t: ViewTransform, p: SlicePoint): { x: number; y: number } {
  return { x: p.col * t.scale + t.offsetX, y: p.row * t.scale + t.offsetY };
}

/**
 * Zoom by `factor` keeping the slice point under the cursor fixed on screen.
 * scale is clamped to [1/16, 64] so a scroll wheel cannot collapse the view.
 */
export function zoomAt(t: ViewTransform, sx: number, sy: number, factor: number): ViewTransform {
  const scale = Math.min(64, Math.max(1 / 16, t.scale * factor));
  const applied = scale / t.scale;
  return {
    scale,
    offsetX: sx - (sx - t.offsetX) * applied,
    offsetY: sy - (sy - t.offsetY) * applied,
  };
}

export function panBy(t: ViewTransform, dx: number, dy: number): ViewTransform {
  return { scale: t.scale, offsetX: t.offsetX + dx, offsetY: t.offsetY + dy };
}

/** Transform that fits a rows x cols slice into a w x h canvas, centered. */
export function fitTransform(rows: number, cols: number, w: number, h: number): ViewTransform {
  const scale = Math.min(w / cols, h / rows);
  return {
    scale,
    offsetX: (w - cols * scale) / 2,
    offsetY: (h - rows * scale) / 2,
  };
}

/** Pixel dimensions of a slice through `axis` of a (z, y, x) volume. */
export function sliceDims(shape: [number, number, number], axis: 0 | 1 | 2): { rows: number; cols: number } {
  switch (axis) {
    case 0: return { rows: shape[1], cols: shape[2] };
    case 1: return { rows: shape[0], cols: shape[2] };
    case 2: return { rows: shape[0], cols: shape[1] };
  }
}

export function sliceCount(shape: [number, number, number], axis: 0 | 1 | 2): number {
  return shape[axis];
}

/** Slice (row, col) at slice `index` of `axis` -> voxel, per the table above. */
export function sliceToVoxel(axis: 0 | 1 | 2, index: number, row: number, col: number): VoxelPoint {
  switch (axis) {
    case 0: return { z: index, y: row, x: col };
    case 1: return { z: row, y: index, x: col };
    case 2: return { z: row, y: col, x: index };
  }
}

/** Inverse of sliceToVoxel: where a voxel lands on the `axis` viewer. */
export function voxelToSlice(axis: 0 | 1 | 2, v: VoxelPoint): { index: number; row: number; col: number } {
  switch (axis) {
    case 0: return { index: v.z, row: v.y, col: v.x };
    case 1: return { index: v.y, row: v.z, col: v.x };
    case 2: return { index: v.x, row: v.z, col: v.y };
  }
}

/**
 * Screen click -> voxel under it, or null when the click falls outside the
 * slice. The voxel is the cell containing the continuous slice point, so
 * every screen pixel of a zoomed voxel maps back to that voxel.
 */
export function clickToVoxel(
  t: ViewTransform,
  shape: [number, number, number],
  axis: 0 | 1 | 2,
  index: number,
  sx: number,
  sy: number,
): VoxelPoint | null {
  const p = screenToSlice(t, sx, sy);
  const row = Math.floor(p.row);
  const col = Math.floor(p.col);
  const { rows, cols } = sliceDims(shape, axis);
  if (row < 0 || row >= rows || col < 0 || col >= cols) return null;
  return sliceToVoxel(axis, index, row, col);
}
