/**
 * DOM wiring. Everything interesting lives in geometry/state/controller;
 * this file only adapts events and owns the two <img> loaders for the
 * current slice and its mask overlay.
 */

import { Client } from './api';
import { runSegmentation, Store, Notice } from './controller';
import { fitTransform, panBy, sliceCount, sliceDims, ViewTransform, zoomAt } from './geometry';
import { DrawSurface, renderScene } from './render';
import {
  clearPoints, initialState, placeClick, setAxis, setOpacity, setSlice,
  setWindow, undoPoint, ViewerState,
} from './state';

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing #${id}`);
  return el as T;
};

function canvasSurface(ctx: CanvasRenderingContext2D): DrawSurface {
  return {
    get width() { return ctx.canvas.width; },
    get height() { return ctx.canvas.height; },
    clear() {
      ctx.fillStyle = '#111';
      ctx.fillRect(0, 0, ctx.canvas.width, ctx.canvas.height);
    },
    drawImage(image, dx, dy, dw, dh, alpha) {
      ctx.save();
      ctx.globalAlpha = alpha;
      ctx.imageSmoothingEnabled = false; // voxels stay crisp under zoom
      ctx.drawImage(image as CanvasImageSource, dx, dy, dw, dh);
      ctx.restore();
    },
    drawMarker(x, y, color, radius) {
      ctx.save();
      ctx.strokeStyle = color;
      ctx.lineWidth = 2;
      ctx.beginPath();
      ctx.arc(x, y, radius, 0, 2 * Math.PI);
      ctx.stroke();
      ctx.beginPath();
      ctx.moveTo(x - radius, y); ctx.lineTo(x + radius, y);
      ctx.moveTo(x, y - radius); ctx.lineTo(x, y + radius);
      ctx.stroke();
      ctx.restore();
    },
  };
}

function showNotice(n: Notice): void {
  const toast = $('toast');
  toast.textContent = n.message;
  toast.className = `toast ${n.kind}`;
  toast.style.opacity = '1';
  setTimeout(() => { toast.style.opacity = '0'; }, n.kind === 'info' ? 1500 : 4000);
}

function start(): void {
  const client = new Client('');
  const canvas = $('view') as HTMLCanvasElement;
  const ctx = canvas.getContext('2d');
  if (!ctx) throw new Error('2d canvas unsupported');
  const surface = canvasSurface(ctx);

  let store: Store | null = null;
  let transform: ViewTransform = { scale: 1, offsetX: 0, offsetY: 0 };
  let sliceImg: HTMLImageElement | null = null;
  let overlayImg: HTMLImageElement | null = null;
  let loadedSliceUrl = '';
  let loadedOverlayUrl = '';

  function syncImages(s: ViewerState): void {
    const sliceUrl = client.volumeSliceUrl(s.volumeId, s.axis, s.sliceIndex, s.window);
    if (sliceUrl !== loadedSliceUrl) {
      loadedSliceUrl = sliceUrl;
      const img = new Image();
      img.onload = () => { sliceImg = img; draw(); };
      img.src = sliceUrl;
    }
    const overlayUrl = s.activeMaskId === null
      ? '' : client.maskSliceUrl(s.activeMaskId, s.axis, s.sliceIndex);
    if (overlayUrl !== loadedOverlayUrl) {
      loadedOverlayUrl = overlayUrl;
      overlayImg = null;
      if (overlayUrl !== '') {
        const img = new Image();
        img.onload = () => { overlayImg = img; draw(); };
        img.src = overlayUrl;
      }
    }
  }

  function draw(): void {
    if (!store) return;
    const s = store.get();
    renderScene(surface, s, transform, { slice: sliceImg, overlay: overlayImg });
    $('slice-label').textContent =
      `axis ${s.axis} slice ${s.sliceIndex + 1}/${sliceCount(s.shape, s.axis)}`;
    ($('run') as HTMLButtonElement).disabled =
      s.segmenting || s.placedPoints.length === 0;
    $('points-label').textContent = `${s.placedPoints.length} point(s)`;
  }

  function onState(s: ViewerState): void {
    syncImages(s);
    draw();
  }

  ($('file') as HTMLInputElement).addEventListener('change', async ev => {
    const file = (ev.target as HTMLInputElement).files?.[0];
    if (!file) return;
    try {
      const meta = await client.uploadVolume(await file.arrayBuffer());
      const lo = $('lo') as HTMLInputElement;
      const hi = $('hi') as HTMLInputElement;
      const st = initialState(meta.volume_id, meta.shape,
                              { lo: Number(lo.value), hi: Number(hi.value) });
      const dims = sliceDims(st.shape, st.axis);
      transform = fitTransform(dims.rows, dims.cols, canvas.width, canvas.height);
      store = new Store(st);
      store.subscribe(onState);
    } catch (err) {
      showNotice({ kind: 'error', message: String(err) });
    }
  });

  canvas.addEventListener('click', ev => {
    if (!store) return;
    const r = canvas.getBoundingClientRect();
    store.update(s => placeClick(s, transform, ev.clientX - r.left, ev.clientY - r.top));
  });

  canvas.addEventListener('wheel', ev => {
    if (!store) return;
    ev.preventDefault();
    if (ev.ctrlKey) {
      const r = canvas.getBoundingClientRect();
      transform = zoomAt(transform, ev.clientX - r.left, ev.clientY - r.top,
                         ev.deltaY < 0 ? 1.25 : 0.8);
      draw();
    } else {
      store.update(s => setSlice(s, s.sliceIndex + (ev.deltaY > 0 ? 1 : -1)));
    }
  }, { passive: false });

  let dragging: { x: number; y: number } | null = null;
  canvas.addEventListener('mousedown', ev => {
    if (ev.button === 1 || ev.shiftKey) dragging = { x: ev.clientX, y: ev.clientY };
  });
  window.addEventListener('mousemove', ev => {
    if (!dragging) return;
    transform = panBy(transform, ev.clientX - dragging.x, ev.clientY - dragging.y);
    dragging = { x: ev.clientX, y: ev.clientY };
    draw();
  });
  window.addEventListener('mouseup', () => { dragging = null; });

  for (const axis of [0, 1, 2] as const) {
    $(`axis${axis}`).addEventListener('click', () => {
      store?.update(s => setAxis(s, axis));
    });
  }
  $('fg').addEventListener('click', () => {
    store?.update(s => ({ ...s, activeTool: 'fg' }));
    $('fg').classList.add('active');
    $('bg').classList.remove('active');
  });
  $('bg').addEventListener('click', () => {
    store?.update(s => ({ ...s, activeTool: 'bg' }));
    $('bg').classList.add('active');
    $('fg').classList.remove('active');
  });
  $('undo').addEventListener('click', () => store?.update(undoPoint));
  $('clear').addEventListener('click', () => store?.update(clearPoints));
  $('run').addEventListener('click', () => {
    if (store) void runSegmentation(store, client, showNotice);
  });
  $('download').addEventListener('click', () => {
    const maskId = store?.get().activeMaskId;
    if (maskId) window.open(client.maskDownloadUrl(maskId), '_blank');
  });

  for (const id of ['lo', 'hi'] as const) {
    $(id).addEventListener('input', () => {
      store?.update(s => setWindow(s, Number(($('lo') as HTMLInputElement).value),
                                   Number(($('hi') as HTMLInputElement).value)));
    });
  }
  $('opacity').addEventListener('input', ev => {
    store?.update(s => setOpacity(s, Number((ev.target as HTMLInputElement).value)));
  });
}

window.addEventListener('DOMContentLoaded', start);
