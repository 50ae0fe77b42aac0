import type { GrayImage } from './pgm.js';
import { toRgba } from './pgm.js';

export interface OverlayOptions {
  showFiducials: boolean;
  zoom: number; // 1 = native resolution; annotators judge raw pixels
}

/**
 * Draw a grayscale image with optional fiducial markers onto a canvas.
 * No enhancement is applied: the annotator's judgment is the
 * measurement, so pixels are shown as stored.
 */
export function drawPair(
  canvas: HTMLCanvasElement,
  image: GrayImage,
  fiducials: Array<[number, number]>,
  options: OverlayOptions,
): void {
  const ctx = canvas.getContext('2d');
  if (!ctx) throw new Error('canvas 2d context unavailable');
  canvas.width = Math.round(image.width * options.zoom);
  canvas.height = Math.round(image.height * options.zoom);

  const backing = document.createElement('canvas');
  backing.width = image.width;
  backing.height = image.height;
  const backingCtx = backing.getContext('2d')!;
  const imageData = backingCtx.createImageData(image.width, image.height);
  imageData.data.set(toRgba(image));
  backingCtx.putImageData(imageData, 0, 0);

  ctx.imageSmoothingEnabled = options.zoom < 1;
  ctx.drawImage(backing, 0, 0, canvas.width, canvas.height);

  if (options.showFiducials) {
    ctx.strokeStyle = '#ff4d4d';
    ctx.lineWidth = 1.5;
    for (const [x, y] of fiducials) {
      const cx = x * options.zoom;
      const cy = y * options.zoom;
      ctx.beginPath();
      ctx.arc(cx, cy, 4, 0, 2 * Math.PI);
      ctx.stroke();
    }
  }
}
