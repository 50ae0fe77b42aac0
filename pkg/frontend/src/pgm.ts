// Binary PGM (P5) decoding: the DEI serves grayscale blobs natively and
// the browser cannot render PGM, so the UI decodes to pixels itself.

export interface GrayImage {
  width: number;
  height: number;
  pixels: Uint8Array; // row-major, one byte per pixel
}

export function decodePgm(data: ArrayBuffer): GrayImage {
  const bytes = new Uint8Array(data);
  if (bytes[0] !== 0x50 || bytes[1] !== 0x35) {
    throw new Error('not a binary PGM (P5) payload');
  }
  let pos = 2;
  const fields: number[] = [];
  while (fields.length < 3) {
    while (pos < bytes.length && isSpace(bytes[pos]!)) pos++;
    if (bytes[pos] === 0x23) {
      // comment line
      while (pos < bytes.length && bytes[pos] !== 0x0a) pos++;
      continue;
    }
    let value = 0;
    let digits = 0;
    while (pos < bytes.length && !isSpace(bytes[pos]!)) {
      const c = bytes[pos]!;
      if (c < 0x30 || c > 0x39) throw new Error('bad PGM header');
      value = value * 10 + (c - 0x30);
      digits++;
      pos++;
    }
    if (digits === 0) throw new Error('truncated PGM header');
    fields.push(value);
  }
  pos++; // single whitespace after maxval
  const [width, height, maxval] = fields as [number, number, number];
  if (maxval !== 255) throw new Error(`unsupported PGM maxval ${maxval}`);
  const expected = width * height;
  if (bytes.length - pos < expected) throw new Error('PGM pixel data truncated');
  return { width, height, pixels: bytes.slice(pos, pos + expected) };
}

function isSpace(byte: number): boolean {
  return byte === 0x20 || byte === 0x09 || byte === 0x0a || byte === 0x0d;
}

/** Expand grayscale bytes into RGBA for a canvas ImageData buffer. */
export function toRgba(image: GrayImage): Uint8ClampedArray {
  const out = new Uint8ClampedArray(image.width * image.height * 4);
  for (let i = 0; i < image.pixels.length; i++) {
    const v = image.pixels[i]!;
    out[i * 4] = v;
    out[i * 4 + 1] = v;
    out[i * 4 + 2] = v;
    out[i * 4 + 3] = 255;
  }
  return out;
}
