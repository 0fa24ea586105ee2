import { readFileSync } from 'fs';

export interface GrayFrame {
  width: number;
  height: number;
  /** luminance in [0, 1], row major */
  pixels: Float64Array;
}

/**
 * A frame payload is either a filesystem path or the base64 of a binary
 * 8-bit PGM. Base64 is detected by decoding and checking the P5 magic.
 */
export function decodeFramePayload(payload: string): GrayFrame {
  const decoded = Buffer.from(payload, 'base64');
  if (decoded.length >= 2 && decoded[0] === 0x50 && decoded[1] === 0x35) {
    return decodePgm(decoded);
  }
  return decodePgm(readFileSync(payload));
}

export function decodePgm(buf: Buffer): GrayFrame {
  if (buf.length < 2 || buf[0] !== 0x50 || buf[1] !== 0x35) {
    throw new Error('not a binary PGM (P5) image');
  }
  const fields: number[] = [];
  let pos = 2;
  while (fields.length < 3) {
    while (pos < buf.length && isSpace(buf[pos])) pos++;
    if (pos < buf.length && buf[pos] === 0x23) {
      // comment line
      while (pos < buf.length && buf[pos] !== 0x0a) pos++;
      continue;
    }
    const start = pos;
    while (pos < buf.length && !isSpace(buf[pos])) pos++;
    const value = Number(buf.subarray(start, pos).toString('ascii'));
    if (!Number.isInteger(value) || value <= 0) {
      throw new Error('malformed PGM header');
    }
    fields.push(value);
  }
  pos++; // single whitespace after maxval
  const [width, height, maxval] = fields;
  if (maxval !== 255) {
    throw new Error(`unsupported PGM maxval ${maxval}`);
  }
  if (buf.length - pos < width * height) {
    throw new Error('truncated PGM pixel data');
  }
  const pixels = new Float64Array(width * height);
  for (let i = 0; i < width * height; i++) {
    pixels[i] = buf[pos + i] / 255;
  }
  return { width, height, pixels };
}

function isSpace(byte: number): boolean {
  return byte === 0x20 || byte === 0x09 || byte === 0x0a || byte === 0x0d;
}
