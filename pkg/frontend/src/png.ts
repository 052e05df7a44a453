/**
 * Deterministic 8-bit grayscale PNG codec.
 *
 * The encoder always emits the same bytes for the same pixels: one IHDR,
 * one IDAT whose zlib stream uses only stored (uncompressed) deflate
 * blocks, and IEND. Scribble maps are tiny, so the size cost is irrelevant
 * and saved annotations become byte-reproducible.
 */

const SIGNATURE = [0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a];

const CRC_TABLE = (() => {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) {
      c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    }
    table[n] = c;
  }
  return table;
})();

function crc32(bytes: Uint8Array): number {
  let c = 0xffffffff;
  for (const b of bytes) {
    c = CRC_TABLE[(c ^ b) & 0xff] ^ (c >>> 8);
  }
  return (c ^ 0xffffffff) >>> 0;
}

function adler32(bytes: Uint8Array): number {
  let a = 1;
  let b = 0;
  for (const byte of bytes) {
    a = (a + byte) % 65521;
    b = (b + a) % 65521;
  }
  return ((b << 16) | a) >>> 0;
}

function u32be(value: number): Uint8Array {
  return new Uint8Array([
    (value >>> 24) & 0xff,
    (value >>> 16) & 0xff,
    (value >>> 8) & 0xff,
    value & 0xff,
  ]);
}

function concat(parts: Uint8Array[]): Uint8Array {
  const total = parts.reduce((n, p) => n + p.length, 0);
  const out = new Uint8Array(total);
  let at = 0;
  for (const p of parts) {
    out.set(p, at);
    at += p.length;
  }
  return out;
}

function chunk(type: string, body: Uint8Array): Uint8Array {
  const typeBytes = new Uint8Array([...type].map((c) => c.charCodeAt(0)));
  const payload = concat([typeBytes, body]);
  return concat([u32be(body.length), payload, u32be(crc32(payload))]);
}

/** zlib container with stored deflate blocks only. */
function zlibStored(raw: Uint8Array): Uint8Array {
  const parts: Uint8Array[] = [new Uint8Array([0x78, 0x01])];
  const max = 65535;
  for (let at = 0; at < raw.length || at === 0; at += max) {
    const piece = raw.subarray(at, Math.min(at + max, raw.length));
    const last = at + max >= raw.length ? 1 : 0;
    const len = piece.length;
    parts.push(
      new Uint8Array([last, len & 0xff, len >>> 8, ~len & 0xff, (~len >>> 8) & 0xff]),
      piece,
    );
    if (raw.length === 0) break;
  }
  parts.push(u32be(adler32(raw)));
  return concat(parts);
}

export function encodeGrayPng(
  pixels: Uint8Array,
  width: number,
  height: number,
): Uint8Array {
  if (width <= 0 || height <= 0 || pixels.length !== width * height) {
    throw new Error(`pixel buffer does not match ${width}x${height}`);
  }
  const ihdr = concat([
    u32be(width),
    u32be(height),
    new Uint8Array([8, 0, 0, 0, 0]), // 8-bit grayscale, no interlace
  ]);
  const raw = new Uint8Array((width + 1) * height);
  for (let row = 0; row < height; row++) {
    raw[row * (width + 1)] = 0; // filter: None
    raw.set(pixels.subarray(row * width, (row + 1) * width), row * (width + 1) + 1);
  }
  return concat([
    new Uint8Array(SIGNATURE),
    chunk("IHDR", ihdr),
    chunk("IDAT", zlibStored(raw)),
    chunk("IEND", new Uint8Array(0)),
  ]);
}

function inflateStored(stream: Uint8Array): Uint8Array {
  if (stream.length < 2 || (stream[0] & 0x0f) !== 8) {
    throw new Error("not a zlib stream");
  }
  const parts: Uint8Array[] = [];
  let at = 2;
  for (;;) {
    const header = stream[at];
    if ((header & 0x06) !== 0) {
      throw new Error("compressed deflate blocks unsupported by this decoder");
    }
    const len = stream[at + 1] | (stream[at + 2] << 8);
    parts.push(stream.subarray(at + 5, at + 5 + len));
    at += 5 + len;
    if (header & 1) break;
  }
  return concat(parts);
}

/** Decode a PNG produced by encodeGrayPng (stored blocks, filter None). */
export function decodeGrayPng(bytes: Uint8Array): {
  pixels: Uint8Array;
  width: number;
  height: number;
} {
  for (let i = 0; i < 8; i++) {
    if (bytes[i] !== SIGNATURE[i]) throw new Error("not a PNG");
  }
  let width = 0;
  let height = 0;
  const idat: Uint8Array[] = [];
  let at = 8;
  while (at < bytes.length) {
    const len =
      (bytes[at] << 24) | (bytes[at + 1] << 16) | (bytes[at + 2] << 8) | bytes[at + 3];
    const type = String.fromCharCode(...bytes.subarray(at + 4, at + 8));
    const body = bytes.subarray(at + 8, at + 8 + len);
    if (type === "IHDR") {
      width = (body[0] << 24) | (body[1] << 16) | (body[2] << 8) | body[3];
      height = (body[4] << 24) | (body[5] << 16) | (body[6] << 8) | body[7];
      if (body[8] !== 8 || body[9] !== 0) {
        throw new Error("only 8-bit grayscale is supported");
      }
    } else if (type === "IDAT") {
      idat.push(body);
    }
    at += 12 + len;
  }
  const raw = inflateStored(concat(idat));
  const pixels = new Uint8Array(width * height);
  for (let row = 0; row < height; row++) {
    if (raw[row * (width + 1)] !== 0) throw new Error("only filter None is supported");
    pixels.set(raw.subarray(row * (width + 1) + 1, (row + 1) * (width + 1)), row * width);
  }
  return { pixels, width, height };
}
