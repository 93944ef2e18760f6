/** Run-length mask codec.
 *
 * Counts alternate (skip, run) over the row-major flattened bitmap and
 * always start with a skip (possibly 0). The decoder is the exact
 * inverse of the server encoder; encode(decode(rle)) returns the input
 * for every payload the server emits.
 */

export function decodeMaskRle(rle: number[], height: number, width: number): Uint8Array {
  if (rle.length % 2 !== 0) {
    throw new Error("run-length data must have an even number of counts");
  }
  const size = height * width;
  const out = new Uint8Array(size);
  let pos = 0;
  for (let i = 0; i < rle.length; i += 2) {
    const skip = rle[i]!;
    const run = rle[i + 1]!;
    if (!Number.isInteger(skip) || !Number.isInteger(run) || skip < 0 || run < 0) {
      throw new Error("run-length counts must be nonnegative integers");
    }
    pos += skip;
    if (pos + run > size) {
      throw new Error("run-length data overruns the mask");
    }
    out.fill(1, pos, pos + run);
    pos += run;
  }
  return out;
}

export function encodeMaskRle(mask: Uint8Array): number[] {
  const out: number[] = [];
  let pos = 0;
  let i = 0;
  const n = mask.length;
  while (i < n) {
    while (i < n && !mask[i]) i++;
    if (i >= n) break;
    const start = i;
    while (i < n && mask[i]) i++;
    out.push(start - pos, i - start);
    pos = i;
  }
  return out;
}

/** Number of set pixels. */
export function maskArea(mask: Uint8Array): number {
  let area = 0;
  for (let i = 0; i < mask.length; i++) area += mask[i]!;
  return area;
}
