/** Pure pixel math for mask overlays.
 *
 * Works on flat RGBA buffers so the same code runs under node tests and
 * inside the browser (ImageData.data is a Uint8ClampedArray).
 */

export interface OverlayStyle {
  /** Overlay color as 0-255 RGB. */
  color: [number, number, number];
  /** Blend weight in [0,1]; 0 leaves the base image untouched. */
  opacity: number;
}

export const DEFAULT_STYLE: OverlayStyle = { color: [255, 64, 64], opacity: 0.5 };

/** Blend `style.color` over base RGBA wherever `mask` is set.
 *
 * Off-mask pixels are copied through byte-exact. Alpha is forced to 255
 * everywhere (the base view images are opaque).
 */
export function compositeOverlay(
  base: Uint8ClampedArray,
  mask: Uint8Array,
  width: number,
  height: number,
  style: OverlayStyle = DEFAULT_STYLE,
): Uint8ClampedArray {
  const n = width * height;
  if (base.length !== 4 * n) {
    throw new Error(`base buffer has ${base.length} bytes, expected ${4 * n}`);
  }
  if (mask.length !== n) {
    throw new Error(`mask has ${mask.length} pixels, expected ${n}`);
  }
  const { color, opacity } = style;
  if (!(opacity >= 0 && opacity <= 1)) {
    throw new Error("opacity must lie in [0, 1]");
  }
  const out = new Uint8ClampedArray(base);
  for (let i = 0; i < n; i++) {
    const o = 4 * i;
    if (mask[i]) {
      out[o] = Math.round(base[o]! * (1 - opacity) + color[0] * opacity);
      out[o + 1] = Math.round(base[o + 1]! * (1 - opacity) + color[1] * opacity);
      out[o + 2] = Math.round(base[o + 2]! * (1 - opacity) + color[2] * opacity);
    }
    out[o + 3] = 255;
  }
  return out;
}

/** Recover the binary mask an overlay was built from.
 *
 * A pixel is on the overlay iff it differs from the base image (or, at
 * opacity 0, never). Used by tests to assert the displayed overlay is
 * exactly the decoded server mask.
 */
export function overlayDifference(
  base: Uint8ClampedArray,
  overlaid: Uint8ClampedArray,
  width: number,
  height: number,
): Uint8Array {
  const n = width * height;
  const out = new Uint8Array(n);
  for (let i = 0; i < n; i++) {
    const o = 4 * i;
    out[i] =
      base[o] !== overlaid[o] || base[o + 1] !== overlaid[o + 1] || base[o + 2] !== overlaid[o + 2]
        ? 1
        : 0;
  }
  return out;
}
