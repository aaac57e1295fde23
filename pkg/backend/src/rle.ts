/**
 * Column-major run-length encoding, counts alternating starting with
 * background. Rectangle masks are composed analytically from run
 * arithmetic; no pixel grid is materialized.
 */

class RunBuilder {
  private counts: number[] = [];
  private value = 0; // runs always start at background

  push(value: 0 | 1, length: number): void {
    if (length <= 0) return;
    if (this.counts.length === 0) {
      if (value === 1) this.counts.push(0);
      this.counts.push(length);
      this.value = value;
      return;
    }
    if (value === this.value) {
      this.counts[this.counts.length - 1] += length;
    } else {
      this.counts.push(length);
      this.value = value;
    }
  }

  finish(total: number): number[] {
    const sum = this.counts.reduce((a, b) => a + b, 0);
    if (sum !== total) {
      throw new Error(`run lengths sum to ${sum}, expected ${total}`);
    }
    return this.counts.length ? this.counts : [0];
  }
}

export function emptyMaskRle(height: number, width: number): number[] {
  return [height * width];
}

/**
 * RLE of a filled rectangle clipped to the grid. Rows r0..r1 (exclusive)
 * and columns c0..c1 (exclusive) in pixel units.
 */
export function rectMaskRle(
  height: number,
  width: number,
  r0: number,
  r1: number,
  c0: number,
  c1: number,
): number[] {
  const rr0 = Math.max(0, Math.min(height, Math.floor(r0)));
  const rr1 = Math.max(0, Math.min(height, Math.ceil(r1)));
  const cc0 = Math.max(0, Math.min(width, Math.floor(c0)));
  const cc1 = Math.max(0, Math.min(width, Math.ceil(c1)));
  if (rr1 <= rr0 || cc1 <= cc0 || height === 0 || width === 0) {
    return emptyMaskRle(height, width);
  }
  const runs = new RunBuilder();
  runs.push(0, cc0 * height + rr0);
  const fgLen = rr1 - rr0;
  for (let c = cc0; c < cc1; c++) {
    runs.push(1, fgLen);
    if (c + 1 < cc1) {
      runs.push(0, height - fgLen);
    }
  }
  runs.push(0, height - rr1 + (width - cc1) * height);
  return runs.finish(height * width);
}

/** Decode to a boolean grid (tests only; row-major array of columns-major scan). */
export function decodeRle(counts: number[], height: number, width: number): boolean[][] {
  const total = counts.reduce((a, b) => a + b, 0);
  if (total !== height * width) {
    throw new Error(`counts sum to ${total}, expected ${height * width}`);
  }
  const grid: boolean[][] = Array.from({ length: height }, () => new Array(width).fill(false));
  let pos = 0;
  let value = false;
  for (const run of counts) {
    if (value) {
      for (let k = pos; k < pos + run; k++) {
        grid[k % height][Math.floor(k / height)] = true;
      }
    }
    pos += run;
    value = !value;
  }
  return grid;
}
