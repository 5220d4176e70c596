/**
 * Run-length codec matching the inference service's wire format: a list of
 * run lengths over the row-major flattened mask, alternating values starting
 * with the run of zeros (a leading 1 is preceded by an explicit 0-length
 * run). Lengths always sum to height*width.
 */

export class RleError extends Error {}

export function rleDecode(runs: number[], height: number, width: number): Uint8Array {
  if (!Number.isInteger(height) || !Number.isInteger(width) || height <= 0 || width <= 0) {
    throw new RleError(`grid dims must be positive integers, got ${height}x${width}`);
  }
  let total = 0;
  for (const n of runs) {
    if (!Number.isInteger(n) || n < 0) {
      throw new RleError(`run lengths must be nonnegative integers, got ${n}`);
    }
    total += n;
  }
  if (total !== height * width) {
    throw new RleError(`run lengths sum to ${total}, expected ${height * width}`);
  }
  const out = new Uint8Array(height * width);
  let pos = 0;
  for (let i = 0; i < runs.length; i++) {
    const value = i % 2;
    const length = runs[i] ?? 0;
    if (value === 1) {
      out.fill(1, pos, pos + length);
    }
    pos += length;
  }
  return out;
}

export function rleEncode(mask: ArrayLike<number>, height: number, width: number): number[] {
  if (mask.length !== height * width) {
    throw new RleError(`mask has ${mask.length} pixels, expected ${height * width}`);
  }
  const runs: number[] = [];
  let current = 0;
  let length = 0;
  for (let i = 0; i < mask.length; i++) {
    const v = mask[i];
    if (v !== 0 && v !== 1) {
      throw new RleError(`mask must be binary (0/1), got ${v}`);
    }
    if (v === current) {
      length += 1;
    } else {
      runs.push(length);
      current = v as number;
      length = 1;
    }
  }
  runs.push(length);
  return runs;
}

/** Foreground pixel count without materializing the mask. */
export function rleForegroundCount(runs: number[]): number {
  let count = 0;
  for (let i = 1; i < runs.length; i += 2) {
    count += runs[i] ?? 0;
  }
  return count;
}
