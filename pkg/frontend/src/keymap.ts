/**
 * Keyboard shortcuts for class labeling: digits 1-9 and 0 cover the first
 * ten classes, then letters a-z continue. Throughput is the point, so every
 * class gets a single keystroke (up to 36).
 */

const DIGITS = "1234567890";
const LETTERS = "abcdefghijklmnopqrstuvwxyz";

export function classKey(index: number): string | null {
  if (index < 0) return null;
  if (index < DIGITS.length) return DIGITS[index];
  const li = index - DIGITS.length;
  if (li < LETTERS.length) return LETTERS[li];
  return null;
}

export function keyToClass(key: string, numClasses: number): number | null {
  const k = key.toLowerCase();
  let index: number;
  const d = DIGITS.indexOf(k);
  if (d >= 0) {
    index = d;
  } else {
    const l = LETTERS.indexOf(k);
    if (l < 0) return null;
    index = DIGITS.length + l;
  }
  return index < numClasses ? index : null;
}
