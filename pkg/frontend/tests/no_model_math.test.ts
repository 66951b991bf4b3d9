/** The console must render service numbers, never recompute them.
 *
 * This suite enforces that at the source level: no kinetic constants,
 * no response-gain or band arithmetic, no exponentials — the only
 * numeric work allowed client-side is chart layout and formatting.
 */

import { readFileSync, readdirSync } from "node:fs";
import { join } from "node:path";
import { fileURLToPath } from "node:url";

import { describe, expect, it } from "vitest";

const SRC = fileURLToPath(new URL("../src", import.meta.url));
const FILES = readdirSync(SRC).filter((f) => f.endsWith(".ts"));

// Constants that exist only inside the dosing model. Any appearance in
// the console source means it is recomputing instead of rendering.
const FORBIDDEN_TOKENS = [
  "7.5", // response gain linking infusion state to readings
  "0.574",
  "0.63",
  "0.673",
  "0.707", // retention grid values
  "3000", // dose ceiling
  "5000", // elimination-capacity ceiling
  "Math.exp",
  "Math.log",
];

describe("console source stays model-free", () => {
  it("has source files to scan", () => {
    expect(FILES.length).toBeGreaterThanOrEqual(5);
  });

  for (const file of FILES) {
    it(`${file} contains no model constants or exponentials`, () => {
      const text = readFileSync(join(SRC, file), "utf8");
      for (const token of FORBIDDEN_TOKENS) {
        expect(text.includes(token), `${file} must not contain "${token}"`).toBe(false);
      }
    });
  }

  it("imports nothing outside the console source tree", () => {
    for (const file of FILES) {
      const text = readFileSync(join(SRC, file), "utf8");
      for (const line of text.split("\n")) {
        const m = /from\s+"([^"]+)"/.exec(line);
        if (m && m[1]) {
          expect(m[1].startsWith("./"), `${file} imports ${m[1]}`).toBe(true);
        }
      }
    }
  });
});
