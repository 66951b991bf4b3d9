import { defineConfig } from "vitest/config";

// File parallelism is off because the contract and end-to-end suites
// each spawn a real service process; on a one-core box running them
// side by side only adds contention and flaky timeouts.
export default defineConfig({
  test: {
    include: ["tests/**/*.test.ts"],
    fileParallelism: false,
    testTimeout: 180_000,
    hookTimeout: 120_000,
  },
});
