import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["tests/**/*.test.ts"],
    // the e2e test drives a real child-process service; give it room
    testTimeout: 120_000,
    hookTimeout: 120_000,
  },
});
