import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["tests/**/*.test.ts"],
    environment: "node",
    testTimeout: 60_000,
    hookTimeout: 240_000,
    // the e2e file boots a real engine; run files sequentially so unit
    // tests are not starved while the server renders
    fileParallelism: false,
  },
});
