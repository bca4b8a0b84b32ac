import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "jsdom",
    include: ["test/**/*.test.ts"],
    // the e2e file boots a real API server; give it room
    testTimeout: 120_000,
    hookTimeout: 120_000,
  },
});
