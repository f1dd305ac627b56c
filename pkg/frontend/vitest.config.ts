import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["tests/**/*.test.ts"],
    environment: "node",
    // the e2e test boots a real server process and drives 48 trials
    testTimeout: 180_000,
    hookTimeout: 60_000,
  },
});
