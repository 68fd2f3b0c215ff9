import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "happy-dom",
    include: ["tests/**/*.test.ts"],
    testTimeout: 15000,
    // the live spec builds pipeline artifacts and boots a server in its hooks
    hookTimeout: 240000,
  },
});
