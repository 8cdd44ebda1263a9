import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "jsdom",
    include: ["tests/**/*.test.ts"],
    // the live test runs a full optimization through a spawned service
    testTimeout: 180_000,
    hookTimeout: 120_000,
    // session directories and spawned servers do not tolerate parallel reruns
    fileParallelism: false,
  },
});
