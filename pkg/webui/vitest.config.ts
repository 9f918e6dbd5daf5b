import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    // the e2e file boots the real retrieval service, which takes a few seconds
    testTimeout: 30_000,
    hookTimeout: 30_000,
  },
});
