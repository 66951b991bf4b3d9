/** Spawn the real dosing service for contract / end-to-end tests. */

import { spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

export interface RunningService {
  base: string;
  stop(): Promise<void>;
}

export async function startService(port: number): Promise<RunningService> {
  const stateDir = mkdtempSync(join(tmpdir(), "hepdose-state-"));
  const proc: ChildProcess = spawn(
    "python3",
    ["-m", "hepdose.cli", "serve", "--port", String(port), "--state-dir", stateDir],
    { stdio: ["ignore", "pipe", "pipe"] },
  );
  let stderr = "";
  proc.stderr?.on("data", (chunk) => {
    stderr += String(chunk);
  });

  const base = `http://127.0.0.1:${port}`;
  const deadline = Date.now() + 90_000;
  for (;;) {
    if (proc.exitCode !== null) {
      throw new Error(`service exited with code ${proc.exitCode}: ${stderr}`);
    }
    try {
      const res = await fetch(`${base}/openapi.json`);
      if (res.ok) break;
    } catch {
      // not listening yet
    }
    if (Date.now() > deadline) {
      proc.kill("SIGKILL");
      throw new Error(`service did not become ready on port ${port}: ${stderr}`);
    }
    await new Promise((r) => setTimeout(r, 250));
  }

  return {
    base,
    stop: () =>
      new Promise<void>((resolve) => {
        if (proc.exitCode !== null) {
          resolve();
          return;
        }
        proc.once("exit", () => resolve());
        proc.kill("SIGTERM");
        const hardKill = setTimeout(() => proc.kill("SIGKILL"), 5_000);
        if (typeof hardKill === "object" && "unref" in hardKill) hardKill.unref();
      }),
  };
}
