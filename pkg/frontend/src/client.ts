import { NdjsonBuffer } from "./events.js";
import type { ViewAction } from "./state.js";
import type { ControlAction, RunStatus } from "./types.js";

export interface ClientOptions {
  fetchFn?: typeof fetch;
  initialBackoffMs?: number;
  maxBackoffMs?: number;
  sleep?: (ms: number) => Promise<void>;
}

const defaultSleep = (ms: number) => new Promise<void>((r) => setTimeout(r, ms));

/** Consumes the monitor's ndjson event stream and forwards control clicks.
 *
 * On disconnect it retries with exponential backoff and replays the full
 * prefix; the reducer's dedupe makes the replay idempotent, so a reconnecting
 * client converges to the same chart as an uninterrupted one.
 */
export class MonitorClient {
  private readonly fetchFn: typeof fetch;
  private readonly initialBackoffMs: number;
  private readonly maxBackoffMs: number;
  private readonly sleep: (ms: number) => Promise<void>;
  private stopped = false;

  constructor(
    private readonly baseUrl: string,
    private readonly dispatch: (action: ViewAction) => void,
    options: ClientOptions = {},
  ) {
    this.fetchFn = options.fetchFn ?? fetch;
    this.initialBackoffMs = options.initialBackoffMs ?? 500;
    this.maxBackoffMs = options.maxBackoffMs ?? 10_000;
    this.sleep = options.sleep ?? defaultSleep;
  }

  stop(): void {
    this.stopped = true;
  }

  async fetchStatus(): Promise<RunStatus | null> {
    try {
      const response = await this.fetchFn(`${this.baseUrl}/status`);
      if (!response.ok) return null;
      const status = (await response.json()) as RunStatus;
      this.dispatch({ type: "status", status });
      return status;
    } catch {
      return null;
    }
  }

  /** Run the consume-reconnect loop until the run completes or stop(). */
  async run(): Promise<void> {
    let backoff = this.initialBackoffMs;
    while (!this.stopped) {
      try {
        await this.consumeStream();
        backoff = this.initialBackoffMs;
        // the monitor closes /events cleanly only at completion; if the
        // process is already gone the status probe fails, same conclusion
        const status = await this.fetchStatus();
        if (status === null || status.state === "completed") {
          this.dispatch({ type: "completed" });
          return;
        }
      } catch {
        // fall through to retry
      }
      if (this.stopped) return;
      this.dispatch({ type: "disconnected" });
      await this.sleep(backoff);
      backoff = Math.min(backoff * 2, this.maxBackoffMs);
    }
  }

  private async consumeStream(): Promise<void> {
    const response = await this.fetchFn(`${this.baseUrl}/events`);
    if (!response.ok || response.body === null) {
      throw new Error(`events stream unavailable: ${response.status}`);
    }
    this.dispatch({ type: "connected" });
    const reader = response.body.getReader();
    const decoder = new TextDecoder();
    const buffer = new NdjsonBuffer();
    try {
      while (!this.stopped) {
        const { done, value } = await reader.read();
        if (done) return;
        for (const event of buffer.push(decoder.decode(value, { stream: true }))) {
          this.dispatch({ type: "event", event });
        }
      }
    } finally {
      buffer.clear();
      reader.cancel().catch(() => undefined);
    }
  }

  async sendControl(action: ControlAction): Promise<boolean> {
    let response: Response;
    try {
      response = await this.fetchFn(`${this.baseUrl}/control`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ action }),
      });
    } catch {
      this.dispatch({ type: "command_rejected", reason: "monitor unreachable" });
      return false;
    }
    if (response.status === 202) {
      this.dispatch({ type: "command_sent", command: action });
      return true;
    }
    const reason =
      response.status === 409 ? "run already finished" : `rejected (${response.status})`;
    this.dispatch({ type: "command_rejected", reason });
    return false;
  }
}
