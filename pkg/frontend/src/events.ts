import type { TrainEvent } from "./types.js";

/** Dedupe identity: a replayed prefix never duplicates chart points, while a
 * reset epoch (same epoch, different action) still contributes its own point. */
export function dedupeKey(event: TrainEvent): string {
  return `${event.epoch}:${event.action}`;
}

export function parseEventLine(line: string): TrainEvent | null {
  const trimmed = line.trim();
  if (trimmed === "") return null;
  const raw = JSON.parse(trimmed) as Record<string, unknown>;
  if (typeof raw.epoch !== "number" || typeof raw.train_loss !== "number") {
    throw new Error(`not a train event: ${trimmed}`);
  }
  return raw as unknown as TrainEvent;
}

/** Incremental splitter for an ndjson byte stream; buffers partial lines
 * across chunks so reconnect-boundary fragments never reach JSON.parse. */
export class NdjsonBuffer {
  private pending = "";

  push(chunk: string): TrainEvent[] {
    this.pending += chunk;
    const lines = this.pending.split("\n");
    this.pending = lines.pop() ?? "";
    const events: TrainEvent[] = [];
    for (const line of lines) {
      const event = parseEventLine(line);
      if (event !== null) events.push(event);
    }
    return events;
  }

  /** Reset on reconnect: a half-received line from the dead connection is
   * discarded, the replayed prefix will deliver it whole. */
  clear(): void {
    this.pending = "";
  }
}

export function parseNdjson(text: string): TrainEvent[] {
  const buffer = new NdjsonBuffer();
  const events = buffer.push(text.endsWith("\n") ? text : text + "\n");
  return events;
}
