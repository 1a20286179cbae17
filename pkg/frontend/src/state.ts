import { dedupeKey } from "./events.js";
import type { ControlAction, RunStatus, TrainEvent } from "./types.js";

export type Connection = "connecting" | "live" | "disconnected" | "completed";

export interface RunView {
  runId: string | null;
  connection: Connection;
  events: TrainEvent[];
  pendingCommand: ControlAction | null;
  notice: string | null;
}

export type ViewAction =
  | { type: "status"; status: RunStatus }
  | { type: "event"; event: TrainEvent }
  | { type: "connected" }
  | { type: "disconnected" }
  | { type: "completed" }
  | { type: "command_sent"; command: ControlAction }
  | { type: "command_rejected"; reason: string };

export function initialView(): RunView {
  return {
    runId: null,
    connection: "connecting",
    events: [],
    pendingCommand: null,
    notice: null,
  };
}

/** Single reducer: every UI update flows through here, so the rendered chart
 * is a pure function of the action log (no concurrent mutation anywhere). */
export function reduce(view: RunView, action: ViewAction): RunView {
  switch (action.type) {
    case "status":
      return {
        ...view,
        runId: action.status.run_id,
        connection: action.status.state === "completed" ? "completed" : view.connection,
      };
    case "connected":
      return { ...view, connection: "live", notice: null };
    case "disconnected":
      return view.connection === "completed"
        ? view
        : { ...view, connection: "disconnected" };
    case "completed":
      return { ...view, connection: "completed", pendingCommand: null };
    case "event": {
      const key = dedupeKey(action.event);
      if (view.events.some((e) => dedupeKey(e) === key)) return view;
      // an event whose action is not "none" resolves the pending badge
      const pending =
        action.event.action === "none" ? view.pendingCommand : null;
      return { ...view, events: [...view.events, action.event], pendingCommand: pending };
    }
    case "command_sent":
      // last-wins mirrors the server's single-slot mailbox
      return { ...view, pendingCommand: action.command, notice: null };
    case "command_rejected":
      return { ...view, pendingCommand: null, notice: action.reason };
  }
}
