export type EventAction = "none" | "early_stopped" | "epoch_reset";

export interface TrainEvent {
  epoch: number;
  train_loss: number;
  validation_loss: number;
  validation_accuracy: number;
  wall_ms: number;
  action: EventAction;
}

export interface RunStatus {
  run_id: string;
  state: "running" | "completed";
  epoch: number;
  config_fingerprint: string;
}

export type ControlAction = "early_stop" | "reset_epoch";
