// Wire protocol of the session service: newline-terminated JSON messages
// over a WebSocket, schema version field `v`.

export const PROTOCOL_VERSION = 1;

export interface TelemetryMessage {
  v: number;
  kind: "telemetry";
  t: number;
  force: number;
  block_reading: number;
  predicted_force_flat: number | null;
  predicted_force_aware: number | null;
  kappa_pred: number | null;
  phase: string | null;
  dwell_progress: number | null;
}

export interface StateChangeMessage {
  v: number;
  kind: "state_change";
  t: number;
  phase: string;
  target_index: number | null;
  reference: number | null;
}

export interface RecordMessage {
  v: number;
  kind: "record";
  t: number;
  target_index: number;
  reference: number | null;
  mean_block_reading: number;
  mean_force: number;
  window_start: number;
  window_end: number;
  n_samples: number;
}

export interface CommandAckMessage {
  v: number;
  kind: "command_ack";
  cmd: string;
  ok: boolean;
  detail: string;
}

export interface ReportMessage {
  v: number;
  kind: "report";
  report: SessionReport;
  csv: string;
}

export interface ErrorMessage {
  v: number;
  kind: "error";
  detail: string;
}

export interface TargetRow {
  reference: number;
  mean_force: number;
  mean_block_reading: number;
  n_samples: number;
  flat: ErrorStats;
  aware: ErrorStats;
}

export interface ErrorStats {
  mae: number;
  sd: number;
  bias: number;
  n: number;
}

export interface SessionReport {
  label: string;
  kappa_pred: number;
  curvature_true: number | null;
  completed: boolean;
  aborted: boolean;
  spec: { reference_forces: number[]; tolerance: number; dwell: number };
  target_rows: TargetRow[];
  natural_hold: { force_gt: number; flat: ErrorStats; aware: ErrorStats } | null;
}

export type StreamMessage =
  | TelemetryMessage
  | StateChangeMessage
  | RecordMessage
  | CommandAckMessage
  | ReportMessage
  | ErrorMessage;

const KINDS = new Set(["telemetry", "state_change", "record", "command_ack", "report", "error"]);

/** Parse one newline-terminated frame; malformed input returns null. */
export function parseMessage(raw: string): StreamMessage | null {
  let data: unknown;
  try {
    data = JSON.parse(raw);
  } catch {
    return null;
  }
  if (typeof data !== "object" || data === null) return null;
  const msg = data as { v?: unknown; kind?: unknown };
  if (msg.v !== PROTOCOL_VERSION || typeof msg.kind !== "string" || !KINDS.has(msg.kind)) {
    return null;
  }
  return data as StreamMessage;
}

export function parseFrame(frame: string): StreamMessage[] {
  const out: StreamMessage[] = [];
  for (const line of frame.split("\n")) {
    if (!line.trim()) continue;
    const msg = parseMessage(line);
    if (msg) out.push(msg);
  }
  return out;
}

// The console may emit exactly these three commands, nothing else.
export type UiCommand =
  | { v: number; kind: "command"; cmd: "start" }
  | { v: number; kind: "command"; cmd: "abort" }
  | { v: number; kind: "command"; cmd: "set_applied_force"; value: number };

export function startCommand(): UiCommand {
  return { v: PROTOCOL_VERSION, kind: "command", cmd: "start" };
}

export function abortCommand(): UiCommand {
  return { v: PROTOCOL_VERSION, kind: "command", cmd: "abort" };
}

export function setForceCommand(value: number): UiCommand {
  return { v: PROTOCOL_VERSION, kind: "command", cmd: "set_applied_force", value };
}

export function encodeCommand(cmd: UiCommand): string {
  return JSON.stringify(cmd) + "\n";
}
