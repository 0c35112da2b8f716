// Pure view model: the fold of the message log. Replaying the same log
// always reproduces the identical model — the UI holds no other state.

import { RecordMessage, ReportMessage, StreamMessage } from "./protocol.js";

export const PLOT_WINDOW_S = 30; // ring buffer span for the live plots

export interface TelemetryPoint {
  t: number;
  force: number;
  blockReading: number;
  predFlat: number | null;
  predAware: number | null;
}

export type Connection = "disconnected" | "connecting" | "connected" | "error";

export interface ViewModel {
  connection: Connection;
  connectionDetail: string;
  phase: string;
  targetIndex: number | null;
  reference: number | null;
  kappaPred: number | null;
  dwellProgress: number;
  telemetry: TelemetryPoint[];
  records: RecordMessage[];
  completedReferences: number[];
  naturalHoldDone: boolean;
  aborted: boolean;
  report: ReportMessage | null;
  errors: string[];
  lastT: number;
}

export function initialViewModel(): ViewModel {
  return {
    connection: "disconnected",
    connectionDetail: "",
    phase: "idle",
    targetIndex: null,
    reference: null,
    kappaPred: null,
    dwellProgress: 0,
    telemetry: [],
    records: [],
    completedReferences: [],
    naturalHoldDone: false,
    aborted: false,
    report: null,
    errors: [],
    lastT: 0,
  };
}

export function setConnection(vm: ViewModel, state: Connection, detail = ""): ViewModel {
  // a drop before the report arrived means the service aborted the session
  const aborted = vm.aborted || (state !== "connected" && vm.report === null && vm.phase !== "idle");
  return { ...vm, connection: state, connectionDetail: detail, aborted };
}

export function reduce(vm: ViewModel, msg: StreamMessage): ViewModel {
  switch (msg.kind) {
    case "telemetry": {
      const point: TelemetryPoint = {
        t: msg.t,
        force: msg.force,
        blockReading: msg.block_reading,
        predFlat: msg.predicted_force_flat,
        predAware: msg.predicted_force_aware,
      };
      const cutoff = msg.t - PLOT_WINDOW_S;
      const telemetry = vm.telemetry.filter((p) => p.t >= cutoff);
      telemetry.push(point);
      return {
        ...vm,
        telemetry,
        kappaPred: msg.kappa_pred ?? vm.kappaPred,
        dwellProgress: msg.dwell_progress ?? vm.dwellProgress,
        phase: msg.phase ?? vm.phase,
        lastT: msg.t,
      };
    }
    case "state_change":
      return {
        ...vm,
        phase: msg.phase,
        targetIndex: msg.target_index,
        reference: msg.reference,
        dwellProgress: 0,
        aborted: vm.aborted,
        lastT: msg.t,
      };
    case "record": {
      const records = [...vm.records, msg];
      const completedReferences =
        msg.reference !== null ? [...vm.completedReferences, msg.reference] : vm.completedReferences;
      return {
        ...vm,
        records,
        completedReferences,
        naturalHoldDone: vm.naturalHoldDone || msg.reference === null,
        dwellProgress: 0,
        lastT: msg.t,
      };
    }
    case "report":
      return { ...vm, report: msg, aborted: msg.report.aborted };
    case "error":
      return { ...vm, errors: [...vm.errors, msg.detail] };
    case "command_ack":
      return msg.ok ? vm : { ...vm, errors: [...vm.errors, `${msg.cmd}: ${msg.detail}`] };
  }
}

export function replay(messages: StreamMessage[], vm = initialViewModel()): ViewModel {
  return messages.reduce(reduce, vm);
}

/**
 * Min/max binning decimation: one (min, max) pair per bin, so excursions
 * shorter than a display pixel stay visible on the plot.
 */
export function decimateMinMax(
  points: { t: number; v: number }[],
  bins: number,
): { t: number; v: number }[] {
  if (points.length <= 2 * bins) return points;
  const t0 = points[0].t;
  const t1 = points[points.length - 1].t;
  const span = (t1 - t0) / bins || 1;
  const out: { t: number; v: number }[] = [];
  let i = 0;
  for (let b = 0; b < bins; b++) {
    const end = b === bins - 1 ? t1 + 1 : t0 + (b + 1) * span;
    let lo: { t: number; v: number } | null = null;
    let hi: { t: number; v: number } | null = null;
    while (i < points.length && points[i].t < end) {
      const p = points[i];
      if (lo === null || p.v < lo.v) lo = p;
      if (hi === null || p.v > hi.v) hi = p;
      i++;
    }
    if (lo && hi) {
      out.push(lo.t <= hi.t ? lo : hi);
      if (lo !== hi) out.push(lo.t <= hi.t ? hi : lo);
    }
  }
  return out;
}

/**
 * Bounded-queue backpressure: when the pending queue overflows, drop the
 * oldest intermediate telemetry first; state_change/record/report/error
 * messages are never dropped.
 */
export function applyBackpressure(queue: StreamMessage[], max: number): StreamMessage[] {
  if (queue.length <= max) return queue;
  const critical = queue.filter((m) => m.kind !== "telemetry");
  const room = Math.max(0, max - critical.length);
  const telemetry = queue.filter((m) => m.kind === "telemetry").slice(-room);
  // preserve original arrival order
  const keep = new Set<StreamMessage>([...critical, ...telemetry]);
  return queue.filter((m) => keep.has(m));
}
