import { describe, expect, it } from "vitest";

import { ForceCommandLimiter } from "../src/controls.js";
import {
  abortCommand,
  parseFrame,
  parseMessage,
  setForceCommand,
  startCommand,
  StreamMessage,
} from "../src/protocol.js";
import {
  applyBackpressure,
  decimateMinMax,
  initialViewModel,
  PLOT_WINDOW_S,
  reduce,
  replay,
  setConnection,
} from "../src/viewmodel.js";

function telemetry(t: number, force = 1.0, reading = 100.0): StreamMessage {
  return {
    v: 1, kind: "telemetry", t, force, block_reading: reading,
    predicted_force_flat: force * 0.9, predicted_force_aware: force * 0.99,
    kappa_pred: 25.0, phase: "targeting", dwell_progress: 0.1,
  };
}

function stateChange(t: number, phase: string, index: number | null, ref: number | null): StreamMessage {
  return { v: 1, kind: "state_change", t, phase, target_index: index, reference: ref };
}

function record(t: number, ref: number | null): StreamMessage {
  return {
    v: 1, kind: "record", t, target_index: ref === null ? -1 : 0, reference: ref,
    mean_block_reading: 200.0, mean_force: ref ?? 1.4,
    window_start: t - 5, window_end: t, n_samples: 250,
  };
}

describe("protocol parsing", () => {
  it("accepts only versioned known kinds", () => {
    expect(parseMessage(JSON.stringify(telemetry(0)))).not.toBeNull();
    expect(parseMessage("not json")).toBeNull();
    expect(parseMessage(JSON.stringify({ v: 2, kind: "telemetry" }))).toBeNull();
    expect(parseMessage(JSON.stringify({ v: 1, kind: "mystery" }))).toBeNull();
  });

  it("splits newline-delimited frames", () => {
    const frame = JSON.stringify(telemetry(0)) + "\n" + JSON.stringify(telemetry(1)) + "\n";
    expect(parseFrame(frame)).toHaveLength(2);
  });
});

describe("view model reduction", () => {
  it("is a pure fold: replaying a log reproduces the identical model", () => {
    const log: StreamMessage[] = [
      stateChange(0, "targeting", 0, 2.0),
      ...Array.from({ length: 50 }, (_, k) => telemetry(k * 0.02)),
      record(5.0, 2.0),
      stateChange(5.0, "targeting", 1, 4.0),
    ];
    const a = replay(log);
    const b = replay(log);
    expect(a).toEqual(b);
    // prefix-fold then continue equals one fold of the whole log
    const mid = replay(log.slice(0, 10));
    expect(log.slice(10).reduce(reduce, mid)).toEqual(a);
  });

  it("mirrors records into target checkmarks and resets dwell", () => {
    let vm = replay([stateChange(0, "targeting", 0, 2.0), telemetry(1)]);
    expect(vm.dwellProgress).toBeGreaterThan(0);
    vm = reduce(vm, record(5.0, 2.0));
    expect(vm.completedReferences).toEqual([2.0]);
    expect(vm.dwellProgress).toBe(0);
    vm = reduce(vm, record(11.0, null));
    expect(vm.naturalHoldDone).toBe(true);
  });

  it("keeps only the plot window of telemetry", () => {
    const log = Array.from({ length: 600 }, (_, k) => telemetry(k * 0.1)); // 60 s
    const vm = replay([stateChange(0, "targeting", 0, 2.0), ...log]);
    const span = vm.lastT - vm.telemetry[0].t;
    expect(span).toBeLessThanOrEqual(PLOT_WINDOW_S);
    expect(vm.telemetry.length).toBeGreaterThan(250);
  });

  it("flags abort from the report and from a dropped connection", () => {
    const vmReport = replay([
      stateChange(0, "targeting", 0, 2.0),
      { v: 1, kind: "report", report: fakeReport(true), csv: "x" } as StreamMessage,
    ]);
    expect(vmReport.aborted).toBe(true);

    let vm = replay([stateChange(0, "targeting", 0, 2.0)]);
    vm = setConnection(vm, "disconnected", "drop");
    expect(vm.aborted).toBe(true); // drop before report => session aborted
  });

  it("records errors and failed acks without touching session state", () => {
    let vm = initialViewModel();
    vm = reduce(vm, { v: 1, kind: "error", detail: "boom" });
    vm = reduce(vm, { v: 1, kind: "command_ack", cmd: "start", ok: false, detail: "nope" });
    vm = reduce(vm, { v: 1, kind: "command_ack", cmd: "start", ok: true, detail: "" });
    expect(vm.errors).toEqual(["boom", "start: nope"]);
    expect(vm.phase).toBe("idle");
  });
});

describe("decimation", () => {
  it("returns short series unchanged", () => {
    const pts = [{ t: 0, v: 1 }, { t: 1, v: 2 }];
    expect(decimateMinMax(pts, 100)).toEqual(pts);
  });

  it("preserves sub-bin excursions via min/max binning", () => {
    const pts = Array.from({ length: 5000 }, (_, k) => ({
      t: k * 0.01,
      v: k === 2500 ? 99 : Math.sin(k * 0.01),
    }));
    const out = decimateMinMax(pts, 50);
    expect(out.length).toBeLessThanOrEqual(100);
    expect(Math.max(...out.map((p) => p.v))).toBe(99); // spike survives
    const times = out.map((p) => p.t);
    expect([...times].sort((a, b) => a - b)).toEqual(times);
  });
});

describe("backpressure", () => {
  it("drops only intermediate telemetry, never protocol events", () => {
    const queue: StreamMessage[] = [];
    for (let k = 0; k < 100; k++) queue.push(telemetry(k));
    queue.splice(50, 0, record(50, 2.0), stateChange(50, "targeting", 1, 4.0));
    const trimmed = applyBackpressure(queue, 20);
    expect(trimmed.length).toBeLessThanOrEqual(20);
    expect(trimmed.filter((m) => m.kind === "record")).toHaveLength(1);
    expect(trimmed.filter((m) => m.kind === "state_change")).toHaveLength(1);
    const tel = trimmed.filter((m) => m.kind === "telemetry");
    expect(tel[tel.length - 1]).toBe(queue[queue.length - 1]); // newest kept
  });

  it("leaves small queues untouched", () => {
    const queue = [telemetry(0), record(1, 2.0)];
    expect(applyBackpressure(queue, 10)).toBe(queue);
  });
});

describe("force command limiter", () => {
  it("caps a synthetic drag at 20 commands per second", () => {
    const limiter = new ForceCommandLimiter(20);
    let emitted = 0;
    for (let k = 0; k < 200; k++) {
      emitted += limiter.push(k * 0.05, k * 5).length; // 200 events in 1 s
    }
    expect(emitted).toBeLessThanOrEqual(20);
    expect(emitted).toBeGreaterThan(0);
  });

  it("flushes the newest deferred value once a slot frees", () => {
    const limiter = new ForceCommandLimiter(2);
    limiter.push(1, 0);
    limiter.push(2, 10);
    expect(limiter.push(3, 20)).toEqual([]); // over budget, deferred
    const flushed = limiter.flush(1500);
    expect(flushed).toHaveLength(1);
    expect(flushed[0]).toEqual(setForceCommand(3));
    expect(limiter.flush(1501)).toEqual([]); // nothing pending anymore
  });
});

describe("command surface", () => {
  it("only start, abort and set_applied_force exist", () => {
    expect(startCommand().cmd).toBe("start");
    expect(abortCommand().cmd).toBe("abort");
    expect(setForceCommand(2).cmd).toBe("set_applied_force");
  });
});

function fakeReport(aborted: boolean) {
  return {
    label: "t", kappa_pred: 25, curvature_true: 25, completed: !aborted, aborted,
    spec: { reference_forces: [2, 4, 6, 8], tolerance: 0.2, dwell: 5 },
    target_rows: [], natural_hold: null,
  };
}
