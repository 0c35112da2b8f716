// Operator console wiring: WebSocket in, view model fold, canvas out.

import { drawTimeSeries } from "./charts.js";
import { ForceCommandLimiter } from "./controls.js";
import {
  abortCommand,
  encodeCommand,
  parseFrame,
  startCommand,
  StreamMessage,
  UiCommand,
} from "./protocol.js";
import {
  applyBackpressure,
  initialViewModel,
  PLOT_WINDOW_S,
  reduce,
  setConnection,
  ViewModel,
} from "./viewmodel.js";

const QUEUE_LIMIT = 4000;
const RECONNECT_DELAY_MS = 2000;

const $ = (id: string) => document.getElementById(id)!;

let vm: ViewModel = initialViewModel();
let queue: StreamMessage[] = [];
let socket: WebSocket | null = null;
let limiter = new ForceCommandLimiter(20);

function send(cmd: UiCommand): void {
  if (socket && socket.readyState === WebSocket.OPEN) {
    socket.send(encodeCommand(cmd));
  }
}

function connect(): void {
  const address = ($("address") as HTMLInputElement).value;
  vm = setConnection(initialViewModel(), "connecting");
  queue = [];
  limiter = new ForceCommandLimiter(20);
  try {
    socket = new WebSocket(address);
  } catch (err) {
    vm = setConnection(vm, "error", String(err));
    return;
  }
  socket.onopen = () => {
    vm = setConnection(vm, "connected");
  };
  socket.onmessage = (event) => {
    queue.push(...parseFrame(String(event.data)));
    queue = applyBackpressure(queue, QUEUE_LIMIT);
  };
  socket.onerror = () => {
    vm = setConnection(vm, "error", "connection error");
  };
  socket.onclose = () => {
    vm = setConnection(vm, "disconnected", "connection closed");
    if (vm.report === null) {
      setTimeout(() => {
        if (vm.report === null) connect();
      }, RECONNECT_DELAY_MS);
    }
  };
}

function renderReportTable(vmNow: ViewModel): string {
  if (!vmNow.report) return "";
  const rep = vmNow.report.report;
  const fmt = (x: number) => x.toFixed(2);
  let rows = "";
  for (const row of rep.target_rows) {
    rows += `<tr><td>${row.reference.toFixed(0)} N</td>
      <td>${fmt(row.flat.mae)} ± ${fmt(row.flat.sd)}</td>
      <td>${fmt(row.aware.mae)} ± ${fmt(row.aware.sd)}</td></tr>`;
  }
  if (rep.natural_hold) {
    rows += `<tr><td>hold (${fmt(rep.natural_hold.force_gt)} N)</td>
      <td>${fmt(rep.natural_hold.flat.mae)} ± ${fmt(rep.natural_hold.flat.sd)}</td>
      <td>${fmt(rep.natural_hold.aware.mae)} ± ${fmt(rep.natural_hold.aware.sd)}</td></tr>`;
  }
  const flag = rep.aborted ? " <span class='bad'>(aborted — partial)</span>" : "";
  return `<table><thead><tr><th>reference${flag}</th><th>flat err [N]</th>
    <th>curve err [N]</th></tr></thead><tbody>${rows}</tbody></table>`;
}

function render(): void {
  for (const msg of queue) vm = reduce(vm, msg);
  queue = [];

  $("conn-state").textContent = vm.connection + (vm.connectionDetail ? ` (${vm.connectionDetail})` : "");
  $("phase").textContent = vm.aborted && vm.report === null ? "aborted" : vm.phase;
  $("kappa").textContent = vm.kappaPred === null ? "—" : `${vm.kappaPred.toFixed(1)} 1/m`;
  const refText = vm.reference === null ? "—" : `${vm.reference.toFixed(0)} N`;
  $("reference").textContent = refText;

  const dwellTotal = vm.report?.report.spec.dwell ?? 5.0;
  const frac = Math.min(1, vm.dwellProgress / dwellTotal);
  ($("dwell-fill") as HTMLElement).style.width = `${(frac * 100).toFixed(1)}%`;
  $("dwell-label").textContent = `${vm.dwellProgress.toFixed(1)} / ${dwellTotal.toFixed(0)} s`;

  const ladder = $("targets");
  ladder.innerHTML = "";
  const refs = [2, 4, 6, 8];
  for (const ref of refs) {
    const li = document.createElement("li");
    const done = vm.completedReferences.includes(ref);
    li.textContent = `${done ? "✓" : "•"} ${ref} N`;
    li.className = done ? "done" : vm.reference === ref ? "active" : "";
    ladder.appendChild(li);
  }
  const hold = document.createElement("li");
  hold.textContent = `${vm.naturalHoldDone ? "✓" : "•"} natural hold`;
  hold.className = vm.naturalHoldDone ? "done" : vm.phase === "natural_hold" ? "active" : "";
  ladder.appendChild(hold);

  const tol = 0.2;
  drawTimeSeries(
    $("force-plot") as HTMLCanvasElement,
    [
      { label: "force", color: "#62d0ff", points: vm.telemetry.map((p) => ({ t: p.t, v: p.force })) },
      {
        label: "pred flat",
        color: "#ffb454",
        points: vm.telemetry.filter((p) => p.predFlat !== null).map((p) => ({ t: p.t, v: p.predFlat! })),
      },
      {
        label: "pred curve",
        color: "#7ce38b",
        points: vm.telemetry.filter((p) => p.predAware !== null).map((p) => ({ t: p.t, v: p.predAware! })),
      },
    ],
    vm.reference === null ? null : { lo: vm.reference - tol, hi: vm.reference + tol, color: "rgba(98,208,255,0.15)" },
    PLOT_WINDOW_S,
    "N",
  );
  drawTimeSeries(
    $("reading-plot") as HTMLCanvasElement,
    [{ label: "block reading", color: "#c792ea", points: vm.telemetry.map((p) => ({ t: p.t, v: p.blockReading })) }],
    null,
    PLOT_WINDOW_S,
    "counts",
  );

  $("errors").textContent = vm.errors.slice(-3).join(" | ");
  $("report").innerHTML = renderReportTable(vm);
  ($("download") as HTMLButtonElement).disabled = vm.report === null;

  requestAnimationFrame(render);
}

function downloadCsv(): void {
  if (!vm.report) return;
  const blob = new Blob([vm.report.csv], { type: "text/csv" });
  const a = document.createElement("a");
  a.href = URL.createObjectURL(blob);
  a.download = "session_report.csv";
  a.click();
  URL.revokeObjectURL(a.href);
}

function wireControls(): void {
  $("connect").addEventListener("click", connect);
  $("start").addEventListener("click", () => send(startCommand()));
  $("abort").addEventListener("click", () => send(abortCommand()));
  const slider = $("force-slider") as HTMLInputElement;
  const numeric = $("force-value") as HTMLInputElement;
  const pushForce = (value: number) => {
    for (const cmd of limiter.push(value, performance.now())) send(cmd);
  };
  slider.addEventListener("input", () => {
    numeric.value = slider.value;
    pushForce(parseFloat(slider.value));
  });
  numeric.addEventListener("change", () => {
    slider.value = numeric.value;
    pushForce(parseFloat(numeric.value));
  });
  setInterval(() => {
    for (const cmd of limiter.flush(performance.now())) send(cmd);
  }, 60);
  $("download").addEventListener("click", downloadCsv);
}

wireControls();
requestAnimationFrame(render);
