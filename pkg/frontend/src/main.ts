import { chartGeometry } from "./chart.js";
import { MonitorClient } from "./client.js";
import { initialView, reduce, type RunView, type ViewAction } from "./state.js";

const SVG_NS = "http://www.w3.org/2000/svg";

function monitorBaseUrl(): string {
  const param = new URLSearchParams(window.location.search).get("monitor");
  return (param ?? window.location.origin).replace(/\/$/, "");
}

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

function renderChart(svg: SVGSVGElement, view: RunView): void {
  const geometry = chartGeometry(view.events, 640, 320);
  svg.replaceChildren();
  svg.setAttribute("viewBox", `0 0 ${geometry.width} ${geometry.height}`);

  for (const tick of geometry.yTicks) {
    const line = document.createElementNS(SVG_NS, "line");
    line.setAttribute("x1", "46");
    line.setAttribute("x2", String(geometry.width - 12));
    line.setAttribute("y1", tick.y.toFixed(1));
    line.setAttribute("y2", tick.y.toFixed(1));
    line.setAttribute("class", "grid");
    svg.appendChild(line);
    const label = document.createElementNS(SVG_NS, "text");
    label.setAttribute("x", "4");
    label.setAttribute("y", (tick.y + 4).toFixed(1));
    label.setAttribute("class", "tick");
    label.textContent = tick.label;
    svg.appendChild(label);
  }
  for (const tick of geometry.xTicks) {
    const label = document.createElementNS(SVG_NS, "text");
    label.setAttribute("x", tick.x.toFixed(1));
    label.setAttribute("y", String(geometry.height - 6));
    label.setAttribute("class", "tick");
    label.setAttribute("text-anchor", "middle");
    label.textContent = tick.label;
    svg.appendChild(label);
  }

  const series: Array<[string, string, { x: number; y: number }[]]> = [
    [geometry.trainPath, "train", geometry.train],
    [geometry.validationPath, "validation", geometry.validation],
  ];
  for (const [d, cls, points] of series) {
    if (points.length > 1) {
      const path = document.createElementNS(SVG_NS, "path");
      path.setAttribute("d", d);
      path.setAttribute("class", `series ${cls}`);
      svg.appendChild(path);
    }
    for (const point of points) {
      const dot = document.createElementNS(SVG_NS, "circle");
      dot.setAttribute("cx", point.x.toFixed(1));
      dot.setAttribute("cy", point.y.toFixed(1));
      dot.setAttribute("r", "3");
      dot.setAttribute("class", `dot ${cls}`);
      svg.appendChild(dot);
    }
  }
}

function render(view: RunView): void {
  el<HTMLSpanElement>("run-id").textContent = view.runId ?? "—";
  const connection = el<HTMLSpanElement>("connection");
  connection.textContent = view.connection;
  connection.className = `badge ${view.connection}`;

  const pending = el<HTMLSpanElement>("pending");
  pending.textContent = view.pendingCommand ? `pending: ${view.pendingCommand}` : "";
  pending.hidden = view.pendingCommand === null;

  const notice = el<HTMLSpanElement>("notice");
  notice.textContent = view.notice ?? "";
  notice.hidden = view.notice === null;

  const latest = view.events[view.events.length - 1];
  el<HTMLSpanElement>("latest").textContent = latest
    ? `epoch ${latest.epoch}: train ${latest.train_loss.toFixed(4)}, ` +
      `validation ${latest.validation_loss.toFixed(4)}, ` +
      `accuracy ${(latest.validation_accuracy * 100).toFixed(1)}%`
    : "waiting for events";

  const done = view.connection === "completed";
  el<HTMLButtonElement>("early-stop").disabled = done;
  el<HTMLButtonElement>("reset-epoch").disabled = done;

  renderChart(document.getElementById("chart") as unknown as SVGSVGElement, view);
}

function start(): void {
  let view = initialView();
  const dispatch = (action: ViewAction): void => {
    view = reduce(view, action);
    render(view);
  };
  const client = new MonitorClient(monitorBaseUrl(), dispatch);
  el<HTMLButtonElement>("early-stop").addEventListener("click", () => {
    void client.sendControl("early_stop");
  });
  el<HTMLButtonElement>("reset-epoch").addEventListener("click", () => {
    void client.sendControl("reset_epoch");
  });
  render(view);
  void client.fetchStatus();
  void client.run();
}

start();
