/** Plain-text rendering of a TopologyView for a terminal. */

import { TopologyView } from "./state";

const COLUMNS = ["device", "kind", "alive", "enable", "alert", "polling", "outputs"];

function pad(text: string, width: number): string {
  return text.length >= width ? text : text + " ".repeat(width - text.length);
}

function flag(value: boolean, onWord: string, offWord: string): string {
  return value ? onWord : offWord;
}

function outputsCell(outputs: Record<string, boolean>): string {
  const addresses = Object.keys(outputs).sort();
  if (addresses.length === 0) {
    return "-";
  }
  return addresses.map((addr) => `${addr}:${outputs[addr] ? "ON" : "off"}`).join(" ");
}

export function renderView(view: TopologyView, tail = 10): string {
  const lines: string[] = [];
  const verdict =
    view.passed === null ? "" : view.passed ? "  checks: PASS" : "  checks: FAIL";
  const deadline = view.deadlineMs === null ? "-" : `${view.deadlineMs}ms`;
  lines.push(
    `t=${view.t_ms}ms  session=${view.sessionState}${verdict}  ` +
      `armed=${flag(view.armed, "yes", "no")}  deadline=${deadline}  ` +
      `detection_alerts=${view.detectionAlerts}  failed_keys=${view.failedKeyAttempts}`,
  );
  lines.push("");

  const rows: string[][] = [COLUMNS];
  for (const name of Object.keys(view.devices).sort()) {
    const dev = view.devices[name]!;
    rows.push([
      name,
      dev.kind,
      flag(dev.alive, "up", "DOWN"),
      flag(dev.enable, "yes", "no"),
      flag(dev.alert, "ALERT", "-"),
      flag(dev.polling, "yes", "no"),
      outputsCell(dev.outputs),
    ]);
  }
  const widths = COLUMNS.map((_, col) => Math.max(...rows.map((row) => row[col]!.length)));
  for (const row of rows) {
    lines.push(row.map((cell, col) => pad(cell, widths[col]!)).join("  ").trimEnd());
  }

  lines.push("");
  lines.push(
    "links: " +
      (view.links.length === 0
        ? "-"
        : view.links
            .map((link) => `${link.a}-${link.b} ${link.up ? "up" : "CUT"}`)
            .join(" | ")),
  );

  const recent = view.activity.slice(-tail);
  if (recent.length > 0) {
    lines.push("");
    lines.push("recent:");
    for (const line of recent) {
      lines.push(`  [${line.t_ms}ms] ${line.device}: ${line.text}`);
    }
  }
  return lines.join("\n");
}
