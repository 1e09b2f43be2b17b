// Keyboard-first review surface. All review logic lives in state.ts; this
// file only renders state and forwards key/click events. The page never
// writes the bundle: the one output is the downloaded corrections.json.

import {
  ConflictError,
  Decision,
  ExportBlockedError,
  ReviewState,
  blockers,
  decide,
  decisionKey,
  exportCorrections,
  loadBundle,
  undo,
} from "./state.js";

interface Cursor {
  boundary: number; // index into manifest.boundaries
  row: number;      // index into that boundary's proposals
}

let state: ReviewState | null = null;
let cursor: Cursor = { boundary: 0, row: 0 };
let message = "";

const root = () => document.getElementById("app")!;

function esc(s: string): string {
  return s.replace(/[&<>"]/g, (c) => ({ "&": "&amp;", "<": "&lt;", ">": "&gt;", '"': "&quot;" }[c]!));
}

function fatal(text: string): void {
  root().innerHTML = `<div class="fatal"><h1>Cannot load bundle</h1><pre>${esc(text)}</pre></div>`;
}

function crop(path: string | null): string {
  if (path === null) {
    return `<div class="crop placeholder">no crop</div>`;
  }
  return `<img class="crop" src="${esc(path)}" alt="">`;
}

function decisionBadge(d: Decision | undefined): string {
  if (d === undefined) {
    return `<span class="badge undecided">undecided</span>`;
  }
  switch (d.kind) {
    case "confirmed":
      return `<span class="badge ok">confirmed</span>`;
    case "remapped":
      return `<span class="badge remap">&rarr; bird ${d.birdId}</span>`;
    case "lost":
      return `<span class="badge warn">lost</span>`;
    case "spurious":
      return `<span class="badge warn">spurious</span>`;
  }
}

function render(): void {
  if (state === null) {
    return;
  }
  const m = state.manifest;
  const blocked = blockers(state);
  const parts: string[] = [];
  parts.push(`<header>
    <h1>${esc(m.video_id)}</h1>
    <div class="stats">${m.boundaries.length} boundaries ·
      ${blocked.length} flagged undecided ·
      <kbd>c</kbd> confirm <kbd>r</kbd> remap <kbd>l</kbd> lost <kbd>s</kbd> spurious
      <kbd>j</kbd>/<kbd>k</kbd> move <kbd>u</kbd> undo <kbd>e</kbd> export</div>
    ${message ? `<div class="message">${esc(message)}</div>` : ""}
  </header>`);
  m.boundaries.forEach((b, bi) => {
    parts.push(`<section class="boundary"><h2>boundary @ frame ${b.boundary_frame}</h2>`);
    b.proposals.forEach((p, ri) => {
      const selected = bi === cursor.boundary && ri === cursor.row;
      const d = state!.decisions.get(decisionKey(b.boundary_frame, p.next_track_id));
      parts.push(`<div class="row ${selected ? "selected" : ""} ${p.flag ? "flagged" : ""}"
        data-b="${bi}" data-r="${ri}">
        ${crop(p.crop_prev)}
        <span class="arrow">${p.prev_track_id === null ? "?" : "track " + p.prev_track_id} &rarr;
          track ${p.next_track_id}</span>
        ${crop(p.crop_next)}
        <span class="iou">IoU ${p.iou.toFixed(3)}</span>
        ${p.flag ? `<span class="badge flag">flag</span>` : ""}
        ${decisionBadge(d)}
      </div>`);
    });
    parts.push("</section>");
  });
  root().innerHTML = parts.join("");
  document.querySelectorAll<HTMLElement>(".row").forEach((el) => {
    el.addEventListener("click", () => {
      cursor = { boundary: Number(el.dataset.b), row: Number(el.dataset.r) };
      message = "";
      render();
    });
  });
  document.querySelector(".row.selected")?.scrollIntoView({ block: "nearest" });
}

function current(): { boundaryFrame: number; nextTrackId: number } | null {
  if (state === null) {
    return null;
  }
  const b = state.manifest.boundaries[cursor.boundary];
  const p = b?.proposals[cursor.row];
  if (b === undefined || p === undefined) {
    return null;
  }
  return { boundaryFrame: b.boundary_frame, nextTrackId: p.next_track_id };
}

function move(delta: number): void {
  if (state === null) {
    return;
  }
  const bs = state.manifest.boundaries;
  let { boundary, row } = cursor;
  row += delta;
  while (row < 0 && boundary > 0) {
    boundary -= 1;
    row += bs[boundary]!.proposals.length;
  }
  while (boundary < bs.length && row >= bs[boundary]!.proposals.length) {
    row -= bs[boundary]!.proposals.length;
    boundary += 1;
  }
  if (boundary >= 0 && boundary < bs.length && row >= 0) {
    cursor = { boundary, row };
  }
  render();
}

function applyDecision(d: Decision): void {
  const cur = current();
  if (state === null || cur === null) {
    return;
  }
  try {
    state = decide(state, cur.boundaryFrame, cur.nextTrackId, d);
    message = "";
    move(1);
  } catch (err) {
    if (err instanceof ConflictError) {
      message = err.message;
      render();
    } else {
      throw err;
    }
  }
}

function download(): void {
  if (state === null) {
    return;
  }
  try {
    const file = exportCorrections(state);
    const blob = new Blob([JSON.stringify(file, null, 2) + "\n"], { type: "application/json" });
    const a = document.createElement("a");
    a.href = URL.createObjectURL(blob);
    a.download = "corrections.json";
    a.click();
    URL.revokeObjectURL(a.href);
    message = "corrections.json downloaded";
  } catch (err) {
    if (err instanceof ExportBlockedError) {
      const first = err.undecided[0]!;
      const bi = state.manifest.boundaries.findIndex(
        (b) => b.boundary_frame === first.boundaryFrame,
      );
      const ri = state.manifest.boundaries[bi]!.proposals.findIndex(
        (p) => p.next_track_id === first.nextTrackId,
      );
      cursor = { boundary: bi, row: ri }; // jump to the first blocker
      message = err.message;
    } else {
      throw err;
    }
  }
  render();
}

function onKey(ev: KeyboardEvent): void {
  if (state === null || ev.ctrlKey || ev.metaKey || ev.altKey) {
    return;
  }
  switch (ev.key) {
    case "j":
    case "ArrowDown":
      move(1);
      break;
    case "k":
    case "ArrowUp":
      move(-1);
      break;
    case "c":
      applyDecision({ kind: "confirmed" });
      break;
    case "l":
      applyDecision({ kind: "lost" });
      break;
    case "s":
      applyDecision({ kind: "spurious" });
      break;
    case "r": {
      const cur = current();
      if (cur === null) {
        break;
      }
      const raw = window.prompt(`remap track ${cur.nextTrackId} to bird id:`);
      if (raw === null) {
        break;
      }
      const birdId = Number(raw);
      if (!Number.isInteger(birdId)) {
        message = `not a bird id: ${raw}`;
        render();
        break;
      }
      applyDecision({ kind: "remapped", birdId });
      break;
    }
    case "u":
      state = undo(state);
      message = "";
      render();
      break;
    case "e":
      download();
      break;
    default:
      return;
  }
  ev.preventDefault();
}

async function boot(): Promise<void> {
  try {
    const resp = await fetch("manifest.json");
    if (!resp.ok) {
      throw new Error(`manifest.json: HTTP ${resp.status} (serve this page from the review/ directory)`);
    }
    state = loadBundle(await resp.json());
  } catch (err) {
    fatal(String(err instanceof Error ? err.message : err));
    return;
  }
  document.addEventListener("keydown", onKey);
  render();
}

boot();
