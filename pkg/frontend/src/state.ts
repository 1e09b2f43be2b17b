// Pure review-session state machine. Every transition returns a fresh state
// (history keeps the previous one for exact undo); nothing here touches the
// DOM or the disk, so the whole flow is testable without a browser.

import {
  Correction,
  CorrectionsFile,
  ReviewManifest,
  validateManifest,
} from "./schema.js";

export type Decision =
  | { kind: "confirmed" }
  | { kind: "remapped"; birdId: number }
  | { kind: "lost" }
  | { kind: "spurious" };

export type DecisionKey = string; // `${boundary_frame}:${next_track_id}`

export function decisionKey(boundaryFrame: number, nextTrackId: number): DecisionKey {
  return `${boundaryFrame}:${nextTrackId}`;
}

export interface ReviewState {
  readonly manifest: ReviewManifest;
  readonly decisions: ReadonlyMap<DecisionKey, Decision>;
  readonly history: readonly ReadonlyMap<DecisionKey, Decision>[];
  readonly dirty: boolean;
}

export class ConflictError extends Error {}

export function loadBundle(manifestJson: unknown): ReviewState {
  const manifest = validateManifest(manifestJson);
  // boundaries by frame; flagged proposals surface first within a boundary
  const boundaries = [...manifest.boundaries]
    .sort((a, b) => a.boundary_frame - b.boundary_frame)
    .map((b) => ({
      ...b,
      proposals: [...b.proposals].sort((p, q) => {
        if (p.flag !== q.flag) {
          return p.flag ? -1 : 1;
        }
        return p.next_track_id - q.next_track_id;
      }),
    }));
  return {
    manifest: { ...manifest, boundaries },
    decisions: new Map(),
    history: [],
    dirty: false,
  };
}

/** Identity an explicit decision assigns, or null (lost/spurious take the
 * track out; undecided proposals hold no assignment yet, so swaps can be
 * entered one leg at a time). */
function assignedId(decision: Decision, nextTrackId: number): number | null {
  if (decision.kind === "confirmed") {
    return nextTrackId;
  }
  if (decision.kind === "remapped") {
    return decision.birdId;
  }
  return null;
}

export function decide(
  state: ReviewState,
  boundaryFrame: number,
  nextTrackId: number,
  decision: Decision,
): ReviewState {
  const boundary = state.manifest.boundaries.find((b) => b.boundary_frame === boundaryFrame);
  if (boundary === undefined) {
    throw new ConflictError(`no boundary at frame ${boundaryFrame}`);
  }
  if (!boundary.proposals.some((p) => p.next_track_id === nextTrackId)) {
    throw new ConflictError(`no proposal for track ${nextTrackId} at boundary ${boundaryFrame}`);
  }
  const target = assignedId(decision, nextTrackId);
  if (target !== null) {
    for (const p of boundary.proposals) {
      if (p.next_track_id === nextTrackId) {
        continue;
      }
      const other = state.decisions.get(decisionKey(boundaryFrame, p.next_track_id));
      if (other !== undefined && assignedId(other, p.next_track_id) === target) {
        throw new ConflictError(
          `bird ${target} is already taken by track ${p.next_track_id} ` +
            `at boundary ${boundaryFrame}`,
        );
      }
    }
  }
  const decisions = new Map(state.decisions);
  decisions.set(decisionKey(boundaryFrame, nextTrackId), decision);
  return {
    manifest: state.manifest,
    decisions,
    history: [...state.history, state.decisions],
    dirty: true,
  };
}

export function undo(state: ReviewState): ReviewState {
  if (state.history.length === 0) {
    return state;
  }
  const history = state.history.slice(0, -1);
  const decisions = state.history[state.history.length - 1]!;
  return { manifest: state.manifest, decisions, history, dirty: history.length > 0 };
}

/** Flagged proposals that still need a decision; these block export. */
export function blockers(state: ReviewState): { boundaryFrame: number; nextTrackId: number }[] {
  const out: { boundaryFrame: number; nextTrackId: number }[] = [];
  for (const b of state.manifest.boundaries) {
    for (const p of b.proposals) {
      if (p.flag && !state.decisions.has(decisionKey(b.boundary_frame, p.next_track_id))) {
        out.push({ boundaryFrame: b.boundary_frame, nextTrackId: p.next_track_id });
      }
    }
  }
  return out;
}

export class ExportBlockedError extends Error {
  readonly undecided: { boundaryFrame: number; nextTrackId: number }[];

  constructor(undecided: { boundaryFrame: number; nextTrackId: number }[]) {
    const first = undecided[0]!;
    super(
      `${undecided.length} flagged proposal(s) undecided; ` +
        `first: track ${first.nextTrackId} at boundary ${first.boundaryFrame}`,
    );
    this.undecided = undecided;
  }
}

/** Corrections in exactly the CLI's schema. Confirmed (and undecided
 * unflagged) proposals emit no edit; boundaries always appear so a no-edit
 * review round-trips as all-confirmed. */
export function exportCorrections(state: ReviewState): CorrectionsFile {
  const blocked = blockers(state);
  if (blocked.length > 0) {
    throw new ExportBlockedError(blocked);
  }
  const corrections: Correction[] = state.manifest.boundaries.map((b) => {
    const edits = [];
    const anomalies = [];
    for (const p of [...b.proposals].sort((x, y) => x.next_track_id - y.next_track_id)) {
      const d = state.decisions.get(decisionKey(b.boundary_frame, p.next_track_id));
      if (d === undefined || d.kind === "confirmed") {
        continue;
      }
      if (d.kind === "remapped") {
        edits.push({ track_id: p.next_track_id, bird_id: d.birdId });
      } else {
        anomalies.push({ track_id: p.next_track_id, kind: d.kind });
      }
    }
    return { boundary_frame: b.boundary_frame, edits, anomalies };
  });
  return { video_id: state.manifest.video_id, corrections };
}

/** Rebuild the decision map a corrections file encodes (export's inverse for
 * fully decided sessions). */
export function importCorrections(
  state: ReviewState,
  file: CorrectionsFile,
): Map<DecisionKey, Decision> {
  const out = new Map<DecisionKey, Decision>();
  for (const b of state.manifest.boundaries) {
    const c = file.corrections.find((c) => c.boundary_frame === b.boundary_frame);
    for (const p of b.proposals) {
      const edit = c?.edits.find((e) => e.track_id === p.next_track_id);
      const anomaly = c?.anomalies.find((a) => a.track_id === p.next_track_id);
      if (edit !== undefined) {
        out.set(decisionKey(b.boundary_frame, p.next_track_id), {
          kind: "remapped",
          birdId: edit.bird_id,
        });
      } else if (anomaly !== undefined && anomaly.kind !== "merged") {
        out.set(decisionKey(b.boundary_frame, p.next_track_id), { kind: anomaly.kind });
      } else {
        out.set(decisionKey(b.boundary_frame, p.next_track_id), { kind: "confirmed" });
      }
    }
  }
  return out;
}
