// Cross-component round trip: load a CLI-exported review bundle, apply the
// scripted swap the fixture's id switch calls for, export corrections, feed
// them back through the CLI, and check the corrected ids against an
// independent map-composition oracle.
import { execFileSync } from "node:child_process";
import { existsSync, mkdtempSync, readFileSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { beforeAll, describe, expect, it } from "vitest";

import { validateCorrections } from "../src/schema.js";
import { decide, exportCorrections, loadBundle, ReviewState } from "../src/state.js";

const PYTHON = process.env.PYTHON ?? "python3";
const BOUNDARY = 1500;

let dir: string;

function py(args: string[]): string {
  return execFileSync(PYTHON, args, { encoding: "utf8" });
}

interface TrackRow {
  frame: number;
  trackId: number;
  bbox: string;
}

function readTracks(path: string): TrackRow[] {
  return readFileSync(path, "utf8")
    .trim()
    .split("\n")
    .map((line) => {
      const f = line.split("\t");
      return { frame: Number(f[1]), trackId: Number(f[2]), bbox: f[3]! };
    });
}

beforeAll(() => {
  dir = mkdtempSync(join(tmpdir(), "review-roundtrip-"));
  py([join(__dirname, "make_fixture.py"), dir]);
}, 120_000);

describe("CLI bundle round trip", () => {
  it("loads the CLI-exported bundle without warnings", () => {
    const manifest = JSON.parse(readFileSync(join(dir, "review", "manifest.json"), "utf8"));
    const state = loadBundle(manifest);
    expect(state.manifest.video_id).toBe("fixva");
    expect(state.manifest.boundaries.map((b) => b.boundary_frame)).toEqual([BOUNDARY]);
    // the id switch shows up as crossed proposals with high IoU
    const pairs = state.manifest.boundaries[0]!.proposals.map(
      (p) => [p.prev_track_id, p.next_track_id] as const,
    );
    expect(pairs).toContainEqual([1, 2]);
    expect(pairs).toContainEqual([2, 1]);
  });

  it("scripted swap export is accepted by apply-corrections and matches the oracle", () => {
    const manifest = JSON.parse(readFileSync(join(dir, "review", "manifest.json"), "utf8"));
    let state: ReviewState = loadBundle(manifest);
    // the proposals say: next track 2 is previous track 1 and vice versa
    state = decide(state, BOUNDARY, 2, { kind: "remapped", birdId: 1 });
    state = decide(state, BOUNDARY, 1, { kind: "remapped", birdId: 2 });
    const corrections = exportCorrections(state);
    validateCorrections(corrections); // self-check against the shared schema
    const correctionsPath = join(dir, "corrections.json");
    writeFileSync(correctionsPath, JSON.stringify(corrections, null, 2) + "\n");

    py([
      "-m",
      "playclass.cli",
      "apply-corrections",
      "--tracks",
      join(dir, "tracks.tsv"),
      "--corrections",
      correctionsPath,
      "--plan",
      join(dir, "plan.json"),
      "--out",
      join(dir, "fixed.tsv"),
      "--out-dir",
      dir,
    ]);
    expect(existsSync(join(dir, "fixed.tsv"))).toBe(true);

    // map-composition oracle: per boundary, compose the partial edit maps
    const maps = corrections.corrections
      .sort((a, b) => a.boundary_frame - b.boundary_frame)
      .map((c) => ({
        frame: c.boundary_frame,
        edit: new Map(c.edits.map((e) => [e.track_id, e.bird_id])),
      }));
    const expectId = (raw: number, frame: number): number => {
      let id = raw;
      for (const m of maps) {
        if (frame >= m.frame) {
          id = m.edit.get(id) ?? id;
        }
      }
      return id;
    };

    const original = readTracks(join(dir, "tracks.tsv"));
    const fixed = readTracks(join(dir, "fixed.tsv"));
    const fixedByKey = new Map(fixed.map((r) => [`${r.frame}:${r.trackId}`, r.bbox]));
    expect(fixed.length).toBe(original.length);
    for (const row of original) {
      const want = expectId(row.trackId, row.frame);
      expect(fixedByKey.get(`${row.frame}:${want}`)).toBe(row.bbox);
    }

    // identity is now continuous across the boundary: same bird, same path
    const at = (frame: number, id: number) =>
      fixed.find((r) => r.frame === frame && r.trackId === id)!.bbox;
    const xOf = (bbox: string) => Number(bbox.split(" ")[0]);
    expect(Math.abs(xOf(at(BOUNDARY, 1)) - xOf(at(BOUNDARY - 1, 1)))).toBeLessThanOrEqual(2);
    expect(Math.abs(xOf(at(BOUNDARY, 2)) - xOf(at(BOUNDARY - 1, 2)))).toBeLessThanOrEqual(2);
  });
});
