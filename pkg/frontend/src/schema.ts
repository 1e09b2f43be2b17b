// Review-bundle manifest and corrections-file shapes, mirroring the CLI's
// formats exactly. Validation errors carry the offending field path so the
// UI can show a blocking screen naming it.

export interface Proposal {
  prev_track_id: number | null;
  next_track_id: number;
  iou: number;
  flag: boolean;
  crop_prev: string | null;
  crop_next: string | null;
  crop_missing: boolean;
}

export interface Boundary {
  boundary_frame: number;
  proposals: Proposal[];
}

export interface ReviewManifest {
  version: number;
  video_id: string;
  tau_match: number;
  boundaries: Boundary[];
}

export interface CorrectionEdit {
  track_id: number;
  bird_id: number;
}

export type AnomalyKind = "lost" | "merged" | "spurious";

export interface CorrectionAnomaly {
  track_id: number;
  kind: AnomalyKind;
}

export interface Correction {
  boundary_frame: number;
  edits: CorrectionEdit[];
  anomalies: CorrectionAnomaly[];
}

export interface CorrectionsFile {
  video_id: string;
  corrections: Correction[];
}

export class SchemaError extends Error {
  readonly field: string;

  constructor(field: string, message: string) {
    super(`${field}: ${message}`);
    this.field = field;
  }
}

function isRecord(v: unknown): v is Record<string, unknown> {
  return typeof v === "object" && v !== null && !Array.isArray(v);
}

function need(obj: Record<string, unknown>, key: string, path: string): unknown {
  if (!(key in obj)) {
    throw new SchemaError(`${path}.${key}`, "missing required field");
  }
  return obj[key];
}

function asNumber(v: unknown, path: string): number {
  if (typeof v !== "number" || !Number.isFinite(v)) {
    throw new SchemaError(path, "expected a finite number");
  }
  return v;
}

function asInt(v: unknown, path: string): number {
  const n = asNumber(v, path);
  if (!Number.isInteger(n)) {
    throw new SchemaError(path, "expected an integer");
  }
  return n;
}

function asString(v: unknown, path: string): string {
  if (typeof v !== "string") {
    throw new SchemaError(path, "expected a string");
  }
  return v;
}

function asBool(v: unknown, path: string): boolean {
  if (typeof v !== "boolean") {
    throw new SchemaError(path, "expected a boolean");
  }
  return v;
}

function asArray(v: unknown, path: string): unknown[] {
  if (!Array.isArray(v)) {
    throw new SchemaError(path, "expected an array");
  }
  return v;
}

function nullableString(v: unknown, path: string): string | null {
  return v === null ? null : asString(v, path);
}

function parseProposal(v: unknown, path: string): Proposal {
  if (!isRecord(v)) {
    throw new SchemaError(path, "expected an object");
  }
  const prevRaw = need(v, "prev_track_id", path);
  return {
    prev_track_id: prevRaw === null ? null : asInt(prevRaw, `${path}.prev_track_id`),
    next_track_id: asInt(need(v, "next_track_id", path), `${path}.next_track_id`),
    iou: asNumber(need(v, "iou", path), `${path}.iou`),
    flag: asBool(need(v, "flag", path), `${path}.flag`),
    crop_prev: nullableString(need(v, "crop_prev", path), `${path}.crop_prev`),
    crop_next: nullableString(need(v, "crop_next", path), `${path}.crop_next`),
    crop_missing: asBool(need(v, "crop_missing", path), `${path}.crop_missing`),
  };
}

export function validateManifest(value: unknown): ReviewManifest {
  const path = "manifest";
  if (!isRecord(value)) {
    throw new SchemaError(path, "expected an object");
  }
  const version = asInt(need(value, "version", path), `${path}.version`);
  if (version !== 1) {
    throw new SchemaError(`${path}.version`, `unsupported version ${version}`);
  }
  const boundaries = asArray(need(value, "boundaries", path), `${path}.boundaries`).map(
    (b, i) => {
      const bp = `${path}.boundaries[${i}]`;
      if (!isRecord(b)) {
        throw new SchemaError(bp, "expected an object");
      }
      const proposals = asArray(need(b, "proposals", bp), `${bp}.proposals`).map((p, j) =>
        parseProposal(p, `${bp}.proposals[${j}]`),
      );
      const seen = new Set<number>();
      for (const p of proposals) {
        if (seen.has(p.next_track_id)) {
          throw new SchemaError(`${bp}.proposals`, `duplicate next_track_id ${p.next_track_id}`);
        }
        seen.add(p.next_track_id);
      }
      return {
        boundary_frame: asInt(need(b, "boundary_frame", bp), `${bp}.boundary_frame`),
        proposals,
      };
    },
  );
  return {
    version,
    video_id: asString(need(value, "video_id", path), `${path}.video_id`),
    tau_match: asNumber(need(value, "tau_match", path), `${path}.tau_match`),
    boundaries,
  };
}

export function validateCorrections(value: unknown): CorrectionsFile {
  const path = "corrections";
  if (!isRecord(value)) {
    throw new SchemaError(path, "expected an object");
  }
  const corrections = asArray(need(value, "corrections", path), `${path}.corrections`).map(
    (c, i) => {
      const cp = `${path}.corrections[${i}]`;
      if (!isRecord(c)) {
        throw new SchemaError(cp, "expected an object");
      }
      const edits = asArray(need(c, "edits", cp), `${cp}.edits`).map((e, j) => {
        const ep = `${cp}.edits[${j}]`;
        if (!isRecord(e)) {
          throw new SchemaError(ep, "expected an object");
        }
        return {
          track_id: asInt(need(e, "track_id", ep), `${ep}.track_id`),
          bird_id: asInt(need(e, "bird_id", ep), `${ep}.bird_id`),
        };
      });
      const anomalies = asArray(need(c, "anomalies", cp), `${cp}.anomalies`).map(
        (a, j): CorrectionAnomaly => {
          const ap = `${cp}.anomalies[${j}]`;
          if (!isRecord(a)) {
            throw new SchemaError(ap, "expected an object");
          }
          const kindRaw = asString(need(a, "kind", ap), `${ap}.kind`);
          if (kindRaw !== "lost" && kindRaw !== "merged" && kindRaw !== "spurious") {
            throw new SchemaError(`${ap}.kind`, `unknown anomaly kind ${kindRaw}`);
          }
          return { track_id: asInt(need(a, "track_id", ap), `${ap}.track_id`), kind: kindRaw };
        },
      );
      return {
        boundary_frame: asInt(need(c, "boundary_frame", cp), `${cp}.boundary_frame`),
        edits,
        anomalies,
      };
    },
  );
  return { video_id: asString(need(value, "video_id", path), `${path}.video_id`), corrections };
}
