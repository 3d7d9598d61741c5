/** End-to-end acceptance against the real service over HTTP.
 *
 * A uvicorn child process serves a four-clip, two-condition experiment;
 * three scripted raters run complete sessions through the controller
 * (three ratings + one transcript per clip), and the de-blinded results
 * endpoint must equal hand-computed means exactly.  Every byte a rater
 * ever sees is scanned against the researcher-side metadata to verify
 * the blinding invariant.
 */

import { spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync, readFileSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { HttpListenApi } from "../src/api";
import { SessionController } from "../src/session";
import { MemoryStore } from "./fakes";

const PORT = 18650 + (process.pid % 1000);
const BASE = `http://127.0.0.1:${PORT}`;
const EXPERIMENT = "ui_study";

let child: ChildProcess;
let workDir: string;

/** Researcher-side knowledge, read from meta.json for the blinding scan. */
let hidden: {
  conditions: string[];
  clip_ids: string[];
  digests: string[];
  paths: string[];
};

/** Every rater-visible JSON payload (and URL) captured during sessions. */
const raterVisible: string[] = [];

const capturingFetch: typeof fetch = async (input, init) => {
  const res = await fetch(input, init);
  raterVisible.push(String(input));
  if (res.headers.get("content-type")?.includes("application/json")) {
    raterVisible.push(await res.clone().text());
  }
  return res;
};

beforeAll(async () => {
  workDir = mkdtempSync(join(tmpdir(), "listen-ui-"));
  child = spawn(
    "python3",
    [
      join(__dirname, "helpers", "serve_fixture.py"),
      "--port",
      String(PORT),
      "--dir",
      workDir,
    ],
    { stdio: ["ignore", "inherit", "inherit"] },
  );
  const deadline = Date.now() + 30_000;
  for (;;) {
    try {
      const res = await fetch(`${BASE}/experiments/${EXPERIMENT}/results`);
      if (res.ok) break;
    } catch {
      /* not up yet */
    }
    if (Date.now() > deadline) throw new Error("service did not start");
    await new Promise((resolve) => setTimeout(resolve, 200));
  }
  hidden = JSON.parse(readFileSync(join(workDir, "meta.json"), "utf-8"));
}, 45_000);

afterAll(async () => {
  child.kill("SIGTERM");
  await new Promise((resolve) => {
    child.once("exit", resolve);
    setTimeout(resolve, 3_000);
  });
  rmSync(workDir, { recursive: true, force: true });
});

/** Per-rater constant scores: every condition collects the same
 * multiset, so the expected means are trivial to compute by hand. */
const SCORE_PLAN: Record<
  string,
  { dog_likeness: number; sound_quality: number; clarity: number }
> = {
  rater_1: { dog_likeness: 5, sound_quality: 2, clarity: 1 },
  rater_2: { dog_likeness: 4, sound_quality: 2, clarity: 2 },
  rater_3: { dog_likeness: 3, sound_quality: 2, clarity: 3 },
};

/** Transcripts keyed by the visible reference text: an exact match
 * (error rate 0) and a one-substitution miss on an 8-letter reference
 * (error rate 1/8), both exactly representable. */
const TRANSCRIPTS: Record<string, string> = {
  "Woof woof!!": "woof woof",
  "Good boys.": "good bots",
};

async function runScriptedSession(raterId: string): Promise<void> {
  const api = new HttpListenApi(BASE, capturingFetch);
  const controller = await SessionController.begin(api, new MemoryStore(), {
    raterId,
    experiment: EXPERIMENT,
    seed: 5,
  });
  expect(controller.playlist).toHaveLength(4);
  const plan = SCORE_PLAN[raterId]!;
  while (!controller.done) {
    const item = controller.current!;
    const audio = await api.fetchClip(item.token);
    expect(new TextDecoder("latin1").decode(audio.slice(0, 4))).toBe("RIFF");
    controller.setScore(item.token, "dog_likeness", plan.dog_likeness);
    controller.setScore(item.token, "sound_quality", plan.sound_quality);
    controller.setScore(item.token, "clarity", plan.clarity);
    controller.setTranscript(
      item.token,
      TRANSCRIPTS[item.reference_text] ?? "",
    );
    await controller.submitAndAdvance();
  }
  await controller.refresh();
  expect(controller.progress()).toEqual({ done: 4, total: 4 });
}

describe("scripted three-rater study", () => {
  it(
    "yields results equal to hand-computed means exactly",
    async () => {
      for (const raterId of Object.keys(SCORE_PLAN)) {
        await runScriptedSession(raterId);
      }

      // researcher-side endpoint; not part of any rater's view
      const res = await fetch(`${BASE}/experiments/${EXPERIMENT}/results`);
      const results = (await res.json()) as {
        n_ratings: number;
        n_transcripts: number;
        mos: Record<string, Record<string, number[]>>;
        mos_summary: Record<
          string,
          Record<string, { mean: number; n: number }>
        >;
        cer: Record<string, [number, number]>;
      };

      expect(results.n_ratings).toBe(36);
      expect(results.n_transcripts).toBe(12);
      expect(Object.keys(results.mos_summary).sort()).toEqual(
        hidden.conditions,
      );

      // hand computation: 3 raters x 2 clips per condition
      //   dog_likeness (5,5,4,4,3,3) -> 24/6 = 4.0
      //   sound_quality all 2s      -> 2.0
      //   clarity (1,1,2,2,3,3)     -> 12/6 = 2.0
      for (const condition of hidden.conditions) {
        const summary = results.mos_summary[condition]!;
        expect(summary.dog_likeness).toMatchObject({ mean: 4.0, n: 6 });
        expect(summary.sound_quality).toMatchObject({ mean: 2.0, n: 6 });
        expect(summary.clarity).toMatchObject({ mean: 2.0, n: 6 });
        expect([...results.mos[condition]!.dog_likeness!].sort()).toEqual([
          3, 3, 4, 4, 5, 5,
        ]);
        // error rates: exact transcript (0) and one substitution in
        // eight reference characters (0.125), averaged over 3 raters
        expect(results.cer[condition]).toEqual([0.0, 0.125]);
      }
    },
    60_000,
  );

  it("never exposed condition metadata to any rater", () => {
    expect(raterVisible.length).toBeGreaterThan(50);
    const blob = raterVisible.join("\n").toLowerCase();
    const forbidden = [
      ...hidden.conditions,
      ...hidden.clip_ids,
      ...hidden.digests,
      ...hidden.paths,
      "condition",
      ".wav",
    ];
    for (const secret of forbidden) {
      expect(
        blob.includes(secret.toLowerCase()),
        `rater-visible payload leaked ${JSON.stringify(secret)}`,
      ).toBe(false);
    }
  });

  it("locks sessions against second tabs until takeover", async () => {
    const api = new HttpListenApi(BASE, capturingFetch);
    await expect(
      SessionController.begin(api, new MemoryStore(), {
        raterId: "rater_1",
        experiment: EXPERIMENT,
        seed: 5,
      }),
    ).rejects.toMatchObject({ status: 409 });
    const retaken = await SessionController.begin(api, new MemoryStore(), {
      raterId: "rater_1",
      experiment: EXPERIMENT,
      seed: 5,
      takeover: true,
    });
    expect(retaken.done).toBe(true); // everything was already rated
  });
});
