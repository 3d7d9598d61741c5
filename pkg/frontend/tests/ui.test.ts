// @vitest-environment jsdom
import { beforeEach, describe, expect, it, vi } from "vitest";

import { ANCHORS, PROMPTS, SCALES } from "../src/prompts";
import { SessionController } from "../src/session";
import { renderRatingForm } from "../src/ui";
import { FakeApi, MemoryStore } from "./fakes";

let api: FakeApi;
let controller: SessionController;
let root: HTMLElement;

beforeEach(async () => {
  api = new FakeApi();
  controller = await SessionController.begin(api, new MemoryStore(), {
    raterId: "r1",
    experiment: "fake_study",
  });
  root = document.createElement("div");
  document.body.replaceChildren(root);
});

function render() {
  renderRatingForm(root, controller, api, { playClip: vi.fn() });
}

function pickScore(scale: string, score: number) {
  const input = root.querySelector<HTMLInputElement>(
    `input[name$=":${scale}"][value="${score}"]`,
  );
  if (!input) throw new Error(`no radio for ${scale}=${score}`);
  input.checked = true;
  input.dispatchEvent(new Event("change"));
}

const submitButton = () =>
  root.querySelector<HTMLButtonElement>("button.submit")!;

async function settled() {
  // drain the microtask queue through the submit chain's awaits
  for (let i = 0; i < 25; i++) await Promise.resolve();
}

describe("form layout", () => {
  it("shows the questions and anchor texts verbatim as radio scales", () => {
    render();
    const text = root.textContent ?? "";
    for (const scale of SCALES) {
      expect(text).toContain(PROMPTS[scale]);
      const [low, high] = ANCHORS[scale];
      expect(text).toContain(low);
      expect(text).toContain(high);
    }
    expect(root.querySelectorAll('input[type="radio"]')).toHaveLength(15);
    expect(root.querySelectorAll('input[type="range"]')).toHaveLength(0);
  });

  it("asks for the transcription before revealing any written text", () => {
    render();
    const order = Array.from(
      root.querySelectorAll("fieldset, .reference-text"),
    ).map((node) => node.className);
    expect(order).toEqual([
      "transcription",
      "scale scale-dog_likeness",
      "scale scale-sound_quality",
      "reference-text",
      "scale scale-clarity",
    ]);
    const reveal = root.querySelector(".reference-text");
    expect(reveal?.textContent).toContain("Woof woof!!");
    // the transcription section itself never shows the reference
    expect(
      root.querySelector(".transcription")?.textContent,
    ).not.toContain("Woof woof!!");
  });

  it("shows progress through the playlist", () => {
    render();
    expect(root.querySelector(".progress")?.textContent).toBe("Clip 1 of 4");
  });
});

describe("gating", () => {
  it("keeps submit disabled until every scale is scored", () => {
    render();
    expect(submitButton().disabled).toBe(true);
    pickScore("dog_likeness", 5);
    pickScore("sound_quality", 3);
    expect(submitButton().disabled).toBe(true);
    pickScore("clarity", 1);
    expect(submitButton().disabled).toBe(false);
  });

  it("restores a saved draft into the controls", () => {
    controller.setScore("tok-aaaa", "dog_likeness", 2);
    controller.setTranscript("tok-aaaa", "woof");
    render();
    const checked = root.querySelector<HTMLInputElement>(
      'input[name="tok-aaaa:dog_likeness"]:checked',
    );
    expect(checked?.value).toBe("2");
    expect(root.querySelector("textarea")?.value).toBe("woof");
  });
});

describe("playback", () => {
  it("replays without limit through the injected player", () => {
    const playClip = vi.fn();
    renderRatingForm(root, controller, api, { playClip });
    const replay = root.querySelector<HTMLButtonElement>("button.replay")!;
    expect(replay.disabled).toBe(false);
    for (let i = 0; i < 5; i++) replay.click();
    expect(playClip).toHaveBeenCalledTimes(5);
    expect(playClip.mock.calls[0]?.[0]).toBeInstanceOf(HTMLAudioElement);
  });

  it("offers a retry instead of skipping when audio fails to load", () => {
    render();
    const audio = root.querySelector("audio")!;
    const errorBox = root.querySelector<HTMLElement>(".audio-error")!;
    expect(errorBox.hidden).toBe(true);

    audio.dispatchEvent(new Event("error"));
    expect(errorBox.hidden).toBe(false);
    // still on the same clip; nothing advanced
    expect(root.querySelector(".progress")?.textContent).toBe("Clip 1 of 4");

    root.querySelector<HTMLButtonElement>("button.retry")!.click();
    expect(errorBox.hidden).toBe(true);
    expect(audio.src).toBe(api.clipUrl("tok-aaaa"));
  });
});

describe("submission flow", () => {
  function fillForm(transcript: string) {
    const textarea = root.querySelector("textarea")!;
    textarea.value = transcript;
    textarea.dispatchEvent(new Event("input"));
    pickScore("dog_likeness", 4);
    pickScore("sound_quality", 3);
    pickScore("clarity", 2);
  }

  it("walks the happy path to the completion screen", async () => {
    render();
    for (let clip = 1; clip <= 4; clip++) {
      expect(root.querySelector(".progress")?.textContent).toBe(
        `Clip ${clip} of 4`,
      );
      fillForm(`transcript ${clip}`);
      submitButton().click();
      await settled();
    }
    expect(root.querySelector(".completion")?.textContent).toContain(
      "Session complete",
    );
    expect(api.ratings).toHaveLength(12);
    expect(api.transcripts).toHaveLength(4);
  });

  it("stays on the clip and shows the error when the service rejects", async () => {
    render();
    fillForm("woof");
    api.failNext = { kind: "rating", status: 422 };
    submitButton().click();
    await settled();

    expect(root.querySelector(".progress")?.textContent).toBe("Clip 1 of 4");
    const errorBox = root.querySelector<HTMLElement>(".submit-error")!;
    expect(errorBox.hidden).toBe(false);
    expect(errorBox.textContent).toContain("your answers are kept");
    expect(submitButton().disabled).toBe(false);

    submitButton().click();
    await settled();
    expect(root.querySelector(".progress")?.textContent).toBe("Clip 2 of 4");
  });

  it("never sends anything beyond ids, scores, and text", async () => {
    render();
    fillForm("woof");
    submitButton().click();
    await settled();
    // the client cannot leak condition metadata: it never receives any
    for (const rating of api.ratings) {
      expect(Object.keys(rating).sort()).toEqual([
        "scale",
        "score",
        "sessionId",
        "token",
      ]);
    }
    for (const transcript of api.transcripts) {
      expect(Object.keys(transcript).sort()).toEqual([
        "sessionId",
        "text",
        "token",
      ]);
    }
  });
});
