/** Vanilla-DOM rating form.
 *
 * Per clip, top to bottom: the player with an always-enabled replay
 * button, the transcription box (shown *before* any reference text so
 * the written content cannot prime what the rater hears), the
 * dog-likeness and sound-quality scales, and finally the clarity scale,
 * which is the one place the written reference text is revealed.
 * Scores are discrete radio controls; submit stays disabled until all
 * three scales are scored; audio failures show a retry affordance and
 * never skip a clip.
 */

import type { ListenApi } from "./api";
import { ANCHORS, PROMPTS, SCALES, SCORES, type Scale } from "./prompts";
import type { SessionController } from "./session";

export interface UiHooks {
  /** Replaces HTMLMediaElement playback; tests inject a spy, the
   * browser default restarts and plays the element. */
  playClip?: (audio: HTMLAudioElement) => void;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function defaultPlay(audio: HTMLAudioElement): void {
  audio.currentTime = 0;
  void audio.play()?.catch(() => {
    /* playback rejection surfaces through the error handler below */
  });
}

function renderScale(
  form: HTMLElement,
  controller: SessionController,
  token: string,
  scale: Scale,
  onChange: () => void,
): void {
  const section = el("fieldset", `scale scale-${scale}`);
  const legend = el("legend", "prompt", PROMPTS[scale]);
  section.appendChild(legend);
  const [low, high] = ANCHORS[scale];
  const row = el("div", "scores");
  const draft = controller.draft(token);
  for (const score of SCORES) {
    const label = el("label", "score");
    const input = el("input");
    input.type = "radio";
    input.name = `${token}:${scale}`;
    input.value = String(score);
    input.checked = draft.scores[scale] === score;
    input.addEventListener("change", () => {
      controller.setScore(token, scale, score);
      onChange();
    });
    label.appendChild(input);
    const anchor = score === 1 ? ` — ${low}` : score === 5 ? ` — ${high}` : "";
    label.appendChild(el("span", "score-label", `${score}${anchor}`));
    row.appendChild(label);
  }
  section.appendChild(row);
  form.appendChild(section);
}

export function renderRatingForm(
  container: HTMLElement,
  controller: SessionController,
  api: ListenApi,
  hooks: UiHooks = {},
): void {
  container.replaceChildren();
  const item = controller.current;
  if (item === null) {
    const doneScreen = el("div", "completion");
    doneScreen.appendChild(el("h2", undefined, "Session complete"));
    doneScreen.appendChild(
      el("p", undefined, "Thank you — every clip has been rated."),
    );
    container.appendChild(doneScreen);
    return;
  }
  const { token } = item;
  const play = hooks.playClip ?? defaultPlay;

  const form = el("div", "rating-form");
  const { done, total } = controller.progress();
  form.appendChild(el("h2", "progress", `Clip ${done + 1} of ${total}`));

  // -- player -------------------------------------------------------------
  const playerSection = el("div", "player");
  const audio = el("audio");
  audio.src = api.clipUrl(token);
  audio.preload = "auto";
  const replay = el("button", "replay", "Replay");
  replay.type = "button";
  replay.addEventListener("click", () => play(audio));
  const audioError = el("div", "audio-error");
  audioError.hidden = true;
  const retry = el("button", "retry", "Retry loading audio");
  retry.type = "button";
  retry.addEventListener("click", () => {
    audioError.hidden = true;
    audio.src = api.clipUrl(token);
    audio.load();
  });
  audio.addEventListener("error", () => {
    audioError.hidden = false;
  });
  audioError.appendChild(
    el("span", undefined, "The clip failed to load. "),
  );
  audioError.appendChild(retry);
  playerSection.append(audio, replay, audioError);
  form.appendChild(playerSection);

  // -- transcription first: no reference text visible yet ------------------
  const transcription = el("fieldset", "transcription");
  transcription.appendChild(
    el("legend", "prompt", "First, type the utterance exactly as you hear it."),
  );
  const textarea = el("textarea");
  textarea.rows = 2;
  textarea.value = controller.draft(token).transcript;
  textarea.addEventListener("input", () => {
    controller.setTranscript(token, textarea.value);
  });
  transcription.appendChild(textarea);
  form.appendChild(transcription);

  // -- the three scales; clarity last, with the reference text revealed ----
  const submit = el("button", "submit", "Submit ratings and continue");
  submit.type = "button";
  const errorBox = el("div", "submit-error");
  errorBox.hidden = true;
  const syncSubmit = () => {
    submit.disabled = !controller.canSubmit(token);
  };
  for (const scale of SCALES) {
    if (scale === "clarity") {
      const reveal = el("div", "reference-text");
      reveal.appendChild(el("strong", undefined, "Written text: "));
      reveal.appendChild(el("span", undefined, item.reference_text));
      form.appendChild(reveal);
    }
    renderScale(form, controller, token, scale, syncSubmit);
  }

  submit.addEventListener("click", () => {
    submit.disabled = true;
    void controller
      .submitAndAdvance()
      .then(() => {
        renderRatingForm(container, controller, api, hooks);
      })
      .catch((err: unknown) => {
        errorBox.hidden = false;
        errorBox.textContent =
          `Submission failed — your answers are kept: ` +
          (err instanceof Error ? err.message : String(err));
        syncSubmit();
      });
  });
  syncSubmit();
  form.append(submit, errorBox);
  container.appendChild(form);
}
