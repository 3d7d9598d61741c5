/** The three opinion scales, their on-screen questions, and the 1/5 anchor
 * texts.  These strings must match the service's aggregation constants
 * character for character, so they are pinned by tests on both sides. */

export const SCALES = ["dog_likeness", "sound_quality", "clarity"] as const;

export type Scale = (typeof SCALES)[number];

export const PROMPTS: Record<Scale, string> = {
  dog_likeness: "How much of the dog-like element is included?",
  sound_quality: "How good is the sound quality?",
  clarity:
    "How intelligibly were you able to hear the spoken utterance " +
    "given a written text of the content of the spoken utterance?",
};

/** [anchor for score 1, anchor for score 5] */
export const ANCHORS: Record<Scale, [string, string]> = {
  dog_likeness: ["completely not dog-like", "completely dog-like"],
  sound_quality: ["completely low quality", "completely high quality"],
  clarity: ["complete vagueness", "complete intelligibility"],
};

export const SCORES = [1, 2, 3, 4, 5] as const;
