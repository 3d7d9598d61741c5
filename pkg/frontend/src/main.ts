/** Browser entry point: ask who is rating, start (or take over) the
 * session, and hand the page over to the rating form. */

import { ApiError, HttpListenApi } from "./api";
import { SessionController } from "./session";
import { renderRatingForm } from "./ui";

async function start(root: HTMLElement): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const raterId = params.get("rater") ?? "";
  const experiment = params.get("experiment") ?? "";
  const seed = Number(params.get("seed") ?? "0");
  if (!raterId || !experiment) {
    root.textContent =
      "Missing ?rater=...&experiment=... in the URL — ask the study " +
      "organizer for your personal link.";
    return;
  }
  const api = new HttpListenApi(params.get("service") ?? "");
  const store = window.localStorage;
  try {
    const controller = await SessionController.begin(api, store, {
      raterId,
      experiment,
      seed,
    }).catch(async (err: unknown) => {
      if (err instanceof ApiError && err.status === 409) {
        const steal = window.confirm(
          "This session is open in another tab. Continue here instead?",
        );
        if (steal) {
          return SessionController.begin(api, store, {
            raterId,
            experiment,
            seed,
            takeover: true,
          });
        }
      }
      throw err;
    });
    renderRatingForm(root, controller, api);
  } catch (err) {
    root.textContent = `Could not start the session: ${
      err instanceof Error ? err.message : String(err)
    }`;
  }
}

const root = document.getElementById("app");
if (root) void start(root);
