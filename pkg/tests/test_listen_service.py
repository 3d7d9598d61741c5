"""Listening-test service: append-only storage, blinded HTTP flow, and
de-blinded aggregation.

The scripted-session test walks three raters through a four-clip
experiment exactly as a browser client would and checks the aggregate
means against hand-computed values.
"""

import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from dogspeak.audio import Waveform, save_wav
from dogspeak.evaluate import MOS_SCALES
from dogspeak.listen.service import (AppState, build_app, build_playlist,
                                     load_experiment)
from dogspeak.listen.storage import RecordLog, record_key

from conftest import tone

# ---------------------------------------------------------------------------
# storage


def _log(tmp_path) -> RecordLog:
    return RecordLog(tmp_path / "records.jsonl")


def test_log_append_and_read_round_trip(tmp_path):
    log = _log(tmp_path)
    rec = {"type": "rating", "session_id": "s", "token": "t",
           "scale": "clarity", "score": 4}
    assert log.append(rec) == rec
    log.append({"type": "note", "text": "free-form"})
    assert log.records() == [rec, {"type": "note", "text": "free-form"}]


def test_log_ignores_torn_trailing_line(tmp_path):
    log = _log(tmp_path)
    log.append({"type": "session", "session_id": "a"})
    log.append({"type": "session", "session_id": "b"})
    with open(log.path, "a", encoding="utf-8") as fh:
        fh.write('{"type": "session", "session_id": "c", "trunc')
    records = log.records()
    assert [r["session_id"] for r in records] == ["a", "b"]
    # a fresh append after the crash is ignored too: it sits after the tear
    log.append({"type": "session", "session_id": "d"})
    assert [r["session_id"] for r in log.records()] == ["a", "b"]


def test_log_last_wins_and_audit_count(tmp_path):
    log = _log(tmp_path)
    key_fields = {"type": "rating", "session_id": "s", "token": "t",
                  "scale": "clarity"}
    log.append({**key_fields, "score": 2})
    log.append({**key_fields, "score": 5})
    key = record_key({**key_fields, "score": 0})
    assert log.audit_count(key) == 2
    assert log.effective()[key]["score"] == 5


def test_log_compact_keeps_effective_view(tmp_path):
    log = _log(tmp_path)
    key_fields = {"type": "rating", "session_id": "s", "token": "t",
                  "scale": "clarity"}
    log.append({**key_fields, "score": 1})
    log.append({"type": "note", "n": 1})          # no logical key: kept as-is
    log.append({**key_fields, "score": 3})
    before = log.effective()
    dropped = log.compact()
    assert dropped == 1
    assert log.effective() == before
    records = log.records()
    assert len(records) == 2
    assert {r.get("score") for r in records if r["type"] == "rating"} == {3}


def test_log_empty_file(tmp_path):
    log = _log(tmp_path)
    assert log.records() == []
    assert log.effective() == {}
    assert log.compact() == 0


# ---------------------------------------------------------------------------
# experiment loading and the blinded HTTP flow


CONDITIONS = ("cond_a", "cond_b")
REFERENCES = {
    "a0.wav": {"text": "Woof woof!!", "sound": 1},
    "a1.wav": {"text": "Good boys.", "sound": 2},
    "b0.wav": {"text": "Woof woof!!", "sound": 1},
    "b1.wav": {"text": "Good boys.", "sound": 2},
}


@pytest.fixture(scope="module")
def exp_dir(tmp_path_factory):
    """Four distinct clips across two conditions plus the published listing."""
    root = tmp_path_factory.mktemp("published")
    freqs = {"a0.wav": 220, "a1.wav": 330, "b0.wav": 440, "b1.wav": 550}
    rows = {"cond_a": ["a0.wav", "a1.wav"], "cond_b": ["b0.wav", "b1.wav"]}
    for name, freq in freqs.items():
        save_wav(root / name, tone(freq, duration=0.1))
    listing = {"experiment": "toy_study", "rows": rows,
               "references": REFERENCES}
    (root / "clips.json").write_text(json.dumps(listing))
    return root


def _build(tmp_path, exp_dir):
    exp = load_experiment(exp_dir / "clips.json")
    log = RecordLog(tmp_path / "records.jsonl")
    app = build_app(exp, log)
    return TestClient(app), log, exp


def _start(client, rater="r1", experiment="toy_study", seed=0, **kw):
    resp = client.post("/sessions", json={"rater_id": rater,
                                          "experiment": experiment,
                                          "seed": seed, **kw})
    return resp


def test_load_experiment_structure(exp_dir):
    exp = load_experiment(exp_dir / "clips.json")
    assert exp.experiment_id == "toy_study"
    assert exp.conditions == sorted(CONDITIONS)
    assert len(exp.clips) == 4
    for cond, ids in exp.rows.items():
        assert len(ids) == 2
        for cid in ids:
            info = exp.clips[cid]
            assert info.condition == cond
            assert info.sha256.startswith(cid)
            assert info.reference_text
            assert info.sound in (1, 2)


def test_load_experiment_rejects_empty(tmp_path):
    listing = tmp_path / "clips.json"
    listing.write_text(json.dumps({"experiment": "x", "rows": {}}))
    with pytest.raises(ValueError, match="no published clips"):
        load_experiment(listing)


def test_session_unknown_experiment_404(tmp_path, exp_dir):
    client, _, _ = _build(tmp_path, exp_dir)
    assert _start(client, experiment="nope").status_code == 404


def test_session_create_and_takeover(tmp_path, exp_dir):
    client, _, _ = _build(tmp_path, exp_dir)
    first = _start(client)
    assert first.status_code == 200
    body = first.json()
    assert len(body["playlist"]) == 4
    assert body["completed"] == []

    # the same rater opening a second tab must be refused without takeover
    assert _start(client).status_code == 409
    second = _start(client, takeover=True)
    assert second.status_code == 200
    again = second.json()
    assert again["session_id"] == body["session_id"]
    assert again["lock"] != body["lock"]
    tokens = [item["token"] for item in body["playlist"]]
    assert [item["token"] for item in again["playlist"]] == tokens


def test_session_get_and_unknown_403(tmp_path, exp_dir):
    client, _, _ = _build(tmp_path, exp_dir)
    sid = _start(client).json()["session_id"]
    resp = client.get(f"/sessions/{sid}")
    assert resp.status_code == 200
    assert resp.json()["session_id"] == sid
    assert client.get("/sessions/feedbeef").status_code == 403


def test_playlist_interleaves_conditions(tmp_path, exp_dir):
    client, _, exp = _build(tmp_path, exp_dir)
    body = _start(client).json()
    state = client.app.state.listen
    session = state.sessions[body["session_id"]]
    conds = [exp.clips[session.tokens[item["token"]]].condition
             for item in body["playlist"]]
    # round-robin over the rotated condition order: a,b,a,b or b,a,b,a
    assert conds[0] != conds[1]
    assert conds[:2] * 2 == conds


def test_playlist_rotation_varies_across_raters(tmp_path, exp_dir):
    exp = load_experiment(exp_dir / "clips.json")
    starts = set()
    for i in range(8):
        playlist = build_playlist(exp, f"rater{i}", seed=0)
        starts.add(exp.clips[playlist[0]].condition)
    assert starts == set(CONDITIONS)


def test_playlist_deterministic_per_rater_and_seed(tmp_path, exp_dir):
    exp = load_experiment(exp_dir / "clips.json")
    assert build_playlist(exp, "r9", 4) == build_playlist(exp, "r9", 4)


def test_clip_serving_by_token_only(tmp_path, exp_dir):
    client, _, exp = _build(tmp_path, exp_dir)
    body = _start(client).json()
    state = client.app.state.listen
    session = state.sessions[body["session_id"]]
    token = body["playlist"][0]["token"]
    resp = client.get(f"/clips/{token}")
    assert resp.status_code == 200
    assert resp.headers["content-type"] == "audio/wav"
    clip = exp.clips[session.tokens[token]]
    assert resp.content == clip.path.read_bytes()
    assert client.get("/clips/0123456789abcdef0123").status_code == 403


def test_rating_submission_and_validation(tmp_path, exp_dir):
    client, log, _ = _build(tmp_path, exp_dir)
    body = _start(client).json()
    sid = body["session_id"]
    token = body["playlist"][0]["token"]

    ok = client.post("/ratings", json={"session_id": sid, "token": token,
                                       "scale": "clarity", "score": 4})
    assert ok.status_code == 200
    assert ok.json() == {"status": "ok", "audit_entries": 1}

    redo = client.post("/ratings", json={"session_id": sid, "token": token,
                                         "scale": "clarity", "score": 2})
    assert redo.json()["audit_entries"] == 2
    key = ("rating", sid, token, "clarity")
    assert log.effective()[key]["score"] == 2   # last submission wins
    assert log.audit_count(key) == 2

    bad_scale = client.post("/ratings", json={"session_id": sid,
                                              "token": token,
                                              "scale": "comfort", "score": 3})
    assert bad_scale.status_code == 422
    bad_score = client.post("/ratings", json={"session_id": sid,
                                              "token": token,
                                              "scale": "clarity", "score": 9})
    assert bad_score.status_code == 422
    foreign = client.post("/ratings", json={"session_id": sid,
                                            "token": "f" * 20,
                                            "scale": "clarity", "score": 3})
    assert foreign.status_code == 403
    ghost = client.post("/ratings", json={"session_id": "nosuch",
                                          "token": token,
                                          "scale": "clarity", "score": 3})
    assert ghost.status_code == 403


def test_tokens_are_session_scoped(tmp_path, exp_dir):
    client, _, _ = _build(tmp_path, exp_dir)
    body_a = _start(client, rater="ra").json()
    body_b = _start(client, rater="rb").json()
    stolen = body_a["playlist"][0]["token"]
    resp = client.post("/ratings", json={"session_id": body_b["session_id"],
                                         "token": stolen,
                                         "scale": "clarity", "score": 3})
    assert resp.status_code == 403


def test_completion_requires_all_scales_and_transcript(tmp_path, exp_dir):
    client, _, _ = _build(tmp_path, exp_dir)
    body = _start(client).json()
    sid = body["session_id"]
    token = body["playlist"][0]["token"]
    for scale in MOS_SCALES[:2]:
        client.post("/ratings", json={"session_id": sid, "token": token,
                                      "scale": scale, "score": 3})
    client.post("/transcripts", json={"session_id": sid, "token": token,
                                      "text": "woof"})
    assert client.get(f"/sessions/{sid}").json()["completed"] == []
    client.post("/ratings", json={"session_id": sid, "token": token,
                                  "scale": MOS_SCALES[2], "score": 3})
    assert client.get(f"/sessions/{sid}").json()["completed"] == [token]


def test_restart_rebuilds_sessions_and_results(tmp_path, exp_dir):
    client, log, _ = _build(tmp_path, exp_dir)
    body = _start(client).json()
    sid = body["session_id"]
    token = body["playlist"][0]["token"]
    for scale in MOS_SCALES:
        client.post("/ratings", json={"session_id": sid, "token": token,
                                      "scale": scale, "score": 5})
    client.post("/transcripts", json={"session_id": sid, "token": token,
                                      "text": "woof woof"})
    before = client.get("/experiments/toy_study/results").json()

    # a fresh process over the same log: no session re-creation needed
    exp = load_experiment(exp_dir / "clips.json")
    reopened = RecordLog(log.path)
    client2 = TestClient(build_app(exp, reopened))
    resumed = client2.get(f"/sessions/{sid}")
    assert resumed.status_code == 200
    assert resumed.json()["playlist"] == body["playlist"]
    assert resumed.json()["completed"] == [token]
    assert client2.get("/experiments/toy_study/results").json() == before
    # and the audio still serves
    assert client2.get(f"/clips/{token}").status_code == 200


def test_results_empty_experiment(tmp_path, exp_dir):
    client, _, _ = _build(tmp_path, exp_dir)
    body = client.get("/experiments/toy_study/results").json()
    assert body["experiment"] == "toy_study"
    assert body["mos"] == {} and body["cer"] == {}
    assert body["n_ratings"] == 0 and body["n_transcripts"] == 0


# ---------------------------------------------------------------------------
# scripted three-rater session with hand-computed aggregates

# per-condition scores by (scale, rater index); every clip of a condition
# receives the same score from a given rater
SCORE_PLAN = {
    "cond_a": {"dog_likeness": (5, 4, 3), "sound_quality": (2, 2, 2),
               "clarity": (1, 2, 3)},
    "cond_b": {"dog_likeness": (1, 1, 1), "sound_quality": (4, 5, 3),
               "clarity": (5, 5, 5)},
}
# rater 0 transcribes perfectly, rater 1 submits nothing, rater 2 makes one
# substitution against the 8-character normalized references
TRANSCRIPTS = [
    {"Woof woof!!": "woof woof", "Good boys.": "GOOD BOYS"},
    {"Woof woof!!": "", "Good boys.": ""},
    {"Woof woof!!": "woof wolf", "Good boys.": "good bots"},
]
EXPECTED_CER = (0.0 + 1.0 + 1 / 8) / 3   # 0.375, exact in binary


def _run_scripted_session(client, exp):
    state = client.app.state.listen
    for ridx in range(3):
        body = _start(client, rater=f"rater{ridx}").json()
        sid = body["session_id"]
        session = state.sessions[sid]
        for item in body["playlist"]:
            token = item["token"]
            cond = exp.clips[session.tokens[token]].condition
            for scale, per_rater in SCORE_PLAN[cond].items():
                resp = client.post("/ratings", json={
                    "session_id": sid, "token": token,
                    "scale": scale, "score": per_rater[ridx]})
                assert resp.status_code == 200
            text = TRANSCRIPTS[ridx][item["reference_text"]]
            resp = client.post("/transcripts", json={
                "session_id": sid, "token": token, "text": text})
            assert resp.status_code == 200
        done = client.get(f"/sessions/{sid}").json()["completed"]
        assert sorted(done) == sorted(session.playlist)


def test_scripted_session_matches_hand_computed_means(tmp_path, exp_dir):
    client, _, exp = _build(tmp_path, exp_dir)
    _run_scripted_session(client, exp)
    results = client.get("/experiments/toy_study/results").json()

    assert results["n_ratings"] == 3 * 4 * 3
    assert results["n_transcripts"] == 12
    for cond, plan in SCORE_PLAN.items():
        for scale, per_rater in plan.items():
            cell = results["mos_summary"][cond][scale]
            # 2 clips x 3 raters; integer scores average exactly
            assert cell["n"] == 6
            assert cell["mean"] == sum(per_rater) * 2 / 6
            raw = sorted(results["mos"][cond][scale])
            assert raw == sorted(per_rater * 2)
    for cond in CONDITIONS:
        assert results["cer"][cond] == [EXPECTED_CER, EXPECTED_CER]
        detail = results["cer_detail"][cond]
        assert sorted(detail["sound1"]) == [0.0, 0.125, 1.0]
        assert sorted(detail["sound2"]) == [0.0, 0.125, 1.0]


def test_rater_visible_payloads_never_leak_conditions(tmp_path, exp_dir):
    """Blinding invariant over every rater-facing response in a full flow."""
    client, _, exp = _build(tmp_path, exp_dir)
    state = client.app.state.listen

    visible = []

    def watch(resp):
        assert resp.status_code == 200
        visible.append(resp.text)
        return resp

    body = watch(_start(client, rater="blind-check")).json()
    sid = body["session_id"]
    watch(client.get(f"/sessions/{sid}"))
    for item in body["playlist"]:
        token = item["token"]
        audio = client.get(f"/clips/{token}")
        assert audio.status_code == 200          # binary payload, no metadata
        assert audio.headers["content-type"] == "audio/wav"
        for scale in MOS_SCALES:
            watch(client.post("/ratings", json={
                "session_id": sid, "token": token, "scale": scale, "score": 3}))
        watch(client.post("/transcripts", json={
            "session_id": sid, "token": token, "text": "woof"}))
    watch(client.get(f"/sessions/{sid}"))

    session = state.sessions[sid]
    forbidden = set(CONDITIONS) | {"condition", ".wav", "white_noise"}
    forbidden |= set(session.tokens.values())          # internal clip ids
    forbidden |= {info.sha256 for info in exp.clips.values()}
    for payload in visible:
        low = payload.lower()
        for needle in forbidden:
            assert needle.lower() not in low, (needle, payload)
