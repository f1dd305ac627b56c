"""Session service: lifecycle, phase machine, streaming, scoring, replay."""

import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from navxai.mlp import PolicyNetwork
from navxai.protocol import FramePacket, PhaseMessage, parse_stream_message
from navxai.service import create_app
from navxai.study import CONDITIONS, N_SCENARIOS, generate_scenarios, results_csv_text
from navxai.world import N_RAYS, N_SECTORS, scene_from_dict


@pytest.fixture(scope="module")
def scenarios():
    return generate_scenarios(seed=41)


@pytest.fixture(scope="module")
def policy():
    return PolicyNetwork(np.random.default_rng(0))


@pytest.fixture()
def client(policy, scenarios):
    app = create_app(policy, scenarios, seed=0, frame_interval_s=0.0)
    with TestClient(app) as c:
        yield c


def _create(client, participant=None):
    body = {} if participant is None else {"participant": participant}
    r = client.post("/sessions", json=body)
    assert r.status_code == 200
    return r.json()


def _stream(client, sid):
    """Collect the whole stream; returns (raw texts, frames, final phase message)."""
    texts = []
    with client.websocket_connect(f"/sessions/{sid}/stream") as ws:
        while True:
            text = ws.receive_text()
            texts.append(text)
            if json.loads(text).get("type") == "phase":
                break
    msgs = [parse_stream_message(t) for t in texts]
    frames = [m for m in msgs if isinstance(m, FramePacket)]
    return texts, frames, msgs[-1]


def _oracle_ranking(scores: dict) -> list:
    # descending score, ascending id on ties: the published tie-break
    return sorted(scores, key=lambda o: (-scores[o], o))


def _run_one_trial(client, sid):
    info = client.post(f"/sessions/{sid}/trials/next")
    assert info.status_code == 200
    _, frames, _ = _stream(client, sid)
    ranking = _oracle_ranking(frames[-1].object_scores)
    r = client.post(f"/sessions/{sid}/ranking", json={"ranking": ranking})
    assert r.status_code == 200
    return info.json(), r.json()


# ---------------------------------------------------------------------------
# session lifecycle


def test_create_session_assigns_plan(client):
    info = _create(client, participant=0)
    assert info["phase"] == "idle"
    assert info["cursor"] is None
    assert info["completed"] == 0
    assert info["n_blocks"] == 4 and info["trials_per_block"] == 12
    labels = [c["label"] for c in info["block_order"]]
    assert sorted(labels) == sorted(c.label for c in CONDITIONS)
    # participant 0 gets the first itertools permutation
    assert labels == ["xai+lidar", "xai", "lidar", "none"]


def test_participants_auto_increment(client):
    a = _create(client)
    b = _create(client)
    assert (a["participant"], b["participant"]) == (0, 1)
    assert a["session_id"] != b["session_id"]


def test_unknown_session_code(client):
    for method, url in [
        ("get", "/sessions/nope"),
        ("post", "/sessions/nope/trials/next"),
        ("get", "/sessions/nope/results"),
        ("get", "/sessions/nope/export"),
    ]:
        r = getattr(client, method)(url)
        assert r.status_code == 404
        assert r.json()["code"] == "unknown-session"
    r = client.post("/sessions/nope/ranking", json={"ranking": ["a", "b"]})
    assert r.status_code == 404 and r.json()["code"] == "unknown-session"


def test_next_trial_prepares_first_trial(client, scenarios):
    sid = _create(client, participant=0)["session_id"]
    r = client.post(f"/sessions/{sid}/trials/next")
    assert r.status_code == 200
    trial = r.json()
    assert (trial["block"], trial["trial"]) == (0, 0)
    assert trial["condition"]["label"] == "xai+lidar"
    scene = scene_from_dict(trial["scene"])
    assert len(scene.obstacles) == 5
    assert sorted(trial["objects"]) == sorted(scene.obstacle_ids)
    assert 1 <= trial["n_running_frames"] <= 30
    assert client.get(f"/sessions/{sid}").json()["phase"] == "ready"


# ---------------------------------------------------------------------------
# phase machine


def test_out_of_phase_transitions(client):
    sid = _create(client)["session_id"]
    # submit before any trial
    r = client.post(f"/sessions/{sid}/ranking", json={"ranking": ["a", "b", "c", "d", "e"]})
    assert r.status_code == 409 and r.json()["code"] == "out-of-phase"
    # stream before any trial
    with client.websocket_connect(f"/sessions/{sid}/stream") as ws:
        msg = json.loads(ws.receive_text())
        assert msg["code"] == "out-of-phase"
    client.post(f"/sessions/{sid}/trials/next")
    # advancing again while ready skips the stream: refused
    r = client.post(f"/sessions/{sid}/trials/next")
    assert r.status_code == 409 and r.json()["code"] == "out-of-phase"
    # submitting while ready skips the stream: refused
    r = client.post(f"/sessions/{sid}/ranking", json={"ranking": ["a", "b", "c", "d", "e"]})
    assert r.status_code == 409
    _stream(client, sid)
    # advancing without a submission: refused
    r = client.post(f"/sessions/{sid}/trials/next")
    assert r.status_code == 409
    # streaming again while awaiting-ranking: refused
    with client.websocket_connect(f"/sessions/{sid}/stream") as ws:
        msg = json.loads(ws.receive_text())
        assert msg["code"] == "out-of-phase"


def test_stream_contents(client):
    sid = _create(client, participant=0)["session_id"]
    trial = client.post(f"/sessions/{sid}/trials/next").json()
    texts, frames, final = _stream(client, sid)
    n_running = trial["n_running_frames"]
    assert len(frames) == n_running + 10
    assert [f.timestep for f in frames] == list(range(n_running + 10))
    assert all(f.phase == "running" for f in frames[:n_running])
    assert all(f.phase == "linger" for f in frames[n_running:])
    assert isinstance(final, PhaseMessage) and final.phase == "awaiting-ranking"
    for f in (frames[0], frames[-1]):
        assert len(f.ray_endpoints) == N_RAYS
        assert len(f.ray_hits) == N_RAYS
        assert len(f.g_star) == N_SECTORS
        assert set(f.object_scores) == set(trial["objects"])
        assert f.xai_visible and f.lidar_visible  # block 0 for participant 0
    # linger frames repeat the frozen frame's data
    assert frames[-1].pose == frames[n_running - 1].pose
    assert client.get(f"/sessions/{sid}").json()["phase"] == "awaiting-ranking"


def test_condition_gates_flags_not_data(client):
    sid = _create(client, participant=0)["session_id"]
    # drive to block 3 ("none"): 3 blocks x 12 trials first
    for _ in range(36):
        _run_one_trial(client, sid)
    trial = client.post(f"/sessions/{sid}/trials/next").json()
    assert trial["condition"]["label"] == "none"
    _, frames, _ = _stream(client, sid)
    f = frames[-1]
    assert not f.xai_visible and not f.lidar_visible
    # data still present despite hidden display
    assert len(f.object_scores) == 5 and len(f.g_star) == N_SECTORS


# ---------------------------------------------------------------------------
# ranking and scoring


def test_submit_oracle_ranking_scores_one(client):
    sid = _create(client)["session_id"]
    _, result = _run_one_trial(client, sid)
    assert result["tau"] == 1.0
    assert result["block"] == 0 and result["trial"] == 0


def test_submit_rejects_malformed(client):
    sid = _create(client)["session_id"]
    trial = client.post(f"/sessions/{sid}/trials/next").json()
    _, frames, _ = _stream(client, sid)
    ranking = _oracle_ranking(frames[-1].object_scores)
    # 4 of 5 ids
    r = client.post(f"/sessions/{sid}/ranking", json={"ranking": ranking[:4]})
    assert r.status_code == 422 and r.json()["code"] == "bad-ranking"
    # wrong ids
    r = client.post(f"/sessions/{sid}/ranking", json={"ranking": ["q1", "q2", "q3", "q4", "q5"]})
    assert r.status_code == 422 and r.json()["code"] == "bad-ranking"
    # trial unchanged: correct submission still accepted afterwards
    r = client.post(f"/sessions/{sid}/ranking", json={"ranking": ranking})
    assert r.status_code == 200 and r.json()["tau"] == 1.0
    assert client.get(f"/sessions/{sid}").json()["completed"] == 1


def test_resubmission_replaces_until_advanced(client):
    sid = _create(client)["session_id"]
    client.post(f"/sessions/{sid}/trials/next")
    _, frames, _ = _stream(client, sid)
    ranking = _oracle_ranking(frames[-1].object_scores)
    worst = list(reversed(ranking))
    r1 = client.post(f"/sessions/{sid}/ranking", json={"ranking": ranking})
    assert r1.json()["tau"] == 1.0
    r2 = client.post(f"/sessions/{sid}/ranking", json={"ranking": worst})
    assert r2.json()["tau"] == -1.0
    # the replacement is what results reflect
    res = client.get(f"/sessions/{sid}/results").json()
    assert res["completed"] == 1
    stats = list(res["per_condition"].values())
    assert stats[0]["mean"] == -1.0
    # after advancing, the previous trial is locked in
    client.post(f"/sessions/{sid}/trials/next")
    r = client.post(f"/sessions/{sid}/ranking", json={"ranking": ranking})
    assert r.status_code == 409  # new trial is in ready phase, not awaiting-ranking


# ---------------------------------------------------------------------------
# full scripted session


def test_full_session_oracle_means_one(client):
    sid = _create(client, participant=7)["session_id"]
    seen_scenarios = []
    for _ in range(48):
        trial, result = _run_one_trial(client, sid)
        seen_scenarios.append(trial["scenario_id"])
        assert result["tau"] == 1.0
    assert len(set(seen_scenarios)) == N_SCENARIOS
    # done: no further trials
    r = client.post(f"/sessions/{sid}/trials/next")
    assert r.status_code == 409
    assert client.get(f"/sessions/{sid}").json()["phase"] == "done"
    res = client.get(f"/sessions/{sid}/results").json()
    assert res["completed"] == 48
    assert set(res["per_condition"]) == {c.label for c in CONDITIONS}
    for stats in res["per_condition"].values():
        assert stats["mean"] == 1.0 and stats["sd"] == 0.0 and stats["n"] == 12


def test_export_csv(client):
    sid = _create(client, participant=1)["session_id"]
    for _ in range(3):
        _run_one_trial(client, sid)
    r = client.get(f"/sessions/{sid}/export")
    assert r.status_code == 200
    assert r.headers["content-type"].startswith("text/csv")
    lines = r.text.strip().splitlines()
    assert lines[0] == "participant,block,condition,trial,scenario,tau"
    assert len(lines) == 4
    assert all(line.endswith("1.000000") for line in lines[1:])


def test_results_empty_session(client):
    sid = _create(client)["session_id"]
    res = client.get(f"/sessions/{sid}/results").json()
    assert res["completed"] == 0 and res["per_condition"] == {}


# ---------------------------------------------------------------------------
# determinism


def test_replay_byte_identical_across_sessions_and_apps(policy, scenarios):
    streams = []
    for _ in range(2):
        app = create_app(policy, scenarios, seed=0, frame_interval_s=0.0)
        with TestClient(app) as client:
            sid = _create(client, participant=3)["session_id"]
            client.post(f"/sessions/{sid}/trials/next")
            texts, _, _ = _stream(client, sid)
            streams.append(texts)
    assert streams[0] == streams[1]
    assert len(streams[0]) >= 11  # at least one running frame + 10 linger + phase


def test_same_participant_same_plan(policy, scenarios):
    app = create_app(policy, scenarios, seed=0, frame_interval_s=0.0)
    with TestClient(app) as client:
        a = _create(client, participant=5)
        b = _create(client, participant=5)
        assert a["block_order"] == b["block_order"]
        ta = client.post(f"/sessions/{a['session_id']}/trials/next").json()
        tb = client.post(f"/sessions/{b['session_id']}/trials/next").json()
        assert ta["scenario_id"] == tb["scenario_id"]
        assert ta["scene"] == tb["scene"]
