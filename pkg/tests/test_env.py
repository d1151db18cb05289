from __future__ import annotations

import asyncio
import io
import json
import logging
import random
from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from musim.agents import AdversarialHel, ScriptedHel, random_goal
from musim.api import create_app
from musim.domain import DialogueAct, EldAction, HapticOstensiveEvent, HelAction, HoType, Move, TargetRef, WorldGoal
from musim.env import EnvConfig, Outcome, Session, SessionDone, make_policy, run_episode
from musim.oracle import OraclePolicy
from musim.protocol import Goal, HelMoveMsg, ProtocolError, dump, parse_request, parse_response
from musim.server import Connection, serve_stdio, start_tcp

DOCS = Path(__file__).resolve().parents[1] / "docs"
GOAL = WorldGoal.make("bowl", "cabinet", "small_bowl")
DA, A = DialogueAct, HelAction


def session(**cfg) -> Session:
    return Session(OraclePolicy(), EnvConfig(**cfg))


# -- session -------------------------------------------------------------------


def test_reset_opening_move():
    s = session()
    move = s.reset(GOAL)
    assert (move.da, move.eld_action) == (DA.Instruct, EldAction.GiveOT)
    assert s.uttered == (True, False)
    assert s.turn == 0 and not s.done


def test_reset_is_deterministic():
    a, b = session(), session()
    assert a.reset(None, seed=3) == b.reset(None, seed=3)
    assert a.goal == b.goal


def test_reset_aborts_running_episode():
    s = session()
    s.reset(GOAL)
    s.step(Move.hel(DA.QueryW, A.RequestOT))
    s.reset(GOAL)
    assert s.previous_outcome is Outcome.Aborted
    assert s.turn == 0 and s.outcome is None


def test_noise_free_episode():
    s = session()
    result = run_episode(s, ScriptedHel(GOAL), GOAL)
    assert result.outcome is Outcome.Success
    assert s.turn == 6
    assert s.total_reward == 1 - 0.01 * 6
    with pytest.raises(SessionDone):
        s.step(Move.hel(DA.QueryW, A.RequestOT))


def test_forced_timeout():
    s = session(max_turns=1)
    result = run_episode(s, AdversarialHel(GOAL, random.Random(0)), GOAL)
    assert result.outcome is Outcome.Timeout
    assert result.reward == pytest.approx(-1.01)
    assert s.total_reward == -1 - 0.01


def test_pass_makes_hel_previous_actor():
    s = session()
    s.reset(GOAL)
    s.step(Move.hel(DA.Check, A.VerifyOT, mentioned=(TargetRef.obj(None, "bowl"),)))
    s.step(Move.hel(DA.QueryW, A.RequestL))
    s.step(Move.hel(DA.Check, A.VerifyL, mentioned=(TargetRef.location("cabinet"),)))
    r = s.step(Move.hel(DA.NoUtterance, A.VerifyL, ho=HapticOstensiveEvent(TargetRef.location("cabinet"), HoType.OpenLocation)))
    assert r.is_pass
    s.step(Move.hel(DA.QueryYn, A.VerifyO, ho=HapticOstensiveEvent(GOAL.target_object, HoType.TakeOutObject)))
    assert s.transcript[-1].context.prev_actor.value == "HEL"
    assert s.transcript[-1].context.prev_eld_action is EldAction.NoAction


def test_cooperative_and_adversarial_batches():
    s = session()
    for seed in range(200):
        rng = random.Random(seed)
        goal = random_goal(rng)
        run_episode(s, ScriptedHel(goal, rng=rng), goal)
        assert s.outcome is Outcome.Success and s.turn <= 20
        assert s.total_reward == 1 - 0.01 * s.turn
    for seed in range(50):
        rng = random.Random(seed)
        run_episode(s, AdversarialHel(GOAL, rng), GOAL)
        assert s.outcome is Outcome.Timeout and s.turn == 40


def test_make_policy_loads_model(tmp_path):
    from musim.model import ModelPolicy, TrainConfig, init_mlp, save_model

    save_model(init_mlp(TrainConfig()), tmp_path / "m.bin")
    assert isinstance(make_policy(tmp_path / "m.bin"), ModelPolicy)
    assert isinstance(make_policy(), OraclePolicy)


# -- line protocol -------------------------------------------------------------


def reset_line(seed=None, goal=GOAL) -> str:
    msg = {"type": "reset", "goal": Goal.from_goal(goal).model_dump()}
    if seed is not None:
        msg["seed"] = seed
    return json.dumps(msg)


def error_code(reply: str) -> str | None:
    d = json.loads(reply)
    return d["code"] if d["type"] == "error" else None


def test_protocol_errors_keep_session():
    c = Connection(OraclePolicy(), EnvConfig())
    assert error_code(c.handle(json.dumps({"type": "hel_move", "da": 3, "action": 1}))) == "no_session"
    c.handle(reset_line())
    assert error_code(c.handle("garbage")) == "parse"
    assert error_code(c.handle("[1, 2]")) == "parse"
    assert error_code(c.handle('{"type": "fly"}')) == "unknown_type"
    assert error_code(c.handle('{"type": "hel_move", "da": 3, "action": 1, "extra": 1}')) == "malformed_move"
    assert error_code(c.handle('{"type": "hel_move", "da": 99, "action": 1}')) == "malformed_move"
    undecidable = {"type": "hel_move", "da": 4, "action": 5,
                   "pointing": {"target": {"kind": "Object", "identity": None, "object_type": "bowl"}}}
    assert error_code(c.handle(json.dumps(undecidable))) == "malformed_move"
    bad_goal = {"type": "reset", "goal": {"object_type": "bowl", "location": "cabinet"}}
    assert error_code(c.handle(json.dumps(bad_goal))) == "bad_goal"
    reply = json.loads(c.handle('{"type": "hel_move", "da": 8, "action": 3, "mentioned": [{"kind": "Object", "object_type": "bowl"}]}'))
    assert reply["type"] == "eld_move" and reply["turn"] == 1


def test_session_done_error():
    c = Connection(OraclePolicy(), EnvConfig(max_turns=1))
    c.handle(reset_line())
    assert json.loads(c.handle('{"type": "hel_move", "da": 3, "action": 1}'))["type"] == "episode_end"
    assert error_code(c.handle('{"type": "hel_move", "da": 3, "action": 1}')) == "session_done"


def test_messages_round_trip():
    m = Move.hel(DA.Check, A.VerifyL, mentioned=(TargetRef.location("cabinet"),))
    msg = HelMoveMsg.from_move(m)
    assert parse_request(dump(msg)).to_move() == m
    with pytest.raises(ProtocolError):
        parse_request(b"\xff")


def transcript_pairs():
    text = (DOCS / "protocol.md").read_text(encoding="utf-8")
    block = text.split("## Example transcript", 1)[1].split("```")[1]
    lines = [line for line in block.splitlines() if line.startswith(("> ", "< "))]
    return [(a[2:], b[2:]) for a, b in zip(lines[::2], lines[1::2])]


def test_docs_transcript_replays_exactly():
    c = Connection(OraclePolicy(), EnvConfig())
    pairs = transcript_pairs()
    assert len(pairs) == 7
    for request, expected in pairs:
        assert c.handle(request) == expected
        parse_response(expected)


def test_stdio_loop():
    requests = "\n".join(r for r, _ in transcript_pairs()) + "\n\n"
    out = io.StringIO()
    serve_stdio(OraclePolicy(), EnvConfig(), io.StringIO(requests), out)
    assert out.getvalue().splitlines() == [e for _, e in transcript_pairs()]


# -- TCP -----------------------------------------------------------------------


async def _client(port: int, seed: int) -> tuple[list[str], list[str]]:
    """Play one scripted episode over TCP; returns requests and replies."""
    rng = random.Random(seed)
    goal = random_goal(rng)
    hel = ScriptedHel(goal, noise=0.2, rng=rng)
    reader, writer = await asyncio.open_connection("127.0.0.1", port)
    sent, got = [], []

    async def ask(line: str) -> dict:
        sent.append(line)
        writer.write(line.encode() + b"\n")
        await writer.drain()
        got.append((await reader.readline()).decode().rstrip("\n"))
        await asyncio.sleep(0)
        return json.loads(got[-1])

    reply = await ask(reset_line(goal=goal))
    while reply["type"] == "eld_move":
        hel.observe(Move.eld(DialogueAct(reply["da"]), EldAction(reply["action"])))
        reply = await ask(dump(HelMoveMsg.from_move(hel.act())))
    writer.close()
    await writer.wait_closed()
    return sent, got


def run_concurrent(n: int = 10) -> list[tuple[list[str], list[str]]]:
    async def main():
        server = await start_tcp(OraclePolicy, EnvConfig(), "127.0.0.1", 0)
        port = server.sockets[0].getsockname()[1]
        async with server:
            return await asyncio.gather(*(_client(port, seed) for seed in range(n)))

    return asyncio.run(main())


def no_cross_talk(results) -> bool:
    """Each connection's replies equal a private replay of its own requests."""
    for sent, got in results:
        c = Connection(OraclePolicy(), EnvConfig())
        if [c.handle(line) for line in sent] != got:
            return False
    return True


def test_concurrent_tcp_sessions():
    results = run_concurrent(10)
    assert all(json.loads(got[-1])["outcome"] == "Success" for _, got in results)
    assert no_cross_talk(results)


def test_dropped_connection_aborts(caplog):
    async def main():
        server = await start_tcp(OraclePolicy, EnvConfig(), "127.0.0.1", 0)
        port = server.sockets[0].getsockname()[1]
        async with server:
            reader, writer = await asyncio.open_connection("127.0.0.1", port)
            writer.write(reset_line().encode() + b"\n")
            await writer.drain()
            await reader.readline()
            writer.close()
            await writer.wait_closed()
            await asyncio.sleep(0.05)

    with caplog.at_level(logging.INFO, logger="musim.server"):
        asyncio.run(main())
    assert any("outcome Aborted" in r.getMessage() for r in caplog.records)


# -- HTTP ----------------------------------------------------------------------


@pytest.fixture
def client():
    return TestClient(create_app(OraclePolicy, EnvConfig()))


def test_http_episode(client):
    assert client.get("/health").json()["status"] == "ok"
    r = client.post("/sessions", json={"goal": Goal.from_goal(GOAL).model_dump()})
    assert r.status_code == 200
    sid, opening = r.json()["session_id"], r.json()["opening"]
    assert (opening["da"], opening["action"]) == (1, 1)
    hel = ScriptedHel(GOAL)
    hel.observe(Move.eld(DA.Instruct, EldAction.GiveOT))
    while True:
        body = json.loads(dump(HelMoveMsg.from_move(hel.act())))
        reply = client.post(f"/sessions/{sid}/step", json=body).json()
        if reply["type"] == "episode_end":
            break
        hel.observe(Move.eld(DialogueAct(reply["da"]), EldAction(reply["action"])))
    assert reply["outcome"] == "Success" and reply["totalReward"] == 0.94
    again = client.post(f"/sessions/{sid}/step", json={"type": "hel_move", "da": 3, "action": 1})
    assert again.status_code == 409
    assert client.delete(f"/sessions/{sid}").status_code == 200
    assert client.post(f"/sessions/{sid}/step", json=body).status_code == 404


def test_http_validation(client):
    sid = client.post("/sessions", json={"seed": 1}).json()["session_id"]
    r = client.post(f"/sessions/{sid}/step", json={"type": "hel_move", "da": 3, "action": 1, "bogus": 1})
    assert r.status_code == 422
    r = client.post("/sessions", json={"goal": {"object_type": "cup", "location": "x", "object": "o", "z": 1}})
    assert r.status_code == 422


def test_http_respond(client):
    ctx = {
        "prev_actor": None, "uttered_ot": False, "uttered_l": False, "prev_belief": 0,
        "hel_action": 1, "hel_da": 3, "goal": Goal.from_goal(GOAL).model_dump(),
    }
    assert client.post("/respond", json=ctx).json() == {"da": 5, "action": 1, "belief": 0}
    assert client.post("/respond", json={**ctx, "prev_belief": 13}).status_code == 422
