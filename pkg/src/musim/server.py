"""Line protocol loop over TCP or standard streams.

Each connection owns one Session. Lines are handled strictly in order and
every request line gets exactly one reply line.
"""

from __future__ import annotations

import asyncio
import logging
import signal
import sys
from typing import Callable

from .domain import DialogueAct, EldAction
from .env import EnvConfig, MalformedMove, Session, SessionDone
from .protocol import (
    EldMoveMsg,
    EpisodeEndMsg,
    ErrorMsg,
    HelMoveMsg,
    ProtocolError,
    ResetMsg,
    dump,
    parse_request,
)

log = logging.getLogger(__name__)


class BindFailure(OSError):
    pass


class Connection:
    """Protocol state for one client; transport agnostic."""

    def __init__(self, policy, cfg: EnvConfig):
        self.session = Session(policy, cfg)
        self.started = False

    def handle(self, line: str | bytes) -> str:
        try:
            msg = parse_request(line)
            reply = self.dispatch(msg)
        except ProtocolError as e:
            reply = ErrorMsg(code=e.code, detail=e.detail)
        return dump(reply)

    def dispatch(self, msg):
        s = self.session
        if isinstance(msg, ResetMsg):
            try:
                goal = msg.goal.to_goal() if msg.goal else None
            except ValueError as e:
                raise ProtocolError("bad_goal", str(e)) from e
            move = s.reset(goal, msg.seed)
            self.started = True
            return EldMoveMsg.build(move, s.uttered, s.belief, s.turn)
        assert isinstance(msg, HelMoveMsg)
        if not self.started:
            raise ProtocolError("no_session", "send reset first")
        move = msg.to_move()
        try:
            r = s.step(move)
        except SessionDone as e:
            raise ProtocolError("session_done", str(e)) from e
        except MalformedMove as e:
            raise ProtocolError("malformed_move", str(e)) from e
        eld = EldMoveMsg.build(r.eld_move, s.uttered, r.belief, s.turn, r.reward)
        if r.done:
            return EpisodeEndMsg(outcome=r.outcome.value, totalReward=s.total_reward, turns=s.turn, last=eld)
        return eld

    def close(self) -> None:
        self.session.abort()


PolicyFactory = Callable[[], object]


async def _serve_connection(reader, writer, make_policy: PolicyFactory, cfg: EnvConfig) -> None:
    conn = Connection(make_policy(), cfg)
    peer = writer.get_extra_info("peername")
    log.info("connection from %s", peer)
    try:
        while True:
            line = await reader.readline()
            if not line:
                break
            if not line.strip():
                continue
            writer.write(conn.handle(line).encode() + b"\n")
            await writer.drain()
    except (ConnectionError, asyncio.IncompleteReadError):
        pass
    finally:
        conn.close()
        outcome = conn.session.outcome
        log.info("connection from %s closed, outcome %s", peer, outcome.value if outcome else None)
        writer.close()


async def start_tcp(make_policy: PolicyFactory, cfg: EnvConfig, host: str = "127.0.0.1", port: int = 7878):
    try:
        return await asyncio.start_server(lambda r, w: _serve_connection(r, w, make_policy, cfg), host, port)
    except OSError as e:
        raise BindFailure(f"cannot bind {host}:{port}: {e}") from e


async def serve_tcp(make_policy: PolicyFactory, cfg: EnvConfig, host: str = "127.0.0.1", port: int = 7878) -> None:
    """Serve until SIGINT/SIGTERM; in-flight replies are flushed before exit."""
    server = await start_tcp(make_policy, cfg, host, port)
    stop = asyncio.Event()
    loop = asyncio.get_running_loop()
    for sig in (signal.SIGINT, signal.SIGTERM):
        try:
            loop.add_signal_handler(sig, stop.set)
        except (NotImplementedError, RuntimeError):
            pass
    addr = server.sockets[0].getsockname()
    log.info("listening on %s:%s", addr[0], addr[1])
    async with server:
        await stop.wait()
        server.close()
        await server.wait_closed()


def serve_stdio(policy, cfg: EnvConfig, stdin=None, stdout=None) -> None:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    conn = Connection(policy, cfg)
    for line in stdin:
        if not line.strip():
            continue
        stdout.write(conn.handle(line) + "\n")
        stdout.flush()
    conn.close()


def describe_eld(da: int, action: int) -> str:
    if da == 0 and action == 0:
        return "ELD passes"
    return f"ELD: {DialogueAct(da).name} / {EldAction(action).name}"

