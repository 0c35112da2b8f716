"""WebSocket session service speaking newline-terminated JSON messages.

One interactive client per session: a second concurrent connection is
rejected. Commands are ``start`` (optionally carrying a scripted trace),
``set_applied_force``, ``advance_to_natural_hold``, ``abort`` and
``get_report``; every command is acknowledged. Telemetry, state changes and
records stream to the client as they happen, and the report is pushed once
the session reaches Done (and written to ``report_dir`` when configured).

Interactive sessions run on a virtual clock scaled by ``speed`` so scripted
drives can run faster than wall time; trace-mode sessions run flat out.
"""

from __future__ import annotations

import asyncio
import json
import logging
from pathlib import Path

from websockets.asyncio.server import serve
from websockets.exceptions import ConnectionClosed

from .errors import ContaminationError
from .session import DONE, PROTOCOL_VERSION, SessionDriver, advance_to_natural_hold, trace_force

logger = logging.getLogger(__name__)

ALLOWED_COMMANDS = ("start", "abort", "set_applied_force", "advance_to_natural_hold", "get_report")


def _line(payload: dict) -> str:
    return json.dumps(payload) + "\n"


class SessionService:
    def __init__(self, driver_factory, host: str = "127.0.0.1", port: int = 8765,
                 speed: float = 1.0, report_dir=None):
        self.driver_factory = driver_factory
        self.host = host
        self.port = port
        self.speed = speed
        self.report_dir = Path(report_dir) if report_dir else None
        self._server = None
        self._busy = False

    async def start(self) -> None:
        self._server = await serve(self._handler, self.host, self.port)
        self.port = self._server.sockets[0].getsockname()[1]

    async def stop(self) -> None:
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
            self._server = None

    async def run_forever(self) -> None:
        await self.start()
        logger.info("session service listening on ws://%s:%d", self.host, self.port)
        await asyncio.get_running_loop().create_future()

    async def _send(self, ws, payload: dict) -> None:
        await ws.send(_line(payload))

    async def _handler(self, ws) -> None:
        if self._busy:
            await self._send(ws, {"v": PROTOCOL_VERSION, "kind": "error",
                                  "detail": "a session is already active; one operator at a time"})
            await ws.close()
            return
        self._busy = True
        driver = self.driver_factory()
        try:
            await self._session(ws, driver)
        except ConnectionClosed:
            if driver.state.phase != DONE:
                driver.do_abort()
                logger.warning("client disconnected mid-session; session aborted")
        finally:
            self._busy = False

    async def _session(self, ws, driver: SessionDriver) -> None:
        commands: asyncio.Queue = asyncio.Queue()

        async def reader():
            try:
                async for raw in ws:
                    try:
                        msg = json.loads(raw)
                        cmd = msg.get("cmd")
                        if msg.get("kind") != "command" or cmd not in ALLOWED_COMMANDS:
                            raise ValueError(f"unknown command {cmd!r}")
                    except (ValueError, AttributeError) as exc:
                        await self._send(ws, {"v": PROTOCOL_VERSION, "kind": "error",
                                              "detail": f"malformed message: {exc}"})
                        continue
                    await commands.put(msg)
            except ConnectionClosed:
                pass
            await commands.put(None)  # sentinel: client gone

        reader_task = asyncio.create_task(reader())
        try:
            await self._session_body(ws, driver, commands)
        finally:
            reader_task.cancel()

    async def _ack(self, ws, cmd: str, ok: bool = True, detail: str = "") -> None:
        await self._send(ws, {"v": PROTOCOL_VERSION, "kind": "command_ack",
                              "cmd": cmd, "ok": ok, "detail": detail})

    async def _session_body(self, ws, driver: SessionDriver, commands: asyncio.Queue) -> None:
        # Wait for start.
        trace = None
        while True:
            msg = await commands.get()
            if msg is None:
                raise ConnectionClosed(None, None)
            cmd = msg["cmd"]
            if cmd == "start":
                trace = msg.get("trace")
                await self._ack(ws, "start", detail="trace" if trace else "interactive")
                break
            await self._ack(ws, cmd, ok=False, detail="session not started yet")

        try:
            for m in driver.capture_baseline():
                await self._send(ws, m)
        except ContaminationError as exc:
            await self._send(ws, {"v": PROTOCOL_VERSION, "kind": "error", "detail": str(exc)})
            return

        if trace is not None:
            await self._run_trace(ws, driver, [(float(t), float(f)) for t, f in trace])
        else:
            await self._run_interactive(ws, driver, commands)

        await self._finish(ws, driver, commands)

    async def _run_trace(self, ws, driver: SessionDriver, trace) -> None:
        t_end = max(t for t, _ in trace) if trace else 0.0
        k = 0
        while driver.state.phase != DONE:
            tau = k / driver.spec.sample_rate
            if tau > t_end + 0.5 * driver.dt:
                break
            driver.rig.set_exact(trace_force(trace, tau))
            for m in driver.tick():
                await self._send(ws, m)
            k += 1

    async def _run_interactive(self, ws, driver: SessionDriver, commands: asyncio.Queue) -> None:
        while driver.state.phase != DONE:
            while not commands.empty():
                msg = commands.get_nowait()
                if msg is None:
                    raise ConnectionClosed(None, None)
                cmd = msg["cmd"]
                if cmd == "set_applied_force":
                    driver.rig.command(float(msg.get("value", 0.0)))
                    await self._ack(ws, cmd)
                elif cmd == "abort":
                    for m in driver.do_abort():
                        await self._send(ws, m)
                    await self._ack(ws, cmd)
                    return
                elif cmd == "advance_to_natural_hold":
                    driver.state, msgs = advance_to_natural_hold(driver.state, driver.spec, driver.t)
                    for m in msgs:
                        await self._send(ws, m)
                    await self._ack(ws, cmd)
                else:
                    await self._ack(ws, cmd, ok=False, detail="not available during the run")
            driver.rig.tick(driver.dt)
            for m in driver.tick():
                await self._send(ws, m)
            await asyncio.sleep(driver.dt / self.speed)

    async def _finish(self, ws, driver: SessionDriver, commands: asyncio.Queue) -> None:
        report = driver.report()
        payload = {"v": PROTOCOL_VERSION, "kind": "report",
                   "report": report.to_dict(), "csv": report.to_csv_string()}
        if self.report_dir is not None:
            self.report_dir.mkdir(parents=True, exist_ok=True)
            (self.report_dir / "report.json").write_text(report.to_json())
            (self.report_dir / "report.csv").write_text(report.to_csv_string())
        await self._send(ws, payload)
        while True:
            msg = await commands.get()
            if msg is None:
                return
            cmd = msg["cmd"]
            if cmd == "get_report":
                await self._ack(ws, cmd)
                await self._send(ws, payload)
            elif cmd == "abort":
                await self._ack(ws, cmd, ok=False, detail="session already done")
            else:
                await self._ack(ws, cmd, ok=False, detail="session already done")


async def serve_session(driver_factory, host="127.0.0.1", port=8765, speed=1.0,
                        report_dir=None) -> SessionService:
    """Start a service and return it (caller owns the event loop)."""
    service = SessionService(driver_factory, host=host, port=port, speed=speed,
                             report_dir=report_dir)
    await service.start()
    return service
