import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from integrator_twin.controller import ChannelBank, Controller, ControllerServer, ParameterStore  # noqa: E402

DATA = Path(__file__).parent / "data"


@pytest.fixture
def store(tmp_path):
    return ParameterStore(tmp_path / "params.eeprom")


@pytest.fixture
def controller(store):
    return Controller(store, ChannelBank("ideal"))


@pytest.fixture
def server(controller):
    srv = ControllerServer(controller, host="127.0.0.1", port=0)
    with srv:
        yield srv


ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(number: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[number] = (ok, detail)
    print(f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance")
    for number in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
