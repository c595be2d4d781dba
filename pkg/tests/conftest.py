import pytest

from bcfl.keys import KeyServer, Role, enroll
from bcfl.ledger import LedgerInstance

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def keyserver():
    return KeyServer()


@pytest.fixture
def world(keyserver):
    """Three peered authorities with distinct assets and a few participants.

    auth-a issues model (coordinator delegated), auth-b issues stream and
    alert (channel delegated), auth-c issues contract.
    """
    ids = {}
    for pid, role in [
        ("auth-a", Role.AUTHORITY),
        ("auth-b", Role.AUTHORITY),
        ("auth-c", Role.AUTHORITY),
        ("coord", Role.COORDINATOR),
        ("chan", Role.DEVICE),
        ("miner-1", Role.MINER),
        ("mallory", Role.DEVICE),
    ]:
        ids[pid] = enroll(keyserver, pid, role, 11)
    assets = {
        "auth-a": {"model": ["coord"]},
        "auth-b": {"stream": ["chan"], "alert": ["chan"]},
        "auth-c": {"contract": []},
    }
    directory = {a: auth for auth, owned in assets.items() for a in owned}
    ledgers = {
        aid: LedgerInstance.create(ids[aid], keyserver, assets[aid], directory, [p for p in assets if p != aid])
        for aid in assets
    }
    return ids, ledgers
