import pytest

from deskchain.chain import Chain, ChainParams
from deskchain.crypto import KeyPair

# sha256d of the serialized genesis header, computed once and frozen here
GENESIS_ID_HEX = "a46984ab3156f674a43cc8fff427d3535aff07f6f54f88ef58dc08e204fdec23"


@pytest.fixture
def genesis_id_hex():
    return GENESIS_ID_HEX


@pytest.fixture
def regtest():
    return ChainParams.regtest(8)


@pytest.fixture
def named():
    def make(name):
        return KeyPair.from_name(name)
    return make


@pytest.fixture
def short_chain(regtest):
    """Genesis plus three blocks mined to alice."""
    chain = Chain(regtest)
    alice = KeyPair.from_name("alice")
    for _ in range(3):
        chain.mine_next(alice.address)
    return chain


# --- acceptance report ---

ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


@pytest.fixture
def report(request):
    """Record one PASS/FAIL line for an acceptance criterion."""
    lines = request.config.stash[ACCEPTANCE]

    def record(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number:>2}: {detail}"
        lines.append((number, line))
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
