import pytest

CRITERIA = {
    "1": "oracle identity",
    "2": "op correctness",
    "3": "gradient suite",
    "4": "fusion equivalence",
    "5": "architecture pins",
    "6a": "desk-scale training, 200 epochs",
    "6b": "desk-scale training, 1500 epochs",
    "7": "relative speed",
    "8": "bench protocol",
    "9": "determinism",
}
_verdicts: dict = {}


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run multi-hour training checks")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(scope="session")
def verdict():
    """record(key, ok, detail): one PASS/FAIL line per acceptance criterion."""
    def record(key, ok, detail):
        line = f"criterion {key} ({CRITERIA[key]}): {'PASS' if ok else 'FAIL'}  {detail}"
        _verdicts[key] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for key, name in CRITERIA.items():
        terminalreporter.write_line(_verdicts.get(key, f"criterion {key} ({name}): NOT RUN"))
