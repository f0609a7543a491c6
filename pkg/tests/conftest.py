import dataclasses

import pytest

from dvevio.sim.scenario import PRESETS, render_sequence


def short(preset, duration=2.0, **kw):
    return dataclasses.replace(PRESETS[preset], duration=duration, length_m=4.0 * duration, **kw)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """A 2 s noisy corridor, shared by ingestion and CLI tests."""
    return render_sequence(short("noisy"), tmp_path_factory.mktemp("ds") / "noisy")


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(RESULTS):
        ok, detail = RESULTS[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'} - {detail}")
