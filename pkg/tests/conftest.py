import numpy as np
import pytest

from actionvocab.features import ComponentLayout
from actionvocab.synth import SynthSpec, synth_generate

SMALL = ComponentLayout((("a", 4), ("b", 6), ("c", 5)))


@pytest.fixture(scope="session")
def small_layout():
    return SMALL


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """3 classes x 6 videos x 60 features over a 15-dim layout, 2 splits."""
    spec = SynthSpec(class_count=3, videos_per_class=6, features_per_video=60, layout=SMALL,
                     n_splits=2, atoms_per_component=4, noise=0.3, class_shift=0.5, seed=3)
    out = tmp_path_factory.mktemp("tiny")
    manifest, model = synth_generate(spec, out)
    return manifest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_runtest_logreport(report):
    crit = getattr(report, "criterion", None)
    if crit is None or not (report.when == "call" or report.failed):
        return
    num, title = crit
    if _CRITERIA.get(num, (None, "PASS"))[1] == "PASS":
        _CRITERIA[num] = (title, "FAIL" if report.failed else "PASS", report.duration)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        rep.criterion = tuple(mark.args)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        title, status, secs = _CRITERIA[num]
        terminalreporter.write_line(f"criterion {num}: {status}  {title}  ({secs:.1f}s)")
