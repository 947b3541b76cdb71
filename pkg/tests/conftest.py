import pytest

from netload.features import write_csv
from netload.pipeline.synthetic import SyntheticSpec, generate_synthetic

SMALL_DAYS = 120


@pytest.fixture(scope="session")
def small_data():
    return generate_synthetic(SyntheticSpec(n_days=SMALL_DAYS), seed=3)


def write_dataset(data, root):
    """Dataset CSV and holiday files for ``data`` under ``root``."""
    root.mkdir(parents=True, exist_ok=True)
    write_csv(data.table, root / "dataset.csv")
    (root / "holidays.txt").write_text("".join(f"{d}\n" for d in sorted(data.holidays)))
    (root / "school.txt").write_text("".join(f"{d}\n" for d in sorted(data.school_holidays)))
    return root


@pytest.fixture(scope="session")
def small_dir(small_data, tmp_path_factory):
    return write_dataset(small_data, tmp_path_factory.mktemp("small"))


SMALL_CONFIG = """\
# small synthetic run
dataset = dataset.csv
holidays = holidays.txt
school_holidays = school.txt
test_start = 2016-04-01
standardize_until = 2016-04-01
preset = gam-t
tail = none, static, conditional
threshold = 0.05
cadence = 14D
n_boot = 50
n_sim = 50
seed = 0
"""


#: (criterion number, title, passed, detail) recorded by the acceptance tests
ACCEPTANCE: list[tuple[int, str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num, title, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {num:2d}. {title}: {detail}")
