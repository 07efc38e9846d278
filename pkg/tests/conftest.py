import pytest

from tailsketch.trace_model import SpanRecord, build_trace


def span(trace_id, span_id, parent=None, service=None, op="op", start=0, dur=100):
    return SpanRecord(
        trace_id=trace_id,
        span_id=span_id,
        parent_span_id=parent,
        service=service if service is not None else span_id,
        operation=op,
        start_us=start,
        duration_us=dur,
    )


def five_span_spans(trace_id="T", with_c=False, durations=None):
    """A -> {B, D -> {E, F}}, optionally with a leaf C under B."""
    d = {"A": 5000, "B": 800, "C": 40, "D": 3000, "E": 200, "F": 90}
    d.update(durations or {})
    out = [
        span(trace_id, "a", None, "A", "", 0, d["A"]),
        span(trace_id, "b", "a", "B", "", 10, d["B"]),
        span(trace_id, "d", "a", "D", "", 20, d["D"]),
        span(trace_id, "e", "d", "E", "", 30, d["E"]),
        span(trace_id, "f", "d", "F", "", 40, d["F"]),
    ]
    if with_c:
        out.append(span(trace_id, "c", "b", "C", "", 15, d["C"]))
    return out


@pytest.fixture
def five_span_tree():
    return build_trace("T", five_span_spans())


@pytest.fixture
def five_span_tree_with_c():
    return build_trace("TC", five_span_spans("TC", with_c=True))


# one summary line per acceptance criterion ---------------------------------

_criteria: dict[int, tuple[str, str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or not marker.args:
        return
    if report.when == "call" or (report.when == "setup" and report.failed):
        number, title = marker.args[0], marker.args[1]
        detail = "; ".join(f"{k}={v}" for k, v in item.user_properties)
        _criteria[number] = ("PASS" if report.passed else "FAIL", title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        status, title, detail = _criteria[number]
        line = f"criterion {number:2d} {status}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
