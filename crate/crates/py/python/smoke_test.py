"""Smoke test for the `reduct` extension: reduce, merge back, prompt."""

import json
import pathlib
import sys

import reduct

FIXTURES = pathlib.Path(__file__).resolve().parents[2] / "core" / "tests" / "fixtures"


def read(rel):
    return (FIXTURES / rel).read_text()


def main():
    original = read("fig2/a.js")
    analyzer = reduct.Analyzer("builtin:all")
    reports = analyzer.analyze(original)
    assert [(r.rule, r.line) for r in reports] == [("PT", 12)], reports

    out = reduct.reduce(original, "PT", 12, analyzer=analyzer)
    assert out.reduced == read("fig2/c.js"), out.reduced
    merged = reduct.merge_back(original, out.reduced, read("fig2/d.js"), out.mapping)
    assert merged == read("fig2/e.js")
    assert reduct.does_fix(merged, original, reports[0])
    assert reduct.no_new_issues(merged, original)

    assert reduct.replacement_mapping(read("fig4/reduced.js"), read("fig4/prediction.js")) == [
        [1, 2], [3], [4], [5, 6], [7],
    ]

    window, mapping = reduct.extract_window(original, 12, 3)
    assert len(window.splitlines()) == 7 and mapping[0] == (1, 9)

    prompt = reduct.build_prompt("PT", "desc", [(out.reduced, read("fig2/d.js"))], out.reduced)
    assert [role for role, _ in prompt.turns] == ["user", "assistant", "user"]
    assert json.loads(prompt.messages_json())[0]["role"] == "system"

    try:
        reduct.reduce(original, "PT", 3)
    except reduct.ReportAbsentError:
        pass
    else:
        raise AssertionError("expected ReportAbsentError")

    try:
        reduct.reduce(original, "PT", 12, max_calls=3)
    except reduct.BudgetExceededError as e:
        assert e.partial.analyzer_calls == 3
    else:
        raise AssertionError("expected BudgetExceededError")

    print("smoke test passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
