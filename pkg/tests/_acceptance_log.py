"""Shared sink for acceptance-criterion pass/fail lines.

The acceptance tests record one line per criterion here; conftest's
terminal-summary hook prints them at the end of the run so every criterion
shows a visible verdict even when everything passes.
"""

RESULTS = []


def record(number, ok, detail):
    verdict = "PASS" if ok else "FAIL"
    RESULTS.append(f"criterion {number:>2}: {verdict} - {detail}")
