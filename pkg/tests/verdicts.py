"""Acceptance verdicts collected during a run and echoed in the terminal summary."""

VERDICTS: dict[str, str] = {}


def record(criterion: str, passed: bool | None, detail: str = "") -> bool:
    """``passed=None`` marks a criterion that could not be exercised here."""
    status = "SKIP" if passed is None else "PASS" if passed else "FAIL"
    line = f"{criterion} {status} {detail}".rstrip()
    VERDICTS[criterion] = line
    print(line)
    return bool(passed)
