"""Collects one status line per acceptance criterion for the terminal summary."""

RESULTS: list[tuple[int, str, str]] = []


def record(n: int, status: str, detail: str = "") -> None:
    RESULTS.append((n, status, detail))
    print(f"criterion {n:2d}: {status} {detail}".rstrip())
