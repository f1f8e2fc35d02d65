import os
import sys

sys.path.insert(0, os.path.dirname(__file__))


def report(label, ok, detail=""):
    """One visible PASS/FAIL line per acceptance criterion (shown with pytest -s or on failure)."""
    print(f"\n[{'PASS' if ok else 'FAIL'}] {label}: {detail}")
    return ok
