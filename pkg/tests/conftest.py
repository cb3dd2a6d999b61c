import os

# single-threaded BLAS keeps timing and bit-exactness claims honest
for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(var, "1")

ACCEPTANCE = {}


def record(criterion, ok, detail):
    """Store one pass/fail line for the end-of-run acceptance summary."""
    ACCEPTANCE[criterion] = f"criterion {criterion:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE[criterion])
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
