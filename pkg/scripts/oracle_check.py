"""Run the closed-form invariant suite for the univariate normal model."""

import sys

from shrinkmeta import checks

if __name__ == "__main__":
    results = checks.run_all()
    print(checks.format_table(results))
    sys.exit(0 if all(r.passed for r in results) else 1)
