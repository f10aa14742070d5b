"""Per-criterion outcomes collected by the acceptance suite."""

RESULTS = {}


def record(name, ok, detail):
    RESULTS[name] = (bool(ok), detail)
    print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return ok
