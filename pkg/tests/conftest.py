def pytest_terminal_summary(terminalreporter):
    lines = []
    for key in ("passed", "failed"):
        for rep in terminalreporter.stats.get(key, []):
            if rep.when != "call":
                continue
            for name, value in rep.user_properties:
                if name == "criterion":
                    lines.append((value[0], f"{'PASS' if rep.passed else 'FAIL'}  criterion {value[0]}: {value[1]}"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines, key=lambda t: [int(p) if p.isdigit() else p for p in _split(t[0])]):
            terminalreporter.write_line(line)


def _split(key):
    head = "".join(c for c in key if c.isdigit())
    return [head, key[len(head):]]
