"""Regenerates the bundled scenario files.

    python3 scenarios/generate.py
"""

import json
from pathlib import Path

HERE = Path(__file__).resolve().parent

MONITORS = [
    {"name": "SB", "seed": 1, "rulesheet": "rulesheets/sb.cyberlog"},
    {"name": "MRM", "seed": 2, "rulesheet": "rulesheets/mrm.cyberlog"},
    {"name": "CA", "seed": 3, "rulesheet": "rulesheets/ca.cyberlog"},
    {"name": "OM", "seed": 4, "rulesheet": "rulesheets/om.cyberlog"},
    {"name": "DOM", "seed": 5, "rulesheet": "rulesheets/dom.cyberlog", "watch": ["SB", "MRM", "OM", "CA"]},
]

PREMISES = {
    "request": "/servicerequest",
    "feasible": "/bookingoptions",
    "tasks": "/tasks/done",
    "rtf": "/rtf",
}


def dumps(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def booking(request_id, aircraft_id, t0, rtf_delta=800, drop=None):
    """Events for one booking; the RTF arrives rtf_delta ms after the mission confirmation."""
    request = dumps({"customer": f"c{request_id}", "mission": "inspection", "request_id": request_id})
    ids = {"aircraft_id": aircraft_id, "request_id": request_id}
    events = [
        (t0, "SB", "/servicerequest", request),
        (t0 + 100, "MRM", "/bookingoptions", dumps(ids)),
        (t0 + 200, "CA", "/missions/confirm", dumps(ids)),
        (t0 + 600, "OM", "/tasks/done", dumps(ids)),
        (t0 + 200 + rtf_delta, "OM", "/rtf", dumps(dict(ids, request=request))),
    ]
    return [
        {"at": at, "target": target, "method": "POST", "path": path, "body": body}
        for at, target, path, body in events
        if path != PREMISES.get(drop)
    ]


def write(name, events, expect, settle_ms=3000):
    events = sorted(events, key=lambda e: e["at"])
    header = {"scenario": name, "settle_ms": settle_ms, "monitors": MONITORS, "expect": expect}
    lines = [dumps(header)] + [dumps(e) for e in events]
    (HERE / f"{name}.jsonl").write_text("\n".join(lines) + "\n")


def expect(monitor, query, count, at=None):
    e = {"monitor": monitor, "query": query, "count": count}
    if at is not None:
        e["at"] = at
    return e


def main():
    write(
        "rtaphm_booking",
        booking(7, 3, 0),
        [
            expect("DOM", "good_rtf_exists(R, A)", 0, at=500),
            expect("SB", "request(7, Data, Time)", 1),
            expect("DOM", "good_rtf_exists(R, A)", 1),
            expect("DOM", "good_rtf_exists(7, 3)", 1),
            expect("DOM", "delayed_rtf(R, D, S)", 0),
        ],
    )
    for drop in PREMISES:
        write(
            f"ablation_no_{drop}",
            booking(7, 3, 0, drop=drop),
            [expect("DOM", "good_rtf_exists(R, A)", 0)],
        )
    write(
        "delayed_rtf",
        booking(1, 3, 0, rtf_delta=1000) + booking(2, 4, 5000, rtf_delta=1001),
        [
            expect("DOM", "good_rtf_exists(R, A)", 2),
            expect("DOM", "delayed_rtf(1, D, S)", 0),
            expect("DOM", "delayed_rtf(2, D, S)", 1),
            expect("DOM", "delayed_rtf(R, 1001, 5200)", 1),
            expect("DOM", "delayed_rtf(R, 1000, S)", 0),
        ],
    )
    spacing = 20000
    events, checks = [], []
    for r in range(1, 51):
        t0 = (r - 1) * spacing
        events += booking(r, 100 + r % 7, t0)
        checks.append(expect("DOM", f"good_rtf_exists({r}, A)", 1, at=t0 + 3000))
    checks.append(expect("DOM", "good_rtf_exists(R, A)", 0))
    write("booking_50", events, checks, settle_ms=spacing)


if __name__ == "__main__":
    main()
