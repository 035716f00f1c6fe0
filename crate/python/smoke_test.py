"""Smoke test for the cyberlog Python module.

Build and install first:  pip install --no-build-isolation ./crates/python
"""

import hashlib
import os
import sys
import tempfile

import cyberlog

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
SCENARIOS = os.path.join(ROOT, "scenarios")


def mth(leaves):
    if not leaves:
        return hashlib.sha256(b"").digest()
    if len(leaves) == 1:
        return hashlib.sha256(b"\x00" + leaves[0]).digest()
    k = 1
    while k * 2 < len(leaves):
        k *= 2
    return hashlib.sha256(b"\x01" + mth(leaves[:k]) + mth(leaves[k:])).digest()


def rulesheets():
    rs = "edge(1, 2).\nedge(2, 3).\npath(X, Y) :- edge(X, Y).\npath(X, Z) :- path(X, Y), edge(Y, Z).\n"
    ast = cyberlog.parse(rs, "G")
    assert ast["self_id"] == "G", ast
    assert cyberlog.format(cyberlog.format(rs, "G"), "G") == cyberlog.format(rs, "G")
    try:
        cyberlog.parse("p(X, Y) :- q(X).\n", "G")
    except ValueError:
        pass
    else:
        raise AssertionError("unsafe rule accepted")


def knowledge_base():
    kb = cyberlog.KnowledgeBase("path(X, Y) :- edge(X, Y).\npath(X, Z) :- path(X, Y), edge(Y, Z).\n", "G")
    for a, b in [(1, 2), (2, 3), (3, 4)]:
        kb.add_fact(f"edge({a}, {b})")
    derived = kb.saturate()
    assert derived == 6, derived
    assert len(kb.query("path(1, X)")) == 3
    assert "'G' attests path(1, 4)" in kb.facts()
    assert "path" in kb.explain("path(1, 4)")


def merkle():
    leaves = [bytes([i]) * (i + 1) for i in range(13)]
    root = cyberlog.merkle_root(leaves)
    assert root == mth(leaves).hex()
    for i in range(len(leaves)):
        path = cyberlog.inclusion_proof(leaves, i)
        assert cyberlog.verify_inclusion(root, leaves[i], i, len(leaves), path)
        assert not cyberlog.verify_inclusion(root, leaves[i] + b"x", i, len(leaves), path)
    proof = cyberlog.consistency_proof(leaves, 5)
    assert cyberlog.verify_consistency(mth(leaves[:5]).hex(), root, 5, len(leaves), proof)
    assert cyberlog.sha256(b"abc") == hashlib.sha256(b"abc").hexdigest()


def scenario():
    report = cyberlog.run_scenario(os.path.join(SCENARIOS, "rtaphm_booking.jsonl"))
    assert all(e["pass"] for e in report["expectations"]), report
    with tempfile.TemporaryDirectory() as tmp:
        dep = cyberlog.Deployment(os.path.join(SCENARIOS, "rtaphm_booking.jsonl"), os.path.join(tmp, "claims.log"))
        dep.run_until(500)
        assert dep.count("DOM", "good_rtf_exists(R, A)") == 0
        report = dep.run()
        assert all(e["pass"] for e in report["expectations"])
        assert dep.count("DOM", "good_rtf_exists(7, 3)") == 1
        audit = dep.audit("DOM", "good_rtf_exists(7, 3)")
        assert audit["ok"], audit["rendered"]
        checked, failures = dep.audit_all()
        assert checked > 0 and not failures, failures
        assert dep.log_root()["tree_size"] > 0
        assert dep.metrics("SB")["events"] == 1


def main():
    for check in (rulesheets, knowledge_base, merkle, scenario):
        check()
        print(f"ok {check.__name__}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
