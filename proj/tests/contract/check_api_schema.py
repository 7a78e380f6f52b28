"""Drives a live `nlq serve` and validates every response body against docs/api_schema.json."""

import json
import os
import signal
import sqlite3
import subprocess
import sys
import tempfile
import urllib.error
import urllib.request
from pathlib import Path

import jsonschema

SCRIPT = [
    {"template": "classify_intent", "match": "What tables are available", "response": "STRUCTURE"},
    {"template": "classify_intent", "match": "", "response": "DATA"},
    {"template": "generate_sql", "match": "per region",
     "response": "```sql\nSELECT region, COUNT(*) AS n FROM customer GROUP BY region\n```"},
    {"template": "generate_sql", "match": "", "response": "Sorry, I cannot help."},
    {"template": "refine_sql", "match": "", "response": "Sorry, still no."},
    {"template": "introspect", "match": "", "response": "VERDICT: PASS"},
    {"template": "answer", "match": "", "response": "East has 1, West has 2.\nCHART: bar, x=region, y=n"},
]


class Checker:
    def __init__(self, schema, base):
        self.schema = schema
        self.base = base
        self.checked = 0
        self.failures = []

    def validate(self, def_name, doc, label):
        wrapper = {"$schema": self.schema.get("$schema"), "$defs": self.schema["$defs"],
                   "$ref": f"#/$defs/{def_name}"}
        errors = list(jsonschema.Draft202012Validator(wrapper).iter_errors(doc))
        self.checked += 1
        if errors:
            self.failures.append(f"{label}: {def_name}: {errors[0].message} at {list(errors[0].absolute_path)}")

    def call(self, method, path, endpoint, body=None, expect=None):
        data = json.dumps(body).encode() if body is not None else None
        req = urllib.request.Request(self.base + path, data=data, method=method,
                                     headers={"Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(req, timeout=20) as res:
                status, payload = res.status, json.loads(res.read())
        except urllib.error.HTTPError as e:
            status, payload = e.code, json.loads(e.read())
        label = f"{method} {path} -> {status}"
        if expect is not None and status != expect:
            self.failures.append(f"{label}: expected status {expect}")
        if endpoint is not None:
            if body is not None and "request" in self.schema["endpoints"][endpoint]:
                self.validate(self.schema["endpoints"][endpoint]["request"], body, label + " (request)")
            def_name = self.schema["endpoints"][endpoint]["responses"].get(str(status))
            if def_name is None:
                self.failures.append(f"{label}: status not declared for {endpoint}")
            else:
                self.validate(def_name, payload, label)
        return status, payload


def main():
    nlq, source = Path(sys.argv[1]), Path(sys.argv[2])
    schema = json.loads((source / "docs" / "api_schema.json").read_text())
    jsonschema.Draft202012Validator.check_schema(schema)
    work = Path(tempfile.mkdtemp(prefix="nlq-contract-"))
    db = sqlite3.connect(work / "shop.sqlite")
    db.executescript((source / "data" / "fixtures" / "shop.sql").read_text())
    db.close()
    (work / "script.json").write_text(json.dumps(SCRIPT))
    (work / "nlq.toml").write_text(
        'storage_dir = "state"\n[[databases]]\nname = "shop"\nlocation = "shop.sqlite"\n'
        '[llm]\nbackend = "scripted"\nscript_file = "script.json"\n')

    proc = subprocess.Popen([str(nlq), "--config", str(work / "nlq.toml"), "serve", "--listen", "127.0.0.1:0"],
                            stdout=subprocess.PIPE, text=True)
    try:
        line = proc.stdout.readline().strip()
        if not line.startswith("listening on "):
            print("server did not start:", line)
            return 1
        c = Checker(schema, "http://" + line[len("listening on "):])

        c.call("GET", "/schema/shop", "GET /schema/{database}", expect=404)
        c.call("POST", "/scan", "POST /scan", {"database": "shop"}, expect=200)
        c.call("POST", "/scan", "POST /scan", {"database": "nope"}, expect=404)
        c.call("GET", "/schema/shop", "GET /schema/{database}", expect=200)
        _, s = c.call("POST", "/sessions", "POST /sessions", {"database": "shop"}, expect=201)
        sid = s["session_id"]
        c.call("POST", "/sessions", "POST /sessions", {"database": "nope"}, expect=404)
        c.call("POST", "/rules", "POST /rules", {"text": "region names are capitalised"}, expect=201)
        c.call("POST", "/rules", "POST /rules",
               {"text": "only active customers", "scope": "session", "session_id": sid}, expect=201)
        c.call("POST", "/rules", "POST /rules", {"text": ""}, expect=422)
        _, env = c.call("POST", f"/sessions/{sid}/ask", "POST /sessions/{id}/ask",
                        {"question": "How many customers per region?"}, expect=200)
        c.call("POST", f"/sessions/{sid}/ask", "POST /sessions/{id}/ask",
               {"question": "What tables are available?"}, expect=200)
        _, bad = c.call("POST", f"/sessions/{sid}/ask", "POST /sessions/{id}/ask",
                        {"question": "Something unanswerable"}, expect=200)
        c.call("POST", f"/sessions/{sid}/ask", "POST /sessions/{id}/ask", {"question": ""}, expect=422)
        c.call("POST", "/sessions/none/ask", "POST /sessions/{id}/ask", {"question": "x"}, expect=404)
        c.call("GET", "/traces/" + env["trace_id"], "GET /traces/{id}", expect=200)
        c.call("GET", "/traces/" + bad["trace_id"], "GET /traces/{id}", expect=200)
        c.call("GET", "/traces/none", "GET /traces/{id}", expect=404)
        c.call("GET", f"/sessions/{sid}", "GET /sessions/{id}", expect=200)
        c.call("GET", "/sessions/none", "GET /sessions/{id}", expect=404)
        c.call("GET", "/rules", "GET /rules", expect=200)
        c.call("DELETE", "/rules/rule-0001", "DELETE /rules/{id}", expect=200)
        c.call("DELETE", "/rules/rule-0001", "DELETE /rules/{id}", expect=404)
        c.call("GET", "/rules?include_inactive=true", "GET /rules", expect=200)

        report = subprocess.run([str(nlq), "--backend", "gold-echo", "--json", "--config", str(work / "absent.toml"),
                                 "bench", str(source / "data" / "mini_bird")],
                                capture_output=True, text=True, check=True)
        c.validate("BenchReport", json.loads(report.stdout), "bench --json")
    finally:
        proc.send_signal(signal.SIGTERM)
        proc.wait(timeout=10)

    for f in c.failures:
        print("FAIL", f)
    print(f"{c.checked} documents checked, {len(c.failures)} failures")
    return 1 if c.failures else 0


if __name__ == "__main__":
    sys.exit(main())
