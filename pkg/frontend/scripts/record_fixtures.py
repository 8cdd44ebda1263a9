"""Record live API responses into tests/fixtures for the contract tests.

Starts a service on a scratch data dir, drives one session through both
checkpoints to done and one session into a failure, and snapshots every
payload the console renders. Rerun after contract changes:

    python3 scripts/record_fixtures.py
"""

import json
import subprocess
import sys
import tempfile
import time
import urllib.error
import urllib.request
from pathlib import Path

HERE = Path(__file__).resolve().parent
REPO = HERE.parent.parent
FIXTURES = HERE.parent / "tests" / "fixtures"
PORT = 8931
BASE = f"http://127.0.0.1:{PORT}/api/v1"

TRUTH_EDITS = {
    "100*500.0": "100*400.0",
    "100*50.0": "100*60.0",
    "100*200.0": "100*300.0",
}


def api(method: str, path: str, body: dict | None = None):
    data = None if body is None else json.dumps(body).encode()
    req = urllib.request.Request(
        BASE + path, data=data, method=method,
        headers={"Content-Type": "application/json"})
    with urllib.request.urlopen(req) as resp:
        return json.loads(resp.read())


def get_text(path: str) -> str:
    with urllib.request.urlopen(BASE + path) as resp:
        return resp.read().decode()


def wait_status(sid: str, wanted: set[str], timeout_s: float = 120.0) -> dict:
    deadline = time.monotonic() + timeout_s
    while time.monotonic() < deadline:
        detail = api("GET", f"/sessions/{sid}")
        if detail["status"] in wanted:
            return detail
        time.sleep(0.2)
    raise SystemExit(f"timed out waiting for {wanted} on {sid}")


def save(name: str, payload) -> None:
    path = FIXTURES / name
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(payload, str):
        path.write_text(payload)
    else:
        path.write_text(json.dumps(payload, indent=1) + "\n")
    print(f"  wrote {path.relative_to(HERE.parent)}")


def main() -> None:
    deck = (REPO / "tests/fixtures/corpus/spe1_style.data").read_text()
    truth = deck
    for old, new in TRUTH_EDITS.items():
        truth = truth.replace(old, new)
    with tempfile.TemporaryDirectory() as tmp:
        truth_path = Path(tmp, "truth.data")
        truth_path.write_text(truth)
        obs_path = Path(tmp, "obs.csv")
        subprocess.run(
            [sys.executable, str(REPO / "scripts/make_pseudo_history.py"),
             str(truth_path), "--out", str(obs_path)],
            check=True, cwd=REPO)
        observations = obs_path.read_text()

        server = subprocess.Popen(
            ["petromatch", "serve", "--data-dir", str(Path(tmp, "svc")),
             "--bind", f"127.0.0.1:{PORT}"],
            stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)
        try:
            for _ in range(100):
                try:
                    api("GET", "/sessions")
                    break
                except (urllib.error.URLError, ConnectionError):
                    time.sleep(0.2)
            else:
                raise SystemExit("service never came up")

            print("happy-path session:")
            brief = api("POST", "/sessions", {
                "deck": deck, "observations": observations,
                "config": {"seed": 3, "budget": 12, "n_initial": 6},
            })
            sid = brief["id"]
            api("POST", f"/sessions/{sid}/advance", {})
            detail = wait_status(sid, {"waiting_checkpoint"})
            save("detail_checkpoint_params.json", detail)
            view = api("GET", f"/sessions/{sid}/checkpoint")
            save("checkpoint_params.json", view)

            api("PATCH", f"/sessions/{sid}/checkpoint",
                {"version": view["version"], "approve": True})
            api("POST", f"/sessions/{sid}/advance", {})
            detail = wait_status(sid, {"waiting_checkpoint"})
            view = api("GET", f"/sessions/{sid}/checkpoint")
            save("checkpoint_optimizer.json", view)

            api("PATCH", f"/sessions/{sid}/checkpoint",
                {"version": view["version"], "approve": True})
            api("POST", f"/sessions/{sid}/advance", {})
            detail = wait_status(sid, {"done"})
            save("detail_done.json", detail)
            save("metrics.json", api("GET", f"/sessions/{sid}/metrics"))
            report = api("GET", f"/sessions/{sid}/report")
            save("report.json", report)
            for entry in report["series"]:
                text = get_text(f"/sessions/{sid}/report/files/{entry['file']}")
                save(f"series/{Path(entry['file']).name}", text)

            print("failed session:")
            brief = api("POST", "/sessions", {
                "deck": deck, "observations": observations,
                "config": {"seed": 0, "budget": 6, "n_initial": 3,
                           "auto_approve": True,
                           "backend": "external",
                           "command": ["sh", "-c", "exit 1 # {deck} {outdir}"]},
            })
            fid = brief["id"]
            api("POST", f"/sessions/{fid}/advance", {})
            save("detail_failed.json", wait_status(fid, {"failed"}))

            save("sessions.json", api("GET", "/sessions"))
        finally:
            server.terminate()
            server.wait(timeout=10)


if __name__ == "__main__":
    main()
