"""End-to-end checks of the command-line tool: exit codes and outputs."""

import json
import os
import struct
import subprocess
import sys
import tempfile

exe = sys.argv[1]
failures = []


def run(*args):
    return subprocess.run([exe, *args], capture_output=True, text=True)


def expect(name, cond, detail=""):
    print(("ok   " if cond else "FAIL ") + name + ("" if cond else ": " + detail))
    if not cond:
        failures.append(name)


with tempfile.TemporaryDirectory() as tmp:
    cfg = os.path.join(tmp, "cfg.json")
    r = run("build", "--variant", "n", "--out", cfg)
    expect("build writes a config", r.returncode == 0 and json.load(open(cfg))["variant"] == "n", r.stderr)

    r = run("build", "--variant", "micro", "--hyperedges", "3", "--no-ds")
    out = json.loads(r.stdout)
    expect("flags override the preset", out["hyperedges"] == 3 and out["use_ds"] is False, r.stdout)

    r = run("profile", "--variant", "n")
    total = [l for l in r.stdout.splitlines() if l.startswith("input ")]
    ok = r.returncode == 0 and total
    if ok:
        words = total[0].split()
        params, gflops = float(words[2]), float(words[5])
        ok = abs(params - 2.5) / 2.5 <= 0.15 and abs(gflops - 6.4) / 6.4 <= 0.15
    expect("profile n within 15% of 6.4 G / 2.5 M", ok, r.stdout[-300:])

    r = run("profile", "--config", cfg, "--json", "--compare")
    j = json.loads(r.stdout)
    expect("profile json with comparison", r.returncode == 0 and len(j["compare"]) == 10, r.stderr)

    r = run("gradcheck", "--seed", "0", "--size", "micro")
    expect("gradcheck passes", r.returncode == 0 and "max relative error" in r.stdout, r.stdout + r.stderr)

    img = os.path.join(tmp, "zeros.raw")
    with open(img, "wb") as f:
        f.write(struct.pack("<%df" % (3 * 64 * 64), *([0.0] * (3 * 64 * 64))))
    r = run("detect", "--variant", "n", "--image", img, "--height", "64", "--width", "64", "--conf", "0.999")
    expect("detect on zeros at conf 0.999 is empty", r.returncode == 0 and r.stdout == "", r.stdout + r.stderr)

    ppm = os.path.join(tmp, "gray.ppm")
    with open(ppm, "wb") as f:
        f.write(b"P6\n50 40\n255\n" + bytes([128] * 50 * 40 * 3))
    w = os.path.join(tmp, "w.bin")
    r = run("build", "--variant", "micro", "--out", os.path.join(tmp, "m.json"), "--weights-out", w)
    r = run("detect", "--config", os.path.join(tmp, "m.json"), "--weights", w, "--image", ppm, "--conf", "0.0")
    lines = r.stdout.splitlines()
    ok = r.returncode == 0 and lines and all(set(json.loads(l)) == {"box", "class", "score"} for l in lines)
    ok = ok and all(0 <= json.loads(l)["box"][2] <= 50 for l in lines)
    expect("detect emits json lines clipped to the image", ok, r.stderr)

    topk = os.path.join(tmp, "top.csv")
    r = run("hyperedges", "--config", os.path.join(tmp, "m.json"), "--weights", w, "--image", ppm,
            "--layer", "hyperace.high0", "--top-out", topk)
    rows = r.stdout.splitlines()
    expect("hyperedges emits a participation csv", r.returncode == 0 and rows[0] == "vertex,y,x,e0,e1"
           and len(rows) == 1 + 4 * 4 and os.path.getsize(topk) > 0, r.stderr)

    r = run("hyperedges", "--variant", "micro", "--image", ppm, "--layer", "nope")
    expect("unknown layer is an operational error", r.returncode == 1 and "hyperace.high0" in r.stderr, r.stderr)

    r = run("detect", "--variant", "micro", "--image", os.path.join(tmp, "missing.ppm"))
    expect("missing image exits 1", r.returncode == 1, r.stderr)

    r = run("detect", "--variant", "micro", "--weights", ppm, "--image", ppm)
    expect("corrupt weights exit 1", r.returncode == 1 and "magic" in r.stderr, r.stderr)

    r = run("profile", "--bogus")
    expect("unknown flag exits 2", r.returncode == 2, r.stderr)
    r = run()
    expect("missing command exits 2", r.returncode == 2, r.stderr)
    r = run("build", "--tunnels", "12")
    expect("bad tunnel spec exits 2", r.returncode == 2, r.stderr)

    for cmd in ["build", "detect", "profile", "hyperedges", "gradcheck", "toytrain", "selftest"]:
        r = run(cmd, "--help")
        expect(cmd + " --help", r.returncode == 0 and "Usage" in r.stdout, r.stderr)

    r = run("selftest")
    expect("selftest passes", r.returncode == 0, r.stdout)

    trace = os.path.join(tmp, "loss.csv")
    r = run("toytrain", "--variant", "micro", "--steps", "4", "--batch", "2", "--lr", "0.01",
            "--eval-scenes", "4", "--out", os.path.join(tmp, "t.bin"), "--trace", trace)
    ok = r.returncode == 0 and open(trace).readline().strip() == "step,loss"
    ok = ok and "recall" in json.loads(r.stdout) and "step 0" in r.stderr
    expect("toytrain writes weights and trace", ok, r.stdout + r.stderr)

    r1 = run("toytrain", "--variant", "micro", "--steps", "2", "--batch", "2", "--eval-scenes", "0", "--seed", "5")
    r2 = run("toytrain", "--variant", "micro", "--steps", "2", "--batch", "2", "--eval-scenes", "0", "--seed", "5")
    expect("toytrain is deterministic given --seed",
           json.loads(r1.stdout)["final_loss"] == json.loads(r2.stdout)["final_loss"], r1.stdout + r2.stdout)

sys.exit(1 if failures else 0)
