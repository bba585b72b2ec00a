#!/usr/bin/env python3
"""End-to-end drive of the command-line tool: corpus synthesis through
pretraining, segmentation, fine-tuning, generation, pruning, benching and the
invariant suite, plus the exit-code and config-precedence contracts."""

import csv
import json
import os
import subprocess
import sys
import tempfile

BIN = os.path.abspath(sys.argv[1])

MODEL = [
    "--layers", "1", "--d-model", "16", "--heads", "2", "--d-ff", "32",
    "--rank-la", "2", "--rank-gate", "2", "--model-seed", "11",
]

checks = 0


def run(*args, expect=0, env_extra=None, cwd=None):
    global checks
    env = dict(os.environ)
    if env_extra:
        env.update(env_extra)
    proc = subprocess.run([BIN, *args], capture_output=True, text=True, env=env, cwd=cwd)
    if proc.returncode != expect:
        print(f"FAIL: {' '.join(args[:3])}... exited {proc.returncode}, wanted {expect}")
        print(proc.stdout[-2000:])
        print(proc.stderr[-2000:])
        sys.exit(1)
    checks += 1
    return proc


def require(cond, what):
    global checks
    if not cond:
        print(f"FAIL: {what}")
        sys.exit(1)
    checks += 1


def read_trace(path):
    with open(path) as f:
        return json.loads(f.readline())


def main():
    root = tempfile.mkdtemp(prefix="cli_smoke_")
    os.chdir(root)

    # corpus synthesis
    run("synth", "--n", "40", "--seed", "7", "--outdir", "syn")
    with open("syn/corpus.jsonl") as f:
        lines = f.readlines()
    require(len(lines) == 40, "synth wrote 40 corpus lines")
    sample = json.loads(lines[0])
    require(set(sample) == {"query", "thinking", "answer"}, "corpus record fields")
    require(os.path.exists("syn/effective_config.toml"), "synth echoed its config")

    # pretrain a tiny base on it
    run("pretrain", *MODEL, "--corpus", "syn/corpus.jsonl", "--epochs", "1",
        "--batch", "8", "--outdir", "pre")
    require(os.path.exists("pre/base_weights.json"), "pretrain wrote weights")
    with open("pre/pretrain_report.csv") as f:
        rows = list(csv.DictReader(f))
    require(rows and set(rows[0]) == {"step", "lr", "loss_ar", "loss_kd", "loss_total"},
            "pretrain report header")

    # segment + cluster with the base as the scoring model
    run("segment", "--corpus", "syn/corpus.jsonl", "--model", "pre/base_weights.json",
        "--k", "4", "--min-count", "3", "--outdir", "seg")
    require(os.path.exists("seg/annotated.jsonl"), "segment wrote annotations")
    with open("seg/clusters.json") as f:
        cm = json.load(f)
    require(cm["k"] == 4 and len(cm["centroids"]) == 4, "cluster model holds 4 centroids")
    ann = json.loads(open("seg/annotated.jsonl").readline())
    require(set(ann) == {"query", "steps", "answer"} and ann["steps"], "annotated record fields")
    require(set(ann["steps"][0]) == {"pattern", "text"}, "annotated step fields")

    # fine-tune the state path
    run("train", "--corpus", "seg/annotated.jsonl", "--base", "pre/base_weights.json",
        "--epochs", "1", "--batch", "8", "--outdir", "tun")
    require(os.path.exists("tun/tuned_weights.json"), "train wrote weights")
    with open("tun/train_report.csv") as f:
        rows = list(csv.DictReader(f))
    require(rows and set(rows[0]) == {"step", "lr", "loss_ar", "loss_kd", "loss_total"},
            "train report header")

    # greedy generation; disabling correction must equal a zero strength cap
    prompt = "compute 5 plus 3 times 2 ."
    run("generate", "--model", "tun/tuned_weights.json", "--prompt", prompt,
        "--greedy", "--t-max", "4", "--no-correction", "--outdir", "g_off")
    run("generate", "--model", "tun/tuned_weights.json", "--prompt", prompt,
        "--greedy", "--t-max", "4", "--alpha-max", "0", "--outdir", "g_zero")
    a, b = read_trace("g_off/trace.json"), read_trace("g_zero/trace.json")
    require([s["tokens"] for s in a["steps"]] == [s["tokens"] for s in b["steps"]],
            "no-correction equals zero-alpha step tokens")
    require(a["answer"] == b["answer"], "no-correction equals zero-alpha answer tokens")
    require(a["prompt"] == b["prompt"] and a["prompt"], "traces carry the prompt")

    # nucleus sampling runs and records its settings
    run("generate", "--model", "tun/tuned_weights.json", "--prompt", prompt,
        "--sample", "--seed", "3", "--t-max", "2", "--outdir", "g_s")
    t = read_trace("g_s/trace.json")
    require(t["sampled"] is True and t["seed"] == 3, "sampling settings in the trace")

    # prune the sampled trace
    run("prune", "--traces", "g_s/trace.json", "--keep", "0.5", "--outdir", "pr")
    p = read_trace("pr/pruned.jsonl")
    require(len(p["steps"]) <= len(t["steps"]), "prune never grows a trace")
    require(p["answer"] == t["answer"], "prune keeps the answer region")

    # tiny latency sweep in 32-bit mode
    run("bench", *MODEL, "--lengths", "48,72", "--prompt-len", "8", "--step-body", "8",
        "--reps", "5", "--warmup", "0", "--outdir", "b",
        env_extra={"STATEFORMER_PRECISION": "f32"})
    with open("b/bench.csv") as f:
        header = f.readline().strip()
        body = f.readlines()
    require(header == "context_len,mode,per_token_ms,cache_positions_peak,"
                      "cache_bytes_est,flops_analytic", "bench csv header")
    require(len(body) == 4, "bench csv holds two modes at two lengths")
    require(os.path.exists("b/bench.gnuplot"), "bench wrote the gnuplot companion")

    # the invariant suite
    proc = run("verify")
    require("checks passed" in proc.stdout and "FAIL" not in proc.stdout, "verify suite clean")

    # config file supplies values; explicit flags win over it
    with open("gen.toml", "w") as f:
        f.write("[generate]\nt_max = 2\nalpha_max = 0.25\n")
    run("generate", "--model", "tun/tuned_weights.json", "--prompt", prompt,
        "--config", "gen.toml", "--t-max", "3", "--outdir", "g_c")
    t = read_trace("g_c/trace.json")
    require(t["t_max"] == 3, "flag beats the config file")
    require(t["alpha_max"] == 0.25, "config file beats the default")

    # exit-code contract: 2 for unusable flags, 1 for runtime failures
    run("generate", "--model", "tun/tuned_weights.json", "--prompt", prompt,
        "--greedy", "--sample", expect=2)
    run("generate", "--no-such-flag", expect=2)
    run("train", expect=2)  # missing required options
    run("nosuchcmd", expect=2)
    run("generate", "--model", "missing.json", "--prompt", prompt, expect=1)
    run("generate", "--model", "tun/tuned_weights.json", "--prompt", prompt,
        expect=1, env_extra={"STATEFORMER_PRECISION": "bad"})
    run("segment", "--corpus", "syn/corpus.jsonl", "--model", "pre/base_weights.json",
        "--min-count", "100000", expect=1)  # every transition candidate filtered out

    print(f"cli smoke: {checks} checks passed")


if __name__ == "__main__":
    main()
