#!/usr/bin/env python3
"""Runs a small simulate/sweep/pipeline/train/eval/reconstruct chain and
validates every JSON output against the schemas in schemas/."""

import argparse
import json
import pathlib
import subprocess
import sys
import tempfile

import jsonschema


def load_schemas(root):
    return {p.name.removesuffix(".schema.json"): json.loads(p.read_text())
            for p in sorted(root.glob("*.schema.json"))}


def check(schemas, name, doc, where, failures):
    validator = jsonschema.Draft202012Validator(schemas[name])
    for err in validator.iter_errors(doc):
        failures.append(f"{where}: {err.message} at {list(err.absolute_path)}")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--cli", required=True)
    ap.add_argument("--schemas", required=True)
    args = ap.parse_args()
    schemas = load_schemas(pathlib.Path(args.schemas))
    for s in schemas.values():
        jsonschema.Draft202012Validator.check_schema(s)

    with tempfile.TemporaryDirectory() as tmp:
        t = pathlib.Path(tmp)
        spec = t / "spec.json"
        spec.write_text(json.dumps({"scene": {"frames": 24, "height": 8, "width": 8},
                                    "drift": {"channels": 4, "geometry_noise": 0.03}, "seed": 3}))
        steps = [
            ["simulate", "--spec", spec, "--out", t / "sim"],
            ["sweep", "--data", t / "sim", "--out", t / "sweep"],
            ["train", "--data", t / "sim", "--out", t / "train", "--steps", "4", "--clip-len", "4",
             "--hidden", "4", "--checkpoint-every", "2"],
            ["pipeline", "--data", t / "sim", "--out", t / "stab", "--stabilizer", t / "train" / "final"],
            ["eval", "--data", t / "stab", "--out", t / "eval", "--protocol", "video", "--intervals", "12,24"],
            ["eval", "--data", t / "stab", "--out", t / "eval_image", "--protocol", "image"],
            ["reconstruct", "--data", t / "stab", "--out", t / "rec"],
        ]
        for cmd in steps:
            r = subprocess.run([args.cli, *map(str, cmd)], capture_output=True, text=True)
            if r.returncode != 0:
                print(f"FAIL {cmd[0]} exited {r.returncode}: {r.stderr}")
                return 1

        failures = []
        targets = {
            "sequence_manifest": [t / "sim" / "manifest.json", t / "stab" / "manifest.json"],
            "sweep_summary": [t / "sweep" / "summary.json"],
            "params": [t / "train" / "final" / "params.json", t / "train" / "checkpoints" / "step_000002" / "params.json"],
            "train_config": [t / "train" / "train_config.json"],
            "metrics": [t / "eval" / "metrics.json", t / "eval_image" / "metrics.json"],
            "poses": [t / "rec" / "poses.json"],
            "run_manifest": sorted(t.rglob("run_manifest.json")),
        }
        checked = 0
        for name, paths in targets.items():
            for p in paths:
                check(schemas, name, json.loads(p.read_text()), p.relative_to(t), failures)
                checked += 1
        for line in (t / "train" / "train_log.jsonl").read_text().splitlines():
            check(schemas, "train_log_entry", json.loads(line), "train_log.jsonl", failures)
            checked += 1

    for f in failures:
        print("FAIL", f)
    print(f"{checked} documents checked, {len(failures)} violations")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
