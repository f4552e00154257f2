#!/usr/bin/env python3
# Apache License, Version 2.0, refer to LICENSE.txt
"""Runs each CLI command on small settings and validates every emitted file
against the schemas in docs/schemas."""

import csv
import json
import math
import pathlib
import shutil
import subprocess
import sys

import jsonschema
from referencing import Registry, Resource

JSON_SCHEMA = {
    "mixture.json": "mixture.schema.json",
    "init_mixture.json": "mixture.schema.json",
    "report.json": "report.schema.json",
    "manifest.json": "manifest.schema.json",
    "error.json": "error.schema.json",
    "eval.json": "eval.schema.json",
    "observations.json": "observations.schema.json",
}


def load_schemas(schema_dir):
    schemas = {}
    for p in schema_dir.glob("*.schema.json"):
        schemas[p.name] = json.loads(p.read_text())
    registry = Registry().with_resources(
        (name, Resource.from_contents(s)) for name, s in schemas.items())
    return schemas, registry


def check_cell(value, kind, where):
    if kind == "int":
        int(value)
    elif kind == "float":
        float(value)
    elif kind == "float_or_empty":
        if value != "":
            float(value)
    elif kind == "string":
        if value == "":
            raise ValueError(f"{where}: empty string cell")


def validate_csv(path, layout):
    with path.open(newline="") as f:
        rows = list(csv.reader(f))
    header = [c[0] for c in layout["columns"]]
    if rows[0] != header:
        raise ValueError(f"{path}: header {rows[0]} != {header}")
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ValueError(f"{path}:{i}: {len(row)} cells")
        for value, (name, kind) in zip(row, layout["columns"]):
            check_cell(value, kind, f"{path}:{i}:{name}")
    return len(rows) - 1


def validate_mixture_shape(doc, where):
    d = doc["dim"]
    if len(doc["weights"]) != len(doc["components"]):
        raise ValueError(f"{where}: weights and components differ in length")
    if not math.isclose(sum(doc["weights"]), 1.0, abs_tol=1e-9):
        raise ValueError(f"{where}: weights do not sum to one")
    for c in doc["components"]:
        if len(c["mean"]) != d or len(c["chol_cov_rowmajor_lower"]) != d * (d + 1) // 2:
            raise ValueError(f"{where}: component size does not match dim")


def validate_dir(out, schemas, registry, csv_layouts):
    checked = 0
    for p in sorted(out.iterdir()):
        if p.name in JSON_SCHEMA:
            doc = json.loads(p.read_text())
            schema = schemas[JSON_SCHEMA[p.name]]
            jsonschema.Draft202012Validator(schema, registry=registry).validate(doc)
            if JSON_SCHEMA[p.name] == "mixture.schema.json":
                validate_mixture_shape(doc, p)
            if p.name == "report.json":
                validate_mixture_shape(doc["mixture"], p)
            if p.name == "manifest.json":
                missing = [a for a in doc["artifacts"] if not (out / a).exists()]
                if missing:
                    raise ValueError(f"{p}: listed artifacts missing: {missing}")
        elif p.suffix == ".csv":
            validate_csv(p, csv_layouts[p.name])
        else:
            raise ValueError(f"{p}: no documented schema")
        checked += 1
    return checked


def main():
    gola, docs, work = map(pathlib.Path, sys.argv[1:4])
    data = pathlib.Path(__file__).resolve().parent / "data"
    schemas, registry = load_schemas(docs / "schemas")
    csv_layouts = json.loads((docs / "schemas" / "csv_formats.json").read_text())
    shutil.rmtree(work, ignore_errors=True)
    runs = {
        "fit": (["fit", "--target.builtin", "bimodal2d"], 0),
        "refine": (["refine", "--reference", str(data / "eval_p.json"), "--vi.max_epochs", "3",
                    "--vi.steps_per_epoch", "2", "--vi.jsd_samples", "300"], 0),
        "eval": (["eval", "--eval.p", str(data / "eval_p.json"), "--eval.q", str(data / "eval_q.json"),
                  "--eval.n", "1000"], 0),
        "generate": (["generate", "--generate.d", "3", "--generate.M", "3"], 0),
        "robustness": (["robustness", "--robustness.n_cases", "3", "--robustness.jsd_samples", "300",
                        "--factors.d", "[2,3]"], 0),
        "sensitivity": (["sensitivity", "--sensitivity.n", "4", "--sensitivity.bootstrap", "100",
                         "--sensitivity.jsd_samples", "300", "--factors.d", "[2,3]"], 0),
        "exemplar": (["exemplar"], 0),
        "failure": (["eval", "--eval.p", str(data / "eval_p.json"), "--eval.q",
                     str(data / "config_fit.json")], 1),
    }
    total = 0
    for name, (args, expected) in runs.items():
        out = work / name
        proc = subprocess.run([str(gola), *args, "--out", str(out)], capture_output=True, text=True)
        if proc.returncode != expected:
            print(f"{name}: exit {proc.returncode}, expected {expected}\n{proc.stderr}")
            return 1
        if name == "eval":
            jsonschema.validate(json.loads(proc.stdout), schemas["eval.schema.json"])
        if expected != 0:
            jsonschema.validate(json.loads(proc.stderr.strip().splitlines()[-1]), schemas["error.schema.json"])
        n = validate_dir(out, schemas, registry, csv_layouts)
        print(f"{name}: {n} files valid")
        total += n
    print(f"all {total} artifacts valid")
    return 0


if __name__ == "__main__":
    sys.exit(main())
