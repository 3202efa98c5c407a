"""Runs every CLI command once into a directory; shared by the CLI tests and the acceptance run."""
from pathlib import Path

from mocapsolve.cli import main

SEED = 7


def run(argv):
    code = main([str(a) for a in argv])
    if code != 0:
        raise RuntimeError(f"command failed ({code}): {argv}")


def run_pipeline(root, jobs=1, frames=3):
    d = Path(root)
    d.mkdir(parents=True, exist_ok=True)
    common = ["--seed", SEED, "--jobs", jobs]
    run(["synth", "--output", d / "clean.jsonl", "--count", frames, *common])
    run(["corrupt", "--input", d / "clean.jsonl", "--poses", d / "clean.poses.jsonl",
         "--output", d / "aug.jsonl", *common])
    run(["corrupt", "--mode", "outliers", "--input", d / "clean.jsonl", "--output", d / "noisy.jsonl", *common])
    run(["fit", "--input", d / "noisy.jsonl", "--output", d / "fit.jsonl", *common])
    run(["fit", "--mode", "plain", "--input", d / "noisy.jsonl", "--output", d / "fit_plain.jsonl", *common])
    run(["eval", "--input", d / "fit.jsonl", "--truth", d / "clean.poses.jsonl", "--output", d / "eval.json", *common])
    run(["eval", "--input", d / "fit_plain.jsonl", "--truth", d / "clean.poses.jsonl",
         "--output", d / "eval_plain.json", *common])
    run(["report", "--input", d / "eval.json", d / "eval_plain.json", "--output", d / "report.csv", *common])
    run(["render", "--input", d / "aug.jsonl", "--output", d / "maps", *common])
    run(["synth", "--output", d / "many.jsonl", "--count", 40, "--theta-range", 0.8, *common])
    run(["balance", "anchors", "--input", d / "many.poses.jsonl", "--output", d / "anchors.json", *common])
    run(["balance", "sample", "--input", d / "anchors.json", "--count", 5, "--output", d / "tail.jsonl", *common])
    run(["balance", "relevance", "--variant", "exp-clamped", "--input", d / "many.poses.jsonl",
         "--output", d / "relevance.jsonl", *common])
    run(["capture", "simulate", "--input", d / "clean.jsonl", "--output", d / "cap", "--wand", 60,
         "--wand-noise", 0.001, *common])
    run(["capture", "extract", "--input", d / "cap", "--output", d / "extracted.jsonl", *common])
    run(["capture", "calibrate", "--input", d / "cap" / "wand_tracks.json", "--rig", d / "cap" / "rig.json",
         "--output", d / "rig_calibrated.json", *common])
    return d


def output_files(root):
    """Relative path -> bytes for every output except the timing manifests."""
    root = Path(root)
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file() and not p.name.endswith("manifest.json")}
