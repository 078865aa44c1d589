"""The whole pipeline through the CLI, exactly as the benchmark runs it.

Generates the seeded synthetic world, fits the per-class Gaussians,
trains the context bank, scores every test split with the default recipe
(near-OOD with mcm, far-OOD with the energy difference), and writes the
evaluation report plus score histograms. Everything lands in ./demo_out.
"""

from pathlib import Path

from fsood.cli import cli_run

out = Path("demo_out")
code = cli_run(
    [
        "pipeline",
        "--synth-default",
        "--seed", "7",
        "--out", str(out),
        "--epochs", "30",            # benchmark uses 100; trimmed for a quick demo
        "--gaussian-samples", "4000",
    ]
)
assert code == 0, "pipeline failed"

print("\nartifacts:")
for p in sorted(out.iterdir()):
    if p.is_file():
        print(f"  {p}  ({p.stat().st_size} bytes)")

print("\ntrace head:")
print("\n".join((out / "trace.csv").read_text().splitlines()[:4]))
