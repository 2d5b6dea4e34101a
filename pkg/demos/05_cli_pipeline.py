"""
The command-line pipeline end to end
====================================

synth -> encode -> decode (two ways) -> eval, each step writing its own
directory plus the effective config it ran with.
"""
# %%
import subprocess
import sys
from pathlib import Path

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out") / "pipeline"


def spdh(*args):
    cmd = [sys.executable, "-m", "spdh.cli", *map(str, args)]
    print("$ spdh", " ".join(map(str, args)))
    subprocess.run(cmd, check=True)


spdh("synth", "--frames", "6", "--sequences", "2", "--seed", "3", "--out", out / "ds")
spdh("encode", out / "ds", "--out", out / "stacks")
spdh("decode", out / "stacks", "--out", out / "spdh")
spdh("decode", out / "stacks", "--mode", "baseline", "--dataset", out / "ds", "--out", out / "baseline")

# %%
spdh("eval", "--pred", out / "spdh" / "predictions.jsonl", "--baseline", out / "baseline" / "predictions.jsonl",
     "--gt", out / "ds", "--out", out / "eval")

# %%
spdh("viz", out / "stacks", "--dataset", out / "ds", "--out", out / "viz")
print((out / "ds" / "effective_config.toml").read_text())
