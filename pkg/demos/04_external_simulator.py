# %% [markdown]
# # Driving an out-of-process simulator
#
# Any program that reads one JSON request line on stdin and writes one JSON
# response line on stdout can serve as the objective. The bundled mock does
# exactly that, so this demo swaps it in for the in-process reactor and
# checks that the answers agree.

# %%
import sys

from vaebo.design_space import builtin_config, load_space, sample_uniform
from vaebo.simulators import (ExternalSimulator, ReactorSimulator, SimulatorRequest, SimulatorTimeout,
                              external_evaluate)

space = load_space(builtin_config("reactor"))
mock = [sys.executable, "-m", "vaebo.mock_simulator"]
external = ExternalSimulator(mock + ["--model", "reactor"], arity=1, timeout=30)
local = ReactorSimulator()

print("request line:", SimulatorRequest({"pathway": 2, "temperature": 325.0, "time": 300.0}, 1).to_line(), end="")
for p in sample_uniform(space, 5, seed=0):
    a = space.assignment(p)
    print(a, external(a)[0], local(a)[0])

# %% [markdown]
# A simulator that hangs is killed together with its process group.

# %%
try:
    external_evaluate(mock + ["--model", "sleep"], SimulatorRequest({}, 1), timeout=1.0)
except SimulatorTimeout as exc:
    print("timeout:", exc)

# %% [markdown]
# The same thing from the command line:
#
#     vaebo optimize --space reactor --init 10 --budget 20 \
#         --simulator "external:python3 -m vaebo.mock_simulator --model reactor" --out runs/ext
