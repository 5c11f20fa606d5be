"""Evaluating a fixed policy against adversarial dynamics via the CLI.

Writes a random MDP and a uniform policy to text files, then asks the
``eval-robust`` command for the worst-case value over L1 and L2 balls of
growing radius.  The nominal value is the tau = 0 row.

    python3 demos/robust_evaluation.py [work_dir]
"""
import sys
from pathlib import Path

import numpy as np

from noregret_rmdp.cli import main
from noregret_rmdp.environments import random_mdp
from noregret_rmdp.mdp_core import dumps_policy, save_mdp

work = Path(sys.argv[1] if len(sys.argv) > 1 else "runs/demo_robust")
work.mkdir(parents=True, exist_ok=True)
mdp, nominal = random_mdp(5, 2, 0.9, seed=11)
save_mdp(work / "mdp.txt", mdp, nominal)
(work / "policy.txt").write_text(dumps_policy(np.full((5, 2), 0.5)))

# the worst case can only get worse as the ball grows
args = ["eval-robust", "--mdp", str(work / "mdp.txt"), "--policy", str(work / "policy.txt"), "--restarts", "2"]
for q in ("1", "2"):
    args += ["--q", q]
for tau in ("0", "0.1", "0.2", "0.4"):
    args += ["--tau", tau]
sys.exit(main(args))
