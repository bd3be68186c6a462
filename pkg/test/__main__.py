import pathlib
import shlex
import subprocess
import sys


here = pathlib.Path(__file__).resolve().parent
args = sys.argv[1:]
# `python -m test --slow` also runs the long convergence and distribution tests.
if "--slow" in args:
    args.remove("--slow")
else:
    args = ["-m", "not slow", *args]
flags = " ".join(map(shlex.quote, args))


# Each file is ran separately, so that the compilation caches of one module do not
# pile up in the next.
running_out = 0
for file in sorted(here.iterdir()):
    if file.is_file() and file.name.startswith("test_"):
        cmd = f"pytest {file} " + flags
        out = subprocess.run(cmd, shell=True).returncode
        # Exit code 5 means every test in the file was deselected.
        if out != 5:
            running_out = max(running_out, out)
sys.exit(running_out)
