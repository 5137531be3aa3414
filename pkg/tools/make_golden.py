"""Write testdata/wire_golden.txt from tests/golden_frames.py (run once; the file is frozen)."""
import pathlib
import sys

root = pathlib.Path(__file__).resolve().parent.parent
sys.path.insert(0, str(root / "tests"))

from golden_frames import GOLDEN  # noqa: E402
from concealed.wire import encode  # noqa: E402

out = root / "testdata" / "wire_golden.txt"
if out.exists() and "--force" not in sys.argv:
    sys.exit(f"{out} exists; golden encodings must not change")
out.write_bytes(b"".join(encode(f) for f in GOLDEN))
