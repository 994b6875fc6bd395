"""Place MovieLens 100k at data/ml-100k/u.data.

Tries the GroupLens archive first, then the copy bundled in the RecBole wheel
(fetched with ``pip download``). FilmTrust and the Amazon subset must be
placed by hand; see README.
"""

import io
import subprocess
import sys
import tempfile
import urllib.request
import zipfile
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
TARGET = ROOT / "data" / "ml-100k" / "u.data"
GROUPLENS = "https://files.grouplens.org/datasets/movielens/ml-100k.zip"


def from_grouplens() -> bytes:
    with urllib.request.urlopen(GROUPLENS, timeout=60) as resp:
        archive = zipfile.ZipFile(io.BytesIO(resp.read()))
    return archive.read("ml-100k/u.data")


def from_recbole() -> bytes:
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "--no-deps", "recbole==1.2.1", "-d", tmp],
            check=True,
        )
        wheel = next(Path(tmp).glob("recbole-*.whl"))
        text = zipfile.ZipFile(wheel).read("recbole/dataset_example/ml-100k/ml-100k.inter").decode()
    # atomic-file format: one header line, then user, item, rating, timestamp
    return "".join(line + "\n" for line in text.splitlines()[1:] if line.strip()).encode()


def main() -> int:
    if TARGET.exists():
        print(f"{TARGET} already present")
        return 0
    for source in (from_grouplens, from_recbole):
        try:
            payload = source()
        except Exception as exc:  # try the next source
            print(f"{source.__name__} failed: {exc}", file=sys.stderr)
            continue
        TARGET.parent.mkdir(parents=True, exist_ok=True)
        TARGET.write_bytes(payload)
        print(f"wrote {TARGET} via {source.__name__}")
        return 0
    return 1


if __name__ == "__main__":
    sys.exit(main())
