"""Regenerate the recorded fixtures. Run once; outputs are committed."""

import datetime as dt
import hashlib
import shutil
from pathlib import Path

import numpy as np

from vstgnn.ingest import SyntheticEventConfig, synthesize_event, write_archive

HERE = Path(__file__).parent


def main():
    cfg = SyntheticEventConfig(node_count=2, grid_size=8, num_days=3, landfall_day=1,
                               event_id="recorded")
    arch = synthesize_event(cfg, 7)
    shutil.rmtree(HERE / "archive", ignore_errors=True)
    write_archive(arch, HERE / "archive")
    (HERE / "archive" / "recorded" / "12003" / "2022-09-03.tif").unlink()
    np.savez(HERE / "recorded_expected.npz",
             **{f"{c}/{d.isoformat()}": t.radiance for (c, d), t in arch.tiles.items()})

    digest_cfg = SyntheticEventConfig(node_count=2, grid_size=4, num_days=3, landfall_day=1)
    digest_arch = synthesize_event(digest_cfg, 42)
    h = hashlib.sha256()
    for k in sorted(digest_arch.tiles):
        h.update(digest_arch.tiles[k].radiance.tobytes())
    (HERE / "synthetic_digest.txt").write_text(h.hexdigest() + "\n")


if __name__ == "__main__":
    main()
