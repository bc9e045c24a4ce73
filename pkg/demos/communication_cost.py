"""
What one round costs on the wire
================================

Features travel both ways every round; the server encoder only travels on
broadcast rounds. Sending it every K rounds spreads its cost over K rounds.
"""

from fedafd import RunConfig
from fedafd.config import with_updates
from fedafd.protocol import comm_cost

encoder = round(29.72 * 1024 ** 2)
for k in (1, 5, 10):
    cost = comm_cost(with_updates(RunConfig(), public_size=10_000, dim=256, cache_interval=k), encoder)
    print(f"K={k:<3} upload {cost.upload_mb:6.2f} MB  download (broadcast) {cost.download_mb:6.2f} MB  "
          f"amortized download {cost.amortized_download_mb:6.2f} MB")

# the same table is available from the command line:
#   fedafd cost --public-size 10000 --dim 256 --encoder-mb 29.72 --interval 10
