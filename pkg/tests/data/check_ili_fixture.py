"""Independent check of ili_sample.csv using only the csv and datetime modules:
prints the channel count, row count and the set of day gaps between rows."""

import csv
from datetime import datetime
from pathlib import Path

with open(Path(__file__).with_name("ili_sample.csv"), newline="") as fh:
    rows = list(csv.reader(fh))
header, body = rows[0], rows[1:]
dates = [datetime.strptime(r[0], "%Y-%m-%d %H:%M:%S") for r in body]
gaps = {(b - a).days for a, b in zip(dates, dates[1:])}
print("channels", len(header) - 1, "rows", len(body), "gaps", sorted(gaps),
      "first", dates[0].date(), "last", dates[-1].date())
