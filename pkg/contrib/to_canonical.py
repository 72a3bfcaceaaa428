"""Convert column-named IMU CSV files into the canonical row format."""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

HEADER = ["dataset_id", "subject_id", "timestamp_s", "ax", "ay", "az", "gx", "gy", "gz", "label"]


def convert(paths, out, dataset, subject_col, time_col, time_scale, accel, accel_scale, gyro,
            gyro_scale, label_col):
    writer = csv.writer(out)
    writer.writerow(HEADER)
    n = 0
    for path in paths:
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                subject = row[subject_col] if subject_col else Path(path).stem
                t = float(row[time_col]) * time_scale
                a = [float(row[c]) * accel_scale for c in accel]
                g = [float(row[c]) * gyro_scale for c in gyro]
                writer.writerow([dataset, subject, f"{t:.6f}", *a, *g, row[label_col]])
                n += 1
    return n


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("inputs", nargs="+")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--subject-col", help="defaults to the input file stem")
    p.add_argument("--time-col", required=True)
    p.add_argument("--time-scale", type=float, default=1.0, help="multiplier to seconds")
    p.add_argument("--accel", required=True, help="three comma-separated column names")
    p.add_argument("--accel-scale", type=float, default=1.0, help="multiplier to m/s^2")
    p.add_argument("--gyro", required=True, help="three comma-separated column names")
    p.add_argument("--gyro-scale", type=float, default=1.0, help="multiplier to rad/s")
    p.add_argument("--label-col", required=True)
    args = p.parse_args(argv)
    accel, gyro = args.accel.split(","), args.gyro.split(",")
    if len(accel) != 3 or len(gyro) != 3:
        p.error("--accel and --gyro need exactly three columns each")
    with open(args.output, "w", newline="") as out:
        n = convert(args.inputs, out, args.dataset, args.subject_col, args.time_col, args.time_scale,
                    accel, args.accel_scale, gyro, args.gyro_scale, args.label_col)
    print(f"wrote {n} rows to {args.output}", file=sys.stderr)


if __name__ == "__main__":
    main()
