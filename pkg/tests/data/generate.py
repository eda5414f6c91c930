"""Regenerate the scripted replay fixtures in this directory.

Every test image in ``test_pool.csv`` has label D, so a slot answered D is
correct whenever it hides a test question and A is always wrong.  That lets
a script fix the number of correct test answers per task without knowing
where the hidden test slot sits.
"""

import csv
from pathlib import Path

HERE = Path(__file__).parent
COLS = ["contributor_id", "task_seq", "slot_seq", "answer", "elapsed_seconds"]


def write(name, steps):
    """steps: (contributor, [answers], seconds); task_seq counts per contributor."""
    seq = {}
    with open(HERE / name, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLS)
        for cid, answers, secs in steps:
            s = seq.get(cid, 0)
            seq[cid] = s + 1
            for i, a in enumerate(answers):
                w.writerow([cid, s, i, a, secs])


def main():
    with open(HERE / "test_pool.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_id", "label"])
        for i in range(1, 31):
            w.writerow([f"T{i:02d}", "D"])
    (HERE / "images.txt").write_text("".join(f"I{i:03d}\n" for i in range(1, 451)))

    # default task shape: quiz of 5, work tasks of 4 real + 1 test
    write("gate_defaults.csv", [
        ("pass3", list("DDDAA"), 30),        # 3/5 passes
        ("fail2", list("DDAAA"), 30),        # 2/5 fails
        ("slow", list("DDDDD"), 8),          # speed violations 1..3
        ("slow", list("DDDDD"), 9.5),
        ("slow", list("DDDDD"), 5),
        ("retry", list("DDDDD"), 8),         # rejected, then the same quiz passes
        ("retry", list("DDDDD"), 12),
        ("pass3", list("AAAAA"), 40),        # trust 3/6 with 5 images reviewed
        ("pass3", list("AAAAA"), 40),        # 3/7, 10 images
        ("pass3", list("AAAAA"), 40),        # 3/8, 15 images
        ("retry", list("DDDDD"), 20),
        ("retry", list("DDDDD"), 3),         # work task too fast
        ("retry", list("DDDDD"), 20),        # resubmitted in time
        ("pass3", list("AAAAA"), 40),        # 3/9 at 20 images: excluded
        ("pass3", list("AAAAA"), 40),        # no longer eligible
        ("fail2", list("DDDDD"), 30),        # excluded in quiz: not eligible
    ])

    # quiz of 4 and work tasks of 1 real + 4 tests: 20 reviewed images carry 20 test answers
    write("gate_trust.csv", [
        ("w1", list("DDDA"), 30),            # 3/4
        ("w1", list("DDDDD"), 30),           # 7/8
        ("w1", list("DDDDD"), 30),           # 11/12
        ("w1", list("AAAAA"), 30),           # 11/16
        ("w1", list("AAAAA"), 30),           # 11/20 = 0.55 at 20 images: excluded
        ("w2", list("DDDA"), 30),
        ("w2", list("DDDDD"), 30),
        ("w2", list("DDDDD"), 30),
        ("w2", list("AAAAA"), 30),
        ("w2", list("DDDDD"), 30),           # 15/20 = 0.75: stays active
        ("w3", list("DDDD"), 30),            # 4/4
        ("w3", list("AAAAA"), 30),           # 4/8 at 5 images
        ("w3", list("AAAAA"), 30),           # 4/12 at 10 images
        ("w3", list("AAAAA"), 30),           # 4/16 at 15 images
        ("w3", list("AAAAA"), 30),           # 4/20 at 20 images: excluded
    ])

    # one reliable contributor runs into the 500-judgment cap
    write("cap.csv", [("solo", list("DDDDD"), 60)] + [("solo", list("DDDDD"), 60)] * 101)

    # cap of 12 with 5-slot tasks: the third task is cut to 2 slots
    write("cap_partial.csv", [
        ("c1", list("DDDDD"), 30),
        ("c1", list("DDDDD"), 30),
        ("c1", list("DDDDD"), 30),
        ("c1", list("DD"), 30),
        ("c1", list("DDDDD"), 30),
    ])

    # mixed stream for service/in-process equivalence
    steps = []
    for r in range(6):
        for cid, ans, secs in (("alpha", "DDDDD", 25), ("beta", "DADDD", 31.5), ("gamma", "ADDDD", 44),
                               ("delta", "AADDD", 12.25)):
            steps.append((cid, list(ans), secs if r != 2 or cid != "beta" else 7))
    write("equivalence.csv", steps)


if __name__ == "__main__":
    main()
