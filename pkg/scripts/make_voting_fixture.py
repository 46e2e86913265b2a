"""Write the bundled 200-row voting-schema fixture.

The rows are synthetic; they only mimic the column layout and value ranges
of the public social-pressure turnout experiment so that the loader and the
pipeline can run without the real file.
"""

import csv
import sys

import numpy as np

CITIES = (1, 2, 3, 4, 14, 5, 6, 13, 15, 8)
LABELS = ("Control", "Civic Duty", "Hawthorne", "Self", "Neighbors")


def main(path):
    rng = np.random.default_rng(2006)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["yob", "sex", "hh_size", "p2000", "p2002", "p2004", "g2000", "g2002",
                    "city", "treatment", "p2006"])
        for c in CITIES:
            for _ in range(20):
                yob = int(rng.integers(1920, 1986))
                sex = rng.choice(["male", "female"])
                hh = int(rng.choice([1, 2, 2, 3, 4, 5, 6, 8]))
                g2000 = int(rng.random() < 0.85)
                p2000 = int(rng.random() < (0.35 if g2000 else 0.1))
                g2002 = int(rng.random() < (0.8 if g2000 else 0.4))
                p2002 = int(rng.random() < (0.45 if p2000 else 0.2))
                p2004 = int(rng.random() < (0.55 if p2002 else 0.3))
                k = 0 if rng.random() < 5 / 9 else int(rng.integers(1, 5))
                base = 0.2 + 0.25 * p2004 + 0.04 * k
                p2006 = int(rng.random() < base)
                w.writerow([yob, sex, hh, "yes" if p2000 else "no", "yes" if p2002 else "no",
                            "yes" if p2004 else "no", "yes" if g2000 else "no",
                            "yes" if g2002 else "no", c, LABELS[k], p2006])


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "src/semdro/fixtures/voting_sample.csv")
