"""Table of the norm of phi phibar + psi psibar at one site against (|phi| + h)^2 + h^2."""
import argparse
import csv
from pathlib import Path

from grassnorm import norms as nm
from grassnorm.algebra import FieldIndex, NElement, complex_field
from grassnorm.lattice import Torus
from grassnorm.verify import susy_layout


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results/tau_norm.csv")
    args = ap.parse_args()

    L = susy_layout(0, Torus(1, 2, 1))
    tau = NElement.monomial(L, [FieldIndex("phi", 0, 0), FieldIndex("phi", 1, 0)]) + NElement.monomial(
        L, [FieldIndex("psi", 0, 0), FieldIndex("psi", 1, 0)])
    rows = []
    for h in (0.5, 1.0, 2.0):
        for a in (0.0, 0.5, 1.0, 3.0):
            phi = complex_field(L, "phi", [a] * L.n_sites)
            expect = (a + h) ** 2 + h ** 2
            row = {"h": h, "phi": a, "expected": expect}
            for label, p, mode in (("exact", 0, "exact"), ("lp_p1", 1, "lp"), ("lp_p2", 2, "lp")):
                row[label] = nm.tnorm(tau, phi, nm.NormParams(4, nm.Weight({"phi": h, "psi": h}, p, 2), mode))
            rows.append(row)
            print("  ".join(f"{k}={v:.6g}" for k, v in row.items()))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


if __name__ == "__main__":
    main()
