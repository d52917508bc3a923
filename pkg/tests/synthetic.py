"""Site-independent synthetic fitness landscape used by the acceptance suite."""

import numpy as np

from protfit import retrieval as retr
from protfit import seq


class Landscape:
    """Per-position residue distributions; fitness is the log-probability
    ratio of mutant vs wild-type residue at the edited position."""

    def __init__(self, seed: int, length: int = 10, spread: float = 1.5, floor: float = 0.005):
        rng = np.random.default_rng(seed)
        z = rng.normal(0.0, spread, size=(length, 20))
        p = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
        self.probs = (1.0 - 20.0 * floor) * p + floor
        self.length = length
        self.wt_idx = self.probs.argmax(axis=1)
        self.wild_type = seq.ProteinSequence(
            "wt", "".join(seq.STANDARD_AAS[i] for i in self.wt_idx)
        )

    def sample(self, rng: np.random.Generator, n: int) -> list:
        draws = np.stack(
            [rng.choice(20, size=n, p=self.probs[i]) for i in range(self.length)], axis=1
        )
        return ["".join(seq.STANDARD_AAS[a] for a in row) for row in draws]

    def sample_msa(self, rng: np.random.Generator, n_rows: int) -> retr.Msa:
        rows = self.sample(rng, n_rows)
        text = f">seed\n{self.wild_type.residues}\n" + "".join(
            f">r{i}\n{s}\n" for i, s in enumerate(rows)
        )
        return retr.parse_a2m(text)

    def single_substitutions(self):
        """All (mutation code, true log-ratio) pairs."""
        out = []
        for i in range(self.length):
            wt_aa = self.wild_type.residues[i]
            for a in range(20):
                if a == self.wt_idx[i]:
                    continue
                code = f"{wt_aa}{i + 1}{seq.STANDARD_AAS[a]}"
                true = float(
                    np.log(self.probs[i, a]) - np.log(self.probs[i, self.wt_idx[i]])
                )
                out.append((code, true))
        return out
