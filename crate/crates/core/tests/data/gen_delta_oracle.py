# Regenerates delta_oracle.csv: random distribution pairs with KL and CE
# log-ratio deltas evaluated at 50 significant digits with mpmath.
import random
from mpmath import mp, mpf, log

mp.dps = 50
rng = random.Random(20240617)
rows = []
for _ in range(1000):
    c = rng.randint(2, 10)
    def draw():
        g = [rng.gammavariate(1.0, 1.0) + 1e-6 for _ in range(c)]
        s = sum(g)
        return [x / s for x in g]
    prev, nxt = draw(), draw()
    target = rng.randrange(c)
    kl = sum(mpf(a) * log(mpf(a) / mpf(b)) for a, b in zip(nxt, prev))
    ce = log(mpf(nxt[target])) - log(mpf(prev[target]))
    rows.append((c, target, prev, nxt, kl, ce))

with open("delta_oracle.csv", "w") as f:
    f.write("classes,target,prev,next,kl,ce\n")
    for c, target, prev, nxt, kl, ce in rows:
        f.write("%d,%d,%s,%s,%s,%s\n" % (
            c, target,
            " ".join(repr(x) for x in prev),
            " ".join(repr(x) for x in nxt),
            mp.nstr(kl, 25), mp.nstr(ce, 25)))
