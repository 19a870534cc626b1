"""
Fuzzy positional lookups
========================

The positional table is read exactly at inference time.  During training
each lookup lands at the true cell plus a uniform sub-cell offset and is
bilinearly interpolated, which is what lets one table serve any image
resolution.  The long-run mean of the fuzzy lookup is a fixed 3x3 blend
of the neighborhood: [1/8, 3/4, 1/8] per axis.
"""

import numpy as np

from pathohr.autodiff import value_of
from pathohr.merge import PositionalEncoding, fuzzy_positional_encoding
from pathohr.rng import RngStream

pe = PositionalEncoding.create(rows=6, cols=6, dim=4, seed=2)
table = value_of(pe.table)
pos = np.array([[2, 3]])

exact = value_of(fuzzy_positional_encoding(pe, pos))[0]
print("inference lookup == table cell:", np.array_equal(exact, table[2, 3]))

# the same table in train mode jitters every read
pe_train = PositionalEncoding(table, mode="train")
rng = RngStream(0, 0xF022)
draws = np.array([value_of(fuzzy_positional_encoding(pe_train, pos, rng))[0]
                  for _ in range(4000)])
print("train lookups vary: std per dim", np.round(draws.std(axis=0), 3))

w = np.array([0.125, 0.75, 0.125])
expected = np.zeros(4)
for a, wa in zip((-1, 0, 1), w):
    for b, wb in zip((-1, 0, 1), w):
        expected += wa * wb * table[2 + a, 3 + b]
print("monte-carlo mean ", np.round(draws.mean(axis=0), 4))
print("analytic blend   ", np.round(expected, 4))
