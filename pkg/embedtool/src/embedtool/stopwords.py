"""English stop words removed before word-vector averaging.

Must stay in sync with the consumer pipeline's default list; the contract
test pins the two lists together through the exported vectors.
"""

STOPWORDS = frozenset("""
a an and are as at be but by for from has have if in into is it its no not
of on or such that the their then there these they this to was were will with
""".split())
