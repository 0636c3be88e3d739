"""
Similarity, errors and significance
===================================

The edit-distance similarity used to score suffixes, and the one-tailed
paired t-test used to compare two models on the same prefixes.
"""

from eventsuffix.evaluation import damerau_levenshtein, paired_t_test, sdl

truth = ["A", "B", "C"]
for guess in (["A", "B", "C"], ["A", "C", "B"], ["A", "C"], [], ["C", "A"]):
    print(guess, "distance", damerau_levenshtein(truth, guess), "similarity", round(sdl(truth, guess), 4))

# per-prefix SDL differences between two models; is the first one better?
diffs = [0.1, 0.0, 0.25, 0.05, 0.0, 0.15, -0.05, 0.1]
r = paired_t_test(diffs, "upper")
print(f"mean {r.mean_difference:.3f}, t = {r.t:.3f}, df = {r.df}, p = {r.p_value:.4f}")

# remaining-time errors: lower is better, so test the lower tail
errors = [-0.4, -1.2, 0.1, -0.8, -0.3]
print("lower-tail p", round(paired_t_test(errors, "lower").p_value, 4))
