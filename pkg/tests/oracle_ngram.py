"""Independent n-gram metric oracles for the frozen fixture corpus.

Straight transcriptions of the published metric definitions as plain
loops over explicit dictionaries.  Deliberately shares no code with the
package implementation; used to pin expected values before trusting it.
"""

import math


def grams(words, n):
    return [tuple(words[i : i + n]) for i in range(len(words) - n + 1)]


def bleu4_oracle(preds, refs_grouped):
    correct = [0, 0, 0, 0]
    guess = [0, 0, 0, 0]
    c_len = 0
    r_len = 0
    for pred, refs in zip(preds, refs_grouped):
        c_len += len(pred)
        best = None
        for r in refs:
            key = (abs(len(r) - len(pred)), len(r))
            if best is None or key < best:
                best = key
        r_len += best[1]
        for n in range(1, 5):
            cand = {}
            for g in grams(pred, n):
                cand[g] = cand.get(g, 0) + 1
            max_ref = {}
            for r in refs:
                cnt = {}
                for g in grams(r, n):
                    cnt[g] = cnt.get(g, 0) + 1
                for g, v in cnt.items():
                    if v > max_ref.get(g, 0):
                        max_ref[g] = v
            guess[n - 1] += max(0, len(pred) - n + 1)
            for g, v in cand.items():
                correct[n - 1] += min(v, max_ref.get(g, 0))
    if 0 in guess or 0 in correct:
        return 0.0
    log_sum = 0.0
    for c, g in zip(correct, guess):
        log_sum += math.log(c / g) / 4.0
    bp = 1.0 if c_len > r_len else math.exp(1.0 - r_len / c_len)
    return bp * math.exp(log_sum)


def lcs_oracle(a, b):
    table = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            if a[i - 1] == b[j - 1]:
                table[i][j] = table[i - 1][j - 1] + 1
            else:
                table[i][j] = max(table[i - 1][j], table[i][j - 1])
    return table[-1][-1]


def rouge_l_oracle(preds, refs_grouped, beta=1.2):
    scores = []
    for pred, refs in zip(preds, refs_grouped):
        precs = []
        recs = []
        for r in refs:
            lcs = lcs_oracle(r, pred)
            precs.append(lcs / len(pred))
            recs.append(lcs / len(r))
        p = max(precs)
        rec = max(recs)
        if p == 0 or rec == 0:
            scores.append(0.0)
        else:
            scores.append((1 + beta * beta) * p * rec / (rec + beta * beta * p))
    return sum(scores) / len(scores)


def cider_d_oracle(preds, refs_grouped, sigma=6.0):
    # document frequency over reference groups
    df = {}
    for refs in refs_grouped:
        seen = set()
        for r in refs:
            for n in range(1, 5):
                seen.update(grams(r, n))
        for g in seen:
            df[g] = df.get(g, 0) + 1
    log_m = math.log(len(preds))

    def vectorize(words):
        vecs = [{} for _ in range(4)]
        norms = [0.0] * 4
        for n in range(1, 5):
            for g in grams(words, n):
                vecs[n - 1][g] = vecs[n - 1].get(g, 0) + 1
        for n in range(4):
            for g in list(vecs[n]):
                idf = log_m - math.log(max(1.0, df.get(g, 0)))
                vecs[n][g] = vecs[n][g] * idf
                norms[n] += vecs[n][g] ** 2
        return vecs, [math.sqrt(x) for x in norms], len(words)

    scores = []
    for pred, refs in zip(preds, refs_grouped):
        vh, nh, lh = vectorize(pred)
        acc = [0.0] * 4
        for r in refs:
            vr, nr, lr = vectorize(r)
            pen = math.exp(-((lh - lr) ** 2) / (2 * sigma * sigma))
            for n in range(4):
                s = 0.0
                for g, w in vh[n].items():
                    s += min(w, vr[n].get(g, 0.0)) * vr[n].get(g, 0.0)
                if nh[n] != 0 and nr[n] != 0:
                    s /= nh[n] * nr[n]
                acc[n] += s * pen
        scores.append(sum(acc) / 4.0 / len(refs) * 10.0)
    return sum(scores) / len(scores)
